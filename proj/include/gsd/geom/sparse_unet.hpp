#pragma once

#include <vector>

#include "gsd/core/mlp.hpp"
#include "gsd/core/ops.hpp"
#include "gsd/geom/voxel_grid.hpp"

namespace gsd {

// Submanifold sparse 3x3x3 convolution: output defined on the same occupancy
// as the input; absent neighbors contribute zero. weight is [27, Cin, Cout]
// in the offset order of the neighbor table, bias [Cout].
inline Tensor sparse_conv3(const Tensor& features, const std::vector<int64_t>& nbr,
                           const Tensor& weight, const Tensor& bias) {
    if (features.rank() != 2 || weight.rank() != 3 || weight.dim(0) != 27 ||
        weight.dim(1) != features.dim(1) || bias.dim(0) != weight.dim(2))
        throw ShapeError("sparse_conv3: weight must be [27,Cin,Cout] matching features [M,Cin]");
    const int64_t m = features.dim(0), cin = features.dim(1), cout = weight.dim(2);
    if (static_cast<int64_t>(nbr.size()) != 27 * m)
        throw ShapeError("sparse_conv3: neighbor table size mismatch");
    Tensor out = Tensor::zeros({m, cout});

    // Per offset: gather occupied neighbor rows, one GEMM, scatter-add.
    auto run_offset = [&](int o, const real* feat, const real* w, real* dst) {
        std::vector<int64_t> rows, srcs;
        for (int64_t i = 0; i < m; ++i) {
            const int64_t s = nbr[27 * i + o];
            if (s >= 0) {
                rows.push_back(i);
                srcs.push_back(s);
            }
        }
        if (rows.empty()) return;
        detail::EMat gathered(static_cast<Eigen::Index>(rows.size()), cin);
        for (size_t r = 0; r < rows.size(); ++r)
            for (int64_t c = 0; c < cin; ++c) gathered(static_cast<Eigen::Index>(r), c) =
                feat[srcs[r] * cin + c];
        detail::ConstMap wo(w + static_cast<size_t>(o) * cin * cout, cin, cout);
        detail::EMat prod = gathered * wo;
        for (size_t r = 0; r < rows.size(); ++r)
            for (int64_t c = 0; c < cout; ++c)
                dst[rows[r] * cout + c] += prod(static_cast<Eigen::Index>(r), c);
    };

    {
        const auto pf = features.data();
        const auto pw = weight.data();
        const auto pb = bias.data();
        auto po = out.mutable_data();
        for (int64_t i = 0; i < m; ++i)
            for (int64_t c = 0; c < cout; ++c) po[i * cout + c] = pb[c];
        for (int o = 0; o < 27; ++o) run_offset(o, pf.data(), pw.data(), po.data());
    }

    if (auto node = detail::make_node({features, weight, bias}, {out})) {
        auto iff = features.impl(), iw = weight.impl(), ib = bias.impl();
        std::weak_ptr<detail::TensorImpl> wo = out.impl();
        node->backward = [iff, iw, ib, wo, nbr, m, cin, cout]() {
            const auto* g = detail::out_grad(wo);
            if (!g) return;
            if (iff->requires_grad) detail::ensure_grad(*iff);
            if (iw->requires_grad) detail::ensure_grad(*iw);
            if (ib->requires_grad) detail::ensure_grad(*ib);
            if (ib->requires_grad) {
                for (int64_t i = 0; i < m; ++i)
                    for (int64_t c = 0; c < cout; ++c) ib->grad[c] += (*g)[i * cout + c];
            }
            for (int o = 0; o < 27; ++o) {
                std::vector<int64_t> rows, srcs;
                for (int64_t i = 0; i < m; ++i) {
                    const int64_t s = nbr[27 * i + o];
                    if (s >= 0) {
                        rows.push_back(i);
                        srcs.push_back(s);
                    }
                }
                if (rows.empty()) continue;
                detail::EMat gout(static_cast<Eigen::Index>(rows.size()), cout);
                for (size_t r = 0; r < rows.size(); ++r)
                    for (int64_t c = 0; c < cout; ++c)
                        gout(static_cast<Eigen::Index>(r), c) = (*g)[rows[r] * cout + c];
                detail::ConstMap wmat(iw->data.data() + static_cast<size_t>(o) * cin * cout,
                                      cin, cout);
                if (iff->requires_grad) {
                    detail::EMat dsrc = gout * wmat.transpose();
                    for (size_t r = 0; r < rows.size(); ++r)
                        for (int64_t c = 0; c < cin; ++c)
                            iff->grad[srcs[r] * cin + c] +=
                                dsrc(static_cast<Eigen::Index>(r), c);
                }
                if (iw->requires_grad) {
                    detail::EMat gathered(static_cast<Eigen::Index>(rows.size()), cin);
                    for (size_t r = 0; r < rows.size(); ++r)
                        for (int64_t c = 0; c < cin; ++c)
                            gathered(static_cast<Eigen::Index>(r), c) =
                                iff->data[srcs[r] * cin + c];
                    detail::MutMap dw(iw->grad.data() + static_cast<size_t>(o) * cin * cout,
                                      cin, cout);
                    dw.noalias() += gathered.transpose() * gout;
                }
            }
        };
    }
    return out;
}

struct SparseConvLayer {
    Tensor weight;  // [27, Cin, Cout]
    Tensor bias;    // [Cout]
};

inline SparseConvLayer make_sparse_conv(int64_t cin, int64_t cout, Rng& rng) {
    SparseConvLayer layer;
    layer.weight = Tensor::zeros({27, cin, cout});
    layer.bias = Tensor::zeros({cout});
    const double bound = std::sqrt(6.0 / static_cast<double>(27 * cin));
    for (auto& v : layer.weight.mutable_data()) v = static_cast<real>(rng.uniform(-bound, bound));
    layer.weight.set_requires_grad(true);
    layer.bias.set_requires_grad(true);
    return layer;
}

// Sparse 3D U-Net over the occupancy hierarchy:
//   linear embed (3->16) on normalized voxel coords,
//   two DownVoxelBlocks (pool stride-2 + conv): 16->32->64,
//   one ResidualBlock at the bottleneck (64),
//   two UpVoxelBlocks (index-preserving unpool + conv): 64->32->32,
//   with one skip concatenation of the level-1 encoder features.
struct SparseUNet {
    static constexpr int64_t kEmbed = 16;
    static constexpr int64_t kC1 = 32;
    static constexpr int64_t kC2 = 64;
    static constexpr int64_t kOut = 32;

    Tensor embed_w;  // [16, 3]
    Tensor embed_b;  // [16]
    SparseConvLayer down1;  // 16 -> 32 at level 1
    SparseConvLayer down2;  // 32 -> 64 at level 2
    SparseConvLayer res_a;  // 64 -> 64
    SparseConvLayer res_b;  // 64 -> 64
    SparseConvLayer up1;    // 96 -> 32 at level 1 (64 unpooled + 32 skip)
    SparseConvLayer up2;    // 32 -> 32 at level 0

    Tensor forward(const VoxelHierarchy& h) const {
        if (h.levels.size() != 3) throw ContractError("SparseUNet expects a 3-level hierarchy");
        const auto& l0 = h.levels[0];
        const auto& l1 = h.levels[1];
        const auto& l2 = h.levels[2];
        if (l0.coords.empty()) throw ContractError("SparseUNet: empty voxel grid");

        Tensor f0 = linear(normalized_voxel_coords(l0.coords), embed_w, embed_b);
        // encoder
        Tensor p1 = pool_rows_mean(f0, l0.parent, static_cast<int64_t>(l1.coords.size()));
        Tensor e1 = relu(sparse_conv3(p1, l1.nbr, down1.weight, down1.bias));
        Tensor p2 = pool_rows_mean(e1, l1.parent, static_cast<int64_t>(l2.coords.size()));
        Tensor e2 = relu(sparse_conv3(p2, l2.nbr, down2.weight, down2.bias));
        // bottleneck residual block
        Tensor r = relu(sparse_conv3(e2, l2.nbr, res_a.weight, res_a.bias));
        r = sparse_conv3(r, l2.nbr, res_b.weight, res_b.bias);
        Tensor bott = relu(add(e2, r));
        // decoder with one skip concatenation
        Tensor u1 = gather_rows(bott, l1.parent);
        Tensor d1 = relu(sparse_conv3(concat_cols({u1, e1}), l1.nbr, up1.weight, up1.bias));
        Tensor u0 = gather_rows(d1, l0.parent);
        return relu(sparse_conv3(u0, l0.nbr, up2.weight, up2.bias));
    }

    std::vector<Tensor> parameters() const {
        std::vector<Tensor> out{embed_w, embed_b};
        for (const auto* l : {&down1, &down2, &res_a, &res_b, &up1, &up2}) {
            out.push_back(l->weight);
            out.push_back(l->bias);
        }
        return out;
    }

    void set_param_names(const std::string& prefix) {
        embed_w.set_name(prefix + ".embed.weight");
        embed_b.set_name(prefix + ".embed.bias");
        const char* names[6] = {"down1", "down2", "res_a", "res_b", "up1", "up2"};
        SparseConvLayer* layers[6] = {&down1, &down2, &res_a, &res_b, &up1, &up2};
        for (int i = 0; i < 6; ++i) {
            layers[i]->weight.set_name(prefix + "." + names[i] + ".weight");
            layers[i]->bias.set_name(prefix + "." + names[i] + ".bias");
        }
    }
};

inline SparseUNet make_sparse_unet(Rng& rng) {
    SparseUNet net;
    net.embed_w = Tensor::zeros({SparseUNet::kEmbed, 3});
    net.embed_b = Tensor::zeros({SparseUNet::kEmbed});
    const double bound = std::sqrt(6.0 / 3.0);
    for (auto& v : net.embed_w.mutable_data()) v = static_cast<real>(rng.uniform(-bound, bound));
    net.embed_w.set_requires_grad(true);
    net.embed_b.set_requires_grad(true);
    net.down1 = make_sparse_conv(SparseUNet::kEmbed, SparseUNet::kC1, rng);
    net.down2 = make_sparse_conv(SparseUNet::kC1, SparseUNet::kC2, rng);
    net.res_a = make_sparse_conv(SparseUNet::kC2, SparseUNet::kC2, rng);
    net.res_b = make_sparse_conv(SparseUNet::kC2, SparseUNet::kC2, rng);
    net.up1 = make_sparse_conv(SparseUNet::kC2 + SparseUNet::kC1, SparseUNet::kC1, rng);
    net.up2 = make_sparse_conv(SparseUNet::kC1, SparseUNet::kOut, rng);
    return net;
}

}  // namespace gsd
