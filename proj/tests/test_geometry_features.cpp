#include <gtest/gtest.h>

#include <map>

#include "gsd/geom/feature_net.hpp"
#include "gsd/geom/sparse_unet.hpp"
#include "gsd/geom/voxel_grid.hpp"
#include "test_util.hpp"

using namespace gsd;
using gsd::test::fd_grad;
using gsd::test::random_tensor;
using gsd::test::rel_err;

namespace {

// ---------------------------------------------------------------------------
// Dense 3D reference network over a bounded box, used as the oracle for the
// sparse path: plain nested loops, occupancy masking after every layer.

struct DenseField {
    int res = 0;                       // cubic box [0,res)^3
    int channels = 0;
    std::vector<double> feat;          // res^3 * channels
    std::vector<char> occ;             // res^3

    double& at(int x, int y, int z, int c) {
        return feat[((static_cast<size_t>(z) * res + y) * res + x) * channels + c];
    }
    double get(int x, int y, int z, int c) const {
        if (x < 0 || y < 0 || z < 0 || x >= res || y >= res || z >= res) return 0.0;
        if (!occ[(static_cast<size_t>(z) * res + y) * res + x]) return 0.0;
        return feat[((static_cast<size_t>(z) * res + y) * res + x) * channels + c];
    }
    bool occupied(int x, int y, int z) const {
        if (x < 0 || y < 0 || z < 0 || x >= res || y >= res || z >= res) return false;
        return occ[(static_cast<size_t>(z) * res + y) * res + x] != 0;
    }
};

DenseField dense_conv(const DenseField& in, const Tensor& weight, const Tensor& bias,
                      bool apply_relu) {
    const int cin = in.channels;
    const int cout = static_cast<int>(weight.dim(2));
    DenseField out;
    out.res = in.res;
    out.channels = cout;
    out.occ = in.occ;
    out.feat.assign(static_cast<size_t>(in.res) * in.res * in.res * cout, 0.0);
    const auto w = weight.data();
    const auto b = bias.data();
    for (int z = 0; z < in.res; ++z)
        for (int y = 0; y < in.res; ++y)
            for (int x = 0; x < in.res; ++x) {
                if (!in.occupied(x, y, z)) continue;
                for (int co = 0; co < cout; ++co) {
                    double acc = b[co];
                    int o = 0;
                    for (int dz = -1; dz <= 1; ++dz)
                        for (int dy = -1; dy <= 1; ++dy)
                            for (int dx = -1; dx <= 1; ++dx, ++o)
                                for (int ci = 0; ci < cin; ++ci)
                                    acc += w[(static_cast<size_t>(o) * cin + ci) * cout + co] *
                                           in.get(x + dx, y + dy, z + dz, ci);
                    acc = apply_relu ? std::max(0.0, acc) : acc;
                    out.at(x, y, z, co) = acc;
                }
            }
    return out;
}

DenseField dense_pool(const DenseField& in) {
    DenseField out;
    out.res = in.res / 2;
    out.channels = in.channels;
    out.occ.assign(static_cast<size_t>(out.res) * out.res * out.res, 0);
    out.feat.assign(static_cast<size_t>(out.res) * out.res * out.res * in.channels, 0.0);
    for (int z = 0; z < out.res; ++z)
        for (int y = 0; y < out.res; ++y)
            for (int x = 0; x < out.res; ++x) {
                int count = 0;
                std::vector<double> acc(in.channels, 0.0);
                for (int dz = 0; dz < 2; ++dz)
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx) {
                            if (!in.occupied(2 * x + dx, 2 * y + dy, 2 * z + dz)) continue;
                            ++count;
                            for (int c = 0; c < in.channels; ++c)
                                acc[c] += in.get(2 * x + dx, 2 * y + dy, 2 * z + dz, c);
                        }
                if (count == 0) continue;
                out.occ[(static_cast<size_t>(z) * out.res + y) * out.res + x] = 1;
                for (int c = 0; c < in.channels; ++c) out.at(x, y, z, c) = acc[c] / count;
            }
    return out;
}

DenseField dense_unpool(const DenseField& coarse, const DenseField& like) {
    DenseField out;
    out.res = like.res;
    out.channels = coarse.channels;
    out.occ = like.occ;
    out.feat.assign(static_cast<size_t>(out.res) * out.res * out.res * out.channels, 0.0);
    for (int z = 0; z < out.res; ++z)
        for (int y = 0; y < out.res; ++y)
            for (int x = 0; x < out.res; ++x) {
                if (!out.occupied(x, y, z)) continue;
                for (int c = 0; c < out.channels; ++c)
                    out.at(x, y, z, c) = coarse.get(x / 2, y / 2, z / 2, c);
            }
    return out;
}

DenseField dense_concat(const DenseField& a, const DenseField& b) {
    DenseField out;
    out.res = a.res;
    out.channels = a.channels + b.channels;
    out.occ = a.occ;
    out.feat.assign(static_cast<size_t>(out.res) * out.res * out.res * out.channels, 0.0);
    for (int z = 0; z < out.res; ++z)
        for (int y = 0; y < out.res; ++y)
            for (int x = 0; x < out.res; ++x) {
                if (!out.occupied(x, y, z)) continue;
                for (int c = 0; c < a.channels; ++c) out.at(x, y, z, c) = a.get(x, y, z, c);
                for (int c = 0; c < b.channels; ++c)
                    out.at(x, y, z, a.channels + c) = b.get(x, y, z, c);
            }
    return out;
}

// Full dense U-Net matching SparseUNet::forward.
DenseField dense_unet(const SparseUNet& net, const std::vector<VoxelCoord>& coords, int res) {
    // occupancy + normalized-coordinate embedding input
    DenseField f0;
    f0.res = res;
    f0.channels = 3;
    f0.occ.assign(static_cast<size_t>(res) * res * res, 0);
    f0.feat.assign(static_cast<size_t>(res) * res * res * 3, 0.0);
    VoxelCoord lo = coords[0], hi = coords[0];
    for (const auto& c : coords)
        for (int j = 0; j < 3; ++j) {
            lo[j] = std::min(lo[j], c[j]);
            hi[j] = std::max(hi[j], c[j]);
        }
    for (const auto& c : coords) {
        f0.occ[(static_cast<size_t>(c[2]) * res + c[1]) * res + c[0]] = 1;
        for (int j = 0; j < 3; ++j)
            f0.at(c[0], c[1], c[2], j) =
                static_cast<double>(c[j] - lo[j]) / std::max(1, hi[j] - lo[j]);
    }
    // linear embedding (a 1x1 "conv")
    DenseField e0;
    e0.res = res;
    e0.channels = SparseUNet::kEmbed;
    e0.occ = f0.occ;
    e0.feat.assign(static_cast<size_t>(res) * res * res * e0.channels, 0.0);
    const auto ew = net.embed_w.data();
    const auto eb = net.embed_b.data();
    for (const auto& c : coords)
        for (int co = 0; co < SparseUNet::kEmbed; ++co) {
            double acc = eb[co];
            for (int ci = 0; ci < 3; ++ci) acc += ew[co * 3 + ci] * f0.get(c[0], c[1], c[2], ci);
            e0.at(c[0], c[1], c[2], co) = acc;
        }

    DenseField p1 = dense_pool(e0);
    DenseField e1 = dense_conv(p1, net.down1.weight, net.down1.bias, true);
    DenseField p2 = dense_pool(e1);
    DenseField e2 = dense_conv(p2, net.down2.weight, net.down2.bias, true);
    DenseField r = dense_conv(e2, net.res_a.weight, net.res_a.bias, true);
    r = dense_conv(r, net.res_b.weight, net.res_b.bias, false);
    for (size_t i = 0; i < r.feat.size(); ++i) r.feat[i] = std::max(0.0, r.feat[i] + e2.feat[i]);
    DenseField u1 = dense_unpool(r, e1);
    DenseField d1 = dense_conv(dense_concat(u1, e1), net.up1.weight, net.up1.bias, true);
    DenseField u0 = dense_unpool(d1, e0);
    return dense_conv(u0, net.up2.weight, net.up2.bias, true);
}

std::vector<VoxelCoord> random_occupancy(Rng& rng, int res, int count) {
    std::map<VoxelCoord, bool> used;
    while (static_cast<int>(used.size()) < count) {
        VoxelCoord c{static_cast<int32_t>(rng.uniform_int(res)),
                     static_cast<int32_t>(rng.uniform_int(res)),
                     static_cast<int32_t>(rng.uniform_int(res))};
        used[c] = true;
    }
    std::vector<VoxelCoord> out;
    for (const auto& [c, _] : used) out.push_back(c);
    return out;
}

SparseVoxelGrid grid_from_coords(const std::vector<VoxelCoord>& coords) {
    Tensor pts = Tensor::zeros({static_cast<int64_t>(coords.size()), 3});
    auto p = pts.mutable_data();
    for (size_t i = 0; i < coords.size(); ++i)
        for (int j = 0; j < 3; ++j) p[3 * i + j] = coords[i][j] + 0.5;
    return voxelize(pts, 1.0);
}

}  // namespace

TEST(Voxelize, FloorFormula) {
    Tensor pts = Tensor::from_data({1, 3}, {2.7, -1.3, 0.5});
    SparseVoxelGrid grid = voxelize(pts, 1.0);
    ASSERT_EQ(grid.voxel_count(), 1);
    EXPECT_EQ(grid.voxel_coords[0], (VoxelCoord{2, -2, 0}));
}

TEST(Voxelize, MergesDuplicates) {
    Tensor pts = Tensor::from_data({2, 3}, {0.1, 0.1, 0.1, 0.2, 0.2, 0.2});
    SparseVoxelGrid grid = voxelize(pts, 1.0);
    ASSERT_EQ(grid.voxel_count(), 1);
    EXPECT_EQ(grid.voxel_coords[0], (VoxelCoord{0, 0, 0}));
    EXPECT_EQ(grid.point_to_voxel[0], 0);
    EXPECT_EQ(grid.point_to_voxel[1], 0);
}

TEST(Voxelize, RandomPointsMatchBruteForce) {
    Rng rng(90);
    Tensor pts = random_tensor({1000, 3}, rng, 0.0, 4.0 - 1e-9);
    SparseVoxelGrid grid = voxelize(pts, 1.0);
    EXPECT_LE(grid.voxel_count(), 64);
    EXPECT_LE(grid.voxel_count(), grid.point_count());
    for (int64_t i = 0; i < 1000; ++i) {
        const VoxelCoord expect{static_cast<int32_t>(std::floor(pts.at(3 * i))),
                                static_cast<int32_t>(std::floor(pts.at(3 * i + 1))),
                                static_cast<int32_t>(std::floor(pts.at(3 * i + 2)))};
        EXPECT_EQ(grid.voxel_coords[grid.point_to_voxel[i]], expect);
    }
    // coordinates unique
    for (size_t i = 1; i < grid.voxel_coords.size(); ++i)
        EXPECT_LT(grid.voxel_coords[i - 1], grid.voxel_coords[i]);
}

TEST(Voxelize, RejectsBadGridSize) {
    Tensor pts = Tensor::from_data({1, 3}, {0, 0, 0});
    EXPECT_THROW(voxelize(pts, 0.0), ParamError);
    EXPECT_THROW(voxelize(pts, -1.0), ParamError);
}

TEST(SparseConv, IdentityCenterKernelPassesThrough) {
    const int64_t c = 4;
    Tensor w = Tensor::zeros({27, c, c});
    auto pw = w.mutable_data();
    for (int64_t i = 0; i < c; ++i) pw[(13 * c + i) * c + i] = 1.0;  // center offset
    Tensor b = Tensor::zeros({c});
    Rng rng(91);
    Tensor f = random_tensor({1, c}, rng);
    std::vector<int64_t> nbr(27, -1);
    nbr[13] = 0;
    Tensor out = sparse_conv3(f, nbr, w, b);
    for (int64_t i = 0; i < c; ++i) EXPECT_DOUBLE_EQ(out.at(i), f.at(i));
}

TEST(SparseConv, AveragingKernelMixesAdjacentOnly) {
    // voxels at (0,0,0), (1,0,0) adjacent; (9,9,9) isolated
    std::vector<VoxelCoord> coords{{0, 0, 0}, {1, 0, 0}, {9, 9, 9}};
    SparseVoxelGrid grid = grid_from_coords(coords);
    VoxelHierarchy h = build_hierarchy(grid, 1);
    const int64_t c = 2;
    Tensor w = Tensor::zeros({27, c, c});
    auto pw = w.mutable_data();
    for (int o = 0; o < 27; ++o)
        for (int64_t i = 0; i < c; ++i) pw[(static_cast<int64_t>(o) * c + i) * c + i] = 1.0 / 27;
    Tensor b = Tensor::zeros({c});
    Tensor f = Tensor::from_data({3, 2}, {1, 10, 2, 20, 5, 50});
    Tensor out = sparse_conv3(f, h.levels[0].nbr, w, b);
    // dense oracle: each output mixes occupied neighbors only
    EXPECT_NEAR(out.at(0), (1.0 + 2.0) / 27, 1e-12);
    EXPECT_NEAR(out.at(1), (10.0 + 20.0) / 27, 1e-12);
    EXPECT_NEAR(out.at(2), (1.0 + 2.0) / 27, 1e-12);
    EXPECT_NEAR(out.at(4), 5.0 / 27, 1e-12);  // isolated voxel sees only itself
    EXPECT_NEAR(out.at(5), 50.0 / 27, 1e-12);
}

TEST(SparseConv, GradCheck) {
    Rng rng(92);
    std::vector<VoxelCoord> coords{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {2, 2, 2}};
    SparseVoxelGrid grid = grid_from_coords(coords);
    VoxelHierarchy h = build_hierarchy(grid, 1);
    SparseConvLayer layer = make_sparse_conv(3, 2, rng);
    Tensor f = random_tensor({4, 3}, rng).set_requires_grad(true);
    Tensor probe = random_tensor({4, 2}, rng);
    auto loss = [&]() {
        return mean(mul(sparse_conv3(f, h.levels[0].nbr, layer.weight, layer.bias), probe));
    };
    auto fval = [&]() { return loss().item(); };
    backward(loss());
    for (Tensor* t : {&f, &layer.weight, &layer.bias})
        for (int64_t i : gsd::test::sample_indices(t->numel(), 12, 93))
            EXPECT_LT(rel_err(t->grad()[i], fd_grad(fval, *t, i)), 1e-4);
}

TEST(SparseUNet, TranslationEquivariance) {
    Rng rng(94);
    SparseUNet net = make_sparse_unet(rng);
    std::vector<VoxelCoord> coords = random_occupancy(rng, 6, 20);
    SparseVoxelGrid grid = grid_from_coords(coords);
    VoxelHierarchy h = build_hierarchy(grid);
    Tensor base = net.forward(h);

    std::vector<VoxelCoord> shifted;
    for (auto c : coords) shifted.push_back({c[0] + 6, c[1] + 6, c[2] + 6});  // even shift
    SparseVoxelGrid grid2 = grid_from_coords(shifted);
    VoxelHierarchy h2 = build_hierarchy(grid2);
    Tensor moved = net.forward(h2);

    ASSERT_EQ(base.numel(), moved.numel());
    for (int64_t i = 0; i < base.numel(); ++i) EXPECT_EQ(base.at(i), moved.at(i));
}

TEST(SparseUNet, MatchesDenseOracleOn16CubeBoxes) {
    Rng rng(95);
    SparseUNet net = make_sparse_unet(rng);
    for (int trial = 0; trial < 5; ++trial) {
        const auto coords = random_occupancy(rng, 16, 10 + 30 * trial);
        SparseVoxelGrid grid = grid_from_coords(coords);
        VoxelHierarchy h = build_hierarchy(grid);
        Tensor sparse_out = net.forward(h);
        DenseField dense_out = dense_unet(net, grid.voxel_coords, 16);
        for (size_t i = 0; i < grid.voxel_coords.size(); ++i) {
            const VoxelCoord c = grid.voxel_coords[i];
            for (int ch = 0; ch < SparseUNet::kOut; ++ch)
                ASSERT_NEAR(sparse_out.at(static_cast<int64_t>(i) * SparseUNet::kOut + ch),
                            dense_out.get(c[0], c[1], c[2], ch), 1e-8)
                    << "trial " << trial << " voxel " << i << " ch " << ch;
        }
    }
}

TEST(FuseFeatures, SharedVoxelSharesGeometricRow) {
    Rng rng(96);
    GeometryFeatureNet net = make_feature_net(rng);
    Tensor pts = Tensor::from_data({3, 3}, {0.2, 0.2, 0.2, 0.3, 0.3, 0.3, 5.0, 5.0, 5.0});
    SparseVoxelGrid grid = voxelize(pts, 1.0);
    VoxelHierarchy h = build_hierarchy(grid);
    GeometryFeatures feats = net.forward(pts, grid, h);
    for (int64_t c = 0; c < 32; ++c) {
        EXPECT_EQ(feats.f_geometric.at(c), feats.f_geometric.at(32 + c));  // same voxel
    }
    // identity rows differ between the two co-voxel points
    double diff = 0;
    for (int64_t c = 0; c < 32; ++c)
        diff += std::abs(feats.f_identity.at(c) - feats.f_identity.at(32 + c));
    EXPECT_GT(diff, 1e-6);
}

TEST(FuseFeatures, ZeroFinalFusionLayerGivesZeroFeatures) {
    Rng rng(97);
    GeometryFeatureNet net = make_feature_net(rng);
    auto& last = net.fusion_mlp.layers.back();
    for (auto& v : last.weight.mutable_data()) v = 0;
    for (auto& v : last.bias.mutable_data()) v = 0;
    Tensor pts = random_tensor({4, 3}, rng);
    SparseVoxelGrid grid = voxelize(pts, 0.5);
    VoxelHierarchy h = build_hierarchy(grid);
    GeometryFeatures feats = net.forward(pts, grid, h);
    for (int64_t i = 0; i < feats.f_fuse.numel(); ++i) EXPECT_DOUBLE_EQ(feats.f_fuse.at(i), 0.0);
}

TEST(FuseFeatures, StagedCompositionOracle) {
    Rng rng(98);
    GeometryFeatureNet net = make_feature_net(rng);
    Tensor pts = random_tensor({5, 3}, rng, -1, 1);
    SparseVoxelGrid grid = voxelize(pts, 0.4);
    VoxelHierarchy h = build_hierarchy(grid);
    GeometryFeatures feats = net.forward(pts, grid, h);

    // stage 1: identity MLP by hand (affine+relu, affine)
    auto run_mlp = [](const Mlp& mlp, const std::vector<double>& in) {
        std::vector<double> cur = in;
        for (size_t li = 0; li < mlp.layers.size(); ++li) {
            const auto& l = mlp.layers[li];
            std::vector<double> nxt(static_cast<size_t>(l.out_width()));
            for (int64_t o = 0; o < l.out_width(); ++o) {
                double acc = l.bias.at(o);
                for (int64_t i = 0; i < l.in_width(); ++i)
                    acc += l.weight.at(o * l.in_width() + i) * cur[static_cast<size_t>(i)];
                nxt[static_cast<size_t>(o)] =
                    (l.act == Activation::Relu) ? std::max(0.0, acc) : acc;
            }
            cur = std::move(nxt);
        }
        return cur;
    };
    // stage 2: voxel features from the (separately tested) U-Net, gathered by map
    Tensor vox = net.unet.forward(h);
    for (int64_t p = 0; p < 5; ++p) {
        std::vector<double> x{pts.at(3 * p), pts.at(3 * p + 1), pts.at(3 * p + 2)};
        const auto fp = run_mlp(net.identity_mlp, x);
        std::vector<double> cat;
        const int64_t v = grid.point_to_voxel[p];
        for (int64_t c = 0; c < 32; ++c) cat.push_back(vox.at(32 * v + c));
        for (double val : fp) cat.push_back(val);
        const auto fused = run_mlp(net.fusion_mlp, cat);
        for (int64_t c = 0; c < 64; ++c)
            EXPECT_NEAR(feats.f_fuse.at(64 * p + c), fused[static_cast<size_t>(c)], 1e-10);
    }
}

TEST(FuseFeatures, StaleMapRejected) {
    Rng rng(99);
    GeometryFeatureNet net = make_feature_net(rng);
    Tensor pts = random_tensor({4, 3}, rng);
    SparseVoxelGrid grid = voxelize(pts, 0.5);
    VoxelHierarchy h = build_hierarchy(grid);
    Tensor more = random_tensor({5, 3}, rng);
    EXPECT_THROW(net.forward(more, grid, h), ContractError);
}

TEST(FuseFeatures, PermutationEquivariance) {
    Rng rng(100);
    GeometryFeatureNet net = make_feature_net(rng);
    Tensor pts = random_tensor({6, 3}, rng, -1, 1);
    SparseVoxelGrid grid = voxelize(pts, 0.5);
    VoxelHierarchy h = build_hierarchy(grid);
    Tensor fuse = net.forward(pts, grid, h).f_fuse;

    const std::vector<int64_t> perm{3, 1, 5, 0, 4, 2};
    Tensor pts2 = Tensor::zeros({6, 3});
    auto p2 = pts2.mutable_data();
    for (int64_t i = 0; i < 6; ++i)
        for (int j = 0; j < 3; ++j) p2[3 * i + j] = pts.at(3 * perm[i] + j);
    SparseVoxelGrid grid2 = voxelize(pts2, 0.5);
    VoxelHierarchy h2 = build_hierarchy(grid2);
    Tensor fuse2 = net.forward(pts2, grid2, h2).f_fuse;
    for (int64_t i = 0; i < 6; ++i)
        for (int64_t c = 0; c < 64; ++c)
            EXPECT_EQ(fuse2.at(64 * i + c), fuse.at(64 * perm[i] + c));
}

TEST(FuseFeatures, PositionGradientFlowsThroughIdentityBranchOnly) {
    Rng rng(101);
    GeometryFeatureNet net = make_feature_net(rng);
    // positions mid-voxel so finite differences never cross a voxel boundary
    Tensor pts = Tensor::from_data({3, 3}, {0.25, 0.25, 0.25, 0.75, 0.25, 0.25,
                                            0.25, 0.75, 0.75});
    pts.set_requires_grad(true);
    SparseVoxelGrid grid = voxelize(pts, 0.5);
    VoxelHierarchy h = build_hierarchy(grid);
    Tensor probe = random_tensor({3, 64}, rng);
    auto loss = [&]() { return mean(mul(net.forward(pts, grid, h).f_fuse, probe)); };
    auto f = [&]() { return loss().item(); };
    backward(loss());
    double total = 0;
    for (int64_t i = 0; i < pts.numel(); ++i) {
        const double fd = fd_grad(f, pts, i);
        EXPECT_LT(rel_err(pts.grad()[i], fd), 1e-4);
        total += std::abs(pts.grad()[i]);
    }
    EXPECT_GT(total, 1e-8);  // identity branch carries nonzero gradient
}

TEST(FuseFeatures, AblatedGeometricBranchZeroesGeometricRows) {
    Rng rng(102);
    GeometryFeatureNet net = make_feature_net(rng);
    net.geometric_enabled = false;
    Tensor pts = random_tensor({4, 3}, rng);
    SparseVoxelGrid grid = voxelize(pts, 0.5);
    VoxelHierarchy h = build_hierarchy(grid);
    GeometryFeatures feats = net.forward(pts, grid, h);
    for (int64_t i = 0; i < feats.f_geometric.numel(); ++i)
        EXPECT_DOUBLE_EQ(feats.f_geometric.at(i), 0.0);
    // fusion still runs on the identity features
    double mag = 0;
    for (int64_t i = 0; i < feats.f_fuse.numel(); ++i) mag += std::abs(feats.f_fuse.at(i));
    EXPECT_GT(mag, 1e-6);
}
