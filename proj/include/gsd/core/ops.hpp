#pragma once

#include <Eigen/Core>

#include <cmath>
#include <vector>

#include "gsd/core/tensor.hpp"
#include "gsd/core/threading.hpp"

namespace gsd {

namespace detail {

using EMat = Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const EMat>;
using MutMap = Eigen::Map<EMat>;

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": operand shapes differ");
}

inline void accumulate(TensorImpl& dst, const std::vector<real>& src) {
    ensure_grad(dst);
    for (size_t i = 0; i < src.size(); ++i) dst.grad[i] += src[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops (same shape).

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "add");
    Tensor out = Tensor::zeros(a.shape());
    const auto pa = a.data(), pb = b.data();
    auto po = out.mutable_data();
    for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] + pb[i];
    if (auto node = detail::make_node({a, b}, {out})) {
        auto ia = a.impl(), ib = b.impl();
        std::weak_ptr<detail::TensorImpl> wo = out.impl();
        node->backward = [ia, ib, wo]() {
            const auto* g = detail::out_grad(wo);
            if (!g) return;
            if (ia->requires_grad) detail::accumulate(*ia, *g);
            if (ib->requires_grad) detail::accumulate(*ib, *g);
        };
    }
    return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "sub");
    Tensor out = Tensor::zeros(a.shape());
    const auto pa = a.data(), pb = b.data();
    auto po = out.mutable_data();
    for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] - pb[i];
    if (auto node = detail::make_node({a, b}, {out})) {
        auto ia = a.impl(), ib = b.impl();
        std::weak_ptr<detail::TensorImpl> wo = out.impl();
        node->backward = [ia, ib, wo]() {
            const auto* g = detail::out_grad(wo);
            if (!g) return;
            if (ia->requires_grad) detail::accumulate(*ia, *g);
            if (ib->requires_grad) {
                detail::ensure_grad(*ib);
                for (size_t i = 0; i < g->size(); ++i) ib->grad[i] -= (*g)[i];
            }
        };
    }
    return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "mul");
    Tensor out = Tensor::zeros(a.shape());
    const auto pa = a.data(), pb = b.data();
    auto po = out.mutable_data();
    for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] * pb[i];
    if (auto node = detail::make_node({a, b}, {out})) {
        auto ia = a.impl(), ib = b.impl();
        std::weak_ptr<detail::TensorImpl> wo = out.impl();
        node->backward = [ia, ib, wo]() {
            const auto* g = detail::out_grad(wo);
            if (!g) return;
            if (ia->requires_grad) {
                detail::ensure_grad(*ia);
                for (size_t i = 0; i < g->size(); ++i) ia->grad[i] += (*g)[i] * ib->data[i];
            }
            if (ib->requires_grad) {
                detail::ensure_grad(*ib);
                for (size_t i = 0; i < g->size(); ++i) ib->grad[i] += (*g)[i] * ia->data[i];
            }
        };
    }
    return out;
}

inline Tensor div(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "div");
    Tensor out = Tensor::zeros(a.shape());
    const auto pa = a.data(), pb = b.data();
    auto po = out.mutable_data();
    for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] / pb[i];
    if (auto node = detail::make_node({a, b}, {out})) {
        auto ia = a.impl(), ib = b.impl();
        std::weak_ptr<detail::TensorImpl> wo = out.impl();
        node->backward = [ia, ib, wo]() {
            const auto* g = detail::out_grad(wo);
            if (!g) return;
            if (ia->requires_grad) {
                detail::ensure_grad(*ia);
                for (size_t i = 0; i < g->size(); ++i) ia->grad[i] += (*g)[i] / ib->data[i];
            }
            if (ib->requires_grad) {
                detail::ensure_grad(*ib);
                for (size_t i = 0; i < g->size(); ++i) {
                    const real inv = real(1) / ib->data[i];
                    ib->grad[i] -= (*g)[i] * ia->data[i] * inv * inv;
                }
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// Scalar-argument ops.

inline Tensor add_scalar(const Tensor& a, real c) {
    Tensor out = Tensor::zeros(a.shape());
    const auto pa = a.data();
    auto po = out.mutable_data();
    for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] + c;
    if (auto node = detail::make_node({a}, {out})) {
        auto ia = a.impl();
        std::weak_ptr<detail::TensorImpl> wo = out.impl();
        node->backward = [ia, wo]() {
            if (const auto* g = detail::out_grad(wo)) detail::accumulate(*ia, *g);
        };
    }
    return out;
}

inline Tensor mul_scalar(const Tensor& a, real c) {
    Tensor out = Tensor::zeros(a.shape());
    const auto pa = a.data();
    auto po = out.mutable_data();
    for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] * c;
    if (auto node = detail::make_node({a}, {out})) {
        auto ia = a.impl();
        std::weak_ptr<detail::TensorImpl> wo = out.impl();
        node->backward = [ia, wo, c]() {
            const auto* g = detail::out_grad(wo);
            if (!g) return;
            detail::ensure_grad(*ia);
            for (size_t i = 0; i < g->size(); ++i) ia->grad[i] += (*g)[i] * c;
        };
    }
    return out;
}

// y = max(x, c); gradient passes only where x > c.
inline Tensor max_scalar(const Tensor& a, real c) {
    Tensor out = Tensor::zeros(a.shape());
    const auto pa = a.data();
    auto po = out.mutable_data();
    for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] > c ? pa[i] : c;
    if (auto node = detail::make_node({a}, {out})) {
        auto ia = a.impl();
        std::weak_ptr<detail::TensorImpl> wo = out.impl();
        node->backward = [ia, wo, c]() {
            const auto* g = detail::out_grad(wo);
            if (!g) return;
            detail::ensure_grad(*ia);
            for (size_t i = 0; i < g->size(); ++i)
                if (ia->data[i] > c) ia->grad[i] += (*g)[i];
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// Elementwise unary ops.

inline Tensor neg(const Tensor& a) { return mul_scalar(a, real(-1)); }

inline Tensor relu(const Tensor& a) {
    Tensor out = Tensor::zeros(a.shape());
    const auto pa = a.data();
    auto po = out.mutable_data();
    for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] > real(0) ? pa[i] : real(0);
    if (auto node = detail::make_node({a}, {out})) {
        auto ia = a.impl();
        std::weak_ptr<detail::TensorImpl> wo = out.impl();
        node->backward = [ia, wo]() {
            const auto* g = detail::out_grad(wo);
            if (!g) return;
            detail::ensure_grad(*ia);
            for (size_t i = 0; i < g->size(); ++i)
                if (ia->data[i] > real(0)) ia->grad[i] += (*g)[i];
        };
    }
    return out;
}

inline Tensor sigmoid(const Tensor& a) {
    Tensor out = Tensor::zeros(a.shape());
    const auto pa = a.data();
    auto po = out.mutable_data();
    for (int64_t i = 0; i < a.numel(); ++i) po[i] = real(1) / (real(1) + std::exp(-pa[i]));
    if (auto node = detail::make_node({a}, {out})) {
        auto ia = a.impl();
        std::vector<real> y(out.data().begin(), out.data().end());
        std::weak_ptr<detail::TensorImpl> wo = out.impl();
        node->backward = [ia, wo, y = std::move(y)]() {
            const auto* g = detail::out_grad(wo);
            if (!g) return;
            detail::ensure_grad(*ia);
            for (size_t i = 0; i < g->size(); ++i) ia->grad[i] += (*g)[i] * y[i] * (real(1) - y[i]);
        };
    }
    return out;
}

inline Tensor exp(const Tensor& a) {
    Tensor out = Tensor::zeros(a.shape());
    const auto pa = a.data();
    auto po = out.mutable_data();
    for (int64_t i = 0; i < a.numel(); ++i) po[i] = std::exp(pa[i]);
    if (auto node = detail::make_node({a}, {out})) {
        auto ia = a.impl();
        std::vector<real> y(out.data().begin(), out.data().end());
        std::weak_ptr<detail::TensorImpl> wo = out.impl();
        node->backward = [ia, wo, y = std::move(y)]() {
            const auto* g = detail::out_grad(wo);
            if (!g) return;
            detail::ensure_grad(*ia);
            for (size_t i = 0; i < g->size(); ++i) ia->grad[i] += (*g)[i] * y[i];
        };
    }
    return out;
}

inline Tensor log(const Tensor& a) {
    Tensor out = Tensor::zeros(a.shape());
    const auto pa = a.data();
    auto po = out.mutable_data();
    for (int64_t i = 0; i < a.numel(); ++i) po[i] = std::log(pa[i]);
    if (auto node = detail::make_node({a}, {out})) {
        auto ia = a.impl();
        std::weak_ptr<detail::TensorImpl> wo = out.impl();
        node->backward = [ia, wo]() {
            const auto* g = detail::out_grad(wo);
            if (!g) return;
            detail::ensure_grad(*ia);
            for (size_t i = 0; i < g->size(); ++i) ia->grad[i] += (*g)[i] / ia->data[i];
        };
    }
    return out;
}

inline Tensor sqrt(const Tensor& a) {
    Tensor out = Tensor::zeros(a.shape());
    const auto pa = a.data();
    auto po = out.mutable_data();
    for (int64_t i = 0; i < a.numel(); ++i) po[i] = std::sqrt(pa[i]);
    if (auto node = detail::make_node({a}, {out})) {
        auto ia = a.impl();
        std::vector<real> y(out.data().begin(), out.data().end());
        std::weak_ptr<detail::TensorImpl> wo = out.impl();
        node->backward = [ia, wo, y = std::move(y)]() {
            const auto* g = detail::out_grad(wo);
            if (!g) return;
            detail::ensure_grad(*ia);
            for (size_t i = 0; i < g->size(); ++i)
                ia->grad[i] += (*g)[i] * real(0.5) / y[i];
        };
    }
    return out;
}

inline Tensor abs(const Tensor& a) {
    Tensor out = Tensor::zeros(a.shape());
    const auto pa = a.data();
    auto po = out.mutable_data();
    for (int64_t i = 0; i < a.numel(); ++i) po[i] = std::abs(pa[i]);
    if (auto node = detail::make_node({a}, {out})) {
        auto ia = a.impl();
        std::weak_ptr<detail::TensorImpl> wo = out.impl();
        node->backward = [ia, wo]() {
            const auto* g = detail::out_grad(wo);
            if (!g) return;
            detail::ensure_grad(*ia);
            for (size_t i = 0; i < g->size(); ++i) {
                const real x = ia->data[i];
                if (x > real(0))
                    ia->grad[i] += (*g)[i];
                else if (x < real(0))
                    ia->grad[i] -= (*g)[i];
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reductions.

inline Tensor sum(const Tensor& a) {
    real s = 0;
    for (const real v : a.data()) s += v;
    Tensor out = Tensor::scalar(s);
    if (auto node = detail::make_node({a}, {out})) {
        auto ia = a.impl();
        std::weak_ptr<detail::TensorImpl> wo = out.impl();
        node->backward = [ia, wo]() {
            const auto* g = detail::out_grad(wo);
            if (!g) return;
            detail::ensure_grad(*ia);
            for (auto& v : ia->grad) v += (*g)[0];
        };
    }
    return out;
}

inline Tensor mean(const Tensor& a) {
    if (a.numel() == 0) throw ContractError("mean of empty tensor");
    return mul_scalar(sum(a), real(1) / static_cast<real>(a.numel()));
}

// ---------------------------------------------------------------------------
// Matrix ops (rank-2). Row blocks are dispatched to the pool with fixed chunk
// boundaries, so results do not depend on the thread count.

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw ShapeError("matmul: incompatible shapes");
    const int64_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
    Tensor out = Tensor::zeros({n, m});
    {
        detail::ConstMap A(a.data().data(), n, k), B(b.data().data(), k, m);
        detail::MutMap C(out.mutable_data().data(), n, m);
        parallel_for(0, n, 256, [&](int64_t r0, int64_t r1) {
            C.middleRows(r0, r1 - r0).noalias() = A.middleRows(r0, r1 - r0) * B;
        });
    }
    if (auto node = detail::make_node({a, b}, {out})) {
        auto ia = a.impl(), ib = b.impl();
        std::weak_ptr<detail::TensorImpl> wo = out.impl();
        node->backward = [ia, ib, wo, n, k, m]() {
            const auto* g = detail::out_grad(wo);
            if (!g) return;
            detail::ConstMap G(g->data(), n, m);
            detail::ConstMap A(ia->data.data(), n, k), B(ib->data.data(), k, m);
            if (ia->requires_grad) {
                detail::ensure_grad(*ia);
                detail::MutMap dA(ia->grad.data(), n, k);
                parallel_for(0, n, 256, [&](int64_t r0, int64_t r1) {
                    dA.middleRows(r0, r1 - r0).noalias() +=
                        G.middleRows(r0, r1 - r0) * B.transpose();
                });
            }
            if (ib->requires_grad) {
                detail::ensure_grad(*ib);
                detail::MutMap dB(ib->grad.data(), k, m);
                dB.noalias() += A.transpose() * G;
            }
        };
    }
    return out;
}

// Affine layer: y[n,out] = x[n,in] * W[out,in]^T + b[out].
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.rank() != 2 || w.rank() != 2 || b.rank() != 1)
        throw ShapeError("linear: x must be [n,in], w [out,in], b [out]");
    if (x.dim(1) != w.dim(1) || w.dim(0) != b.dim(0))
        throw ShapeError("linear: width mismatch (in=" + std::to_string(x.dim(1)) +
                         ", w expects " + std::to_string(w.dim(1)) + ")");
    const int64_t n = x.dim(0), in = x.dim(1), out_w = w.dim(0);
    Tensor out = Tensor::zeros({n, out_w});
    {
        detail::ConstMap X(x.data().data(), n, in), W(w.data().data(), out_w, in);
        Eigen::Map<const Eigen::Matrix<real, Eigen::Dynamic, 1>> B(b.data().data(), out_w);
        detail::MutMap Y(out.mutable_data().data(), n, out_w);
        parallel_for(0, n, 256, [&](int64_t r0, int64_t r1) {
            Y.middleRows(r0, r1 - r0).noalias() = X.middleRows(r0, r1 - r0) * W.transpose();
            Y.middleRows(r0, r1 - r0).rowwise() += B.transpose();
        });
    }
    if (auto node = detail::make_node({x, w, b}, {out})) {
        auto ix = x.impl(), iw = w.impl(), ib = b.impl();
        std::weak_ptr<detail::TensorImpl> wo = out.impl();
        node->backward = [ix, iw, ib, wo, n, in, out_w]() {
            const auto* g = detail::out_grad(wo);
            if (!g) return;
            detail::ConstMap G(g->data(), n, out_w);
            detail::ConstMap X(ix->data.data(), n, in), W(iw->data.data(), out_w, in);
            if (ix->requires_grad) {
                detail::ensure_grad(*ix);
                detail::MutMap dX(ix->grad.data(), n, in);
                parallel_for(0, n, 256, [&](int64_t r0, int64_t r1) {
                    dX.middleRows(r0, r1 - r0).noalias() += G.middleRows(r0, r1 - r0) * W;
                });
            }
            if (iw->requires_grad) {
                detail::ensure_grad(*iw);
                detail::MutMap dW(iw->grad.data(), out_w, in);
                dW.noalias() += G.transpose() * X;
            }
            if (ib->requires_grad) {
                detail::ensure_grad(*ib);
                Eigen::Map<Eigen::Matrix<real, Eigen::Dynamic, 1>> dB(ib->grad.data(), out_w);
                dB.noalias() += G.colwise().sum().transpose();
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// Structural ops.

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractError("concat_cols of nothing");
    const int64_t n = parts[0].dim(0);
    int64_t total = 0;
    for (const auto& p : parts) {
        if (p.rank() != 2 || p.dim(0) != n) throw ShapeError("concat_cols: row counts differ");
        total += p.dim(1);
    }
    Tensor out = Tensor::zeros({n, total});
    auto po = out.mutable_data();
    int64_t off = 0;
    for (const auto& p : parts) {
        const int64_t c = p.dim(1);
        const auto pp = p.data();
        for (int64_t r = 0; r < n; ++r)
            for (int64_t j = 0; j < c; ++j) po[r * total + off + j] = pp[r * c + j];
        off += c;
    }
    bool needs = false;
    for (const auto& p : parts) needs = needs || p.requires_grad();
    if (needs) {
        auto node = std::make_shared<detail::Node>();
        node->seq = detail::next_node_seq();
        for (const auto& p : parts) node->inputs.push_back(p.impl());
        node->outputs.push_back(out.impl());
        out.impl()->producer = node;
        out.impl()->requires_grad = true;
        std::weak_ptr<detail::TensorImpl> wo = out.impl();
        auto inputs = node->inputs;
        node->backward = [inputs, wo, n, total]() {
            const auto* g = detail::out_grad(wo);
            if (!g) return;
            int64_t off = 0;
            for (const auto& in : inputs) {
                const int64_t c = in->shape[1];
                if (in->requires_grad) {
                    detail::ensure_grad(*in);
                    for (int64_t r = 0; r < n; ++r)
                        for (int64_t j = 0; j < c; ++j)
                            in->grad[r * c + j] += (*g)[r * total + off + j];
                }
                off += c;
            }
        };
    }
    return out;
}

inline Tensor slice_cols(const Tensor& a, int64_t start, int64_t len) {
    if (a.rank() != 2 || start < 0 || start + len > a.dim(1))
        throw ShapeError("slice_cols: range out of bounds");
    const int64_t n = a.dim(0), c = a.dim(1);
    Tensor out = Tensor::zeros({n, len});
    const auto pa = a.data();
    auto po = out.mutable_data();
    for (int64_t r = 0; r < n; ++r)
        for (int64_t j = 0; j < len; ++j) po[r * len + j] = pa[r * c + start + j];
    if (auto node = detail::make_node({a}, {out})) {
        auto ia = a.impl();
        std::weak_ptr<detail::TensorImpl> wo = out.impl();
        node->backward = [ia, wo, start, len, n, c]() {
            const auto* g = detail::out_grad(wo);
            if (!g) return;
            detail::ensure_grad(*ia);
            for (int64_t r = 0; r < n; ++r)
                for (int64_t j = 0; j < len; ++j)
                    ia->grad[r * c + start + j] += (*g)[r * len + j];
        };
    }
    return out;
}

// Repeats a [c] or [1,c] row n times -> [n,c].
inline Tensor repeat_row(const Tensor& row, int64_t n) {
    int64_t c;
    if (row.rank() == 1)
        c = row.dim(0);
    else if (row.rank() == 2 && row.dim(0) == 1)
        c = row.dim(1);
    else
        throw ShapeError("repeat_row expects a single row");
    Tensor out = Tensor::zeros({n, c});
    const auto pr = row.data();
    auto po = out.mutable_data();
    for (int64_t r = 0; r < n; ++r)
        for (int64_t j = 0; j < c; ++j) po[r * c + j] = pr[j];
    if (auto node = detail::make_node({row}, {out})) {
        auto ir = row.impl();
        std::weak_ptr<detail::TensorImpl> wo = out.impl();
        node->backward = [ir, wo, n, c]() {
            const auto* g = detail::out_grad(wo);
            if (!g) return;
            detail::ensure_grad(*ir);
            for (int64_t r = 0; r < n; ++r)
                for (int64_t j = 0; j < c; ++j) ir->grad[j] += (*g)[r * c + j];
        };
    }
    return out;
}

// out[i] = x[index[i]] (rows); backward scatter-adds.
inline Tensor gather_rows(const Tensor& x, const std::vector<int64_t>& index) {
    if (x.rank() != 2) throw ShapeError("gather_rows expects a rank-2 tensor");
    const int64_t m = x.dim(0), c = x.dim(1), k = static_cast<int64_t>(index.size());
    for (int64_t i : index)
        if (i < 0 || i >= m) throw ContractError("gather_rows: index out of range");
    Tensor out = Tensor::zeros({k, c});
    const auto px = x.data();
    auto po = out.mutable_data();
    for (int64_t r = 0; r < k; ++r)
        for (int64_t j = 0; j < c; ++j) po[r * c + j] = px[index[r] * c + j];
    if (auto node = detail::make_node({x}, {out})) {
        auto ix = x.impl();
        std::weak_ptr<detail::TensorImpl> wo = out.impl();
        node->backward = [ix, wo, index, k, c]() {
            const auto* g = detail::out_grad(wo);
            if (!g) return;
            detail::ensure_grad(*ix);
            for (int64_t r = 0; r < k; ++r)
                for (int64_t j = 0; j < c; ++j)
                    ix->grad[index[r] * c + j] += (*g)[r * c + j];
        };
    }
    return out;
}

// Mean over rows sharing a group id: out[g] = mean_{i: group[i]==g} x[i].
// Every group in [0, n_groups) must be hit by at least one row.
inline Tensor pool_rows_mean(const Tensor& x, const std::vector<int64_t>& group,
                             int64_t n_groups) {
    if (x.rank() != 2 || static_cast<int64_t>(group.size()) != x.dim(0))
        throw ShapeError("pool_rows_mean: group index size mismatch");
    const int64_t m = x.dim(0), c = x.dim(1);
    std::vector<int64_t> counts(static_cast<size_t>(n_groups), 0);
    for (int64_t g : group) {
        if (g < 0 || g >= n_groups) throw ContractError("pool_rows_mean: group id out of range");
        ++counts[static_cast<size_t>(g)];
    }
    for (int64_t g = 0; g < n_groups; ++g)
        if (counts[static_cast<size_t>(g)] == 0)
            throw ContractError("pool_rows_mean: empty group " + std::to_string(g));
    Tensor out = Tensor::zeros({n_groups, c});
    const auto px = x.data();
    auto po = out.mutable_data();
    for (int64_t r = 0; r < m; ++r)
        for (int64_t j = 0; j < c; ++j) po[group[r] * c + j] += px[r * c + j];
    for (int64_t g = 0; g < n_groups; ++g) {
        const real inv = real(1) / static_cast<real>(counts[static_cast<size_t>(g)]);
        for (int64_t j = 0; j < c; ++j) po[g * c + j] *= inv;
    }
    if (auto node = detail::make_node({x}, {out})) {
        auto ix = x.impl();
        std::weak_ptr<detail::TensorImpl> wo = out.impl();
        node->backward = [ix, wo, group, counts, m, c]() {
            const auto* g = detail::out_grad(wo);
            if (!g) return;
            detail::ensure_grad(*ix);
            for (int64_t r = 0; r < m; ++r) {
                const real inv = real(1) / static_cast<real>(counts[static_cast<size_t>(group[r])]);
                for (int64_t j = 0; j < c; ++j)
                    ix->grad[r * c + j] += (*g)[group[r] * c + j] * inv;
            }
        };
    }
    return out;
}

}  // namespace gsd
