#pragma once

#include <cmath>
#include <string>

#include "gsd/core/ops.hpp"
#include "gsd/core/tensor.hpp"
#include "gsd/field/geom3.hpp"

namespace gsd {

// Continuous 6D rotation parameterization: two learnable 3-vectors (a1, a2)
// orthonormalized by Gram-Schmidt into the first two columns of a rotation
// matrix, the third column completed by a cross product.

inline constexpr real kRot6dEps = real(1e-8);

// (1,0,0, 0,1,0) maps exactly to the identity matrix.
inline constexpr std::array<real, 6> kIdentity6{1, 0, 0, 0, 1, 0};

struct Rotation6D {
    Vec3 a1;
    Vec3 a2;
};

// Gram-Schmidt map from the 6D vector to SO(3). Columns of the result are
// b1 = N(a1), b2 = N(a2 - (b1.a2) b1), b3 = b1 x b2.
inline Mat3 f_v2m(const Rotation6D& r) {
    const real n1 = r.a1.norm();
    if (n1 <= kRot6dEps)
        throw RotationDegeneracyError("f_v2m: first column vanishes (|a1| <= eps)");
    const Vec3 b1 = r.a1 / n1;
    const Vec3 w = r.a2 - b1.dot(r.a2) * b1;
    const real n2 = w.norm();
    if (n2 <= kRot6dEps)
        throw RotationDegeneracyError("f_v2m: columns are parallel (|a2 - (b1.a2) b1| <= eps)");
    const Vec3 b2 = w / n2;
    const Vec3 b3 = b1.cross(b2);
    Mat3 out;
    out.col(0) = b1;
    out.col(1) = b2;
    out.col(2) = b3;
    return out;
}

inline Mat3 f_v2m(const Vec3& a1, const Vec3& a2) { return f_v2m(Rotation6D{a1, a2}); }

// Re-encodes a rotation matrix as a 6D vector: its first two columns are
// already orthonormal, so f_v2m maps the encoding back exactly.
inline Rotation6D rot6d_from_matrix(const Mat3& m) { return Rotation6D{m.col(0), m.col(1)}; }

namespace detail {

// Per-row forward + adjoint used by the batched op below. Rows are stored
// row-major: out[3*i + j] = R(i, j).
inline void rot6d_row_forward(const real* r6, real* out, int64_t row) {
    const Vec3 a1(r6[0], r6[1], r6[2]);
    const Vec3 a2(r6[3], r6[4], r6[5]);
    Mat3 m;
    try {
        m = f_v2m(a1, a2);
    } catch (const RotationDegeneracyError& e) {
        throw RotationDegeneracyError(std::string(e.what()) + " (row " + std::to_string(row) +
                                      ")");
    }
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) out[3 * i + j] = m(i, j);
}

inline void rot6d_row_backward(const real* r6, const real* gout, real* gr6) {
    const Vec3 a1(r6[0], r6[1], r6[2]);
    const Vec3 a2(r6[3], r6[4], r6[5]);
    const real n1 = a1.norm();
    const Vec3 b1 = a1 / n1;
    const real d = b1.dot(a2);
    const Vec3 w = a2 - d * b1;
    const real n2 = w.norm();
    const Vec3 b2 = w / n2;

    Vec3 gb1(gout[0], gout[3], gout[6]);
    Vec3 gb2(gout[1], gout[4], gout[7]);
    const Vec3 gb3(gout[2], gout[5], gout[8]);

    // b3 = b1 x b2
    gb1 += b2.cross(gb3);
    gb2 += gb3.cross(b1);

    // b2 = w / |w|
    const Vec3 gw = (gb2 - b2 * b2.dot(gb2)) / n2;

    // w = a2 - (b1.a2) b1
    const real gwb1 = gw.dot(b1);
    Vec3 ga2 = gw - gwb1 * b1;
    gb1 += -gwb1 * a2 - d * gw;

    // b1 = a1 / |a1|
    const Vec3 ga1 = (gb1 - b1 * b1.dot(gb1)) / n1;

    for (int i = 0; i < 3; ++i) {
        gr6[i] += ga1[i];
        gr6[3 + i] += ga2[i];
    }
}

}  // namespace detail

// Batched differentiable map [N,6] -> [N,9] of row-major rotation matrices.
inline Tensor rot6d_to_matrix(const Tensor& r6) {
    if (r6.rank() != 2 || r6.dim(1) != 6)
        throw ShapeError("rot6d_to_matrix expects an [N,6] tensor");
    const int64_t n = r6.dim(0);
    Tensor out = Tensor::zeros({n, 9});
    {
        const auto in = r6.data();
        auto po = out.mutable_data();
        for (int64_t i = 0; i < n; ++i)
            detail::rot6d_row_forward(in.data() + 6 * i, po.data() + 9 * i, i);
    }
    if (auto node = detail::make_node({r6}, {out})) {
        auto ir = r6.impl();
        std::weak_ptr<detail::TensorImpl> wo = out.impl();
        node->backward = [ir, wo, n]() {
            const auto* g = detail::out_grad(wo);
            if (!g) return;
            detail::ensure_grad(*ir);
            for (int64_t i = 0; i < n; ++i)
                detail::rot6d_row_backward(ir->data.data() + 6 * i, g->data() + 9 * i,
                                           ir->grad.data() + 6 * i);
        };
    }
    return out;
}

// Row-wise 3x3 matrix product C = A * B on [N,9] tensors.
inline Tensor compose_rotations(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape() || a.rank() != 2 || a.dim(1) != 9)
        throw ShapeError("compose_rotations expects matching [N,9] tensors");
    const int64_t n = a.dim(0);
    Tensor out = Tensor::zeros({n, 9});
    {
        const auto pa = a.data(), pb = b.data();
        auto po = out.mutable_data();
        for (int64_t r = 0; r < n; ++r) {
            const real* A = pa.data() + 9 * r;
            const real* B = pb.data() + 9 * r;
            real* C = po.data() + 9 * r;
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j)
                    C[3 * i + j] =
                        A[3 * i] * B[j] + A[3 * i + 1] * B[3 + j] + A[3 * i + 2] * B[6 + j];
        }
    }
    if (auto node = detail::make_node({a, b}, {out})) {
        auto ia = a.impl(), ib = b.impl();
        std::weak_ptr<detail::TensorImpl> wo = out.impl();
        node->backward = [ia, ib, wo, n]() {
            const auto* g = detail::out_grad(wo);
            if (!g) return;
            if (ia->requires_grad) detail::ensure_grad(*ia);
            if (ib->requires_grad) detail::ensure_grad(*ib);
            for (int64_t r = 0; r < n; ++r) {
                const real* A = ia->data.data() + 9 * r;
                const real* B = ib->data.data() + 9 * r;
                const real* G = g->data() + 9 * r;
                if (ia->requires_grad) {
                    real* dA = ia->grad.data() + 9 * r;
                    for (int i = 0; i < 3; ++i)
                        for (int k = 0; k < 3; ++k)
                            dA[3 * i + k] += G[3 * i] * B[3 * k] + G[3 * i + 1] * B[3 * k + 1] +
                                             G[3 * i + 2] * B[3 * k + 2];
                }
                if (ib->requires_grad) {
                    real* dB = ib->grad.data() + 9 * r;
                    for (int k = 0; k < 3; ++k)
                        for (int j = 0; j < 3; ++j)
                            dB[3 * k + j] +=
                                A[k] * G[j] + A[3 + k] * G[3 + j] + A[6 + k] * G[6 + j];
                }
            }
        };
    }
    return out;
}

}  // namespace gsd
