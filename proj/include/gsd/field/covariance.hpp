#pragma once

#include "gsd/core/ops.hpp"
#include "gsd/field/rotation6d.hpp"

namespace gsd {

// 3D covariances are passed around packed as the 6 independent entries
// (xx, xy, xz, yy, yz, zz) of the symmetric matrix.

inline Mat3 unpack_sym3(const real* p) {
    Mat3 m;
    m << p[0], p[1], p[2], p[1], p[3], p[4], p[2], p[4], p[5];
    return m;
}

// Sigma = R S S^T R^T with S = diag(s); the unique entries are computed once
// and mirrored, so the result is exactly symmetric.
inline Mat3 build_covariance(const Rotation6D& r, const Vec3& s) {
    if (!(s.x() > 0 && s.y() > 0 && s.z() > 0))
        throw ParamError("build_covariance: scale must be strictly positive");
    const Mat3 rot = f_v2m(r);
    const Vec3 s2 = s.cwiseProduct(s);
    Mat3 sigma;
    for (int i = 0; i < 3; ++i)
        for (int j = i; j < 3; ++j) {
            const real v = rot(i, 0) * s2[0] * rot(j, 0) + rot(i, 1) * s2[1] * rot(j, 1) +
                           rot(i, 2) * s2[2] * rot(j, 2);
            sigma(i, j) = v;
            sigma(j, i) = v;
        }
    return sigma;
}

// Batched differentiable covariance: rot [N,9] row-major matrices, scales
// [N,3] activated (strictly positive) -> packed [N,6].
inline Tensor build_cov3d(const Tensor& rot, const Tensor& scales) {
    if (rot.rank() != 2 || rot.dim(1) != 9 || scales.rank() != 2 || scales.dim(1) != 3 ||
        rot.dim(0) != scales.dim(0))
        throw ShapeError("build_cov3d expects rot [N,9] and scales [N,3]");
    const int64_t n = rot.dim(0);
    Tensor out = Tensor::zeros({n, 6});
    {
        const auto pr = rot.data(), ps = scales.data();
        auto po = out.mutable_data();
        for (int64_t g = 0; g < n; ++g) {
            const real* R = pr.data() + 9 * g;
            const real* s = ps.data() + 3 * g;
            real* o = po.data() + 6 * g;
            const real s2[3] = {s[0] * s[0], s[1] * s[1], s[2] * s[2]};
            auto sigma = [&](int i, int j) {
                return R[3 * i] * s2[0] * R[3 * j] + R[3 * i + 1] * s2[1] * R[3 * j + 1] +
                       R[3 * i + 2] * s2[2] * R[3 * j + 2];
            };
            o[0] = sigma(0, 0);
            o[1] = sigma(0, 1);
            o[2] = sigma(0, 2);
            o[3] = sigma(1, 1);
            o[4] = sigma(1, 2);
            o[5] = sigma(2, 2);
        }
    }
    if (auto node = detail::make_node({rot, scales}, {out})) {
        auto ir = rot.impl(), is = scales.impl();
        std::weak_ptr<detail::TensorImpl> wo = out.impl();
        node->backward = [ir, is, wo, n]() {
            const auto* gout = detail::out_grad(wo);
            if (!gout) return;
            if (ir->requires_grad) detail::ensure_grad(*ir);
            if (is->requires_grad) detail::ensure_grad(*is);
            static constexpr int kRowOf[6] = {0, 0, 0, 1, 1, 2};
            static constexpr int kColOf[6] = {0, 1, 2, 1, 2, 2};
            for (int64_t g = 0; g < n; ++g) {
                const real* R = ir->data.data() + 9 * g;
                const real* s = is->data.data() + 3 * g;
                const real* go = gout->data() + 6 * g;
                real* dR = ir->requires_grad ? ir->grad.data() + 9 * g : nullptr;
                real* dS = is->requires_grad ? is->grad.data() + 3 * g : nullptr;
                for (int e = 0; e < 6; ++e) {
                    const real gv = go[e];
                    if (gv == real(0)) continue;
                    const int i = kRowOf[e], j = kColOf[e];
                    for (int k = 0; k < 3; ++k) {
                        const real sk = s[k];
                        const real rik = R[3 * i + k], rjk = R[3 * j + k];
                        if (dR) {
                            if (i == j) {
                                dR[3 * i + k] += gv * real(2) * sk * sk * rik;
                            } else {
                                dR[3 * i + k] += gv * sk * sk * rjk;
                                dR[3 * j + k] += gv * sk * sk * rik;
                            }
                        }
                        if (dS) dS[k] += gv * real(2) * sk * rik * rjk;
                    }
                }
            }
        };
    }
    return out;
}

}  // namespace gsd
