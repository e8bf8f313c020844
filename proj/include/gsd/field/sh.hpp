#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "gsd/core/ops.hpp"
#include "gsd/field/geom3.hpp"

namespace gsd {

// Real spherical harmonics basis up to degree 3, in the ordering used by
// point-based renderers. Coefficients are stored channel-major per Gaussian:
// sh[g, ch*K + k] with K = (deg+1)^2.

inline constexpr int sh_coeff_count(int degree) { return (degree + 1) * (degree + 1); }

namespace detail {

inline constexpr real kSH0 = real(0.28209479177387814);
inline constexpr real kSH1 = real(0.4886025119029199);
inline constexpr real kSH2[5] = {real(1.0925484305920792), real(-1.0925484305920792),
                                 real(0.31539156525252005), real(-1.0925484305920792),
                                 real(0.5462742152960396)};
inline constexpr real kSH3[7] = {real(-0.5900435899266435), real(2.890611442640554),
                                 real(-0.4570457994644658), real(0.3731763325901154),
                                 real(-0.4570457994644658), real(1.445305721320277),
                                 real(-0.5900435899266435)};

}  // namespace detail

// Basis values at a unit direction; `basis` must hold sh_coeff_count(degree).
inline void sh_basis(const Vec3& d, int degree, real* basis) {
    const real x = d.x(), y = d.y(), z = d.z();
    basis[0] = detail::kSH0;
    if (degree < 1) return;
    basis[1] = -detail::kSH1 * y;
    basis[2] = detail::kSH1 * z;
    basis[3] = -detail::kSH1 * x;
    if (degree < 2) return;
    const real xx = x * x, yy = y * y, zz = z * z;
    basis[4] = detail::kSH2[0] * x * y;
    basis[5] = detail::kSH2[1] * y * z;
    basis[6] = detail::kSH2[2] * (real(2) * zz - xx - yy);
    basis[7] = detail::kSH2[3] * x * z;
    basis[8] = detail::kSH2[4] * (xx - yy);
    if (degree < 3) return;
    basis[9] = detail::kSH3[0] * y * (real(3) * xx - yy);
    basis[10] = detail::kSH3[1] * x * y * z;
    basis[11] = detail::kSH3[2] * y * (real(4) * zz - xx - yy);
    basis[12] = detail::kSH3[3] * z * (real(2) * zz - real(3) * xx - real(3) * yy);
    basis[13] = detail::kSH3[4] * x * (real(4) * zz - xx - yy);
    basis[14] = detail::kSH3[5] * z * (xx - yy);
    basis[15] = detail::kSH3[6] * x * (xx - real(3) * yy);
}

// d(basis_k)/d(direction); grad is [K][3].
inline void sh_basis_grad(const Vec3& d, int degree, real (*grad)[3]) {
    const real x = d.x(), y = d.y(), z = d.z();
    const int k = sh_coeff_count(degree);
    for (int i = 0; i < k; ++i) grad[i][0] = grad[i][1] = grad[i][2] = real(0);
    if (degree < 1) return;
    grad[1][1] = -detail::kSH1;
    grad[2][2] = detail::kSH1;
    grad[3][0] = -detail::kSH1;
    if (degree < 2) return;
    grad[4][0] = detail::kSH2[0] * y;
    grad[4][1] = detail::kSH2[0] * x;
    grad[5][1] = detail::kSH2[1] * z;
    grad[5][2] = detail::kSH2[1] * y;
    grad[6][0] = detail::kSH2[2] * real(-2) * x;
    grad[6][1] = detail::kSH2[2] * real(-2) * y;
    grad[6][2] = detail::kSH2[2] * real(4) * z;
    grad[7][0] = detail::kSH2[3] * z;
    grad[7][2] = detail::kSH2[3] * x;
    grad[8][0] = detail::kSH2[4] * real(2) * x;
    grad[8][1] = detail::kSH2[4] * real(-2) * y;
    if (degree < 3) return;
    const real xx = x * x, yy = y * y, zz = z * z;
    grad[9][0] = detail::kSH3[0] * real(6) * x * y;
    grad[9][1] = detail::kSH3[0] * (real(3) * xx - real(3) * yy);
    grad[10][0] = detail::kSH3[1] * y * z;
    grad[10][1] = detail::kSH3[1] * x * z;
    grad[10][2] = detail::kSH3[1] * x * y;
    grad[11][0] = detail::kSH3[2] * real(-2) * x * y;
    grad[11][1] = detail::kSH3[2] * (real(4) * zz - xx - real(3) * yy);
    grad[11][2] = detail::kSH3[2] * real(8) * y * z;
    grad[12][0] = detail::kSH3[3] * real(-6) * x * z;
    grad[12][1] = detail::kSH3[3] * real(-6) * y * z;
    grad[12][2] = detail::kSH3[3] * (real(6) * zz - real(3) * xx - real(3) * yy);
    grad[13][0] = detail::kSH3[4] * (real(4) * zz - real(3) * xx - yy);
    grad[13][1] = detail::kSH3[4] * real(-2) * x * y;
    grad[13][2] = detail::kSH3[4] * real(8) * x * z;
    grad[14][0] = detail::kSH3[5] * real(2) * x * z;
    grad[14][1] = detail::kSH3[5] * real(-2) * y * z;
    grad[14][2] = detail::kSH3[5] * (xx - yy);
    grad[15][0] = detail::kSH3[6] * (real(3) * xx - real(3) * yy);
    grad[15][1] = detail::kSH3[6] * real(-6) * x * y;
}

// Plain evaluation for one Gaussian: coeffs are 3*K channel-major, dir unit.
// Basis contraction, +0.5 shift, clamp to [0,1].
inline Vec3 eval_sh_color_value(const real* coeffs, const Vec3& dir, int degree) {
    const int k = sh_coeff_count(degree);
    real basis[16];
    sh_basis(dir, degree, basis);
    Vec3 rgb;
    for (int ch = 0; ch < 3; ++ch) {
        real acc = real(0.5);
        for (int i = 0; i < k; ++i) acc += coeffs[ch * k + i] * basis[i];
        rgb[ch] = std::min(real(1), std::max(real(0), acc));
    }
    return rgb;
}

// Differentiable batched evaluation. View directions are computed from the
// (deformed) world positions and the camera center, so position gradients
// include the view-dependence path.
inline Tensor eval_sh_color(const Tensor& sh, const Tensor& positions, const Vec3& cam_center,
                            int degree) {
    const int k = sh_coeff_count(degree);
    if (sh.rank() != 2 || sh.dim(1) != 3 * k)
        throw ShapeError("eval_sh_color: sh must be [N," + std::to_string(3 * k) + "]");
    if (positions.rank() != 2 || positions.dim(1) != 3 || positions.dim(0) != sh.dim(0))
        throw ShapeError("eval_sh_color: positions must be [N,3] matching sh");
    const int64_t n = sh.dim(0);
    Tensor out = Tensor::zeros({n, 3});
    std::vector<char> clamped(static_cast<size_t>(3 * n), 0);
    {
        const auto ps = sh.data(), px = positions.data();
        auto po = out.mutable_data();
        for (int64_t g = 0; g < n; ++g) {
            const Vec3 xw(px[3 * g], px[3 * g + 1], px[3 * g + 2]);
            const Vec3 d = (xw - cam_center).normalized();
            real basis[16];
            sh_basis(d, degree, basis);
            for (int ch = 0; ch < 3; ++ch) {
                real acc = real(0.5);
                for (int i = 0; i < k; ++i) acc += ps[g * 3 * k + ch * k + i] * basis[i];
                if (acc < real(0)) {
                    acc = real(0);
                    clamped[3 * g + ch] = 1;
                } else if (acc > real(1)) {
                    acc = real(1);
                    clamped[3 * g + ch] = 1;
                }
                po[3 * g + ch] = acc;
            }
        }
    }
    if (auto node = detail::make_node({sh, positions}, {out})) {
        auto ish = sh.impl(), ix = positions.impl();
        std::weak_ptr<detail::TensorImpl> wo = out.impl();
        node->backward = [ish, ix, wo, cam_center, degree, k, n,
                          clamped = std::move(clamped)]() {
            const auto* gout = detail::out_grad(wo);
            if (!gout) return;
            if (ish->requires_grad) detail::ensure_grad(*ish);
            if (ix->requires_grad) detail::ensure_grad(*ix);
            for (int64_t g = 0; g < n; ++g) {
                const real* px = ix->data.data() + 3 * g;
                const Vec3 xw(px[0], px[1], px[2]);
                const Vec3 u = xw - cam_center;
                const real len = u.norm();
                const Vec3 d = u / len;
                real basis[16];
                real bgrad[16][3];
                sh_basis(d, degree, basis);
                sh_basis_grad(d, degree, bgrad);
                Vec3 gdir = Vec3::Zero();
                for (int ch = 0; ch < 3; ++ch) {
                    if (clamped[3 * g + ch]) continue;
                    const real gc = (*gout)[3 * g + ch];
                    if (gc == real(0)) continue;
                    const real* c = ish->data.data() + g * 3 * k + ch * k;
                    if (ish->requires_grad) {
                        real* dsh = ish->grad.data() + g * 3 * k + ch * k;
                        for (int i = 0; i < k; ++i) dsh[i] += gc * basis[i];
                    }
                    if (ix->requires_grad) {
                        for (int i = 0; i < k; ++i) {
                            gdir.x() += gc * c[i] * bgrad[i][0];
                            gdir.y() += gc * c[i] * bgrad[i][1];
                            gdir.z() += gc * c[i] * bgrad[i][2];
                        }
                    }
                }
                if (ix->requires_grad && gdir != Vec3::Zero()) {
                    const Vec3 gx = (gdir - d * d.dot(gdir)) / len;
                    real* dxp = ix->grad.data() + 3 * g;
                    dxp[0] += gx.x();
                    dxp[1] += gx.y();
                    dxp[2] += gx.z();
                }
            }
        };
    }
    return out;
}

}  // namespace gsd
