#pragma once

#include <cmath>
#include <vector>

#include "gsd/core/ops.hpp"
#include "gsd/field/covariance.hpp"
#include "gsd/render/camera.hpp"

namespace gsd {

// EWA splat projection: camera-space mean, perspective-Jacobian projection of
// the 3D covariance to a 2D footprint (dilated for anti-aliasing), and
// frustum/footprint culling. Depth and radii are plain data (sorting and tile
// assignment are not differentiated); mean2d/cov2d carry gradients back to
// the world-space inputs.
struct ProjectedSplats {
    Tensor mean2d;              // [N,2] pixel coordinates
    Tensor cov2d;               // [N,3] packed (xx, xy, yy), dilated
    std::vector<real> depth;    // [N] camera-space z
    std::vector<real> radius;   // [N] 3-sigma footprint radius in pixels; 0 = culled
    int64_t visible_count = 0;
};

inline constexpr real kCovDilation = real(0.3);  // pixel^2 anti-aliasing floor

inline ProjectedSplats project_splats(const Tensor& positions, const Tensor& cov3d,
                                      const Camera& cam) {
    if (positions.rank() != 2 || positions.dim(1) != 3 || cov3d.rank() != 2 ||
        cov3d.dim(1) != 6 || cov3d.dim(0) != positions.dim(0))
        throw ShapeError("project_splats expects positions [N,3] and cov3d [N,6]");
    cam.validate();
    const int64_t n = positions.dim(0);

    ProjectedSplats out;
    out.mean2d = Tensor::zeros({n, 2});
    out.cov2d = Tensor::zeros({n, 3});
    out.depth.assign(static_cast<size_t>(n), real(0));
    out.radius.assign(static_cast<size_t>(n), real(0));

    const real limx = real(1.3) * cam.tan_half_fov_x();
    const real limy = real(1.3) * cam.tan_half_fov_y();
    const Mat3 w3 = cam.rotation;

    {
        const auto px = positions.data();
        const auto pc = cov3d.data();
        auto pm = out.mean2d.mutable_data();
        auto pv = out.cov2d.mutable_data();
        for (int64_t i = 0; i < n; ++i) {
            const Vec3 xw(px[3 * i], px[3 * i + 1], px[3 * i + 2]);
            const Vec3 p = cam.to_camera(xw);
            const real z = p.z();
            if (!(z > cam.near_plane) || !(z < cam.far_plane)) continue;  // frustum cull
            out.depth[i] = z;

            const real u = cam.fx * p.x() / z + cam.cx;
            const real v = cam.fy * p.y() / z + cam.cy;

            const real txz = std::clamp(p.x() / z, -limx, limx);
            const real tyz = std::clamp(p.y() / z, -limy, limy);
            // J rows: d(u)/d(p), d(v)/d(p), with the off-axis ratio clamped
            Eigen::Matrix<real, 2, 3> J;
            J << cam.fx / z, 0, -cam.fx * txz / z, 0, cam.fy / z, -cam.fy * tyz / z;
            const Eigen::Matrix<real, 2, 3> M = J * w3;
            const Mat3 sigma = unpack_sym3(pc.data() + 6 * i);
            Mat2 v2 = M * sigma * M.transpose();
            v2(0, 0) += kCovDilation;
            v2(1, 1) += kCovDilation;

            const real mid = (v2(0, 0) + v2(1, 1)) / 2;
            const real disc = std::sqrt(std::max(real(0), mid * mid - v2.determinant()));
            const real lambda_max = mid + disc;
            const real r = std::ceil(real(3) * std::sqrt(std::max(real(0), lambda_max)));
            // 3-sigma footprint misses the image entirely -> cull
            if (u + r < 0 || u - r > cam.width || v + r < 0 || v - r > cam.height) continue;

            pm[2 * i] = u;
            pm[2 * i + 1] = v;
            pv[3 * i] = v2(0, 0);
            pv[3 * i + 1] = v2(0, 1);
            pv[3 * i + 2] = v2(1, 1);
            out.radius[i] = r;
            ++out.visible_count;
        }
    }

    auto radius = out.radius;  // captured copy for the backward pass
    if (auto node = detail::make_node({positions, cov3d}, {out.mean2d, out.cov2d})) {
        auto ix = positions.impl(), ic = cov3d.impl();
        std::weak_ptr<detail::TensorImpl> wm = out.mean2d.impl(), wc = out.cov2d.impl();
        node->backward = [ix, ic, wm, wc, cam, limx, limy, w3, n, radius = std::move(radius)]() {
            const auto* gm = detail::out_grad(wm);
            const auto* gc = detail::out_grad(wc);
            if (!gm && !gc) return;
            if (ix->requires_grad) detail::ensure_grad(*ix);
            if (ic->requires_grad) detail::ensure_grad(*ic);
            for (int64_t i = 0; i < n; ++i) {
                if (radius[i] <= 0) continue;
                const Vec3 xw(ix->data[3 * i], ix->data[3 * i + 1], ix->data[3 * i + 2]);
                const Vec3 p = cam.to_camera(xw);
                const real z = p.z();
                Vec3 dp = Vec3::Zero();

                if (gm) {
                    const real gu = (*gm)[2 * i], gv = (*gm)[2 * i + 1];
                    dp.x() += gu * cam.fx / z;
                    dp.y() += gv * cam.fy / z;
                    dp.z() += -gu * cam.fx * p.x() / (z * z) - gv * cam.fy * p.y() / (z * z);
                }

                if (gc) {
                    const real ga = (*gc)[3 * i], gb = (*gc)[3 * i + 1], gcc = (*gc)[3 * i + 2];
                    Mat2 gfull;
                    gfull << ga, gb / 2, gb / 2, gcc;

                    const real rx = p.x() / z, ry = p.y() / z;
                    const bool clx = rx < -limx || rx > limx;
                    const bool cly = ry < -limy || ry > limy;
                    const real txz = std::clamp(rx, -limx, limx);
                    const real tyz = std::clamp(ry, -limy, limy);
                    Eigen::Matrix<real, 2, 3> J;
                    J << cam.fx / z, 0, -cam.fx * txz / z, 0, cam.fy / z, -cam.fy * tyz / z;
                    const Eigen::Matrix<real, 2, 3> M = J * w3;
                    const Mat3 sigma = unpack_sym3(ic->data.data() + 6 * i);

                    if (ic->requires_grad) {
                        const Mat3 ds = M.transpose() * gfull * M;
                        real* dcov = ic->grad.data() + 6 * i;
                        dcov[0] += ds(0, 0);
                        dcov[1] += ds(0, 1) + ds(1, 0);
                        dcov[2] += ds(0, 2) + ds(2, 0);
                        dcov[3] += ds(1, 1);
                        dcov[4] += ds(1, 2) + ds(2, 1);
                        dcov[5] += ds(2, 2);
                    }

                    if (ix->requires_grad) {
                        const Eigen::Matrix<real, 2, 3> dM =
                            real(2) * gfull * M * sigma;  // gfull, sigma symmetric
                        const Eigen::Matrix<real, 2, 3> dJ = dM * w3.transpose();
                        // J00 = fx/z, J02 = -fx*txz/z, J11 = fy/z, J12 = -fy*tyz/z
                        dp.z() += dJ(0, 0) * (-cam.fx / (z * z));
                        dp.z() += dJ(1, 1) * (-cam.fy / (z * z));
                        real dtxz = dJ(0, 2) * (-cam.fx / z);
                        real dtyz = dJ(1, 2) * (-cam.fy / z);
                        dp.z() += dJ(0, 2) * (cam.fx * txz / (z * z));
                        dp.z() += dJ(1, 2) * (cam.fy * tyz / (z * z));
                        if (!clx) {
                            dp.x() += dtxz / z;
                            dp.z() += -dtxz * p.x() / (z * z);
                        }
                        if (!cly) {
                            dp.y() += dtyz / z;
                            dp.z() += -dtyz * p.y() / (z * z);
                        }
                    }
                }

                if (ix->requires_grad) {
                    const Vec3 dxw = w3.transpose() * dp;
                    ix->grad[3 * i] += dxw.x();
                    ix->grad[3 * i + 1] += dxw.y();
                    ix->grad[3 * i + 2] += dxw.z();
                }
            }
        };
    }
    return out;
}

}  // namespace gsd
