#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "gsd/core/ops.hpp"
#include "gsd/core/threading.hpp"
#include "gsd/render/projection.hpp"

namespace gsd {

// Tile rasterizer constants, inherited from the reference point-based
// renderer this pipeline mirrors.
struct RasterizeOptions {
    int tile_size = 16;
    real alpha_clamp = real(0.99);
    real alpha_skip = real(1) / real(255);
    real transmittance_stop = real(1e-4);
    real sigma_cutoff_sq = real(9);  // 3-sigma ellipse test, squared Mahalanobis
};

struct RasterizeStats {
    int64_t skipped_degenerate = 0;  // non-invertible cov2d after dilation
};

namespace detail {

struct TileWorkspace {
    // per-splat prepared data, in global depth order
    std::vector<int64_t> order;              // sorted visible splat ids
    std::vector<real> conic;                 // [3 * order.size()] packed (A,B,C)
    std::vector<std::vector<int32_t>> tiles; // per tile: indices into `order`
    std::vector<real> final_t;               // [H*W]
    std::vector<int32_t> last_contrib;       // [H*W] index into the tile list, -1 none
    int tiles_x = 0, tiles_y = 0;
};

}  // namespace detail

// Front-to-back alpha compositing over 16x16 tiles. Splats are depth-sorted
// globally (camera z, splat index as tiebreaker); each tile composites the
// splats whose 3-sigma circle overlaps it. Differentiable w.r.t. mean2d,
// cov2d, colors and alphas.
inline Tensor rasterize(const ProjectedSplats& proj, const Tensor& colors, const Tensor& alphas,
                        int width, int height, const Vec3& background,
                        const RasterizeOptions& opts = {}, RasterizeStats* stats = nullptr) {
    const int64_t n = proj.mean2d.dim(0);
    if (colors.rank() != 2 || colors.dim(1) != 3 || colors.dim(0) != n || alphas.rank() != 2 ||
        alphas.dim(1) != 1 || alphas.dim(0) != n)
        throw ShapeError("rasterize expects colors [N,3] and alphas [N,1]");
    for (int64_t i = 0; i < n; ++i)
        if (proj.radius[i] > 0 &&
            (!std::isfinite(proj.mean2d.at(2 * i)) || !std::isfinite(alphas.at(i)) ||
             !std::isfinite(colors.at(3 * i))))
            throw ContractError("rasterize: non-finite splat fields");

    auto ws = std::make_shared<detail::TileWorkspace>();
    ws->tiles_x = (width + opts.tile_size - 1) / opts.tile_size;
    ws->tiles_y = (height + opts.tile_size - 1) / opts.tile_size;

    // Global deterministic depth order.
    for (int64_t i = 0; i < n; ++i)
        if (proj.radius[i] > 0) ws->order.push_back(i);
    std::sort(ws->order.begin(), ws->order.end(), [&](int64_t a, int64_t b) {
        if (proj.depth[a] != proj.depth[b]) return proj.depth[a] < proj.depth[b];
        return a < b;
    });

    // Conics; degenerate footprints are dropped from the lists.
    const auto pm = proj.mean2d.data();
    const auto pv = proj.cov2d.data();
    ws->conic.assign(ws->order.size() * 3, real(0));
    std::vector<char> degenerate(ws->order.size(), 0);
    int64_t skipped = 0;
    for (size_t k = 0; k < ws->order.size(); ++k) {
        const int64_t i = ws->order[k];
        const real a = pv[3 * i], b = pv[3 * i + 1], c = pv[3 * i + 2];
        const real det = a * c - b * b;
        if (!(det > real(1e-12))) {
            degenerate[k] = 1;
            ++skipped;
            continue;
        }
        ws->conic[3 * k] = c / det;
        ws->conic[3 * k + 1] = -b / det;
        ws->conic[3 * k + 2] = a / det;
    }
    if (stats) stats->skipped_degenerate = skipped;

    // Tile lists in depth order.
    ws->tiles.assign(static_cast<size_t>(ws->tiles_x * ws->tiles_y), {});
    for (size_t k = 0; k < ws->order.size(); ++k) {
        if (degenerate[k]) continue;
        const int64_t i = ws->order[k];
        const real u = pm[2 * i], v = pm[2 * i + 1], r = proj.radius[i];
        const int tx0 = std::max(0, static_cast<int>(std::floor((u - r) / opts.tile_size)));
        const int tx1 = std::min(ws->tiles_x - 1,
                                 static_cast<int>(std::floor((u + r) / opts.tile_size)));
        const int ty0 = std::max(0, static_cast<int>(std::floor((v - r) / opts.tile_size)));
        const int ty1 = std::min(ws->tiles_y - 1,
                                 static_cast<int>(std::floor((v + r) / opts.tile_size)));
        for (int ty = ty0; ty <= ty1; ++ty)
            for (int tx = tx0; tx <= tx1; ++tx)
                ws->tiles[static_cast<size_t>(ty * ws->tiles_x + tx)].push_back(
                    static_cast<int32_t>(k));
    }

    Tensor image = Tensor::zeros({height, width, 3});
    ws->final_t.assign(static_cast<size_t>(width * height), real(1));
    ws->last_contrib.assign(static_cast<size_t>(width * height), -1);

    const auto pc = colors.data();
    const auto pa = alphas.data();
    auto img = image.mutable_data();

    parallel_for(0, ws->tiles_x * ws->tiles_y, 1, [&](int64_t t0, int64_t t1) {
        for (int64_t t = t0; t < t1; ++t) {
            const int tx = static_cast<int>(t) % ws->tiles_x;
            const int ty = static_cast<int>(t) / ws->tiles_x;
            const auto& list = ws->tiles[static_cast<size_t>(t)];
            const int px0 = tx * opts.tile_size, py0 = ty * opts.tile_size;
            const int px1 = std::min(width, px0 + opts.tile_size);
            const int py1 = std::min(height, py0 + opts.tile_size);
            for (int py = py0; py < py1; ++py) {
                for (int px = px0; px < px1; ++px) {
                    const real sx = px + real(0.5), sy = py + real(0.5);
                    real T = 1;
                    real acc[3] = {0, 0, 0};
                    int32_t last = -1;
                    for (size_t li = 0; li < list.size(); ++li) {
                        const int32_t k = list[li];
                        const int64_t i = ws->order[k];
                        const real dx = sx - pm[2 * i], dy = sy - pm[2 * i + 1];
                        const real qa = ws->conic[3 * k], qb = ws->conic[3 * k + 1],
                                   qc = ws->conic[3 * k + 2];
                        const real q = qa * dx * dx + 2 * qb * dx * dy + qc * dy * dy;
                        if (q > opts.sigma_cutoff_sq || q < 0) continue;
                        real alpha = pa[i] * std::exp(real(-0.5) * q);
                        if (alpha > opts.alpha_clamp) alpha = opts.alpha_clamp;
                        if (alpha < opts.alpha_skip) continue;
                        const real test_t = T * (1 - alpha);
                        if (test_t < opts.transmittance_stop) break;
                        acc[0] += T * alpha * pc[3 * i];
                        acc[1] += T * alpha * pc[3 * i + 1];
                        acc[2] += T * alpha * pc[3 * i + 2];
                        T = test_t;
                        last = static_cast<int32_t>(li);
                    }
                    const size_t pix = static_cast<size_t>(py) * width + px;
                    img[3 * pix] = acc[0] + T * background.x();
                    img[3 * pix + 1] = acc[1] + T * background.y();
                    img[3 * pix + 2] = acc[2] + T * background.z();
                    ws->final_t[pix] = T;
                    ws->last_contrib[pix] = last;
                }
            }
        }
    });

    if (auto node = detail::make_node({proj.mean2d, proj.cov2d, colors, alphas}, {image})) {
        auto im = proj.mean2d.impl(), iv = proj.cov2d.impl();
        auto icol = colors.impl(), ia = alphas.impl();
        std::weak_ptr<detail::TensorImpl> wimg = image.impl();
        node->backward = [im, iv, icol, ia, wimg, ws, width, height, background, opts]() {
            const auto* gimg = detail::out_grad(wimg);
            if (!gimg) return;
            for (auto* t : {im.get(), iv.get(), icol.get(), ia.get()})
                if (t->requires_grad) detail::ensure_grad(*t);

            // Per-tile local gradient buffers (9 slots per tile-list entry:
            // du, dv, da, db, dc, dr, dg, dbcol, dalpha), merged in fixed tile
            // order after the parallel sweep for deterministic accumulation.
            const size_t n_tiles = ws->tiles.size();
            std::vector<std::vector<real>> local(n_tiles);

            parallel_for(0, static_cast<int64_t>(n_tiles), 1, [&](int64_t t0, int64_t t1) {
                for (int64_t t = t0; t < t1; ++t) {
                    const auto& list = ws->tiles[static_cast<size_t>(t)];
                    if (list.empty()) continue;
                    auto& buf = local[static_cast<size_t>(t)];
                    buf.assign(list.size() * 9, real(0));
                    const int tx = static_cast<int>(t) % ws->tiles_x;
                    const int ty = static_cast<int>(t) / ws->tiles_x;
                    const int px0 = tx * opts.tile_size, py0 = ty * opts.tile_size;
                    const int px1 = std::min(width, px0 + opts.tile_size);
                    const int py1 = std::min(height, py0 + opts.tile_size);
                    for (int py = py0; py < py1; ++py) {
                        for (int px = px0; px < px1; ++px) {
                            const size_t pix = static_cast<size_t>(py) * width + px;
                            const int32_t last = ws->last_contrib[pix];
                            const real* gp = gimg->data() + 3 * pix;
                            if (gp[0] == 0 && gp[1] == 0 && gp[2] == 0) continue;
                            const real sx = px + real(0.5), sy = py + real(0.5);
                            real t_cur = ws->final_t[pix];
                            // rear accumulation starts with the background term
                            real rear[3] = {t_cur * background.x(), t_cur * background.y(),
                                            t_cur * background.z()};
                            for (int32_t li = last; li >= 0; --li) {
                                const int32_t k = list[static_cast<size_t>(li)];
                                const int64_t i = ws->order[k];
                                const real dx = sx - im->data[2 * i],
                                           dy = sy - im->data[2 * i + 1];
                                const real qa = ws->conic[3 * k], qb = ws->conic[3 * k + 1],
                                           qc = ws->conic[3 * k + 2];
                                const real q =
                                    qa * dx * dx + 2 * qb * dx * dy + qc * dy * dy;
                                if (q > opts.sigma_cutoff_sq || q < 0) continue;
                                const real gauss = std::exp(real(-0.5) * q);
                                const real raw = ia->data[i] * gauss;
                                const bool clamped = raw > opts.alpha_clamp;
                                const real alpha = clamped ? opts.alpha_clamp : raw;
                                if (alpha < opts.alpha_skip) continue;
                                const real t_before = t_cur / (1 - alpha);

                                real* slot = buf.data() + 9 * li;
                                const real* col = icol->data.data() + 3 * i;
                                real dalpha = 0;
                                for (int ch = 0; ch < 3; ++ch) {
                                    slot[5 + ch] += gp[ch] * alpha * t_before;  // d color
                                    dalpha +=
                                        gp[ch] * (t_before * col[ch] - rear[ch] / (1 - alpha));
                                }
                                if (!clamped) {
                                    slot[8] += dalpha * gauss;  // d alpha_peak
                                    const real dq =
                                        dalpha * ia->data[i] * gauss * real(-0.5);
                                    slot[2] += dq * dx * dx;          // dA
                                    slot[3] += dq * 2 * dx * dy;      // dB
                                    slot[4] += dq * dy * dy;          // dC
                                    const real ddx = dq * (2 * qa * dx + 2 * qb * dy);
                                    const real ddy = dq * (2 * qb * dx + 2 * qc * dy);
                                    slot[0] -= ddx;  // d mean_u (d = pixel - mean)
                                    slot[1] -= ddy;
                                }
                                for (int ch = 0; ch < 3; ++ch)
                                    rear[ch] += t_before * alpha * col[ch];
                                t_cur = t_before;
                            }
                        }
                    }
                }
            });

            // Merge tile buffers in tile order; conic grads are chained to the
            // packed covariance here (dSigma = -Conic * G * Conic).
            for (size_t t = 0; t < n_tiles; ++t) {
                const auto& list = ws->tiles[t];
                const auto& buf = local[t];
                if (buf.empty()) continue;
                for (size_t li = 0; li < list.size(); ++li) {
                    const int32_t k = list[li];
                    const int64_t i = ws->order[k];
                    const real* slot = buf.data() + 9 * li;
                    if (im->requires_grad) {
                        im->grad[2 * i] += slot[0];
                        im->grad[2 * i + 1] += slot[1];
                    }
                    if (iv->requires_grad &&
                        (slot[2] != 0 || slot[3] != 0 || slot[4] != 0)) {
                        const real A = ws->conic[3 * k], B = ws->conic[3 * k + 1],
                                   C = ws->conic[3 * k + 2];
                        const real ga = slot[2], gb2 = slot[3] / 2, gc = slot[4];
                        // dCov = -Conic * Gconic * Conic with both symmetric
                        const real m00 = A * ga + B * gb2, m01 = A * gb2 + B * gc;
                        const real m10 = B * ga + C * gb2, m11 = B * gb2 + C * gc;
                        iv->grad[3 * i] -= m00 * A + m01 * B;
                        iv->grad[3 * i + 1] -= 2 * (m00 * B + m01 * C);
                        iv->grad[3 * i + 2] -= m10 * B + m11 * C;
                    }
                    if (icol->requires_grad) {
                        icol->grad[3 * i] += slot[5];
                        icol->grad[3 * i + 1] += slot[6];
                        icol->grad[3 * i + 2] += slot[7];
                    }
                    if (ia->requires_grad) ia->grad[i] += slot[8];
                }
            }
        };
    }
    return image;
}

}  // namespace gsd
