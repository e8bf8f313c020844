#pragma once

#include <string>
#include <vector>

#include "gsd/core/ops.hpp"
#include "gsd/core/random.hpp"
#include "gsd/data/ply.hpp"
#include "gsd/field/rotation6d.hpp"
#include "gsd/field/sh.hpp"

namespace gsd {

// Canonical scene: all per-Gaussian attributes as learnable leaf tensors.
// Scales are stored in log space and opacities as logits so the optimizer
// works unconstrained; activation happens on the way into the renderer.
struct GaussianCloud {
    Tensor positions;       // [N,3] world space
    Tensor rot6d;           // [N,6] (a1, a2)
    Tensor log_scales;      // [N,3]
    Tensor opacity_logits;  // [N,1]
    Tensor sh_coeffs;       // [N, 3*(deg+1)^2] channel-major
    int sh_degree = 1;

    int64_t count() const { return positions.defined() ? positions.dim(0) : 0; }

    Tensor activated_scales() const { return gsd::exp(log_scales); }
    Tensor activated_opacity() const { return sigmoid(opacity_logits); }

    std::vector<Tensor> parameters() const {
        return {positions, rot6d, log_scales, opacity_logits, sh_coeffs};
    }

    void mark_learnable() {
        positions.set_requires_grad(true).set_name("cloud.positions");
        rot6d.set_requires_grad(true).set_name("cloud.rot6d");
        log_scales.set_requires_grad(true).set_name("cloud.log_scales");
        opacity_logits.set_requires_grad(true).set_name("cloud.opacity_logits");
        sh_coeffs.set_requires_grad(true).set_name("cloud.sh_coeffs");
    }

    // Rejects degenerate 6D rows (invariant at construction time).
    void validate() const {
        const auto r = rot6d.data();
        for (int64_t i = 0; i < count(); ++i) {
            const Vec3 a1(r[6 * i], r[6 * i + 1], r[6 * i + 2]);
            const Vec3 a2(r[6 * i + 3], r[6 * i + 4], r[6 * i + 5]);
            f_v2m(a1, a2);  // throws RotationDegeneracyError on bad rows
        }
    }
};

inline GaussianCloud make_cloud(int64_t n, int sh_degree) {
    GaussianCloud cloud;
    cloud.sh_degree = sh_degree;
    cloud.positions = Tensor::zeros({n, 3});
    cloud.rot6d = Tensor::zeros({n, 6});
    cloud.log_scales = Tensor::zeros({n, 3});
    cloud.opacity_logits = Tensor::zeros({n, 1});
    cloud.sh_coeffs = Tensor::zeros({n, 3 * sh_coeff_count(sh_degree)});
    auto r = cloud.rot6d.mutable_data();
    for (int64_t i = 0; i < n; ++i)
        for (int j = 0; j < 6; ++j) r[6 * i + j] = kIdentity6[j];
    return cloud;
}

// --------------------------------------------------------------------------
// PLY import/export. Vertex properties:
//   x y z  a1x a1y a1z a2x a2y a2z  log_sx log_sy log_sz  opacity_logit
//   f_0 .. f_{3K-1}   (channel-major SH coefficients)
// Import also accepts plain xyz-only clouds (positions seeded, the rest
// defaulted), which is how dataset seed point clouds come in.

inline void save_cloud_ply(const std::string& path, const GaussianCloud& cloud) {
    const int k = sh_coeff_count(cloud.sh_degree);
    std::vector<std::string> props{"x",  "y",  "z",  "a1x", "a1y", "a1z", "a2x",
                                   "a2y", "a2z", "log_sx", "log_sy", "log_sz", "opacity_logit"};
    for (int i = 0; i < 3 * k; ++i) props.push_back("f_" + std::to_string(i));
    std::vector<std::vector<double>> rows;
    rows.reserve(static_cast<size_t>(cloud.count()));
    const auto px = cloud.positions.data();
    const auto pr = cloud.rot6d.data();
    const auto ps = cloud.log_scales.data();
    const auto po = cloud.opacity_logits.data();
    const auto pc = cloud.sh_coeffs.data();
    for (int64_t i = 0; i < cloud.count(); ++i) {
        std::vector<double> row;
        row.reserve(props.size());
        for (int j = 0; j < 3; ++j) row.push_back(px[3 * i + j]);
        for (int j = 0; j < 6; ++j) row.push_back(pr[6 * i + j]);
        for (int j = 0; j < 3; ++j) row.push_back(ps[3 * i + j]);
        row.push_back(po[i]);
        for (int j = 0; j < 3 * k; ++j) row.push_back(pc[3 * k * i + j]);
        rows.push_back(std::move(row));
    }
    save_ply(path, props, rows);
}

inline GaussianCloud load_cloud_ply(const std::string& path, int sh_degree_hint = 1) {
    const PlyCloud ply = load_ply(path);
    const int ix = ply.find("x"), iy = ply.find("y"), iz = ply.find("z");
    if (ix < 0 || iy < 0 || iz < 0) throw DataError(path + ": missing x/y/z properties");
    const int64_t n = static_cast<int64_t>(ply.rows.size());

    const bool full = ply.find("a1x") >= 0 && ply.find("opacity_logit") >= 0;
    int k = sh_coeff_count(sh_degree_hint);
    if (full) {
        int nf = 0;
        while (ply.find("f_" + std::to_string(nf)) >= 0) ++nf;
        if (nf % 3 != 0) throw DataError(path + ": SH coefficient count not divisible by 3");
        k = nf / 3;
        int deg = -1;
        for (int d = 0; d <= 3; ++d)
            if (sh_coeff_count(d) == k) deg = d;
        if (deg < 0) throw DataError(path + ": SH coefficient count does not match degree 0..3");
        sh_degree_hint = deg;
    }

    GaussianCloud cloud = make_cloud(n, sh_degree_hint);
    auto px = cloud.positions.mutable_data();
    for (int64_t i = 0; i < n; ++i) {
        px[3 * i] = static_cast<real>(ply.rows[i][ix]);
        px[3 * i + 1] = static_cast<real>(ply.rows[i][iy]);
        px[3 * i + 2] = static_cast<real>(ply.rows[i][iz]);
    }
    if (!full) return cloud;

    auto read = [&](const std::string& name, int64_t i) {
        const int idx = ply.find(name);
        if (idx < 0) throw DataError(path + ": missing property " + name);
        return static_cast<real>(ply.rows[i][idx]);
    };
    auto pr = cloud.rot6d.mutable_data();
    auto ps = cloud.log_scales.mutable_data();
    auto po = cloud.opacity_logits.mutable_data();
    auto pc = cloud.sh_coeffs.mutable_data();
    static const char* kRotProps[6] = {"a1x", "a1y", "a1z", "a2x", "a2y", "a2z"};
    static const char* kScaleProps[3] = {"log_sx", "log_sy", "log_sz"};
    for (int64_t i = 0; i < n; ++i) {
        for (int j = 0; j < 6; ++j) pr[6 * i + j] = read(kRotProps[j], i);
        for (int j = 0; j < 3; ++j) ps[3 * i + j] = read(kScaleProps[j], i);
        po[i] = read("opacity_logit", i);
        for (int j = 0; j < 3 * k; ++j) pc[3 * k * i + j] = read("f_" + std::to_string(j), i);
    }
    cloud.validate();
    return cloud;
}

}  // namespace gsd
