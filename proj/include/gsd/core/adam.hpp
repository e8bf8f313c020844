#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "gsd/core/tensor.hpp"

namespace gsd {

// Exponential interpolation lr_init -> lr_final over total_steps.
struct LrSchedule {
    real lr_init = 1e-3;
    real lr_final = 1e-3;
    int64_t total_steps = 1;

    real lr_at(int64_t step) const {
        if (step <= 0) return lr_init;
        if (step >= total_steps) return lr_final;
        const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
        return static_cast<real>(lr_init * std::pow(lr_final / lr_init, frac));
    }
};

inline LrSchedule constant_lr(real lr) { return LrSchedule{lr, lr, 1}; }

// Adam with bias correction over one parameter group. Moment buffers are kept
// parallel to the group's parameter list; density control resizes them in
// lockstep with the cloud (see extend_rows / compact_rows).
struct AdamState {
    int64_t step = 0;
    real beta1 = real(0.9);
    real beta2 = real(0.999);
    real eps = real(1e-8);
    LrSchedule lr_schedule;
    std::vector<std::vector<real>> m;
    std::vector<std::vector<real>> v;

    void ensure_buffers(const std::vector<Tensor>& params) {
        if (m.size() != params.size()) {
            m.assign(params.size(), {});
            v.assign(params.size(), {});
        }
        for (size_t i = 0; i < params.size(); ++i) {
            const size_t n = static_cast<size_t>(params[i].numel());
            if (m[i].size() != n) m[i].assign(n, real(0));
            if (v[i].size() != n) v[i].assign(n, real(0));
        }
    }
};

// One Adam update over the group's parameters, reading each tensor's grad
// buffer (empty grad = zero gradient). Parameters are updated in place.
inline void adam_step(AdamState& state, std::vector<Tensor>& params) {
    state.ensure_buffers(params);
    const real lr = state.lr_schedule.lr_at(state.step);
    state.step += 1;
    const real bc1 = real(1) - static_cast<real>(std::pow(state.beta1, state.step));
    const real bc2 = real(1) - static_cast<real>(std::pow(state.beta2, state.step));
    for (size_t p = 0; p < params.size(); ++p) {
        auto data = params[p].mutable_data();
        const auto grad = params[p].grad();
        if (grad.empty()) continue;
        auto& mp = state.m[p];
        auto& vp = state.v[p];
        for (size_t i = 0; i < data.size(); ++i) {
            const real g = grad[i];
            if (std::isnan(g) || std::isinf(g)) {
                const std::string name =
                    params[p].name().empty() ? ("param[" + std::to_string(p) + "]")
                                             : params[p].name();
                throw NumericError("non-finite gradient in " + name + " at element " +
                                   std::to_string(i));
            }
            mp[i] = state.beta1 * mp[i] + (real(1) - state.beta1) * g;
            vp[i] = state.beta2 * vp[i] + (real(1) - state.beta2) * g * g;
            const real m_hat = mp[i] / bc1;
            const real v_hat = vp[i] / bc2;
            data[i] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
        }
    }
}

// Appends `extra` zero elements to the group's buffers for parameter index p.
inline void adam_extend(AdamState& state, size_t p, size_t extra) {
    state.m[p].resize(state.m[p].size() + extra, real(0));
    state.v[p].resize(state.v[p].size() + extra, real(0));
}

// Keeps buffer rows (of `row_width` elements) where keep[row] is true.
inline void adam_compact(AdamState& state, size_t p, const std::vector<char>& keep,
                         size_t row_width) {
    auto compact = [&](std::vector<real>& buf) {
        size_t w = 0;
        for (size_t r = 0; r < keep.size(); ++r) {
            if (!keep[r]) continue;
            for (size_t j = 0; j < row_width; ++j) buf[w * row_width + j] = buf[r * row_width + j];
            ++w;
        }
        buf.resize(w * row_width);
    };
    compact(state.m[p]);
    compact(state.v[p]);
}

}  // namespace gsd
