#pragma once

#include <cmath>
#include <cstdint>

#include "gsd/core/types.hpp"

namespace gsd {

inline constexpr uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Deterministic xoshiro-free generator: splitmix64 state walk. The library
// never uses std:: distributions so that sequences are identical across
// standard libraries. All randomness in a run flows from one --seed through
// derive()d streams.
class Rng {
  public:
    explicit Rng(uint64_t seed) : state_(splitmix64(seed ^ 0x5851f42d4c957f2dull)) {}

    uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ull;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    int64_t uniform_int(int64_t n) {
        return static_cast<int64_t>(next_u64() % static_cast<uint64_t>(n));
    }

    // standard normal via Box-Muller (both values consumed, one returned spare)
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    // Independent child stream; deterministic in (parent seed path, stream id).
    Rng derive(uint64_t stream) const { return Rng(splitmix64(state_ ^ splitmix64(stream))); }

  private:
    uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// Stateless per-item draw, e.g. training-frame selection by iteration index:
// resuming at iteration k reproduces the exact sampling of an uninterrupted run.
inline uint64_t hash_draw(uint64_t seed, uint64_t item) {
    return splitmix64(splitmix64(seed) ^ splitmix64(item * 0x9e3779b97f4a7c15ull + 1));
}

}  // namespace gsd
