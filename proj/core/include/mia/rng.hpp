#pragma once

#include <cmath>
#include <cstdint>

namespace mia {

/// Portable deterministic generator used everywhere randomness is needed.
///
/// State update (xorshift64*):
///   s ^= s >> 12;  s ^= s << 25;  s ^= s >> 27;  output = s * 0x2545F4914F6CDD1D
///
/// The raw seed is passed through one splitmix64 step so that seed 0 and
/// other small seeds still give a usable nonzero state. Identical seeds give
/// identical streams on every platform.
class Rng {
  public:
    explicit Rng(std::uint64_t seed = 0) : state_(splitmix64(seed)) {
        if (state_ == 0) state_ = 0x9E3779B97F4A7C15ULL;
    }

    std::uint64_t next_u64() {
        state_ ^= state_ >> 12;
        state_ ^= state_ << 25;
        state_ ^= state_ >> 27;
        return state_ * 0x2545F4914F6CDD1DULL;
    }

    /// Uniform double in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). n must be > 0.
    std::uint64_t below(std::uint64_t n) {
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    /// Standard normal via Box-Muller (one draw per call, two uniforms consumed).
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    double normal(double mean, double sigma) { return mean + sigma * normal(); }

    /// Deterministically derive an independent substream (for per-case seeds).
    std::uint64_t fork_seed() { return next_u64(); }

    static std::uint64_t splitmix64(std::uint64_t x) {
        x += 0x9E3779B97F4A7C15ULL;
        x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
        x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
        return x ^ (x >> 31);
    }

  private:
    std::uint64_t state_;
};

}  // namespace mia
