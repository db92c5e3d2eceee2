#pragma once

#include <cmath>
#include <cstdint>

namespace grq {

// Deterministic, platform-independent RNG (splitmix64 core).
//
// std::mt19937 + std::uniform_real_distribution would be simpler but the
// distributions are not pinned by the standard, and every artifact here
// (datasets, init, sampling order) must be bit-reproducible across builds.
class Rng {
  public:
    explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller (deterministic, no cached spare).
    double gaussian() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 <= 0.0) u1 = 0x1.0p-53;  // log(0) guard
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    /// Uniform index in [0, n). Multiply-shift map; bias is < 2^-53 and
    /// irrelevant here, determinism is what matters.
    std::size_t index(std::size_t n) {
        return std::size_t((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    /// Derive an independent stream (e.g. one per trajectory).
    Rng fork(std::uint64_t salt) {
        return Rng(next_u64() ^ (salt * 0x9e3779b97f4a7c15ull + 0x6a09e667f3bcc909ull));
    }

  private:
    std::uint64_t state_;
};

}  // namespace grq
