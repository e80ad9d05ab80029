#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace slidenav {

/// Deterministic RNG with fixed sampling algorithms.
///
/// std::mt19937_64 is bit-exact across platforms, but the standard
/// distributions are not; the transforms here are spelled out so that
/// identical seeds give identical streams on every build.
class DetRng {
public:
    explicit DetRng(std::uint64_t seed) : engine_(seed), seed_base_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    /// Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [lo, hi] inclusive. Uses rejection to stay unbiased.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        const std::uint64_t range = static_cast<std::uint64_t>(hi - lo) + 1;
        if (range == 0) return static_cast<std::int64_t>(engine_());
        const std::uint64_t limit = std::uint64_t(-1) - (std::uint64_t(-1) % range);
        std::uint64_t v = engine_();
        while (v >= limit) v = engine_();
        return lo + static_cast<std::int64_t>(v % range);
    }

    /// Standard normal via Box-Muller (polar form avoided to keep the
    /// consumption count fixed at two draws per pair).
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * M_PI * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /// Derive an independent child stream (e.g. one per slide).
    DetRng child(std::uint64_t salt) const {
        return DetRng(mix(seed_base_, salt));
    }

private:
    static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
        std::uint64_t x = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
        x ^= x >> 30;
        x *= 0xbf58476d1ce4e5b9ULL;
        x ^= x >> 27;
        x *= 0x94d049bb133111ebULL;
        x ^= x >> 31;
        return x;
    }

    std::mt19937_64 engine_;
    std::uint64_t seed_base_ = 0;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

/// 64-bit FNV-1a; used for content hashes embedded in artifacts.
inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace slidenav
