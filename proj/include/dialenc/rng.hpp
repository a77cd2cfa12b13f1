#pragma once

#include <cstdint>
#include <random>

namespace dialenc {

// splitmix64; used both as a seed mixer and to derive per-sample streams.
inline uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline uint64_t hash_combine(uint64_t a, uint64_t b) { return mix64(a ^ mix64(b)); }

inline uint64_t derive_seed(uint64_t seed, uint64_t step, uint64_t index) {
    return hash_combine(hash_combine(seed, step), index);
}

// Deterministic RNG. The engine is std::mt19937_64 (bit-exact per the
// standard); the distributions are hand-rolled because the std ones are
// implementation-defined and would break cross-compiler reproducibility.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // uniform in [0, n)
    int uniform_int(int n) { return static_cast<int>(next_u64() % static_cast<uint64_t>(n)); }

    // uniform in [lo, hi] inclusive
    int uniform_range(int lo, int hi) { return lo + uniform_int(hi - lo + 1); }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    bool bernoulli(double p) { return uniform() < p; }

    double normal() {
        // Box-Muller, one value per call (discard the pair partner to keep
        // the consumption pattern simple and deterministic).
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    // normal with |x| <= 2*std, resampled
    double truncated_normal(double stddev) {
        double x = normal();
        while (x < -2.0 || x > 2.0) x = normal();
        return x * stddev;
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace dialenc
