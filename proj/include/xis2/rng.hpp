#ifndef XIS2_RNG_HPP
#define XIS2_RNG_HPP

#include <cmath>
#include <cstdint>
#include <random>

namespace xis2 {

// Deterministic RNG. mt19937_64 has a standardized output sequence; the
// uniform/normal transforms are hand-rolled so results do not depend on the
// standard library's distribution implementations.
class Rng {
public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    uint64_t next_u64() { return eng_(); }

    // uniform in [0,1)
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // inclusive integer range
    int64_t uniform_int(int64_t lo, int64_t hi) {
        uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        return lo + static_cast<int64_t>(eng_() % span);
    }

    // Box-Muller, one value per call (the cosine branch only, stateless)
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

private:
    std::mt19937_64 eng_;
};

// Stable seed derivation so every consumer (corpus item, training step,
// parameter init) gets an independent stream from one root seed.
inline uint64_t derive_seed(uint64_t root, uint64_t stream, uint64_t index = 0) {
    uint64_t x = root ^ (0x9e3779b97f4a7c15ULL + stream * 0xbf58476d1ce4e5b9ULL +
                         index * 0x94d049bb133111ebULL);
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ULL;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebULL;
    x ^= x >> 31;
    return x;
}

}  // namespace xis2

#endif
