#pragma once

// Deterministic random streams. Every consumer derives its own stream from the
// run seed plus a role tag, so reordering one component never perturbs another.

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace ldsa {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Stable stream id from (seed, tag, index). FNV-1a over the tag, then one
// splitmix round to spread the bits.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag, std::uint64_t index = 0) {
    std::uint64_t h = 0xcbf29ce484222325ULL ^ seed;
    for (char c : tag) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    h ^= index * 0x9e3779b97f4a7c15ULL + 0x2545f4914f6cdd1dULL;
    std::uint64_t s = h;
    return splitmix64(s);
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t raw() { return gen_(); }

    // Uniform double in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller; consumes exactly two uniforms per call, no cached spare.
    double gaussian(double sigma = 1.0) {
        double u1 = 1.0 - uniform();  // (0, 1]
        double u2 = uniform();
        return sigma * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    // Standard Gumbel: -log(-log(u)), u clamped away from {0, 1}.
    double gumbel() {
        double u = uniform();
        if (u < 1e-300) u = 1e-300;
        if (u > 1.0 - 1e-16) u = 1.0 - 1e-16;
        return -std::log(-std::log(u));
    }

    // Uniform integer in [0, n), rejection sampled so every value is equally likely.
    int uniform_int(int n) {
        const std::uint64_t bound = ~std::uint64_t{0} - ~std::uint64_t{0} % static_cast<std::uint64_t>(n);
        std::uint64_t x;
        do {
            x = gen_();
        } while (x >= bound);
        return static_cast<int>(x % static_cast<std::uint64_t>(n));
    }

private:
    std::mt19937_64 gen_;
};

inline Rng derive_rng(std::uint64_t seed, std::string_view tag, std::uint64_t index = 0) {
    return Rng(derive_seed(seed, tag, index));
}

}  // namespace ldsa
