// Deterministic random source. mt19937_64 has a standard-specified output
// sequence, so runs are reproducible across platforms; uniform/gaussian are
// hand-rolled because libstdc++ distributions are not portable either.
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>

#include "diffshield/tensor.hpp"

namespace diffshield {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Collision-resistant stream derivation; plain base^index would alias nearby
// (base, index) pairs.
inline std::uint64_t mix_seed(std::uint64_t base, std::uint64_t stream) {
    return splitmix64(base) ^ stream;
}

struct Rng {
    std::mt19937_64 gen;
    bool have_spare = false;
    double spare = 0.0;

    explicit Rng(std::uint64_t seed) : gen(seed) {}

    // [0, 1), 53-bit mantissa.
    double uniform() { return static_cast<double>(gen() >> 11) * 0x1.0p-53; }

    // Unbiased integer in [0, n).
    std::uint64_t uniform_int(std::uint64_t n) {
        if (n == 0) throw std::invalid_argument("uniform_int: n == 0");
        std::uint64_t lim = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = gen();
        } while (x >= lim);
        return x % n;
    }

    // Box-Muller with pair caching; one gaussian() consumes one uniform pair
    // every other call.
    double gaussian() {
        if (have_spare) {
            have_spare = false;
            return spare;
        }
        double u1 = uniform();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double th = 2.0 * 3.14159265358979323846 * u2;
        spare = r * std::sin(th);
        have_spare = true;
        return r * std::cos(th);
    }

    template <typename S>
    void fill_gaussian(TensorT<S>& t, double scale = 1.0) {
        for (auto& v : t.data) v = static_cast<S>(gaussian() * scale);
    }

    template <typename It>
    void shuffle(It first, It last) {
        auto n = static_cast<std::uint64_t>(last - first);
        for (std::uint64_t i = n; i > 1; --i) {
            std::uint64_t j = uniform_int(i);
            std::swap(first[i - 1], first[j]);
        }
    }
};

}  // namespace diffshield
