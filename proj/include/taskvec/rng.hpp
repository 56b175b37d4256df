#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string_view>
#include <vector>

namespace taskvec {

// FNV-1a, 64 bit. Used to derive per-name RNG stream keys so that the draw
// for one tensor never depends on how many draws another tensor consumed.
constexpr std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Deterministic RNG with explicitly spelled-out distributions. std::mt19937_64
// itself is pinned by the standard, but the std distributions are not, so the
// uniform/normal/shuffle transforms are implemented here by hand.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    // Independent stream for (seed, name). The name carries a short purpose
    // prefix at call sites ("init:", "rand:", ...) so different consumers of
    // the same tensor name do not replay each other's stream.
    static Rng stream(std::uint64_t seed, std::string_view name) {
        return Rng(seed ^ fnv1a64(name));
    }

    std::uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform();
    }

    // Standard normal via Box-Muller. The sine partner is discarded; one call
    // always consumes exactly two raw draws, which keeps streams easy to
    // reason about.
    double normal() {
        double u1 = 1.0 - uniform(); // (0, 1], keeps log finite
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) *
               std::cos(2.0 * std::numbers::pi * u2);
    }

    std::vector<double> normal_vec(std::size_t n) {
        std::vector<double> out(n);
        for (auto& v : out) v = normal();
        return out;
    }

    // Unbiased integer in [0, n) by rejection.
    std::uint64_t bounded(std::uint64_t n) {
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = gen_();
        } while (x >= limit);
        return x % n;
    }

    // Fisher-Yates.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(bounded(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 gen_;
};

} // namespace taskvec
