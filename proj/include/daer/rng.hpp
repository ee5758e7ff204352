#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace daer {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Derives an independent stream seed from (seed, tag, counter). Used so that
// every RNG consumer (init, batch t, search t, ...) is reproducible in
// isolation and insensitive to whether other consumers ran.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag, std::uint64_t counter = 0) {
    std::uint64_t s = seed;
    std::uint64_t a = splitmix64(s);
    s ^= tag * 0x9e3779b97f4a7c15ULL;
    std::uint64_t b = splitmix64(s);
    s ^= counter * 0xd1b54a32d192ed03ULL;
    std::uint64_t c = splitmix64(s);
    return a ^ (b << 1) ^ (c >> 1) ^ counter;
}

// xoshiro256** with splitmix64 seeding and a Box-Muller gaussian.
// Hand-rolled so every stream (including gaussians) is bit-stable across
// platforms and standard libraries.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t sm = seed;
        for (auto& word : state_) word = splitmix64(sm);
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform in [0, 1) with 53 random bits.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform in [0, bound); rejection sampling keeps it unbiased.
    std::uint64_t below(std::uint64_t bound) {
        if (bound == 0) throw std::invalid_argument("Rng::below: bound must be positive");
        const std::uint64_t threshold = (0 - bound) % bound;
        for (;;) {
            const std::uint64_t r = next_u64();
            if (r >= threshold) return r % bound;
        }
    }

    std::size_t index(std::size_t n) { return static_cast<std::size_t>(below(n)); }

    // Standard normal via Box-Muller; caches the spare draw.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = next_double();
        } while (u1 <= 0.0);
        const double u2 = next_double();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi_v<double> * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    template <class It>
    void shuffle(It first, It last) {
        const auto n = static_cast<std::size_t>(last - first);
        for (std::size_t i = n; i > 1; --i) {
            const std::size_t j = index(i);
            std::swap(first[i - 1], first[j]);
        }
    }

    // m distinct indices of [0, n), in random order (partial Fisher-Yates).
    std::vector<std::uint32_t> sample_indices(std::size_t n, std::size_t m) {
        if (m > n) throw std::invalid_argument("Rng::sample_indices: m > n");
        std::vector<std::uint32_t> pool(n);
        for (std::size_t i = 0; i < n; ++i) pool[i] = static_cast<std::uint32_t>(i);
        for (std::size_t i = 0; i < m; ++i) {
            const std::size_t j = i + index(n - i);
            std::swap(pool[i], pool[j]);
        }
        pool.resize(m);
        return pool;
    }

  private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::uint64_t state_[4] = {};
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// Stream tags for counter-based seed derivation.
namespace stream {
inline constexpr std::uint64_t init = 0x494e4954;       // parameter init
inline constexpr std::uint64_t batch = 0x42415443;      // training batch at step t
inline constexpr std::uint64_t probe = 0x50524f42;      // reward probe batch
inline constexpr std::uint64_t search = 0x53524348;     // MCTS at step t
inline constexpr std::uint64_t eval = 0x4556414c;       // evaluation batches
inline constexpr std::uint64_t concepts = 0x434f4e43;   // synthetic concept vectors
inline constexpr std::uint64_t data = 0x44415441;       // retrieval-side datagen
}  // namespace stream

}  // namespace daer
