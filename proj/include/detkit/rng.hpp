#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <utility>

namespace detkit {

// SplitMix64 (Steele, Lea & Flood). The whole library draws randomness from
// this generator so that splits, scenes and toy-model initialisations are
// bit-identical across platforms and standard-library implementations.
//
//   state += 0x9E3779B97F4A7C15
//   z = state
//   z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//   z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//   return z ^ (z >> 31)
class SplitMix64 {
public:
    using result_type = std::uint64_t;

    explicit constexpr SplitMix64(std::uint64_t seed = 0) noexcept : state_(seed) {}

    constexpr std::uint64_t next() noexcept {
        state_ += 0x9E3779B97F4A7C15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    constexpr std::uint64_t operator()() noexcept { return next(); }
    static constexpr std::uint64_t min() noexcept { return 0; }
    static constexpr std::uint64_t max() noexcept { return ~std::uint64_t{0}; }

    // Uniform in [0, 1) with 53 random mantissa bits.
    constexpr double uniform() noexcept {
        return static_cast<double>(next() >> 11) * 0x1.0p-53;
    }

    constexpr double uniform(double lo, double hi) noexcept {
        return lo + (hi - lo) * uniform();
    }

    // Uniform integer in [0, n). Plain modulo reduction; the bias is below
    // 2^-40 for every n used here and keeping it simple keeps it portable.
    constexpr std::uint64_t below(std::uint64_t n) noexcept {
        return n == 0 ? 0 : next() % n;
    }

    // Poisson variate by counting unit-rate exponential arrivals in [0, mean].
    std::uint64_t poisson(double mean) noexcept {
        if (!(mean > 0.0)) {
            return 0;
        }
        std::uint64_t k = 0;
        double t = 0.0;
        for (;;) {
            t -= std::log1p(-uniform());
            if (t > mean) {
                return k;
            }
            ++k;
        }
    }

    // Fisher-Yates, walking from the back: swap(v[i], v[below(i + 1)]).
    template <typename T>
    void shuffle(std::span<T> v) noexcept {
        for (std::size_t i = v.size(); i > 1; --i) {
            auto j = static_cast<std::size_t>(below(i));
            using std::swap;
            swap(v[i - 1], v[j]);
        }
    }

    constexpr std::uint64_t state() const noexcept { return state_; }

private:
    std::uint64_t state_;
};

} // namespace detkit
