#pragma once

#include <cstdint>
#include <limits>

namespace recurlab {

/// SplitMix64: a 64-bit counter-based generator.
///
/// state_{i+1} = state_i + 0x9E3779B97F4A7C15; the output is the state
/// passed through the mixer
///   z ^= z >> 30; z *= 0xBF58476D1CE4E5B9;
///   z ^= z >> 27; z *= 0x94D049BB133111EB;
///   z ^= z >> 31.
/// Streams are reproducible across platforms and languages.
class SplitMix64 {
public:
    using result_type = std::uint64_t;

    static constexpr std::uint64_t golden_gamma = 0x9E3779B97F4A7C15ULL;

    constexpr explicit SplitMix64(std::uint64_t seed = 0) noexcept : state_(seed) {}

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

    constexpr result_type operator()() noexcept {
        state_ += golden_gamma;
        return mix(state_);
    }

    static constexpr std::uint64_t mix(std::uint64_t z) noexcept {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Uniform double in [0,1) with 53 random bits.
    constexpr double uniform() noexcept {
        return static_cast<double>((*this)() >> 11) * 0x1.0p-53;
    }

    /// Uniform double in (0,1).
    constexpr double uniform_open() noexcept {
        return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53;
    }

    constexpr std::uint64_t state() const noexcept { return state_; }

private:
    std::uint64_t state_;
};

/// Seed of an independent sub-stream: seed XOR mix(index * golden_gamma).
constexpr std::uint64_t split_seed(std::uint64_t master, std::uint64_t index) noexcept {
    return master ^ SplitMix64::mix((index + 1) * SplitMix64::golden_gamma);
}

inline SplitMix64 substream(std::uint64_t master, std::uint64_t index) noexcept {
    return SplitMix64(split_seed(master, index));
}

} // namespace recurlab
