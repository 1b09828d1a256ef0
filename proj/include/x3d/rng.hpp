#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <string_view>

namespace x3d {

/// 64-bit FNV-1a. Used for stable name hashing and file fingerprints.
constexpr std::uint64_t fnv1a64(std::span<const unsigned char> bytes) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    return h;
}

constexpr std::uint64_t fnv1a64(std::string_view text) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : text) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

constexpr std::uint64_t splitmix64_mix(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// SplitMix64 generator; satisfies UniformRandomBitGenerator so it plugs into
/// the <random> distributions.
class SplitMix64 {
   public:
    using result_type = std::uint64_t;

    explicit constexpr SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

    constexpr result_type operator()() noexcept {
        state_ += 0x9e3779b97f4a7c15ULL;
        return splitmix64_mix(state_);
    }

    /// Uniform double in [0, 1) built from the top 53 bits.
    constexpr double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

   private:
    std::uint64_t state_;
};

/// Independent stream for a named consumer (a parameter, a clip, a run).
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::string_view name) noexcept {
    return splitmix64_mix(seed ^ splitmix64_mix(fnv1a64(name)));
}

inline SplitMix64 named_stream(std::uint64_t seed, std::string_view name) noexcept {
    return SplitMix64(derive_seed(seed, name));
}

}  // namespace x3d
