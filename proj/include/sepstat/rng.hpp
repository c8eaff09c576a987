#ifndef SEPSTAT_RNG_HPP
#define SEPSTAT_RNG_HPP

#include <cstdint>

namespace sepstat {

/// Derive an independent substream seed from a master seed. Splitmix-style
/// finalizer over seed + (stream+1) * golden gamma; the same (seed, stream)
/// pair always yields the same substream, so work can be chunked across
/// threads without changing any result.
[[nodiscard]] inline std::uint64_t split_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + (stream + 1) * 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

} // namespace sepstat

#endif // SEPSTAT_RNG_HPP
