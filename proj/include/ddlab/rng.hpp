#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace ddlab {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

// Independent stream keyed by (seed, k1, k2, ...). Runs derive every
// generator this way (e.g. {seed, epoch, batch}) so that no generator state
// needs to be checkpointed for an exact resume.
inline Rng stream(std::uint64_t seed, std::initializer_list<std::uint64_t> keys = {}) {
    std::uint64_t h = splitmix64(seed);
    for (auto k : keys) h = splitmix64(h ^ splitmix64(k + 0x632BE59BD9B4E019ull));
    return Rng(h);
}

// Stream tags keep generators for different purposes apart.
enum class StreamTag : std::uint64_t { kInit = 1, kTrainOrder = 2, kTrainNoise = 3, kEval = 4 };

inline Rng stream(std::uint64_t seed, StreamTag tag, std::initializer_list<std::uint64_t> keys = {}) {
    Rng base = stream(seed, {static_cast<std::uint64_t>(tag)});
    std::uint64_t h = base();
    for (auto k : keys) h = splitmix64(h ^ splitmix64(k + 0x632BE59BD9B4E019ull));
    return Rng(h);
}

// Unbiased integer in [0, n) that does not depend on the standard library's
// distribution implementation.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t v;
    do v = rng();
    while (v >= limit);
    return v % n;
}

// Uniform double in [0, 1) with 53 bits of randomness.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

}  // namespace ddlab
