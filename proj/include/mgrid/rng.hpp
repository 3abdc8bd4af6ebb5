#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace mgrid {

// Deterministic sub-stream derivation: every consumer of randomness gets its
// own generator keyed by (master seed, tag, id), so adding a consumer never
// shifts draws seen by the others and different runs of the same seed are
// bit-identical.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t stream_key(std::uint64_t master_seed, std::string_view tag, std::uint64_t id) {
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a over the tag
    for (char c : tag) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return splitmix64(master_seed ^ splitmix64(h) ^ splitmix64(id * 0x9e3779b97f4a7c15ULL + 1));
}

inline std::mt19937_64 make_stream(std::uint64_t master_seed, std::string_view tag, std::uint64_t id = 0) {
    return std::mt19937_64(stream_key(master_seed, tag, id));
}

// Uniform in [0,1) with 53-bit resolution; avoids distribution objects so the
// byte stream does not depend on the standard library implementation.
inline double uniform01(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
    return lo + (hi - lo) * uniform01(rng);
}

inline bool bernoulli(std::mt19937_64& rng, double p) {
    return uniform01(rng) < p;
}

}  // namespace mgrid
