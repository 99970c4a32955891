#pragma once

#include <cstdint>
#include <string_view>

namespace mef {

// Counter-based RNG: every draw is a pure function of (seed, counter), so any
// stream can be replayed, split, or skipped without touching global state.
// The mixer is the splitmix64 finalizer applied to seed + counter * golden.
struct RngState {
    uint64_t seed = 0;
    uint64_t counter = 0;
};

namespace rng {

inline uint64_t mix64(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

inline uint64_t next_u64(RngState& s) {
    uint64_t z = s.seed + (s.counter++) * 0x9E3779B97F4A7C15ull;
    return mix64(z);
}

// Uniform in [0, 1), 53-bit resolution.
double next_uniform(RngState& s);

// Standard normal via Box-Muller; consumes exactly two counter values.
double next_normal(RngState& s);

// Uniform integer in [0, n) for n a power of two (exact, unbiased).
uint64_t next_below_pow2(RngState& s, uint64_t n);

// Bernoulli(p) draw.
bool next_bernoulli(RngState& s, double p);

// Stable 64-bit digest of a label, used to split independent streams.
uint64_t label_hash(std::string_view label);

// Child stream: independent of the parent and of siblings with other labels.
RngState derive(const RngState& parent, std::string_view label);
RngState derive(const RngState& parent, std::string_view label, uint64_t index);

} // namespace rng
} // namespace mef
