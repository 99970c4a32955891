#include "rng.h"

#include <cmath>

namespace mef {
namespace rng {

double next_uniform(RngState& s) {
    return static_cast<double>(next_u64(s) >> 11) * 0x1.0p-53;
}

double next_normal(RngState& s) {
    // u1 in (0, 1] so the log is always finite.
    double u1 = static_cast<double>((next_u64(s) >> 11) + 1) * 0x1.0p-53;
    double u2 = static_cast<double>(next_u64(s) >> 11) * 0x1.0p-53;
    double r = std::sqrt(-2.0 * std::log(u1));
    return r * std::cos(2.0 * 3.141592653589793 * u2);
}

uint64_t next_below_pow2(RngState& s, uint64_t n) {
    return next_u64(s) & (n - 1);
}

bool next_bernoulli(RngState& s, double p) {
    return next_uniform(s) < p;
}

uint64_t label_hash(std::string_view label) {
    // FNV-1a, then one mixing round to spread short labels.
    uint64_t h = 0xCBF29CE484222325ull;
    for (char c : label) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001B3ull;
    }
    return mix64(h);
}

RngState derive(const RngState& parent, std::string_view label) {
    RngState child;
    child.seed = mix64(parent.seed ^ label_hash(label));
    child.counter = 0;
    return child;
}

RngState derive(const RngState& parent, std::string_view label, uint64_t index) {
    RngState child;
    child.seed = mix64(mix64(parent.seed ^ label_hash(label)) + index * 0x9E3779B97F4A7C15ull);
    child.counter = 0;
    return child;
}

} // namespace rng
} // namespace mef
