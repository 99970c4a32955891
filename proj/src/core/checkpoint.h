#pragma once

#include <cstdint>
#include <string>

#include "param_store.h"

namespace mef {

// Checkpoint = a self-describing JSON manifest (parameter names, shapes,
// dtype, byte offsets, format version, config snapshot, RNG seed) next to a
// raw blob of little-endian 64-bit floats in manifest order. Round trips are
// bit-exact.
constexpr int kCheckpointFormatVersion = 1;

void save_checkpoint(const ParamStore& store, const std::string& dir,
                     const std::string& config_json, uint64_t seed);

struct LoadedCheckpoint {
    ParamStore store;
    std::string config_json;
    uint64_t seed = 0;
};

LoadedCheckpoint load_checkpoint(const std::string& dir);

// Copies every `prefix` parameter value from `src` into `dst`, which must
// already define them with identical shapes; reports an explicit shape diff
// otherwise. Trainable flags in `dst` are left untouched.
void copy_params(const ParamStore& src, ParamStore& dst, const std::string& prefix);

} // namespace mef
