#pragma once

#include <map>
#include <string>
#include <vector>

#include "rng.h"
#include "tensor.h"

namespace mef {

// Named parameter set. Names are hierarchical ("resampler.layers.0.self.wq"),
// iteration order is lexicographic and therefore deterministic. Adam moments
// live next to the values; they are not part of the checkpoint payload.
struct Param {
    Shape shape;
    std::vector<double> value;
    bool trainable = true;
    std::vector<double> m; // first moment, lazily sized
    std::vector<double> v; // second moment, lazily sized
};

class ParamStore {
public:
    Param& add(const std::string& name, const Shape& shape, std::vector<double> init,
               bool trainable = true);
    Param& add_zeros(const std::string& name, const Shape& shape, bool trainable = true);
    Param& add_randn(const std::string& name, const Shape& shape, RngState& rng, double stddev,
                     bool trainable = true);
    Param& add_full(const std::string& name, const Shape& shape, double v, bool trainable = true);

    bool has(const std::string& name) const { return params_.count(name) != 0; }
    Param& at(const std::string& name);
    const Param& at(const std::string& name) const;

    // Toggle trainable flags for every parameter whose name starts with prefix.
    // Returns the number of parameters affected.
    int set_trainable(const std::string& prefix, bool trainable);

    std::map<std::string, Param>& params() { return params_; }
    const std::map<std::string, Param>& params() const { return params_; }

    int64_t total_count() const;
    int64_t trainable_count() const;

    // Concatenated raw bytes of all values in name order; used for
    // bit-identity checks of frozen sections.
    std::vector<unsigned char> blob(const std::string& prefix = "") const;

private:
    std::map<std::string, Param> params_;
};

// Per-example gradient accumulator keyed by parameter name.
using GradMap = std::map<std::string, std::vector<double>>;

// Binds parameters into a tape as leaf nodes, one leaf per name per graph, so
// repeated uses of one parameter share a gradient slot.
class Binding {
public:
    // with_grad=false binds every leaf without gradient tracking (evaluation).
    Binding(Tape& tape, const ParamStore& store, bool with_grad = true)
        : tape_(tape), store_(store), with_grad_(with_grad) {}

    Tape& tape() { return tape_; }
    Tensor operator()(const std::string& name);

    // Sum d(loss)/d(param) for every bound trainable leaf into `out`,
    // scaled by `scale`. Missing entries are created zero-filled.
    void accumulate_grads(GradMap& out, double scale = 1.0) const;

private:
    Tape& tape_;
    const ParamStore& store_;
    bool with_grad_ = true;
    std::map<std::string, Tensor> bound_;
};

} // namespace mef
