#include "param_store.h"

#include <cstring>

namespace mef {

Param& ParamStore::add(const std::string& name, const Shape& shape, std::vector<double> init,
                       bool trainable) {
    if (params_.count(name))
        throw_config("duplicate parameter name: " + name);
    if (static_cast<int64_t>(init.size()) != numel(shape))
        throw_config("parameter " + name + ": init length " + std::to_string(init.size()) +
                     " does not match shape " + shape_str(shape));
    Param p;
    p.shape = shape;
    p.value = std::move(init);
    p.trainable = trainable;
    return params_.emplace(name, std::move(p)).first->second;
}

Param& ParamStore::add_zeros(const std::string& name, const Shape& shape, bool trainable) {
    return add(name, shape, std::vector<double>(static_cast<size_t>(numel(shape)), 0.0), trainable);
}

Param& ParamStore::add_randn(const std::string& name, const Shape& shape, RngState& rng,
                             double stddev, bool trainable) {
    std::vector<double> init(static_cast<size_t>(numel(shape)));
    for (double& v : init) v = rng::next_normal(rng) * stddev;
    return add(name, shape, std::move(init), trainable);
}

Param& ParamStore::add_full(const std::string& name, const Shape& shape, double v, bool trainable) {
    return add(name, shape, std::vector<double>(static_cast<size_t>(numel(shape)), v), trainable);
}

Param& ParamStore::at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw_config("unknown parameter: " + name);
    return it->second;
}

const Param& ParamStore::at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw_config("unknown parameter: " + name);
    return it->second;
}

int ParamStore::set_trainable(const std::string& prefix, bool trainable) {
    int n = 0;
    for (auto& [name, p] : params_) {
        if (name.rfind(prefix, 0) == 0) {
            p.trainable = trainable;
            ++n;
        }
    }
    return n;
}

int64_t ParamStore::total_count() const {
    int64_t n = 0;
    for (const auto& [name, p] : params_) n += static_cast<int64_t>(p.value.size());
    return n;
}

int64_t ParamStore::trainable_count() const {
    int64_t n = 0;
    for (const auto& [name, p] : params_)
        if (p.trainable) n += static_cast<int64_t>(p.value.size());
    return n;
}

std::vector<unsigned char> ParamStore::blob(const std::string& prefix) const {
    std::vector<unsigned char> out;
    for (const auto& [name, p] : params_) {
        if (name.rfind(prefix, 0) != 0) continue;
        size_t off = out.size();
        out.resize(off + p.value.size() * sizeof(double));
        std::memcpy(out.data() + off, p.value.data(), p.value.size() * sizeof(double));
    }
    return out;
}

Tensor Binding::operator()(const std::string& name) {
    auto it = bound_.find(name);
    if (it != bound_.end()) return it->second;
    const Param& p = store_.at(name);
    Tensor t = tape_.leaf(p.shape, p.value.data(), with_grad_ && p.trainable);
    bound_.emplace(name, t);
    return t;
}

void Binding::accumulate_grads(GradMap& out, double scale) const {
    for (const auto& [name, t] : bound_) {
        if (!t.requires_grad()) continue;
        const std::vector<double>& g = t.grad();
        auto& acc = out[name];
        if (acc.empty()) acc.assign(t.values().size(), 0.0);
        if (g.empty()) continue; // bound but not on the loss path
        for (size_t i = 0; i < g.size(); ++i) acc[i] += g[i] * scale;
    }
}

} // namespace mef
