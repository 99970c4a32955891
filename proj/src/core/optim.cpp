#include "optim.h"

#include <cmath>

namespace mef {

double LrSchedule::lr_at(int step) const {
    if (warmup_steps > 0 && step < warmup_steps)
        return base_lr * static_cast<double>(step + 1) / warmup_steps;
    int decay_span = total_steps - warmup_steps;
    if (decay_span <= 0) return base_lr;
    double prog = static_cast<double>(step - warmup_steps) / decay_span;
    if (prog > 1.0) prog = 1.0;
    double floor_lr = base_lr * min_lr_frac;
    return floor_lr + (base_lr - floor_lr) * 0.5 * (1.0 + std::cos(3.141592653589793 * prog));
}

double clip_global_norm(GradMap& grads, double max_norm) {
    double sq = 0.0;
    for (const auto& [name, g] : grads)
        for (double v : g) sq += v * v;
    double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        double s = max_norm / norm;
        for (auto& [name, g] : grads)
            for (double& v : g) v *= s;
    }
    return norm;
}

void adamw_step(ParamStore& store, const GradMap& grads, const AdamWConfig& cfg, int step) {
    const double bc1 = 1.0 - std::pow(cfg.beta1, step);
    const double bc2 = 1.0 - std::pow(cfg.beta2, step);
    for (const auto& [name, g] : grads) {
        Param& p = store.at(name);
        if (!p.trainable) continue;
        if (g.size() != p.value.size())
            throw_numeric("adamw_step: gradient size mismatch for " + name);
        for (double v : g) {
            if (!std::isfinite(v))
                throw_numeric("adamw_step: non-finite gradient for parameter '" + name + "'");
        }
        if (p.m.empty()) p.m.assign(p.value.size(), 0.0);
        if (p.v.empty()) p.v.assign(p.value.size(), 0.0);
        for (size_t i = 0; i < p.value.size(); ++i) {
            // Decoupled decay first, then the Adam update.
            p.value[i] *= (1.0 - cfg.lr * cfg.weight_decay);
            p.m[i] = cfg.beta1 * p.m[i] + (1.0 - cfg.beta1) * g[i];
            p.v[i] = cfg.beta2 * p.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            double mh = p.m[i] / bc1;
            double vh = p.v[i] / bc2;
            p.value[i] -= cfg.lr * mh / (std::sqrt(vh) + cfg.eps);
        }
    }
}

} // namespace mef
