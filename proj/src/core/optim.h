#pragma once

#include <string>

#include "param_store.h"

namespace mef {

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

struct LrSchedule {
    double base_lr = 1e-3;
    int warmup_steps = 0;
    int total_steps = 1;
    double min_lr_frac = 0.1; // cosine floor as a fraction of base_lr

    // Linear warmup to base_lr, then cosine decay to base_lr * min_lr_frac.
    double lr_at(int step) const;
};

// Clip gradients to a global L2 norm; returns the pre-clip norm.
double clip_global_norm(GradMap& grads, double max_norm);

// One decoupled-weight-decay Adam step over the trainable parameters named in
// `grads`. `step` is 1-based and drives bias correction. Frozen parameters
// are never touched. A non-finite gradient aborts with a numeric error that
// names the offending parameter.
void adamw_step(ParamStore& store, const GradMap& grads, const AdamWConfig& cfg, int step);

} // namespace mef
