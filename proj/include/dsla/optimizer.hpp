#pragma once

#include "dsla/backward.hpp"

namespace dsla {

struct LrSchedule {
    double warmup_fraction = 0.05;
    double peak_lr = 1e-4;
    double floor_lr = 5e-5;
    long total_steps = 1000;

    // Linear warmup from zero to peak over the first warmup_fraction of
    // steps, then cosine decay from peak down to the floor.
    double lr_at(long step) const;
};

// Adaptive-moment update with decoupled weight decay, applied to every
// entry of a LayerParams (gates and gamma included when present).
struct OptimizerState {
    long step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
    LrSchedule schedule;

    GradientSet m;  // first moments, same shapes as the parameters
    GradientSet v;  // second moments

    static OptimizerState create(int d, LrSchedule sched, double weight_decay = 0.01);
};

void optimizer_step(LayerParams& params, const GradientSet& grads, OptimizerState& state);

}  // namespace dsla
