#pragma once

#include <vector>

#include "diffcal/tensor.hpp"

namespace diffcal {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0; // decoupled: applied to values, not gradients
};

// Linear warmup to base_lr over warmup_epochs, then half-cosine down to
// min_lr over cycle_epochs, flat at min_lr afterwards.
// lr_at(0) with warmup w > 0 is base_lr / w; lr_at(w) is base_lr;
// lr_at(w + cycle) and beyond is min_lr.
struct LrSchedule {
    double base_lr = 1e-3;
    double min_lr = 1e-5;
    int warmup_epochs = 0;
    int cycle_epochs = 1;

    double lr_at(int epoch) const;
};

// Adam with bias correction and decoupled weight decay. Every tracked
// parameter must carry a gradient when step() runs; a missing gradient is a
// caller bug, not a zero.
class Adam {
public:
    Adam(std::vector<Tensor> params, AdamConfig cfg);

    void step();          // at cfg.lr
    void step(double lr); // schedule override
    void zero_grad();
    long steps_taken() const { return t_; }
    const std::vector<Tensor>& params() const { return params_; }

private:
    std::vector<Tensor> params_;
    AdamConfig cfg_;
    std::vector<std::vector<double>> m_, v_;
    long t_ = 0;
};

} // namespace diffcal
