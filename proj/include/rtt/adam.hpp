#pragma once

#include <cstddef>
#include <vector>

namespace rtt {

// Bias-corrected Adam. Moments are sized to the parameter vector on first use.
struct AdamState {
    std::size_t step = 0;
    std::vector<double> m, v;
    double lr = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    explicit AdamState(double lr_ = 0.01) : lr(lr_) {}
};

// One in-place update. Throws naming the parameter index on a non-finite
// gradient; the update itself is deterministic.
void adam_step(AdamState& state, std::vector<double>& params, const std::vector<double>& grads);

}  // namespace rtt
