#pragma once

#include <cstdint>
#include <span>

#include "lslp/tensor.hpp"

namespace lslp {

/// Plain SGD with step decay: lr(t) = base_lr * decay_factor^floor(t / decay_every).
struct OptimizerState {
    double base_lr = 1e-3;
    double decay_factor = 0.1;
    std::uint64_t decay_every = 2500;
    std::uint64_t iteration = 0;

    double current_lr() const;
};

double step_decay_lr(double base_lr, double decay_factor, std::uint64_t decay_every, std::uint64_t iteration);

/// p <- p - lr * g for every pair, then advances the iteration counter.
void sgd_step(std::span<Tensor> params, std::span<const Tensor> grads, OptimizerState& state);

}  // namespace lslp
