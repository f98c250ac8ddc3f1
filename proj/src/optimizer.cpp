#include "lslp/optimizer.hpp"

#include <cmath>
#include <string>

#include "lslp/error.hpp"

namespace lslp {

double step_decay_lr(double base_lr, double decay_factor, std::uint64_t decay_every, std::uint64_t iteration) {
    if (decay_every == 0) throw ConfigError("decay_every must be positive");
    return base_lr * std::pow(decay_factor, static_cast<double>(iteration / decay_every));
}

double OptimizerState::current_lr() const { return step_decay_lr(base_lr, decay_factor, decay_every, iteration); }

void sgd_step(std::span<Tensor> params, std::span<const Tensor> grads, OptimizerState& state) {
    if (params.size() != grads.size())
        throw ShapeError("sgd_step: " + std::to_string(params.size()) + " parameters but " +
                         std::to_string(grads.size()) + " gradients");
    for (std::size_t i = 0; i < params.size(); ++i)
        if (params[i].shape() != grads[i].shape())
            throw ShapeError("sgd_step: parameter " + std::to_string(i) + " has shape " +
                             shape_string(params[i].shape()) + " but gradient " + shape_string(grads[i].shape()));
    const auto lr = static_cast<float>(state.current_lr());
    for (std::size_t i = 0; i < params.size(); ++i) {
        float* p = params[i].raw();
        const float* g = grads[i].raw();
        for (std::size_t j = 0; j < params[i].size(); ++j) p[j] -= lr * g[j];
    }
    ++state.iteration;
}

}  // namespace lslp
