#pragma once

#include <cstdint>
#include <utility>

#include "cotsm/numerics/autodiff.hpp"
#include "cotsm/numerics/rng.hpp"
#include "cotsm/numerics/tensor.hpp"

namespace cotsm {

// Plain gradient step, returned as a fresh tensor.
Tensor sgd_step(const Tensor& param, const Tensor& grad, double lr);

// Differentiable form used by the inner loop: param - lr * grad stays on the graph
// when second-order meta-gradients are requested.
ad::Var sgd_step(const ad::Var& param, const ad::Var& grad, double lr);

struct AdamWHyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.01;
};

struct AdamWState {
    Tensor first_moment;
    Tensor second_moment;
    std::uint64_t step_count = 0;
    AdamWHyper hyper;

    static AdamWState for_param(const Tensor& param, AdamWHyper hyper = {});
};

// Decoupled weight decay followed by the bias-corrected adaptive step.
std::pair<Tensor, AdamWState> adamw_step(const Tensor& param, const Tensor& grad, AdamWState state, double lr);

// Uniform in +-sqrt(6 / (rows + cols)).
Tensor xavier_uniform(const Shape& shape, Rng& rng);

}  // namespace cotsm
