#include "cotsm/numerics/optim.hpp"

#include <cmath>
#include <string>

#include "cotsm/errors.hpp"

namespace cotsm {

Tensor sgd_step(const Tensor& param, const Tensor& grad, double lr) {
    if (!(lr > 0.0)) throw ConfigError("sgd_step: learning rate must be positive, got " + std::to_string(lr));
    if (!param.same_shape(grad)) throw DimensionError("sgd_step: gradient shape differs from parameter");
    Tensor out = param;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= lr * grad[i];
    require_finite(out, "sgd_step");
    return out;
}

ad::Var sgd_step(const ad::Var& param, const ad::Var& grad, double lr) {
    if (!(lr > 0.0)) throw ConfigError("sgd_step: learning rate must be positive, got " + std::to_string(lr));
    return ad::sub(param, ad::scale(grad, lr));
}

AdamWState AdamWState::for_param(const Tensor& param, AdamWHyper hyper) {
    return AdamWState{Tensor::zeros(param.shape()), Tensor::zeros(param.shape()), 0, hyper};
}

std::pair<Tensor, AdamWState> adamw_step(const Tensor& param, const Tensor& grad, AdamWState state, double lr) {
    if (!param.same_shape(grad) || !param.same_shape(state.first_moment) || !param.same_shape(state.second_moment))
        throw DimensionError("adamw_step: parameter, gradient and moment shapes must agree");
    if (!(lr > 0.0)) throw ConfigError("adamw_step: learning rate must be positive");
    const auto& h = state.hyper;
    state.step_count += 1;
    const double t = static_cast<double>(state.step_count);
    const double bc1 = 1.0 - std::pow(h.beta1, t);
    const double bc2 = 1.0 - std::pow(h.beta2, t);
    Tensor out = param;
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double g = grad[i];
        state.first_moment[i] = h.beta1 * state.first_moment[i] + (1.0 - h.beta1) * g;
        state.second_moment[i] = h.beta2 * state.second_moment[i] + (1.0 - h.beta2) * g * g;
        const double m_hat = state.first_moment[i] / bc1;
        const double v_hat = state.second_moment[i] / bc2;
        out[i] *= 1.0 - lr * h.weight_decay;
        out[i] -= lr * m_hat / (std::sqrt(v_hat) + h.epsilon);
    }
    require_finite(out, "adamw_step");
    return {std::move(out), std::move(state)};
}

Tensor xavier_uniform(const Shape& shape, Rng& rng) {
    if (shape.size() != 2) throw ContractError("xavier_uniform: needs a 2-D shape");
    const double bound = std::sqrt(6.0 / static_cast<double>(shape[0] + shape[1]));
    Tensor t = Tensor::zeros(shape);
    for (auto& v : t.data()) v = rng.uniform(-bound, bound);
    return t;
}

}  // namespace cotsm
