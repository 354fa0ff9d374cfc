#pragma once

// Central finite differences: the independent oracle for every analytic gradient.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "cotsm/numerics/autodiff.hpp"
#include "cotsm/numerics/rng.hpp"

namespace cotsm::oracle {

inline constexpr double kFdStep = 1e-5;
inline constexpr double kGradTolerance = 1e-4;

// f maps a list of tensors to a scalar; perturbs entry `index` of tensor `which`.
using ScalarFn = std::function<double(const std::vector<Tensor>&)>;

inline Tensor finite_difference(const ScalarFn& f, std::vector<Tensor> at, std::size_t which, double h = kFdStep) {
    Tensor g = Tensor::zeros(at[which].shape());
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double saved = at[which][i];
        at[which][i] = saved + h;
        const double up = f(at);
        at[which][i] = saved - h;
        const double down = f(at);
        at[which][i] = saved;
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

inline double relative_error(const Tensor& analytic, const Tensor& numeric) {
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
        na += analytic[i] * analytic[i];
        nn += numeric[i] * numeric[i];
    }
    return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), 1e-8});
}

inline Tensor random_tensor(std::size_t rows, std::size_t cols, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t = Tensor::zeros(rows, cols);
    for (auto& v : t.data()) v = rng.uniform(lo, hi);
    return t;
}

// Worst relative error over all inputs of a Var-level function built from `inputs`.
using VarFn = std::function<ad::Var(const std::vector<ad::Var>&)>;

inline double gradcheck(const VarFn& fn, const std::vector<Tensor>& inputs) {
    std::vector<ad::Var> vars;
    for (const auto& t : inputs) vars.push_back(ad::Var::parameter(t));
    const auto loss = fn(vars);
    const auto grads = ad::grad(loss, vars);
    const ScalarFn scalar = [&](const std::vector<Tensor>& ts) {
        ad::NoGradGuard guard;
        std::vector<ad::Var> vs;
        for (const auto& t : ts) vs.push_back(ad::Var::constant(t));
        return fn(vs).value()[0];
    };
    double worst = 0.0;
    for (std::size_t i = 0; i < inputs.size(); ++i)
        worst = std::max(worst, relative_error(grads[i].value(), finite_difference(scalar, inputs, i)));
    return worst;
}

}  // namespace cotsm::oracle
