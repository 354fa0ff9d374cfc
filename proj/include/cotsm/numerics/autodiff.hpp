#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "cotsm/numerics/tensor.hpp"

// Reverse-mode automatic differentiation over dense tensors.
//
// Every op records a node holding its inputs and a gradient rule. Gradient rules are
// written with the same differentiable ops, so grad(..., create_graph = true) yields
// gradients that are themselves part of a graph and can be differentiated once more
// (exact second-order meta-gradients rely on this).
namespace cotsm::ad {

class Var;

using BackwardFn = std::function<std::vector<Var>(const Var& grad_out)>;

struct Node {
    Tensor value;
    bool requires_grad = false;
    std::vector<Var> inputs;
    BackwardFn backward;  // one entry per input, undefined Var where no gradient flows
    const char* op = "leaf";
};

class Var {
public:
    Var() = default;
    explicit Var(Tensor value, bool requires_grad = false);

    static Var constant(Tensor value) { return Var(std::move(value), false); }
    static Var parameter(Tensor value) { return Var(std::move(value), true); }

    [[nodiscard]] bool defined() const { return node_ != nullptr; }
    [[nodiscard]] const Tensor& value() const { return node_->value; }
    [[nodiscard]] bool requires_grad() const { return node_ && node_->requires_grad; }
    [[nodiscard]] bool is_leaf() const { return !node_->backward; }
    [[nodiscard]] std::size_t rows() const { return node_->value.rows(); }
    [[nodiscard]] std::size_t cols() const { return node_->value.cols(); }
    [[nodiscard]] const Node* node() const { return node_.get(); }
    [[nodiscard]] const std::shared_ptr<Node>& node_ptr() const { return node_; }

    // Same value, cut from any graph.
    [[nodiscard]] Var detach() const { return constant(value()); }

private:
    friend Var make_op(Tensor, const char*, std::vector<Var>, BackwardFn);
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    std::shared_ptr<Node> node_;
};

// Records a node when gradient recording is on and any input requires grad;
// otherwise returns a constant carrying only the value.
Var make_op(Tensor value, const char* op, std::vector<Var> inputs, BackwardFn backward);

bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

class EnableGradGuard {
public:
    EnableGradGuard();
    ~EnableGradGuard();
    EnableGradGuard(const EnableGradGuard&) = delete;
    EnableGradGuard& operator=(const EnableGradGuard&) = delete;

private:
    bool previous_;
};

// ---- ops -------------------------------------------------------------------------

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var scale_by(const Var& a, const Var& s);  // s has exactly one element
Var add_row(const Var& a, const Var& row);  // row [1 x n] added to every row of a [m x n]
Var sum(const Var& a);                      // -> shape [1]
Var sum_rows(const Var& a);                 // [m x n] -> [1 x n]
Var sum_cols(const Var& a);                 // [m x n] -> [m x 1]
Var broadcast_rows(const Var& row, std::size_t m);
Var broadcast_cols(const Var& col, std::size_t n);
Var softmax_rows(const Var& x);
Var tanh(const Var& x);
Var rsqrt(const Var& x);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var slice_rows(const Var& a, std::size_t begin, std::size_t end);
Var slice_cols(const Var& a, std::size_t begin, std::size_t end);
Var pad_rows(const Var& a, std::size_t offset, std::size_t total);
Var pad_cols(const Var& a, std::size_t offset, std::size_t total);
Var gather_rows(const Var& table, std::span<const std::size_t> indices);
Var scatter_rows(const Var& rows, std::span<const std::size_t> indices, std::size_t table_rows);
Var reshape(const Var& a, std::size_t rows, std::size_t cols);

// Mean over rows of -log softmax(logits)[t, targets[t]].
Var cross_entropy(const Var& logits, std::span<const std::size_t> targets);

// Per-row layer normalisation without affine terms.
Var layer_norm(const Var& x, double eps = 1e-5);

// ---- differentiation -------------------------------------------------------------

// Gradients of a scalar `loss` with respect to each entry of `wrt`. Entries that do not
// require grad come back undefined; unreachable ones come back as zeros.
std::vector<Var> grad(const Var& loss, std::span<const Var> wrt, bool create_graph = false);

class GradMap {
public:
    [[nodiscard]] bool contains(const Var& v) const { return grads_.contains(v.node()); }
    [[nodiscard]] std::optional<Tensor> get(const Var& v) const;
    [[nodiscard]] const Tensor& at(const Var& v) const;
    [[nodiscard]] std::size_t size() const { return grads_.size(); }

private:
    friend GradMap backward(const Var& loss);
    std::unordered_map<const Node*, Tensor> grads_;
};

// Gradients for every requires-grad leaf reachable from `loss`.
GradMap backward(const Var& loss);

}  // namespace cotsm::ad
