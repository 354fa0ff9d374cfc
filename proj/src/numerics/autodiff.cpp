#include "cotsm/numerics/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_set>

#include "cotsm/errors.hpp"
#include "cotsm/numerics/kernels.hpp"

namespace cotsm::ad {

namespace {

thread_local bool g_grad_enabled = true;

void require_same(const Var& a, const Var& b, const char* op) {
    if (!a.value().same_shape(b.value()))
        throw DimensionError(std::string(op) + ": shape mismatch " + a.value().shape_string() + " vs " +
                             b.value().shape_string());
}

Tensor like(const Tensor& t) { return Tensor::zeros(t.shape()); }

Tensor matrix(std::size_t rows, std::size_t cols) { return Tensor::zeros(rows, cols); }

Var ones_like(const Var& a) { return Var::constant(Tensor(a.value().shape(), std::vector<double>(a.value().size(), 1.0))); }

}  // namespace

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
    require_finite(value, "Var");
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
}

Var make_op(Tensor value, const char* op, std::vector<Var> inputs, BackwardFn backward) {
    require_finite(value, op);
    bool needs = false;
    if (g_grad_enabled)
        for (const auto& in : inputs) needs = needs || in.requires_grad();
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->op = op;
    if (needs) {
        node->requires_grad = true;
        node->inputs = std::move(inputs);
        node->backward = std::move(backward);
    }
    return Var(std::move(node));
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
EnableGradGuard::EnableGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = true; }
EnableGradGuard::~EnableGradGuard() { g_grad_enabled = previous_; }

// ---- ops -------------------------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
    const auto m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k)
        throw DimensionError("matmul: inner dimensions differ " + a.value().shape_string() + " x " +
                             b.value().shape_string());
    Tensor out = matrix(m, n);
    kernels::gemm(a.value().data(), b.value().data(), out.data(), m, k, n);
    return make_op(std::move(out), "matmul", {a, b}, [a, b](const Var& g) {
        Var da, db;
        if (a.requires_grad()) da = matmul(g, transpose(b));
        if (b.requires_grad()) db = matmul(transpose(a), g);
        return std::vector<Var>{da, db};
    });
}

Var transpose(const Var& a) {
    const auto m = a.rows(), n = a.cols();
    Tensor out = matrix(n, m);
    kernels::transpose(a.value().data(), out.data(), m, n);
    return make_op(std::move(out), "transpose", {a}, [](const Var& g) { return std::vector<Var>{transpose(g)}; });
}

Var add(const Var& a, const Var& b) {
    require_same(a, b, "add");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
    return make_op(std::move(out), "add", {a, b}, [](const Var& g) { return std::vector<Var>{g, g}; });
}

Var sub(const Var& a, const Var& b) {
    require_same(a, b, "sub");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
    return make_op(std::move(out), "sub", {a, b},
                   [b](const Var& g) { return std::vector<Var>{g, b.requires_grad() ? scale(g, -1.0) : Var{}}; });
}

Var mul(const Var& a, const Var& b) {
    require_same(a, b, "mul");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
    return make_op(std::move(out), "mul", {a, b}, [a, b](const Var& g) {
        Var da, db;
        if (a.requires_grad()) da = mul(g, b);
        if (b.requires_grad()) db = mul(g, a);
        return std::vector<Var>{da, db};
    });
}

Var scale(const Var& a, double s) {
    Tensor out = a.value();
    for (auto& v : out.data()) v *= s;
    return make_op(std::move(out), "scale", {a}, [s](const Var& g) { return std::vector<Var>{scale(g, s)}; });
}

Var add_scalar(const Var& a, double s) {
    Tensor out = a.value();
    for (auto& v : out.data()) v += s;
    return make_op(std::move(out), "add_scalar", {a}, [](const Var& g) { return std::vector<Var>{g}; });
}

Var scale_by(const Var& a, const Var& s) {
    if (s.value().size() != 1) throw DimensionError("scale_by: factor must have one element");
    const double f = s.value()[0];
    Tensor out = a.value();
    for (auto& v : out.data()) v *= f;
    return make_op(std::move(out), "scale_by", {a, s}, [a, s](const Var& g) {
        Var da, ds;
        if (a.requires_grad()) da = scale_by(g, s);
        if (s.requires_grad()) ds = reshape(sum(mul(g, a)), s.rows(), s.cols());
        return std::vector<Var>{da, ds};
    });
}

Var add_row(const Var& a, const Var& row) {
    const auto m = a.rows(), n = a.cols();
    if (row.value().size() != n) throw DimensionError("add_row: row width differs from matrix width");
    Tensor out = a.value();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] += row.value()[j];
    return make_op(std::move(out), "add_row", {a, row}, [row](const Var& g) {
        Var dr;
        if (row.requires_grad()) dr = reshape(sum_rows(g), row.rows(), row.cols());
        return std::vector<Var>{g, dr};
    });
}

Var sum(const Var& a) {
    double s = 0.0;
    for (double v : a.value().data()) s += v;
    return make_op(Tensor::scalar(s), "sum", {a}, [a](const Var& g) { return std::vector<Var>{scale_by(ones_like(a), g)}; });
}

Var sum_rows(const Var& a) {
    const auto m = a.rows(), n = a.cols();
    Tensor out = matrix(1, n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j] += a.value()[i * n + j];
    return make_op(std::move(out), "sum_rows", {a}, [m](const Var& g) { return std::vector<Var>{broadcast_rows(g, m)}; });
}

Var sum_cols(const Var& a) {
    const auto m = a.rows(), n = a.cols();
    Tensor out = matrix(m, 1);
    for (std::size_t i = 0; i < m; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += a.value()[i * n + j];
        out[i] = s;
    }
    return make_op(std::move(out), "sum_cols", {a}, [n](const Var& g) { return std::vector<Var>{broadcast_cols(g, n)}; });
}

Var broadcast_rows(const Var& row, std::size_t m) {
    const auto n = row.value().size();
    Tensor out = matrix(m, n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = row.value()[j];
    return make_op(std::move(out), "broadcast_rows", {row},
                   [row](const Var& g) { return std::vector<Var>{reshape(sum_rows(g), row.rows(), row.cols())}; });
}

Var broadcast_cols(const Var& col, std::size_t n) {
    if (col.cols() != 1) throw DimensionError("broadcast_cols: expected a single column");
    const auto m = col.rows();
    Tensor out = matrix(m, n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = col.value()[i];
    return make_op(std::move(out), "broadcast_cols", {col}, [](const Var& g) { return std::vector<Var>{sum_cols(g)}; });
}

Var softmax_rows(const Var& x) {
    const auto m = x.rows(), n = x.cols();
    Tensor out = matrix(m, n);
    kernels::softmax_rows(x.value().data(), out.data(), m, n);
    Tensor y_value = out;
    return make_op(std::move(out), "softmax_rows", {x}, [x, y_value = std::move(y_value), n](const Var& g) {
        // dx = y * (g - rowsum(g * y)); y is rebuilt as a graph node when differentiating twice.
        const Var y = grad_enabled() ? softmax_rows(x) : Var::constant(y_value);
        const Var centred = sub(g, broadcast_cols(sum_cols(mul(g, y)), n));
        return std::vector<Var>{mul(y, centred)};
    });
}

Var tanh(const Var& x) {
    Tensor out = x.value();
    for (auto& v : out.data()) v = std::tanh(v);
    Tensor y_value = out;
    return make_op(std::move(out), "tanh", {x}, [x, y_value = std::move(y_value)](const Var& g) {
        const Var y = grad_enabled() ? tanh(x) : Var::constant(y_value);
        return std::vector<Var>{mul(g, add_scalar(scale(mul(y, y), -1.0), 1.0))};
    });
}

Var rsqrt(const Var& x) {
    Tensor out = x.value();
    for (auto& v : out.data()) {
        if (v <= 0.0) throw NumericError("rsqrt of non-positive value");
        v = 1.0 / std::sqrt(v);
    }
    Tensor y_value = out;
    return make_op(std::move(out), "rsqrt", {x}, [x, y_value = std::move(y_value)](const Var& g) {
        const Var y = grad_enabled() ? rsqrt(x) : Var::constant(y_value);
        return std::vector<Var>{mul(g, scale(mul(y, mul(y, y)), -0.5))};
    });
}

Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw ContractError("concat_rows: nothing to concatenate");
    const auto n = parts.front().cols();
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p.cols() != n) throw DimensionError("concat_rows: column counts differ");
        total += p.rows();
    }
    std::vector<double> data;
    data.reserve(total * n);
    for (const auto& p : parts) data.insert(data.end(), p.value().data().begin(), p.value().data().end());
    std::vector<Var> inputs(parts.begin(), parts.end());
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const auto& p : parts) {
        offsets.push_back(off);
        off += p.rows();
    }
    auto captured = inputs;
    return make_op(Tensor(total, n, std::move(data)), "concat_rows", std::move(inputs),
                   [captured = std::move(captured), offsets](const Var& g) {
                       std::vector<Var> out(captured.size());
                       for (std::size_t i = 0; i < captured.size(); ++i)
                           if (captured[i].requires_grad())
                               out[i] = slice_rows(g, offsets[i], offsets[i] + captured[i].rows());
                       return out;
                   });
}

Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw ContractError("concat_cols: nothing to concatenate");
    const auto m = parts.front().rows();
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p.rows() != m) throw DimensionError("concat_cols: row counts differ");
        total += p.cols();
    }
    Tensor out = matrix(m, total);
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const auto& p : parts) {
        offsets.push_back(off);
        const auto w = p.cols();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j) out[i * total + off + j] = p.value()[i * w + j];
        off += w;
    }
    std::vector<Var> inputs(parts.begin(), parts.end());
    auto captured = inputs;
    return make_op(std::move(out), "concat_cols", std::move(inputs),
                   [captured = std::move(captured), offsets](const Var& g) {
                       std::vector<Var> grads(captured.size());
                       for (std::size_t i = 0; i < captured.size(); ++i)
                           if (captured[i].requires_grad())
                               grads[i] = slice_cols(g, offsets[i], offsets[i] + captured[i].cols());
                       return grads;
                   });
}

Var slice_rows(const Var& a, std::size_t begin, std::size_t end) {
    const auto m = a.rows(), n = a.cols();
    if (begin >= end || end > m) throw IndexError("slice_rows: bad range");
    const auto& src = a.value().values();
    std::vector<double> data(src.begin() + static_cast<long>(begin * n), src.begin() + static_cast<long>(end * n));
    return make_op(Tensor(end - begin, n, std::move(data)), "slice_rows", {a},
                   [begin, m](const Var& g) { return std::vector<Var>{pad_rows(g, begin, m)}; });
}

Var slice_cols(const Var& a, std::size_t begin, std::size_t end) {
    const auto m = a.rows(), n = a.cols();
    if (begin >= end || end > n) throw IndexError("slice_cols: bad range");
    const auto w = end - begin;
    Tensor out = matrix(m, w);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < w; ++j) out[i * w + j] = a.value()[i * n + begin + j];
    return make_op(std::move(out), "slice_cols", {a},
                   [begin, n](const Var& g) { return std::vector<Var>{pad_cols(g, begin, n)}; });
}

Var pad_rows(const Var& a, std::size_t offset, std::size_t total) {
    const auto m = a.rows(), n = a.cols();
    if (offset + m > total) throw IndexError("pad_rows: does not fit");
    Tensor out = matrix(total, n);
    std::copy(a.value().data().begin(), a.value().data().end(), out.data().begin() + static_cast<long>(offset * n));
    return make_op(std::move(out), "pad_rows", {a},
                   [offset, m](const Var& g) { return std::vector<Var>{slice_rows(g, offset, offset + m)}; });
}

Var pad_cols(const Var& a, std::size_t offset, std::size_t total) {
    const auto m = a.rows(), w = a.cols();
    if (offset + w > total) throw IndexError("pad_cols: does not fit");
    Tensor out = matrix(m, total);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < w; ++j) out[i * total + offset + j] = a.value()[i * w + j];
    return make_op(std::move(out), "pad_cols", {a},
                   [offset, w](const Var& g) { return std::vector<Var>{slice_cols(g, offset, offset + w)}; });
}

Var gather_rows(const Var& table, std::span<const std::size_t> indices) {
    const auto v = table.rows(), n = table.cols();
    if (indices.empty()) throw ContractError("gather_rows: no indices");
    Tensor out = matrix(indices.size(), n);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= v) throw IndexError("gather_rows: index " + std::to_string(indices[i]) + " out of range");
        std::copy_n(table.value().data().begin() + static_cast<long>(indices[i] * n), n,
                    out.data().begin() + static_cast<long>(i * n));
    }
    std::vector<std::size_t> idx(indices.begin(), indices.end());
    return make_op(std::move(out), "gather_rows", {table},
                   [idx, v](const Var& g) { return std::vector<Var>{scatter_rows(g, idx, v)}; });
}

Var scatter_rows(const Var& rows, std::span<const std::size_t> indices, std::size_t table_rows) {
    const auto n = rows.cols();
    if (indices.size() != rows.rows()) throw DimensionError("scatter_rows: one index per row required");
    Tensor out = matrix(table_rows, n);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= table_rows) throw IndexError("scatter_rows: index out of range");
        for (std::size_t j = 0; j < n; ++j) out[indices[i] * n + j] += rows.value()[i * n + j];
    }
    std::vector<std::size_t> idx(indices.begin(), indices.end());
    return make_op(std::move(out), "scatter_rows", {rows},
                   [idx](const Var& g) { return std::vector<Var>{gather_rows(g, idx)}; });
}

Var reshape(const Var& a, std::size_t rows, std::size_t cols) {
    if (rows * cols != a.value().size()) throw DimensionError("reshape: element count changes");
    const auto old_shape = a.value().shape();
    Tensor out(rows, cols, a.value().values());
    return make_op(std::move(out), "reshape", {a}, [old_shape](const Var& g) {
        Var r = reshape(g, old_shape.size() == 2 ? old_shape[0] : 1, old_shape.back());
        return std::vector<Var>{r};
    });
}

Var cross_entropy(const Var& logits, std::span<const std::size_t> targets) {
    const auto t = logits.rows(), v = logits.cols();
    if (targets.size() != t) throw DimensionError("cross_entropy: one target per row required");
    for (auto target : targets)
        if (target >= v) throw IndexError("cross_entropy: target " + std::to_string(target) + " >= vocabulary " + std::to_string(v));
    Tensor probs = matrix(t, v);
    kernels::softmax_rows(logits.value().data(), probs.data(), t, v);
    double total = 0.0;
    for (std::size_t i = 0; i < t; ++i) {
        const double* row = logits.value().data().data() + i * v;
        const double mx = *std::max_element(row, row + v);
        double s = 0.0;
        for (std::size_t j = 0; j < v; ++j) s += std::exp(row[j] - mx);
        total += (mx + std::log(s)) - row[targets[i]];
    }
    Tensor onehot = matrix(t, v);
    for (std::size_t i = 0; i < t; ++i) onehot[i * v + targets[i]] = 1.0;
    const double inv_t = 1.0 / static_cast<double>(t);
    return make_op(Tensor::scalar(total * inv_t), "cross_entropy", {logits},
                   [logits, probs = std::move(probs), onehot = std::move(onehot), inv_t](const Var& g) {
                       const Var p = grad_enabled() ? softmax_rows(logits) : Var::constant(probs);
                       const Var d = scale(sub(p, Var::constant(onehot)), inv_t);
                       return std::vector<Var>{scale_by(d, g)};
                   });
}

Var layer_norm(const Var& x, double eps) {
    const auto n = x.cols();
    const double inv_n = 1.0 / static_cast<double>(n);
    const Var mean = scale(sum_cols(x), inv_n);
    const Var centred = sub(x, broadcast_cols(mean, n));
    const Var var = scale(sum_cols(mul(centred, centred)), inv_n);
    const Var inv_std = rsqrt(add_scalar(var, eps));
    return mul(centred, broadcast_cols(inv_std, n));
}

// ---- differentiation -------------------------------------------------------------

namespace {

// Reverse-postorder of the requires-grad subgraph reachable from `root`.
std::vector<const Node*> topo_order(const Node* root) {
    std::vector<const Node*> order;
    std::unordered_set<const Node*> seen;
    std::vector<std::pair<const Node*, std::size_t>> stack;
    stack.emplace_back(root, 0);
    seen.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            const Node* child = node->inputs[next++].node();
            if (child && child->requires_grad && !seen.contains(child)) {
                seen.insert(child);
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    return order;  // children before parents
}

std::unordered_map<const Node*, Var> run_backward(const Var& loss) {
    if (!loss.defined() || loss.value().size() != 1)
        throw ContractError("backward: loss must be a scalar");
    std::unordered_map<const Node*, Var> grads;
    if (!loss.requires_grad()) return grads;
    grads.emplace(loss.node(), Var::constant(Tensor(loss.value().shape(), {1.0})));
    const auto order = topo_order(loss.node());
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        const Node* node = *it;
        if (!node->backward) continue;
        const auto found = grads.find(node);
        if (found == grads.end()) continue;
        const Var g = found->second;
        const auto input_grads = node->backward(g);
        for (std::size_t i = 0; i < node->inputs.size(); ++i) {
            const Var& in = node->inputs[i];
            if (!in.requires_grad() || !input_grads[i].defined()) continue;
            auto [slot, inserted] = grads.try_emplace(in.node(), input_grads[i]);
            if (!inserted) slot->second = add(slot->second, input_grads[i]);
        }
    }
    return grads;
}

}  // namespace

std::vector<Var> grad(const Var& loss, std::span<const Var> wrt, bool create_graph) {
    std::unordered_map<const Node*, Var> grads;
    if (create_graph) {
        EnableGradGuard guard;
        grads = run_backward(loss);
    } else {
        NoGradGuard guard;
        grads = run_backward(loss);
    }
    std::vector<Var> out;
    out.reserve(wrt.size());
    for (const auto& w : wrt) {
        if (!w.requires_grad()) {
            out.emplace_back();
            continue;
        }
        const auto found = grads.find(w.node());
        out.push_back(found != grads.end() ? found->second : Var::constant(like(w.value())));
    }
    return out;
}

std::optional<Tensor> GradMap::get(const Var& v) const {
    const auto found = grads_.find(v.node());
    if (found == grads_.end()) return std::nullopt;
    return found->second;
}

const Tensor& GradMap::at(const Var& v) const {
    const auto found = grads_.find(v.node());
    if (found == grads_.end()) throw LookupError("no gradient recorded for this variable");
    return found->second;
}

GradMap backward(const Var& loss) {
    NoGradGuard guard;
    auto grads = run_backward(loss);
    GradMap map;
    for (auto& [node, g] : grads)
        if (!node->backward) map.grads_.emplace(node, g.value());
    return map;
}

}  // namespace cotsm::ad
