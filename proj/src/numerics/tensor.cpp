#include "cotsm/numerics/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "cotsm/errors.hpp"

namespace cotsm {

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_.empty() || shape_.size() > 2)
        throw DimensionError("tensor rank must be 1 or 2, got " + std::to_string(shape_.size()));
    for (auto d : shape_)
        if (d == 0) throw DimensionError("tensor dimensions must be positive");
    const auto n = std::accumulate(shape_.begin(), shape_.end(), std::size_t{1}, std::multiplies<>());
    if (n != data_.size())
        throw DimensionError("shape " + shape_string() + " needs " + std::to_string(n) + " values, got " +
                             std::to_string(data_.size()));
}

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
    : Tensor(Shape{rows, cols}, std::move(data)) {}

Tensor Tensor::zeros(std::size_t rows, std::size_t cols) { return filled(rows, cols, 0.0); }

Tensor Tensor::zeros(const Shape& shape) {
    const auto n = std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
    return Tensor(shape, std::vector<double>(n, 0.0));
}

Tensor Tensor::filled(std::size_t rows, std::size_t cols, double value) {
    return Tensor(rows, cols, std::vector<double>(rows * cols, value));
}

Tensor Tensor::identity(std::size_t n) {
    Tensor t = zeros(n, n);
    for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
    return t;
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw DimensionError("ragged rows in Tensor::from_rows");
        data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor(r, c, std::move(data));
}

Tensor Tensor::row(std::vector<double> values) {
    const auto n = values.size();
    return Tensor(1, n, std::move(values));
}

double Tensor::item() const {
    if (data_.size() != 1) throw ContractError("item() on tensor of shape " + shape_string());
    return data_[0];
}

bool Tensor::same_shape(const Tensor& other) const { return rows() == other.rows() && cols() == other.cols(); }

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string Tensor::shape_string() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape_[i]);
    }
    return s + "]";
}

void require_finite(const Tensor& t, const char* where) {
    if (!t.all_finite()) throw NumericError(std::string("non-finite value produced by ") + where);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (a.size() != b.size()) throw DimensionError("max_abs_diff size mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace cotsm
