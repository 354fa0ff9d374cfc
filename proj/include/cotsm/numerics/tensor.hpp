#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace cotsm {

using Shape = std::vector<std::size_t>;

// Dense row-major array of doubles, rank 1 or 2. A rank-1 tensor of length n
// behaves as a 1 x n row wherever matrix semantics are needed.
class Tensor {
public:
    Tensor() = default;
    Tensor(Shape shape, std::vector<double> data);
    Tensor(std::size_t rows, std::size_t cols, std::vector<double> data);

    static Tensor zeros(std::size_t rows, std::size_t cols);
    static Tensor zeros(const Shape& shape);
    static Tensor filled(std::size_t rows, std::size_t cols, double value);
    static Tensor ones(std::size_t rows, std::size_t cols) { return filled(rows, cols, 1.0); }
    static Tensor identity(std::size_t n);
    static Tensor scalar(double value) { return Tensor({1}, {value}); }
    static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);
    static Tensor row(std::vector<double> values);

    [[nodiscard]] const Shape& shape() const { return shape_; }
    [[nodiscard]] std::size_t rank() const { return shape_.size(); }
    [[nodiscard]] std::size_t rows() const { return shape_.size() == 2 ? shape_[0] : 1; }
    [[nodiscard]] std::size_t cols() const { return shape_.empty() ? 0 : shape_.back(); }
    [[nodiscard]] std::size_t size() const { return data_.size(); }
    [[nodiscard]] bool empty() const { return data_.empty(); }

    [[nodiscard]] std::span<const double> data() const { return data_; }
    [[nodiscard]] std::span<double> data() { return data_; }
    [[nodiscard]] const std::vector<double>& values() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }
    double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    [[nodiscard]] double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
    [[nodiscard]] double item() const;

    [[nodiscard]] bool same_shape(const Tensor& other) const;
    [[nodiscard]] bool all_finite() const;
    [[nodiscard]] std::string shape_string() const;

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

// Throws NumericError naming `where` if any entry is NaN or infinite.
void require_finite(const Tensor& t, const char* where);

double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace cotsm
