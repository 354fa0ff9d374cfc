#include "cotsm/numerics/kernels.hpp"

#include <algorithm>
#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace cotsm::kernels {

namespace {

inline void gemm_row(const double* a_row, const double* b, double* c_row, std::size_t k, std::size_t n) {
    std::fill(c_row, c_row + n, 0.0);
    for (std::size_t p = 0; p < k; ++p) {
        const double s = a_row[p];
        const double* b_row = b + p * n;
#pragma omp simd
        for (std::size_t j = 0; j < n; ++j) c_row[j] += s * b_row[j];
    }
}

inline void softmax_row(const double* x, double* y, std::size_t n) {
    double mx = x[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        y[j] = std::exp(x[j] - mx);
        sum += y[j];
    }
    const double inv = 1.0 / sum;
    for (std::size_t j = 0; j < n; ++j) y[j] *= inv;
}

bool can_fork() {
#ifdef _OPENMP
    return !omp_in_parallel() && omp_get_max_threads() > 1;
#else
    return false;
#endif
}

}  // namespace

namespace reference {

void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
          std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
            c[i * n + j] = acc;
        }
}

void softmax_rows(std::span<const double> x, std::span<double> y, std::size_t m, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double mx = x[i * n];
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x[i * n + j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) sum += std::exp(x[i * n + j] - mx);
        for (std::size_t j = 0; j < n; ++j) y[i * n + j] = std::exp(x[i * n + j] - mx) / sum;
    }
}

}  // namespace reference

void gemm_serial(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
                 std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) gemm_row(a.data() + i * k, b.data(), c.data() + i * n, k, n);
}

void gemm_parallel(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
                   std::size_t k, std::size_t n) {
    const auto rows = static_cast<long>(m);
#pragma omp parallel for schedule(static)
    for (long i = 0; i < rows; ++i) {
        const auto r = static_cast<std::size_t>(i);
        gemm_row(a.data() + r * k, b.data(), c.data() + r * n, k, n);
    }
}

void softmax_rows_serial(std::span<const double> x, std::span<double> y, std::size_t m, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) softmax_row(x.data() + i * n, y.data() + i * n, n);
}

void softmax_rows_parallel(std::span<const double> x, std::span<double> y, std::size_t m, std::size_t n) {
    const auto rows = static_cast<long>(m);
#pragma omp parallel for schedule(static)
    for (long i = 0; i < rows; ++i) {
        const auto r = static_cast<std::size_t>(i);
        softmax_row(x.data() + r * n, y.data() + r * n, n);
    }
}

void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
          std::size_t k, std::size_t n) {
    if (m > 1 && m * k * n >= kParallelGemmWork && can_fork())
        gemm_parallel(a, b, c, m, k, n);
    else
        gemm_serial(a, b, c, m, k, n);
}

void softmax_rows(std::span<const double> x, std::span<double> y, std::size_t m, std::size_t n) {
    if (m > 1 && m * n >= kParallelGemmWork && can_fork())
        softmax_rows_parallel(x, y, m, n);
    else
        softmax_rows_serial(x, y, m, n);
}

void transpose(std::span<const double> a, std::span<double> out, std::size_t m, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
}

}  // namespace cotsm::kernels
