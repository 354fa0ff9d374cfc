#pragma once

#include <cstddef>
#include <span>

// Dense kernels behind the autodiff ops. Each has a plain serial reference used by the
// tests and an OpenMP row-parallel variant. Every output row is computed by the same
// instruction sequence in both variants, so results are bit-identical for any thread count.
namespace cotsm::kernels {

namespace reference {

// c[m x n] = a[m x k] * b[k x n], textbook triple loop.
void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
          std::size_t k, std::size_t n);
void softmax_rows(std::span<const double> x, std::span<double> y, std::size_t m, std::size_t n);

}  // namespace reference

void gemm_serial(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
                 std::size_t k, std::size_t n);
void gemm_parallel(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
                   std::size_t k, std::size_t n);

void softmax_rows_serial(std::span<const double> x, std::span<double> y, std::size_t m, std::size_t n);
void softmax_rows_parallel(std::span<const double> x, std::span<double> y, std::size_t m, std::size_t n);

// Dispatching entry points: parallel when the problem is large enough and we are not
// already inside a parallel region (episode-level parallelism owns the threads then).
void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
          std::size_t k, std::size_t n);
void softmax_rows(std::span<const double> x, std::span<double> y, std::size_t m, std::size_t n);

void transpose(std::span<const double> a, std::span<double> out, std::size_t m, std::size_t n);

// Minimum multiply-add count before gemm() goes parallel.
inline constexpr std::size_t kParallelGemmWork = 1u << 18;

}  // namespace cotsm::kernels
