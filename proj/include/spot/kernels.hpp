#pragma once

#include <span>

// Dense kernels behind the encoder. Weights are row-major (out × in), so a
// linear layer computes y[r] = W·x[r] + b for every row r of x.
//
// The kernels in spot::kernels are OpenMP-parallel over an outer index and
// vectorize their inner loops; each output element is accumulated in a fixed
// order that does not depend on the thread count. spot::kernels::reference
// holds plain serial loops used as the oracle in tests and as the baseline in
// the kernel benchmark.

namespace spot::kernels {

/// Dot product accumulated in 8 interleaved lanes, combined pairwise.
double dot(const double* a, const double* b, int n);
/// y += alpha·x
void axpy(double alpha, const double* x, double* y, int n);

/// y[rows×out] = x[rows×in]·Wᵀ + b. `bias` may be empty.
void linear(std::span<const double> x, std::span<const double> weight, std::span<const double> bias,
            std::span<double> y, int rows, int in, int out);
/// dx[rows×in] += dy[rows×out]·W
void linear_grad_input(std::span<const double> dy, std::span<const double> weight, std::span<double> dx, int rows,
                       int in, int out);
/// dW[out×in] += dyᵀ·x, db[out] += column sums of dy. `dbias` may be empty.
void linear_grad_weight(std::span<const double> dy, std::span<const double> x, std::span<double> dweight,
                        std::span<double> dbias, int rows, int in, int out);

/// Enables or disables the OpenMP paths (the serial path runs the same loops).
void set_parallel(bool enabled);
bool parallel_enabled();

namespace reference {

void linear(std::span<const double> x, std::span<const double> weight, std::span<const double> bias,
            std::span<double> y, int rows, int in, int out);
void linear_grad_input(std::span<const double> dy, std::span<const double> weight, std::span<double> dx, int rows,
                       int in, int out);
void linear_grad_weight(std::span<const double> dy, std::span<const double> x, std::span<double> dweight,
                        std::span<double> dbias, int rows, int in, int out);

}  // namespace reference
}  // namespace spot::kernels
