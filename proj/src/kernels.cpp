#include "spot/kernels.hpp"

#include <atomic>

namespace spot::kernels {
namespace {

std::atomic<bool> g_parallel{true};

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr long kParallelWork = 1L << 16;

bool go_parallel(long work) { return g_parallel.load(std::memory_order_relaxed) && work >= kParallelWork; }

}  // namespace

void set_parallel(bool enabled) { g_parallel.store(enabled, std::memory_order_relaxed); }
bool parallel_enabled() { return g_parallel.load(std::memory_order_relaxed); }

double dot(const double* a, const double* b, int n) {
  double acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  int i = 0;
  for (; i + 8 <= n; i += 8) {
    for (int l = 0; l < 8; ++l) acc[l] += a[i + l] * b[i + l];
  }
  for (int l = 0; i < n; ++i, ++l) acc[l] += a[i] * b[i];
  return ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
}

void axpy(double alpha, const double* x, double* y, int n) {
  for (int i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void linear(std::span<const double> x, std::span<const double> weight, std::span<const double> bias,
            std::span<double> y, int rows, int in, int out) {
  const double* xp = x.data();
  const double* wp = weight.data();
  const double* bp = bias.empty() ? nullptr : bias.data();
  double* yp = y.data();
#pragma omp parallel for schedule(static) if (go_parallel(static_cast<long>(rows) * in * out))
  for (int r = 0; r < rows; ++r) {
    const double* xr = xp + static_cast<long>(r) * in;
    double* yr = yp + static_cast<long>(r) * out;
    for (int o = 0; o < out; ++o) {
      yr[o] = (bp ? bp[o] : 0.0) + dot(xr, wp + static_cast<long>(o) * in, in);
    }
  }
}

void linear_grad_input(std::span<const double> dy, std::span<const double> weight, std::span<double> dx, int rows,
                       int in, int out) {
  const double* dyp = dy.data();
  const double* wp = weight.data();
  double* dxp = dx.data();
#pragma omp parallel for schedule(static) if (go_parallel(static_cast<long>(rows) * in * out))
  for (int r = 0; r < rows; ++r) {
    const double* dyr = dyp + static_cast<long>(r) * out;
    double* dxr = dxp + static_cast<long>(r) * in;
    for (int o = 0; o < out; ++o) {
      if (dyr[o] != 0.0) axpy(dyr[o], wp + static_cast<long>(o) * in, dxr, in);
    }
  }
}

void linear_grad_weight(std::span<const double> dy, std::span<const double> x, std::span<double> dweight,
                        std::span<double> dbias, int rows, int in, int out) {
  const double* dyp = dy.data();
  const double* xp = x.data();
  double* dwp = dweight.data();
  double* dbp = dbias.empty() ? nullptr : dbias.data();
#pragma omp parallel for schedule(static) if (go_parallel(static_cast<long>(rows) * in * out))
  for (int o = 0; o < out; ++o) {
    double* dwo = dwp + static_cast<long>(o) * in;
    double bsum = 0.0;
    for (int r = 0; r < rows; ++r) {
      const double g = dyp[static_cast<long>(r) * out + o];
      bsum += g;
      if (g != 0.0) axpy(g, xp + static_cast<long>(r) * in, dwo, in);
    }
    if (dbp) dbp[o] += bsum;
  }
}

namespace reference {

void linear(std::span<const double> x, std::span<const double> weight, std::span<const double> bias,
            std::span<double> y, int rows, int in, int out) {
  for (int r = 0; r < rows; ++r) {
    for (int o = 0; o < out; ++o) {
      double acc = bias.empty() ? 0.0 : bias[o];
      for (int i = 0; i < in; ++i) acc += x[r * in + i] * weight[o * in + i];
      y[r * out + o] = acc;
    }
  }
}

void linear_grad_input(std::span<const double> dy, std::span<const double> weight, std::span<double> dx, int rows,
                       int in, int out) {
  for (int r = 0; r < rows; ++r) {
    for (int i = 0; i < in; ++i) {
      double acc = 0.0;
      for (int o = 0; o < out; ++o) acc += dy[r * out + o] * weight[o * in + i];
      dx[r * in + i] += acc;
    }
  }
}

void linear_grad_weight(std::span<const double> dy, std::span<const double> x, std::span<double> dweight,
                        std::span<double> dbias, int rows, int in, int out) {
  for (int o = 0; o < out; ++o) {
    for (int i = 0; i < in; ++i) {
      double acc = 0.0;
      for (int r = 0; r < rows; ++r) acc += dy[r * out + o] * x[r * in + i];
      dweight[o * in + i] += acc;
    }
    if (!dbias.empty()) {
      double acc = 0.0;
      for (int r = 0; r < rows; ++r) acc += dy[r * out + o];
      dbias[o] += acc;
    }
  }
}

}  // namespace reference
}  // namespace spot::kernels
