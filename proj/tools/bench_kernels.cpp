// Times the dense kernels three ways: the naive reference loops, the
// optimized kernels with OpenMP disabled, and the optimized kernels with
// OpenMP enabled. Prints one CSV row per (kernel, shape, variant) and the
// largest deviation from the reference, so speed never hides a wrong answer.

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "spot/kernels.hpp"
#include "spot/rng.hpp"

namespace k = spot::kernels;

namespace {

struct Shape {
  int rows, in, out;
};

std::vector<double> random_vector(std::size_t n, std::uint64_t seed) {
  spot::CounterRng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

double median_seconds(const std::function<void()>& fn, int repeats) {
  std::vector<double> t;
  for (int r = 0; r < repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    t.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  std::sort(t.begin(), t.end());
  return t[t.size() / 2];
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dense kernel benchmark"};
  int repeats = 5, inner = 20, threads = omp_get_max_threads();
  app.add_option("--repeats", repeats, "Timed repetitions (median reported)")->check(CLI::PositiveNumber);
  app.add_option("--inner", inner, "Kernel calls per repetition")->check(CLI::PositiveNumber);
  app.add_option("--threads", threads, "OpenMP threads for the parallel variant")->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);
  omp_set_num_threads(threads);

  // Toy-encoder shapes (65 tokens, width 64, MLP 256) and one larger layer.
  const std::vector<Shape> shapes = {{65, 64, 192}, {65, 64, 256}, {65, 256, 64}, {512, 512, 512}};
  std::printf("kernel,rows,in,out,variant,threads,median_ms,gflops,max_abs_diff_vs_reference\n");

  for (const auto& s : shapes) {
    const auto x = random_vector(static_cast<std::size_t>(s.rows) * s.in, 1);
    const auto w = random_vector(static_cast<std::size_t>(s.out) * s.in, 2);
    const auto b = random_vector(s.out, 3);
    const auto dy = random_vector(static_cast<std::size_t>(s.rows) * s.out, 4);
    const double flops = 2.0 * s.rows * s.in * s.out * inner;

    struct Kernel {
      const char* name;
      std::size_t out_size;
      std::function<void(std::vector<double>&, bool)> run;  // bool: reference variant
    };
    const std::vector<Kernel> kernels = {
        {"linear", static_cast<std::size_t>(s.rows) * s.out,
         [&](std::vector<double>& y, bool ref) {
           if (ref) k::reference::linear(x, w, b, y, s.rows, s.in, s.out);
           else k::linear(x, w, b, y, s.rows, s.in, s.out);
         }},
        {"linear_grad_input", static_cast<std::size_t>(s.rows) * s.in,
         [&](std::vector<double>& dx, bool ref) {
           std::fill(dx.begin(), dx.end(), 0.0);
           if (ref) k::reference::linear_grad_input(dy, w, dx, s.rows, s.in, s.out);
           else k::linear_grad_input(dy, w, dx, s.rows, s.in, s.out);
         }},
        {"linear_grad_weight", static_cast<std::size_t>(s.out) * s.in,
         [&](std::vector<double>& dw, bool ref) {
           std::fill(dw.begin(), dw.end(), 0.0);
           if (ref) k::reference::linear_grad_weight(dy, x, dw, {}, s.rows, s.in, s.out);
           else k::linear_grad_weight(dy, x, dw, {}, s.rows, s.in, s.out);
         }},
    };

    for (const auto& kern : kernels) {
      std::vector<double> expected(kern.out_size), got(kern.out_size);
      kern.run(expected, true);
      for (const char* variant : {"reference", "serial", "openmp"}) {
        const bool ref = std::string(variant) == "reference";
        k::set_parallel(std::string(variant) == "openmp");
        const double sec = median_seconds([&] { for (int i = 0; i < inner; ++i) kern.run(got, ref); }, repeats);
        std::printf("%s,%d,%d,%d,%s,%d,%.4f,%.3f,%.3g\n", kern.name, s.rows, s.in, s.out, variant,
                    std::string(variant) == "openmp" ? threads : 1, 1e3 * sec, flops / sec * 1e-9,
                    max_abs_diff(got, expected));
      }
    }
  }
  k::set_parallel(true);
  return 0;
}
