// Times the OpenMP kernels against their serial reference twins on
// model-sized workloads and prints throughput plus speedup.

#include <chrono>
#include <cstdio>
#include <functional>
#include <vector>

#include "dlan/kernels.hpp"
#include "dlan/rng.hpp"

using dlan::Rng;
using dlan::Tensor;

namespace {

double time_ms(const std::function<void()>& fn, int reps) {
  fn();  // warm up
  std::vector<double> ms;
  ms.reserve(static_cast<size_t>(reps));
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  double best = ms[0];
  for (double m : ms) best = best < m ? best : m;
  return best;
}

Tensor random_tensor(Rng& rng, const std::vector<int>& shape) {
  Tensor t(shape);
  for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-1.0, 1.0);
  return t;
}

void report(const char* name, double flops, double par_ms, double ref_ms) {
  std::printf("%-28s %8.3f ms  %8.3f ms  %6.2fx  %7.2f Mflop/s\n", name, par_ms, ref_ms,
              ref_ms / par_ms, flops / par_ms / 1e3);
}

}  // namespace

int main() {
  Rng rng(11);
  std::printf("%-28s %11s %11s %8s %14s\n", "kernel", "parallel", "serial", "speedup",
              "throughput");

  {
    // First backbone stage at the working resolution.
    const Tensor in = random_tensor(rng, {8, 64, 64});
    const Tensor k = random_tensor(rng, {16, 8, 3, 3});
    Tensor out;
    const double flops = 2.0 * 16 * 8 * 9 * 64 * 64;
    const double par = time_ms([&] { out = dlan::conv2d(in, k, 1, 1); }, 20);
    const double ser = time_ms([&] { out = dlan::ref::conv2d(in, k, 1, 1); }, 20);
    report("conv2d 8->16 @64", flops, par, ser);

    const Tensor gout = random_tensor(rng, {16, 64, 64});
    const double bpar = time_ms([&] { (void)dlan::conv2d_backward(in, k, 1, 1, gout); }, 20);
    const double bser =
        time_ms([&] { (void)dlan::ref::conv2d_backward(in, k, 1, 1, gout); }, 20);
    report("conv2d_backward 8->16 @64", 2.0 * flops, bpar, bser);
  }

  {
    // Dilation tower at the feature resolution.
    const Tensor in = random_tensor(rng, {32, 8, 8});
    const Tensor k = random_tensor(rng, {32, 32, 3, 3});
    Tensor out;
    const double flops = 2.0 * 32 * 32 * 9 * 8 * 8;
    const double par = time_ms([&] { out = dlan::conv2d(in, k, 4, 8); }, 50);
    const double ser = time_ms([&] { out = dlan::ref::conv2d(in, k, 4, 8); }, 50);
    report("conv2d d4 32->32 @8", flops, par, ser);
  }

  {
    // Landmark crop resampling.
    const Tensor f = random_tensor(rng, {32, 8, 8});
    Tensor grid({8, 8, 2});
    for (int64_t i = 0; i < grid.size(); ++i) grid[i] = rng.uniform(-0.9, 0.9);
    Tensor out;
    const double flops = 32.0 * 8 * 8 * 9;
    const double par = time_ms([&] { out = dlan::bilinear_sample(f, grid); }, 200);
    const double ser = time_ms([&] { out = dlan::ref::bilinear_sample(f, grid); }, 200);
    report("bilinear 32x8x8", flops, par, ser);

    const Tensor gout = random_tensor(rng, {32, 8, 8});
    const double bpar =
        time_ms([&] { (void)dlan::bilinear_sample_backward(f, grid, gout); }, 200);
    const double bser =
        time_ms([&] { (void)dlan::ref::bilinear_sample_backward(f, grid, gout); }, 200);
    report("bilinear_backward 32x8x8", 2.0 * flops, bpar, bser);
  }

  return 0;
}
