#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <string>
#include <vector>

#include "dh/kernels.hpp"
#include "dh/rng.hpp"

// Times the OpenMP kernels against the serial reference implementations on
// depth-net-sized workloads.

namespace {

using Clock = std::chrono::steady_clock;

double time_ms(int reps, const std::function<void()>& fn) {
  fn();  // warm up
  const auto t0 = Clock::now();
  for (int r = 0; r < reps; ++r) fn();
  const auto t1 = Clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

std::vector<double> random_vec(size_t n, dh::Rng& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

void report(const char* name, double serial_ms, double parallel_ms) {
  std::printf("%-24s serial %8.3f ms   omp %8.3f ms   speedup %.2fx\n", name,
              serial_ms, parallel_ms, serial_ms / parallel_ms);
}

}  // namespace

int main(int argc, char** argv) {
  int reps = 20;
  if (argc > 1) reps = std::max(1, std::atoi(argv[1]));
  std::printf("threads: %d, reps: %d\n", omp_get_max_threads(), reps);

  dh::Rng rng(42);
  namespace k = dh::kernels;

  {
    const k::ConvDims d = k::conv_dims({2, 16, 96, 128}, {32, 16, 3, 3}, 1, 1);
    const auto x = random_vec(static_cast<size_t>(2 * 16 * 96 * 128), rng);
    const auto w = random_vec(static_cast<size_t>(32 * 16 * 3 * 3), rng);
    const auto b = random_vec(32, rng);
    std::vector<double> y(static_cast<size_t>(2 * 32 * d.oh * d.ow));
    const double ts = time_ms(reps, [&] {
      k::ref::conv2d_forward(d, x.data(), w.data(), b.data(), y.data());
    });
    const double tp = time_ms(reps, [&] {
      k::conv2d_forward(d, x.data(), w.data(), b.data(), y.data());
    });
    report("conv2d_forward", ts, tp);

    std::vector<double> gy = random_vec(y.size(), rng);
    std::vector<double> gx(x.size());
    const double ts_gi = time_ms(reps, [&] {
      std::fill(gx.begin(), gx.end(), 0.0);
      k::ref::conv2d_grad_input(d, gy.data(), w.data(), gx.data());
    });
    const double tp_gi = time_ms(reps, [&] {
      std::fill(gx.begin(), gx.end(), 0.0);
      k::conv2d_grad_input(d, gy.data(), w.data(), gx.data());
    });
    report("conv2d_grad_input", ts_gi, tp_gi);

    std::vector<double> gw(w.size());
    const double ts_gw = time_ms(reps, [&] {
      std::fill(gw.begin(), gw.end(), 0.0);
      k::ref::conv2d_grad_weight(d, gy.data(), x.data(), gw.data());
    });
    const double tp_gw = time_ms(reps, [&] {
      std::fill(gw.begin(), gw.end(), 0.0);
      k::conv2d_grad_weight(d, gy.data(), x.data(), gw.data());
    });
    report("conv2d_grad_weight", ts_gw, tp_gw);
  }

  {
    const int64_t c = 3, h = 384, w = 512;
    const auto img = random_vec(static_cast<size_t>(c * h * w), rng);
    std::vector<double> coords(static_cast<size_t>(2 * h * w));
    for (int64_t p = 0; p < h * w; ++p) {
      coords[static_cast<size_t>(p)] = rng.uniform(-8.0, w + 8.0);
      coords[static_cast<size_t>(h * w + p)] = rng.uniform(-8.0, h + 8.0);
    }
    std::vector<double> value(static_cast<size_t>(c * h * w));
    std::vector<double> mask(static_cast<size_t>(h * w));
    const double ts = time_ms(reps, [&] {
      k::ref::bilinear_forward(c, h, w, img.data(), h, w, coords.data(),
                               value.data(), mask.data());
    });
    const double tp = time_ms(reps, [&] {
      k::bilinear_forward(c, h, w, img.data(), h, w, coords.data(),
                          value.data(), mask.data());
    });
    report("bilinear_forward", ts, tp);
  }
  return 0;
}
