// Scratch micro-benchmark for the conv kernels (not part of the build).
#include <chrono>
#include <cstdio>

#include "bevmem/kernels.hpp"
#include "bevmem/tape.hpp"

using namespace bevmem;

int main() {
  const int C_in = 352, C_out = 64, H = 32, W = 64, k = 3, d = 2;
  Rng rng(1);
  Tensor x({C_in, H, W});
  for (auto& v : x.v) v = (real)rng.uniform(-1, 1);
  Tensor w({C_out, C_in, k, k});
  for (auto& v : w.v) v = (real)rng.uniform(-0.1, 0.1);
  Tensor b({C_out});

  const double macs = (double)C_out * C_in * k * k * H * W;

  // forward
  Tensor padded;
  auto t0 = std::chrono::steady_clock::now();
  int reps = 20;
  Tensor out;
  for (int i = 0; i < reps; ++i) out = conv2d_forward(x, w, b, d, d, &padded);
  auto t1 = std::chrono::steady_clock::now();
  double s = std::chrono::duration<double>(t1 - t0).count() / reps;
  std::printf("forward: %.1f ms, %.2f GMAC/s (%.2f GFLOP/s)\n", s * 1e3, macs / s / 1e9,
              2 * macs / s / 1e9);

  // backward input
  Tensor gout({C_out, H, W});
  for (auto& v : gout.v) v = (real)rng.uniform(-1, 1);
  t0 = std::chrono::steady_clock::now();
  Tensor dx;
  for (int i = 0; i < reps; ++i) dx = conv2d_backward_input(w, gout, d, d);
  t1 = std::chrono::steady_clock::now();
  s = std::chrono::duration<double>(t1 - t0).count() / reps;
  std::printf("bwd dx : %.1f ms, %.2f GMAC/s\n", s * 1e3, macs / s / 1e9);

  // backward params
  t0 = std::chrono::steady_clock::now();
  Tensor dw, db;
  for (int i = 0; i < reps; ++i) conv2d_backward_params(padded, C_in, gout, k, d, d, dw, db);
  t1 = std::chrono::steady_clock::now();
  s = std::chrono::duration<double>(t1 - t0).count() / reps;
  std::printf("bwd dw : %.1f ms, %.2f GMAC/s\n", s * 1e3, macs / s / 1e9);

  std::printf("checksum %.6f %.6f %.6f\n", (double)out.v[123], (double)dx.v[456],
              (double)dw.v[789]);
  return 0;
}
