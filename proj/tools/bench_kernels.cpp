#include <chrono>
#include <cstdio>
#include <functional>
#include <vector>

#include "ug/kernels.hpp"
#include "ug/rng.hpp"
#include "ug/tensor.hpp"

using namespace ug;

namespace {

double seconds_per_call(const std::function<void()>& fn, int reps) {
  fn();  // warm up
  auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < reps; ++i) fn();
  auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double>(t1 - t0).count() / reps;
}

template <typename T>
void bench_gemm(i64 m, i64 k, i64 n, int reps) {
  Rng r(42);
  Tensor<T> a = randn<T>({m, k}, r, 1.0);
  Tensor<T> b = randn<T>({k, n}, r, 1.0);
  Tensor<T> c({m, n});
  double ts = seconds_per_call(
      [&] { kern::serial::gemm(a.data.data(), b.data.data(), c.data.data(), m, k, n); }, reps);
  Tensor<T> c2({m, n});
  double tp = seconds_per_call(
      [&] { kern::gemm(a.data.data(), b.data.data(), c2.data.data(), m, k, n); }, reps);
  if (c.data != c2.data) {
    std::printf("MISMATCH at %lldx%lldx%lld\n", static_cast<long long>(m),
                static_cast<long long>(k), static_cast<long long>(n));
    return;
  }
  double gf = 2.0 * m * k * n / 1e9;
  std::printf("gemm %4lld x %4lld x %4lld  %-6s serial %8.3f ms (%6.2f GF/s)  parallel %8.3f ms "
              "(%6.2f GF/s)  speedup %.2fx\n",
              static_cast<long long>(m), static_cast<long long>(k), static_cast<long long>(n),
              dtype_name(dtype_of<T>()), ts * 1e3, gf / ts, tp * 1e3, gf / tp, ts / tp);
}

template <typename T>
void bench_softmax(i64 rows, i64 cols, int reps) {
  Rng r(43);
  Tensor<T> x = randn<T>({rows, cols}, r, 1.0);
  std::vector<uint8_t> mask(rows * cols, 1);
  for (i64 i = 0; i < rows; ++i)
    for (i64 j = 0; j < cols; ++j)
      if (j > i % cols) mask[i * cols + j] = 0;  // ragged causal-ish pattern
  Tensor<T> y1({rows, cols}), y2({rows, cols});
  double ts = seconds_per_call(
      [&] {
        kern::serial::softmax_rows_masked(x.data.data(), mask.data(), y1.data.data(), rows, cols);
      },
      reps);
  double tp = seconds_per_call(
      [&] { kern::softmax_rows_masked(x.data.data(), mask.data(), y2.data.data(), rows, cols); },
      reps);
  if (y1.data != y2.data) {
    std::printf("MISMATCH softmax %lldx%lld\n", static_cast<long long>(rows),
                static_cast<long long>(cols));
    return;
  }
  std::printf("softmax %5lld x %5lld %-6s serial %8.3f ms  parallel %8.3f ms  speedup %.2fx\n",
              static_cast<long long>(rows), static_cast<long long>(cols),
              dtype_name(dtype_of<T>()), ts * 1e3, tp * 1e3, ts / tp);
}

}  // namespace

int main() {
  std::printf("serial vs OpenMP kernels (results must match bitwise)\n\n");
  for (i64 s : {64, 128, 256, 512}) bench_gemm<float>(s, s, s, s >= 512 ? 3 : 10);
  bench_gemm<double>(256, 256, 256, 5);
  bench_gemm<float>(1024, 128, 257, 5);  // LM-head shape
  std::printf("\n");
  bench_softmax<float>(512, 512, 10);
  bench_softmax<double>(512, 512, 10);
  return 0;
}
