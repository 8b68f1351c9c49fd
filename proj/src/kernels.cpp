#include "ug/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace ug::kern {

namespace {

// Row accumulator in double; stack storage for the common small widths,
// heap fallback beyond that.
constexpr i64 kStackWidth = 1024;

struct RowAcc {
  double stack[kStackWidth];
  std::vector<double> heap;
  double* ptr;
  explicit RowAcc(i64 n) {
    if (n <= kStackWidth) {
      ptr = stack;
    } else {
      heap.resize(n);
      ptr = heap.data();
    }
  }
};

// The serial and parallel paths share these row bodies, so their results
// are bitwise identical no matter the thread count.

template <typename T>
inline void gemm_row(const T* a, const T* b, T* c, i64 k, i64 n, i64 i) {
  RowAcc acc(n);
  std::fill(acc.ptr, acc.ptr + n, 0.0);
  const T* ai = a + i * k;
  for (i64 p = 0; p < k; ++p) {
    double av = static_cast<double>(ai[p]);
    const T* bp = b + p * n;
    for (i64 j = 0; j < n; ++j) acc.ptr[j] += av * static_cast<double>(bp[j]);
  }
  T* ci = c + i * n;
  for (i64 j = 0; j < n; ++j) ci[j] = static_cast<T>(acc.ptr[j]);
}

template <typename T>
inline void gemm_bt_row(const T* a, const T* b, T* c, i64 k, i64 n, i64 i) {
  const T* ai = a + i * k;
  T* ci = c + i * n;
  for (i64 j = 0; j < n; ++j) {
    const T* bj = b + j * k;
    double acc = 0.0;
    for (i64 p = 0; p < k; ++p) acc += static_cast<double>(ai[p]) * static_cast<double>(bj[p]);
    ci[j] = static_cast<T>(acc);
  }
}

template <typename T>
inline void gemm_at_row(const T* a, const T* b, T* c, i64 k, i64 m, i64 n, i64 i) {
  RowAcc acc(n);
  std::fill(acc.ptr, acc.ptr + n, 0.0);
  for (i64 p = 0; p < k; ++p) {
    double av = static_cast<double>(a[p * m + i]);
    const T* bp = b + p * n;
    for (i64 j = 0; j < n; ++j) acc.ptr[j] += av * static_cast<double>(bp[j]);
  }
  T* ci = c + i * n;
  for (i64 j = 0; j < n; ++j) ci[j] = static_cast<T>(acc.ptr[j]);
}

// Returns false for a fully masked row; the caller raises the error outside
// any parallel region (exceptions must not escape an OpenMP loop body).
template <typename T>
inline bool softmax_row(const T* s, const uint8_t* m, T* out, i64 cols, i64 r) {
  const T* sr = s + r * cols;
  const uint8_t* mr = m + r * cols;
  T* orow = out + r * cols;
  double mx = -std::numeric_limits<double>::infinity();
  for (i64 c = 0; c < cols; ++c)
    if (mr[c]) mx = std::max(mx, static_cast<double>(sr[c]));
  if (mx == -std::numeric_limits<double>::infinity()) return false;
  RowAcc e(cols);
  double sum = 0.0;
  for (i64 c = 0; c < cols; ++c) {
    if (mr[c]) {
      double v = std::exp(static_cast<double>(sr[c]) - mx);
      e.ptr[c] = v;
      sum += v;
    } else {
      e.ptr[c] = 0.0;
    }
  }
  for (i64 c = 0; c < cols; ++c) orow[c] = static_cast<T>(e.ptr[c] / sum);
  return true;
}

template <typename T>
inline void rmsnorm_row(const T* x, const T* gain, T* out, i64 d, double eps, i64 r) {
  const T* xr = x + r * d;
  T* orow = out + r * d;
  double ms = 0.0;
  for (i64 c = 0; c < d; ++c) {
    double v = static_cast<double>(xr[c]);
    ms += v * v;
  }
  double inv = 1.0 / std::sqrt(ms / static_cast<double>(d) + eps);
  for (i64 c = 0; c < d; ++c)
    orow[c] = static_cast<T>(static_cast<double>(xr[c]) * inv * static_cast<double>(gain[c]));
}

// Below this many multiply-adds the parallel entry points fall back to the
// serial loop; thread startup would dominate.
constexpr i64 kParallelCutoff = 1 << 15;

}  // namespace

template <typename T>
void gemm(const T* a, const T* b, T* c, i64 m, i64 k, i64 n) {
  if (m * k * n < kParallelCutoff) {
    serial::gemm(a, b, c, m, k, n);
    return;
  }
#pragma omp parallel for schedule(static)
  for (i64 i = 0; i < m; ++i) gemm_row(a, b, c, k, n, i);
}

template <typename T>
void gemm_bt(const T* a, const T* b, T* c, i64 m, i64 k, i64 n) {
  if (m * k * n < kParallelCutoff) {
    serial::gemm_bt(a, b, c, m, k, n);
    return;
  }
#pragma omp parallel for schedule(static)
  for (i64 i = 0; i < m; ++i) gemm_bt_row(a, b, c, k, n, i);
}

template <typename T>
void gemm_at(const T* a, const T* b, T* c, i64 m, i64 k, i64 n) {
  if (m * k * n < kParallelCutoff) {
    serial::gemm_at(a, b, c, m, k, n);
    return;
  }
#pragma omp parallel for schedule(static)
  for (i64 i = 0; i < m; ++i) gemm_at_row(a, b, c, k, m, n, i);
}

template <typename T>
void softmax_rows_masked(const T* scores, const uint8_t* mask, T* out, i64 rows, i64 cols) {
  if (rows * cols < kParallelCutoff) {
    serial::softmax_rows_masked(scores, mask, out, rows, cols);
    return;
  }
  i64 bad_row = -1;
#pragma omp parallel for schedule(static)
  for (i64 r = 0; r < rows; ++r) {
    if (!softmax_row(scores, mask, out, cols, r)) {
#pragma omp critical
      bad_row = r;
    }
  }
  if (bad_row >= 0) throw numeric_error("softmax: fully masked row " + std::to_string(bad_row));
}

template <typename T>
void rmsnorm_rows(const T* x, const T* gain, T* out, i64 rows, i64 d, double eps) {
  if (rows * d < kParallelCutoff) {
    serial::rmsnorm_rows(x, gain, out, rows, d, eps);
    return;
  }
#pragma omp parallel for schedule(static)
  for (i64 r = 0; r < rows; ++r) rmsnorm_row(x, gain, out, d, eps, r);
}

namespace serial {

template <typename T>
void gemm(const T* a, const T* b, T* c, i64 m, i64 k, i64 n) {
  for (i64 i = 0; i < m; ++i) gemm_row(a, b, c, k, n, i);
}

template <typename T>
void gemm_bt(const T* a, const T* b, T* c, i64 m, i64 k, i64 n) {
  for (i64 i = 0; i < m; ++i) gemm_bt_row(a, b, c, k, n, i);
}

template <typename T>
void gemm_at(const T* a, const T* b, T* c, i64 m, i64 k, i64 n) {
  for (i64 i = 0; i < m; ++i) gemm_at_row(a, b, c, k, m, n, i);
}

template <typename T>
void softmax_rows_masked(const T* scores, const uint8_t* mask, T* out, i64 rows, i64 cols) {
  for (i64 r = 0; r < rows; ++r)
    if (!softmax_row(scores, mask, out, cols, r))
      throw numeric_error("softmax: fully masked row " + std::to_string(r));
}

template <typename T>
void rmsnorm_rows(const T* x, const T* gain, T* out, i64 rows, i64 d, double eps) {
  for (i64 r = 0; r < rows; ++r) rmsnorm_row(x, gain, out, d, eps, r);
}

}  // namespace serial

#define UG_INSTANTIATE_KERNELS(T)                                                         \
  template void gemm<T>(const T*, const T*, T*, i64, i64, i64);                           \
  template void gemm_bt<T>(const T*, const T*, T*, i64, i64, i64);                        \
  template void gemm_at<T>(const T*, const T*, T*, i64, i64, i64);                        \
  template void softmax_rows_masked<T>(const T*, const uint8_t*, T*, i64, i64);           \
  template void rmsnorm_rows<T>(const T*, const T*, T*, i64, i64, double);                \
  namespace serial {                                                                      \
  template void gemm<T>(const T*, const T*, T*, i64, i64, i64);                           \
  template void gemm_bt<T>(const T*, const T*, T*, i64, i64, i64);                        \
  template void gemm_at<T>(const T*, const T*, T*, i64, i64, i64);                        \
  template void softmax_rows_masked<T>(const T*, const uint8_t*, T*, i64, i64);           \
  template void rmsnorm_rows<T>(const T*, const T*, T*, i64, i64, double);                \
  }

UG_INSTANTIATE_KERNELS(float)
UG_INSTANTIATE_KERNELS(double)

}  // namespace ug::kern
