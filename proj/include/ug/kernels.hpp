#pragma once

#include <cstdint>

#include "ug/common.hpp"

// Dense math kernels. The OpenMP versions in ug::kern parallelize over rows;
// ug::kern::serial contains plain-loop twins with the identical per-element
// operation order, so both paths produce bitwise identical results and the
// serial ones can stand in as references in tests and benchmarks.
//
// All kernels accumulate in double regardless of the storage type, which
// keeps f32 results within a few ulps of the f64 ones and makes independent
// decompositions of the same computation agree tightly.

namespace ug::kern {

// c[m,n] = a[m,k] * b[k,n]
template <typename T>
void gemm(const T* a, const T* b, T* c, i64 m, i64 k, i64 n);

// c[m,n] = a[m,k] * b[n,k]^T   (dot products of rows)
template <typename T>
void gemm_bt(const T* a, const T* b, T* c, i64 m, i64 k, i64 n);

// c[m,n] = a[k,m]^T * b[k,n]
template <typename T>
void gemm_at(const T* a, const T* b, T* c, i64 m, i64 k, i64 n);

// Row-wise masked softmax. mask is row-major rows*cols, nonzero = attend.
// Masked-out entries come back as exact zeros. A fully masked row is a
// caller bug and throws numeric_error.
template <typename T>
void softmax_rows_masked(const T* scores, const uint8_t* mask, T* out, i64 rows, i64 cols);

// Row-wise RMS normalization with a learned per-column gain.
template <typename T>
void rmsnorm_rows(const T* x, const T* gain, T* out, i64 rows, i64 d, double eps);

namespace serial {

template <typename T>
void gemm(const T* a, const T* b, T* c, i64 m, i64 k, i64 n);
template <typename T>
void gemm_bt(const T* a, const T* b, T* c, i64 m, i64 k, i64 n);
template <typename T>
void gemm_at(const T* a, const T* b, T* c, i64 m, i64 k, i64 n);
template <typename T>
void softmax_rows_masked(const T* scores, const uint8_t* mask, T* out, i64 rows, i64 cols);
template <typename T>
void rmsnorm_rows(const T* x, const T* gain, T* out, i64 rows, i64 d, double eps);

}  // namespace serial

}  // namespace ug::kern
