#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace ug {

using i64 = int64_t;
using u64 = uint64_t;

// Error taxonomy. The CLI maps config_error to exit code 2 (bad invocation /
// bad config, nothing was started) and every other failure to exit code 1.

// Invalid configuration detected before any work begins.
struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor / mask / plan dimensions that do not line up.
struct shape_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Violated precondition of an operation (empty input, window overflow,
// nothing to supervise, ...).
struct contract_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite value produced by a forward op, degenerate softmax row,
// NaN loss during training.
struct numeric_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// File and serialization problems.
struct io_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline i64 ceil_div(i64 a, i64 b) { return (a + b - 1) / b; }

enum class Dtype : uint8_t { f32 = 0, f64 = 1 };

template <typename T>
constexpr Dtype dtype_of();
template <>
constexpr Dtype dtype_of<float>() { return Dtype::f32; }
template <>
constexpr Dtype dtype_of<double>() { return Dtype::f64; }

inline const char* dtype_name(Dtype d) { return d == Dtype::f32 ? "f32" : "f64"; }

inline Dtype dtype_from_name(const std::string& s) {
  if (s == "f32") return Dtype::f32;
  if (s == "f64") return Dtype::f64;
  throw config_error("unknown dtype: " + s);
}

inline size_t dtype_size(Dtype d) { return d == Dtype::f32 ? 4 : 8; }

}  // namespace ug
