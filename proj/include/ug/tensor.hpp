#pragma once

#include <cstring>
#include <numeric>
#include <string>
#include <vector>

#include "ug/common.hpp"
#include "ug/rng.hpp"

namespace ug {

using Shape = std::vector<i64>;

inline i64 shape_numel(const Shape& s) {
  i64 n = 1;
  for (i64 d : s) {
    if (d < 0) throw shape_error("negative extent in shape");
    n *= d;
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// Dense row-major tensor. Gradient storage lives beside the values and is
// only allocated once something actually accumulates into it.
template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty, or same length as data
  bool requires_grad = false;

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T(0)) : shape(std::move(s)) {
    data.assign(shape_numel(shape), fill);
  }

  static Tensor from(Shape s, std::vector<T> values) {
    if (shape_numel(s) != static_cast<i64>(values.size()))
      throw shape_error("value count " + std::to_string(values.size()) +
                        " does not match shape " + shape_str(s));
    Tensor t;
    t.shape = std::move(s);
    t.data = std::move(values);
    return t;
  }

  i64 numel() const { return static_cast<i64>(data.size()); }
  bool empty() const { return data.empty(); }

  i64 rows() const {
    if (shape.size() != 2) throw shape_error("rows(): tensor is not 2-d: " + shape_str(shape));
    return shape[0];
  }
  i64 cols() const {
    if (shape.size() != 2) throw shape_error("cols(): tensor is not 2-d: " + shape_str(shape));
    return shape[1];
  }

  T& at(i64 r, i64 c) { return data[r * cols() + c]; }
  const T& at(i64 r, i64 c) const { return data[r * cols() + c]; }

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }
  void zero_grad() {
    if (!grad.empty()) std::fill(grad.begin(), grad.end(), T(0));
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

template <typename T>
Tensor<T> randn(Shape s, Rng& rng, double stdev) {
  Tensor<T> t(std::move(s));
  for (auto& v : t.data) v = static_cast<T>(rng.normal() * stdev);
  return t;
}

// FNV-1a over the raw value bytes; used by freeze audits and tests that
// assert a tensor did not change.
template <typename T>
u64 data_hash(const Tensor<T>& t) {
  u64 h = 1469598103934665603ull;
  const auto* p = reinterpret_cast<const uint8_t*>(t.data.data());
  size_t n = t.data.size() * sizeof(T);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace ug
