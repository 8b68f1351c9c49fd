#include "ug/tape.hpp"

#include <cmath>
#include <cstring>
#include <limits>

#include "ug/kernels.hpp"

namespace ug {

namespace {

template <typename T>
void shape2d(const Tensor<T>& t, const char* op) {
  if (t.shape.size() != 2)
    throw shape_error(std::string(op) + ": expected 2-d tensor, got " + shape_str(t.shape));
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

template <typename T>
std::vector<T>& Tape<T>::grad_buf(int32_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad.assign(val_of(id).data.size(), T(0));
  return n.grad;
}

template <typename T>
void Tape<T>::check_finite(const Tensor<T>& t, const char* op) const {
  for (T v : t.data)
    if (!std::isfinite(static_cast<double>(v)))
      throw numeric_error(std::string(op) + ": non-finite value in output");
}

template <typename T>
Val Tape<T>::push(Tensor<T> out, std::vector<Val> inputs,
                  std::function<void(Tape&, int32_t)> back, const char* op) {
  check_finite(out, op);
  Node n;
  n.own = std::move(out);
  n.inputs = std::move(inputs);
  for (Val v : n.inputs)
    if (nodes_[check(v)].needs_grad) n.needs_grad = true;
  if (n.needs_grad) n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Val{static_cast<int32_t>(nodes_.size() - 1)};
}

template <typename T>
Val Tape<T>::leaf(Tensor<T>& t) {
  Node n;
  n.ext = &t;
  n.needs_grad = t.requires_grad;
  nodes_.push_back(std::move(n));
  return Val{static_cast<int32_t>(nodes_.size() - 1)};
}

template <typename T>
Val Tape<T>::constant(Tensor<T> t) {
  Node n;
  n.own = std::move(t);
  nodes_.push_back(std::move(n));
  return Val{static_cast<int32_t>(nodes_.size() - 1)};
}

template <typename T>
Val Tape<T>::matmul(Val a, Val b) {
  const Tensor<T>&A = value(a), &B = value(b);
  shape2d(A, "matmul");
  shape2d(B, "matmul");
  if (A.cols() != B.rows())
    throw shape_error("matmul: inner extents " + shape_str(A.shape) + " x " + shape_str(B.shape));
  i64 m = A.rows(), k = A.cols(), n = B.cols();
  Tensor<T> out({m, n});
  kern::gemm(A.data.data(), B.data.data(), out.data.data(), m, k, n);
  flops_ += 2ull * m * k * n;
  return push(std::move(out), {a, b},
              [a, b, m, k, n](Tape& t, int32_t self) {
                const auto& g = t.nodes_[self].grad;
                const Tensor<T>&A = t.value(a), &B = t.value(b);
                if (t.needs(a)) {
                  // dA = dC * B^T
                  std::vector<T>& ga = t.grad_buf(a.id);
                  std::vector<T> tmp(m * k);
                  kern::gemm_bt(g.data(), B.data.data(), tmp.data(), m, n, k);
                  t.flops_ += 2ull * m * n * k;
                  for (i64 i = 0; i < m * k; ++i) ga[i] += tmp[i];
                }
                if (t.needs(b)) {
                  // dB[k,n] = A[m,k]^T * dC[m,n]
                  std::vector<T>& gb = t.grad_buf(b.id);
                  std::vector<T> tmp(k * n);
                  kern::gemm_at(A.data.data(), g.data(), tmp.data(), k, m, n);
                  t.flops_ += 2ull * m * k * n;
                  for (i64 i = 0; i < k * n; ++i) gb[i] += tmp[i];
                }
              },
              "matmul");
}

template <typename T>
Val Tape<T>::matmul_bt(Val a, Val b) {
  const Tensor<T>&A = value(a), &B = value(b);
  shape2d(A, "matmul_bt");
  shape2d(B, "matmul_bt");
  if (A.cols() != B.cols())
    throw shape_error("matmul_bt: inner extents " + shape_str(A.shape) + " x " +
                      shape_str(B.shape) + "^T");
  i64 m = A.rows(), k = A.cols(), n = B.rows();
  Tensor<T> out({m, n});
  kern::gemm_bt(A.data.data(), B.data.data(), out.data.data(), m, k, n);
  flops_ += 2ull * m * k * n;
  return push(std::move(out), {a, b},
              [a, b, m, k, n](Tape& t, int32_t self) {
                const auto& g = t.nodes_[self].grad;
                const Tensor<T>&A = t.value(a), &B = t.value(b);
                if (t.needs(a)) {
                  // dA = dC * B
                  std::vector<T>& ga = t.grad_buf(a.id);
                  std::vector<T> tmp(m * k);
                  kern::gemm(g.data(), B.data.data(), tmp.data(), m, n, k);
                  t.flops_ += 2ull * m * n * k;
                  for (i64 i = 0; i < m * k; ++i) ga[i] += tmp[i];
                }
                if (t.needs(b)) {
                  // dB[n,k] = dC[m,n]^T * A[m,k]
                  std::vector<T>& gb = t.grad_buf(b.id);
                  std::vector<T> tmp(n * k);
                  kern::gemm_at(g.data(), A.data.data(), tmp.data(), n, m, k);
                  t.flops_ += 2ull * m * n * k;
                  for (i64 i = 0; i < n * k; ++i) gb[i] += tmp[i];
                }
              },
              "matmul_bt");
}

template <typename T>
Val Tape<T>::add(Val a, Val b) {
  const Tensor<T>&A = value(a), &B = value(b);
  if (!A.same_shape(B))
    throw shape_error("add: shape mismatch " + shape_str(A.shape) + " vs " + shape_str(B.shape));
  Tensor<T> out = A;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += B.data[i];
  return push(std::move(out), {a, b},
              [a, b](Tape& t, int32_t self) {
                const auto& g = t.nodes_[self].grad;
                for (Val v : {a, b}) {
                  if (!t.needs(v)) continue;
                  auto& gv = t.grad_buf(v.id);
                  for (size_t i = 0; i < g.size(); ++i) gv[i] += g[i];
                }
              },
              "add");
}

template <typename T>
Val Tape<T>::mul(Val a, Val b) {
  const Tensor<T>&A = value(a), &B = value(b);
  if (!A.same_shape(B))
    throw shape_error("mul: shape mismatch " + shape_str(A.shape) + " vs " + shape_str(B.shape));
  Tensor<T> out = A;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= B.data[i];
  return push(std::move(out), {a, b},
              [a, b](Tape& t, int32_t self) {
                const auto& g = t.nodes_[self].grad;
                const Tensor<T>&A = t.value(a), &B = t.value(b);
                if (t.needs(a)) {
                  auto& ga = t.grad_buf(a.id);
                  for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * B.data[i];
                }
                if (t.needs(b)) {
                  auto& gb = t.grad_buf(b.id);
                  for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * A.data[i];
                }
              },
              "mul");
}

template <typename T>
Val Tape<T>::scale(Val a, double s) {
  Tensor<T> out = value(a);
  for (auto& v : out.data) v = static_cast<T>(static_cast<double>(v) * s);
  return push(std::move(out), {a},
              [a, s](Tape& t, int32_t self) {
                const auto& g = t.nodes_[self].grad;
                auto& ga = t.grad_buf(a.id);
                for (size_t i = 0; i < g.size(); ++i)
                  ga[i] += static_cast<T>(static_cast<double>(g[i]) * s);
              },
              "scale");
}

template <typename T>
Val Tape<T>::silu(Val a) {
  Tensor<T> out = value(a);
  for (auto& v : out.data) {
    double x = static_cast<double>(v);
    v = static_cast<T>(x * sigmoid(x));
  }
  return push(std::move(out), {a},
              [a](Tape& t, int32_t self) {
                const auto& g = t.nodes_[self].grad;
                const Tensor<T>& A = t.value(a);
                auto& ga = t.grad_buf(a.id);
                for (size_t i = 0; i < g.size(); ++i) {
                  double x = static_cast<double>(A.data[i]);
                  double s = sigmoid(x);
                  ga[i] += static_cast<T>(static_cast<double>(g[i]) * (s * (1.0 + x * (1.0 - s))));
                }
              },
              "silu");
}

template <typename T>
Val Tape<T>::rms_norm(Val x, Val gain, double eps) {
  const Tensor<T>&X = value(x), &G = value(gain);
  shape2d(X, "rms_norm");
  i64 d = X.cols();
  if (G.numel() != d)
    throw shape_error("rms_norm: gain has " + std::to_string(G.numel()) + " values for width " +
                      std::to_string(d));
  Tensor<T> out(X.shape);
  kern::rmsnorm_rows(X.data.data(), G.data.data(), out.data.data(), X.rows(), d, eps);
  return push(std::move(out), {x, gain},
              [x, gain, d, eps](Tape& t, int32_t self) {
                const auto& g = t.nodes_[self].grad;
                const Tensor<T>&X = t.value(x), &G = t.value(gain);
                i64 rows = X.rows();
                bool nx = t.needs(x), ng = t.needs(gain);
                std::vector<T>* gx = nx ? &t.grad_buf(x.id) : nullptr;
                std::vector<T>* gg = ng ? &t.grad_buf(gain.id) : nullptr;
                for (i64 r = 0; r < rows; ++r) {
                  const T* xr = X.data.data() + r * d;
                  const T* gr = g.data() + r * d;
                  double ms = 0.0;
                  for (i64 c = 0; c < d; ++c) {
                    double v = static_cast<double>(xr[c]);
                    ms += v * v;
                  }
                  double inv = 1.0 / std::sqrt(ms / d + eps);
                  if (nx) {
                    // dx = g*gain*inv - x * inv^3/d * sum(g*gain*x)
                    double dot = 0.0;
                    for (i64 c = 0; c < d; ++c)
                      dot += static_cast<double>(gr[c]) * static_cast<double>(G.data[c]) *
                             static_cast<double>(xr[c]);
                    double coef = inv * inv * inv / d * dot;
                    for (i64 c = 0; c < d; ++c)
                      (*gx)[r * d + c] += static_cast<T>(
                          static_cast<double>(gr[c]) * static_cast<double>(G.data[c]) * inv -
                          static_cast<double>(xr[c]) * coef);
                  }
                  if (ng) {
                    for (i64 c = 0; c < d; ++c)
                      (*gg)[c] += static_cast<T>(static_cast<double>(gr[c]) *
                                                 static_cast<double>(xr[c]) * inv);
                  }
                }
              },
              "rms_norm");
}

template <typename T>
Val Tape<T>::rope(Val x, std::vector<i64> positions, i64 heads, double theta) {
  const Tensor<T>& X = value(x);
  shape2d(X, "rope");
  i64 rows = X.rows(), width = X.cols();
  if (static_cast<i64>(positions.size()) != rows)
    throw shape_error("rope: " + std::to_string(positions.size()) + " positions for " +
                      std::to_string(rows) + " rows");
  if (heads < 1 || width % heads != 0) throw shape_error("rope: width not divisible by heads");
  i64 hd = width / heads;
  if (hd % 2 != 0) throw shape_error("rope: head dim must be even");
  i64 half = hd / 2;

  auto rotate = [=](const T* in, T* out, i64 row_count, const std::vector<i64>& pos, bool inverse) {
    for (i64 r = 0; r < row_count; ++r) {
      double p = static_cast<double>(pos[r]);
      for (i64 h = 0; h < heads; ++h) {
        const T* ih = in + r * width + h * hd;
        T* oh = out + r * width + h * hd;
        for (i64 i = 0; i < half; ++i) {
          double ang = p * std::pow(theta, -2.0 * static_cast<double>(i) / hd);
          double c = std::cos(ang), s = std::sin(ang);
          if (inverse) s = -s;
          double a = static_cast<double>(ih[i]), b = static_cast<double>(ih[i + half]);
          oh[i] = static_cast<T>(a * c - b * s);
          oh[i + half] = static_cast<T>(a * s + b * c);
        }
      }
    }
  };

  Tensor<T> out(X.shape);
  rotate(X.data.data(), out.data.data(), rows, positions, false);
  return push(std::move(out), {x},
              [x, positions, rotate, rows](Tape& t, int32_t self) {
                const auto& g = t.nodes_[self].grad;
                auto& gx = t.grad_buf(x.id);
                std::vector<T> tmp(g.size());
                rotate(g.data(), tmp.data(), rows, positions, true);
                for (size_t i = 0; i < tmp.size(); ++i) gx[i] += tmp[i];
              },
              "rope");
}

template <typename T>
Val Tape<T>::masked_softmax_rows(Val scores, std::shared_ptr<const Mask> mask) {
  const Tensor<T>& S = value(scores);
  shape2d(S, "masked_softmax_rows");
  if (!mask) throw contract_error("masked_softmax_rows: null mask");
  if (S.rows() != mask->rows || S.cols() != mask->cols)
    throw shape_error("masked_softmax_rows: scores " + shape_str(S.shape) + " vs mask " +
                      std::to_string(mask->rows) + "x" + std::to_string(mask->cols));
  Tensor<T> out(S.shape);
  kern::softmax_rows_masked(S.data.data(), mask->bits.data(), out.data.data(), S.rows(), S.cols());
  return push(std::move(out), {scores},
              [scores, mask](Tape& t, int32_t self) {
                const auto& g = t.nodes_[self].grad;
                const Tensor<T>& P = t.val_of(self);
                auto& gs = t.grad_buf(scores.id);
                i64 rows = P.rows(), cols = P.cols();
                for (i64 r = 0; r < rows; ++r) {
                  const T* pr = P.data.data() + r * cols;
                  const T* gr = g.data() + r * cols;
                  double dot = 0.0;
                  for (i64 c = 0; c < cols; ++c)
                    dot += static_cast<double>(gr[c]) * static_cast<double>(pr[c]);
                  for (i64 c = 0; c < cols; ++c)
                    gs[r * cols + c] += static_cast<T>(static_cast<double>(pr[c]) *
                                                       (static_cast<double>(gr[c]) - dot));
                }
              },
              "masked_softmax_rows");
}

template <typename T>
Val Tape<T>::slice_rows(Val x, i64 r0, i64 r1) {
  const Tensor<T>& X = value(x);
  shape2d(X, "slice_rows");
  if (r0 < 0 || r1 < r0 || r1 > X.rows())
    throw shape_error("slice_rows: bad range [" + std::to_string(r0) + "," + std::to_string(r1) +
                      ") for " + shape_str(X.shape));
  i64 cols = X.cols();
  Tensor<T> out({r1 - r0, cols});
  std::copy(X.data.begin() + r0 * cols, X.data.begin() + r1 * cols, out.data.begin());
  return push(std::move(out), {x},
              [x, r0, cols](Tape& t, int32_t self) {
                const auto& g = t.nodes_[self].grad;
                auto& gx = t.grad_buf(x.id);
                for (size_t i = 0; i < g.size(); ++i) gx[r0 * cols + i] += g[i];
              },
              "slice_rows");
}

template <typename T>
Val Tape<T>::slice_cols(Val x, i64 c0, i64 c1) {
  const Tensor<T>& X = value(x);
  shape2d(X, "slice_cols");
  if (c0 < 0 || c1 < c0 || c1 > X.cols())
    throw shape_error("slice_cols: bad range [" + std::to_string(c0) + "," + std::to_string(c1) +
                      ") for " + shape_str(X.shape));
  i64 rows = X.rows(), cols = X.cols(), w = c1 - c0;
  Tensor<T> out({rows, w});
  for (i64 r = 0; r < rows; ++r)
    std::copy(X.data.begin() + r * cols + c0, X.data.begin() + r * cols + c1,
              out.data.begin() + r * w);
  return push(std::move(out), {x},
              [x, c0, rows, cols, w](Tape& t, int32_t self) {
                const auto& g = t.nodes_[self].grad;
                auto& gx = t.grad_buf(x.id);
                for (i64 r = 0; r < rows; ++r)
                  for (i64 c = 0; c < w; ++c) gx[r * cols + c0 + c] += g[r * w + c];
              },
              "slice_cols");
}

template <typename T>
Val Tape<T>::concat_rows(const std::vector<Val>& xs) {
  if (xs.empty()) throw contract_error("concat_rows: nothing to concatenate");
  i64 cols = value(xs[0]).cols(), rows = 0;
  for (Val v : xs) {
    const Tensor<T>& X = value(v);
    shape2d(X, "concat_rows");
    if (X.cols() != cols) throw shape_error("concat_rows: column mismatch");
    rows += X.rows();
  }
  Tensor<T> out({rows, cols});
  i64 off = 0;
  std::vector<i64> offsets;
  for (Val v : xs) {
    const Tensor<T>& X = value(v);
    offsets.push_back(off);
    std::copy(X.data.begin(), X.data.end(), out.data.begin() + off * cols);
    off += X.rows();
  }
  return push(std::move(out), xs,
              [xs, offsets, cols](Tape& t, int32_t self) {
                const auto& g = t.nodes_[self].grad;
                for (size_t i = 0; i < xs.size(); ++i) {
                  if (!t.needs(xs[i])) continue;
                  auto& gx = t.grad_buf(xs[i].id);
                  i64 base = offsets[i] * cols;
                  for (size_t j = 0; j < gx.size(); ++j) gx[j] += g[base + j];
                }
              },
              "concat_rows");
}

template <typename T>
Val Tape<T>::concat_cols(const std::vector<Val>& xs) {
  if (xs.empty()) throw contract_error("concat_cols: nothing to concatenate");
  i64 rows = value(xs[0]).rows(), cols = 0;
  std::vector<i64> offsets;
  for (Val v : xs) {
    const Tensor<T>& X = value(v);
    shape2d(X, "concat_cols");
    if (X.rows() != rows) throw shape_error("concat_cols: row mismatch");
    offsets.push_back(cols);
    cols += X.cols();
  }
  Tensor<T> out({rows, cols});
  for (size_t i = 0; i < xs.size(); ++i) {
    const Tensor<T>& X = value(xs[i]);
    i64 w = X.cols();
    for (i64 r = 0; r < rows; ++r)
      std::copy(X.data.begin() + r * w, X.data.begin() + (r + 1) * w,
                out.data.begin() + r * cols + offsets[i]);
  }
  return push(std::move(out), xs,
              [xs, offsets, rows, cols](Tape& t, int32_t self) {
                const auto& g = t.nodes_[self].grad;
                for (size_t i = 0; i < xs.size(); ++i) {
                  if (!t.needs(xs[i])) continue;
                  auto& gx = t.grad_buf(xs[i].id);
                  i64 w = static_cast<i64>(gx.size()) / rows;
                  for (i64 r = 0; r < rows; ++r)
                    for (i64 c = 0; c < w; ++c) gx[r * w + c] += g[r * cols + offsets[i] + c];
                }
              },
              "concat_cols");
}

template <typename T>
Val Tape<T>::gather_rows(Val table, std::vector<int32_t> ids) {
  const Tensor<T>& Tb = value(table);
  shape2d(Tb, "gather_rows");
  i64 rows = Tb.rows(), cols = Tb.cols();
  for (int32_t id : ids)
    if (id < 0 || id >= rows)
      throw contract_error("gather_rows: id " + std::to_string(id) + " outside table of " +
                           std::to_string(rows));
  Tensor<T> out({static_cast<i64>(ids.size()), cols});
  for (size_t i = 0; i < ids.size(); ++i)
    std::copy(Tb.data.begin() + ids[i] * cols, Tb.data.begin() + (ids[i] + 1) * cols,
              out.data.begin() + i * cols);
  return push(std::move(out), {table},
              [table, ids, cols](Tape& t, int32_t self) {
                const auto& g = t.nodes_[self].grad;
                auto& gt = t.grad_buf(table.id);
                for (size_t i = 0; i < ids.size(); ++i)
                  for (i64 c = 0; c < cols; ++c) gt[ids[i] * cols + c] += g[i * cols + c];
              },
              "gather_rows");
}

template <typename T>
Val Tape<T>::broadcast_row(Val row, i64 n) {
  const Tensor<T>& R = value(row);
  if (R.numel() == 0 || n < 1) throw contract_error("broadcast_row: empty row or n < 1");
  i64 d = R.numel();
  Tensor<T> out({n, d});
  for (i64 r = 0; r < n; ++r) std::copy(R.data.begin(), R.data.end(), out.data.begin() + r * d);
  return push(std::move(out), {row},
              [row, n, d](Tape& t, int32_t self) {
                const auto& g = t.nodes_[self].grad;
                auto& gr = t.grad_buf(row.id);
                for (i64 r = 0; r < n; ++r)
                  for (i64 c = 0; c < d; ++c) gr[c] += g[r * d + c];
              },
              "broadcast_row");
}

template <typename T>
Val Tape<T>::cross_entropy_mean(Val logits, std::vector<int32_t> targets,
                                std::vector<uint8_t> include) {
  const Tensor<T>& L = value(logits);
  shape2d(L, "cross_entropy_mean");
  i64 rows = L.rows(), V = L.cols();
  if (static_cast<i64>(targets.size()) != rows || static_cast<i64>(include.size()) != rows)
    throw shape_error("cross_entropy_mean: targets/include length vs " + std::to_string(rows) +
                      " rows");
  i64 m = 0;
  for (i64 r = 0; r < rows; ++r) {
    if (!include[r]) continue;
    ++m;
    if (targets[r] < 0 || targets[r] >= V)
      throw contract_error("cross_entropy_mean: target " + std::to_string(targets[r]) +
                           " outside vocab " + std::to_string(V));
  }
  if (m == 0) throw contract_error("cross_entropy_mean: all positions excluded (empty loss)");

  double total = 0.0;
  for (i64 r = 0; r < rows; ++r) {
    if (!include[r]) continue;
    const T* lr = L.data.data() + r * V;
    double mx = static_cast<double>(lr[0]);
    for (i64 c = 1; c < V; ++c) mx = std::max(mx, static_cast<double>(lr[c]));
    double lse = 0.0;
    for (i64 c = 0; c < V; ++c) lse += std::exp(static_cast<double>(lr[c]) - mx);
    lse = mx + std::log(lse);
    total += lse - static_cast<double>(lr[targets[r]]);
  }
  Tensor<T> out({1});
  out.data[0] = static_cast<T>(total / m);
  return push(std::move(out), {logits},
              [logits, targets, include, m, V](Tape& t, int32_t self) {
                double g = static_cast<double>(t.nodes_[self].grad[0]);
                const Tensor<T>& L = t.value(logits);
                auto& gl = t.grad_buf(logits.id);
                i64 rows = L.rows();
                for (i64 r = 0; r < rows; ++r) {
                  if (!include[r]) continue;
                  const T* lr = L.data.data() + r * V;
                  double mx = static_cast<double>(lr[0]);
                  for (i64 c = 1; c < V; ++c) mx = std::max(mx, static_cast<double>(lr[c]));
                  double sum = 0.0;
                  for (i64 c = 0; c < V; ++c) sum += std::exp(static_cast<double>(lr[c]) - mx);
                  for (i64 c = 0; c < V; ++c) {
                    double p = std::exp(static_cast<double>(lr[c]) - mx) / sum;
                    double delta = (c == targets[r]) ? 1.0 : 0.0;
                    gl[r * V + c] += static_cast<T>(g * (p - delta) / m);
                  }
                }
              },
              "cross_entropy_mean");
}

template <typename T>
void Tape<T>::backward(Val root) {
  int32_t rid = check(root);
  if (val_of(rid).numel() != 1)
    throw contract_error("backward: root is not scalar, shape " + shape_str(val_of(rid).shape));
  grad_buf(rid)[0] = T(1);
  for (int32_t id = static_cast<int32_t>(nodes_.size()) - 1; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.needs_grad || n.grad.empty()) continue;
    if (n.back) n.back(*this, id);
  }
  // Deliver leaf gradients to their bound tensors.
  for (auto& n : nodes_) {
    if (!n.ext || !n.ext->requires_grad || n.grad.empty()) continue;
    n.ext->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) n.ext->grad[i] += n.grad[i];
  }
}

template class Tape<float>;
template class Tape<double>;

double grad_check(const std::function<Val(Tape<double>&)>& build,
                  const std::vector<Tensor<double>*>& params,
                  const std::vector<double>& eps_list) {
  if (eps_list.empty()) throw contract_error("grad_check: need at least one step size");
  for (auto* p : params)
    if (!p->requires_grad) throw contract_error("grad_check: parameter without requires_grad");

  auto eval = [&]() {
    Tape<double> tape;
    Val root = build(tape);
    if (tape.value(root).numel() != 1) throw contract_error("grad_check: program is not scalar");
    return static_cast<double>(tape.value(root).data[0]);
  };

  // Analytic gradients.
  for (auto* p : params) {
    p->ensure_grad();
    p->zero_grad();
  }
  {
    Tape<double> tape;
    Val root = build(tape);
    if (tape.value(root).numel() != 1) throw contract_error("grad_check: program is not scalar");
    tape.backward(root);
  }
  std::vector<std::vector<double>> analytic;
  for (auto* p : params) analytic.push_back(p->grad);

  double worst = 0.0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor<double>& p = *params[pi];
    for (size_t i = 0; i < p.data.size(); ++i) {
      double keep = p.data[i];
      double a = analytic[pi][i];
      double err = std::numeric_limits<double>::infinity();
      for (double eps : eps_list) {
        p.data[i] = keep + eps;
        double up = eval();
        p.data[i] = keep - eps;
        double dn = eval();
        p.data[i] = keep;
        double numeric = (up - dn) / (2.0 * eps);
        err = std::min(err,
                       std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6}));
      }
      worst = std::max(worst, err);
    }
  }
  return worst;
}

double grad_check(const std::function<Val(Tape<double>&)>& build,
                  const std::vector<Tensor<double>*>& params, double eps) {
  return grad_check(build, params, std::vector<double>{eps});
}

}  // namespace ug
