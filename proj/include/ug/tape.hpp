#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "ug/common.hpp"
#include "ug/mask.hpp"
#include "ug/tensor.hpp"

namespace ug {

// Handle to a node on a Tape. Only valid for the tape that produced it.
struct Val {
  int32_t id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode autodiff over dense tensors.
//
// Operations record their output plus a backward rule; backward(root) walks
// the recorded list in exact reverse execution order and accumulates
// gradients additively, so a tensor used twice receives the sum of both
// contributions. Gradients only flow where requires_grad is set; everything
// else is pruned. Every forward op checks its output for NaN/Inf and throws
// numeric_error instead of propagating poison.
//
// The tape also counts matmul floating-point operations under the 2*m*k*n
// convention (matmuls only — norms, softmax and elementwise ops are not
// counted), which the analytic cost model is validated against.
template <typename T>
class Tape {
 public:
  // External tensor; the caller keeps it alive for the tape's lifetime.
  // After backward(), the node's gradient is added into t.grad when
  // t.requires_grad is set.
  Val leaf(Tensor<T>& t);
  // Owned constant; never receives gradient.
  Val constant(Tensor<T> t);

  Val matmul(Val a, Val b);     // [m,k]x[k,n]
  Val matmul_bt(Val a, Val b);  // [m,k]x[n,k]^T -> [m,n]
  Val add(Val a, Val b);
  Val mul(Val a, Val b);
  Val scale(Val a, double s);
  Val silu(Val a);
  Val rms_norm(Val x, Val gain, double eps);
  // Rotary rotation applied per head at the given integer positions
  // (one per row), rotate-half convention.
  Val rope(Val x, std::vector<i64> positions, i64 heads, double theta);
  Val masked_softmax_rows(Val scores, std::shared_ptr<const Mask> mask);
  Val slice_rows(Val x, i64 r0, i64 r1);  // half-open [r0, r1)
  Val slice_cols(Val x, i64 c0, i64 c1);
  Val concat_rows(const std::vector<Val>& xs);
  Val concat_cols(const std::vector<Val>& xs);
  // out[i] = table[ids[i]]; backward scatter-adds into the table rows.
  Val gather_rows(Val table, std::vector<int32_t> ids);
  // Repeat a [1,d] row n times.
  Val broadcast_row(Val row, i64 n);
  // Mean of -log softmax(logits[r])[targets[r]] over rows with include[r].
  Val cross_entropy_mean(Val logits, std::vector<int32_t> targets, std::vector<uint8_t> include);

  void backward(Val root);

  const Tensor<T>& value(Val v) const { return val_of(check(v)); }
  // Gradient held at a node (valid after backward). Mostly for tests;
  // parameter gradients land in the bound tensor's .grad.
  const std::vector<T>& node_grad(Val v) const { return nodes_[check(v)].grad; }

  u64 matmul_flops() const { return flops_; }
  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> own;
    Tensor<T>* ext = nullptr;
    std::vector<T> grad;
    std::vector<Val> inputs;
    std::function<void(Tape&, int32_t)> back;
    bool needs_grad = false;
  };

  std::vector<Node> nodes_;
  u64 flops_ = 0;

  int32_t check(Val v) const {
    if (!v.valid() || v.id >= static_cast<int32_t>(nodes_.size()))
      throw contract_error("tape: invalid value handle");
    return v.id;
  }
  const Tensor<T>& val_of(int32_t id) const {
    const Node& n = nodes_[id];
    return n.ext ? *n.ext : n.own;
  }
  bool needs(Val v) const { return nodes_[v.id].needs_grad; }
  std::vector<T>& grad_buf(int32_t id);
  Val push(Tensor<T> out, std::vector<Val> inputs, std::function<void(Tape&, int32_t)> back,
           const char* op);
  void check_finite(const Tensor<T>& t, const char* op) const;

  friend struct TapeTestAccess;
};

using TapeF = Tape<float>;
using TapeD = Tape<double>;

// Central finite differences of a scalar-valued program against the recorded
// gradients. `build` must reconstruct the same computation on any fresh tape.
// Returns the worst relative error, denominator max(|analytic|, |numeric|,
// 1e-6) — the floor keeps difference-scheme noise on near-zero components
// from registering. Parameters must have requires_grad set.
double grad_check(const std::function<Val(Tape<double>&)>& build,
                  const std::vector<Tensor<double>*>& params, double eps);
// Multi-scale variant: each component is accepted at its best step size
// (large steps are noise-limited, small steps truncation-limited; a wrong
// adjoint disagrees at every step size). Returns the worst per-component
// error after that per-component minimum.
double grad_check(const std::function<Val(Tape<double>&)>& build,
                  const std::vector<Tensor<double>*>& params,
                  const std::vector<double>& eps_list);

}  // namespace ug
