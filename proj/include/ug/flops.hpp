#pragma once

#include <string>
#include <vector>

#include "ug/common.hpp"
#include "ug/model.hpp"

namespace ug {

// Analytic matmul-FLOP model of the forward pass under the 2*m*k*n
// convention. Only matmuls are counted (projections, attention scores and
// values, output projection, MLP, LM head) — softmax, norms and elementwise
// ops are excluded here and in the instrumented counter alike, so the two
// must agree exactly.
struct CostConfig {
  i64 dim = 128;
  i64 layers = 4;
  i64 heads = 4;
  i64 mlp_hidden = 256;
  i64 vocab = 257;
  i64 window = 32;
  int alpha = 4;

  static CostConfig from_model(const ModelConfig& m, int alpha);
  void validate() const;
};

u64 matmul_flops(i64 m, i64 k, i64 n);

// One forward pass with `normal_rows` normal slots and `ug_rows` compression
// slots attending `kv_len` keys. The LM head runs on normal rows only.
u64 flops_pass(const CostConfig& cfg, i64 normal_rows, i64 ug_rows, i64 kv_len);

// Readout pass: q_len normal rows, no compression slots.
u64 flops_forward(const CostConfig& cfg, i64 q_len, i64 kv_len);

struct TurnSchedule {
  std::vector<i64> turn_tokens;
  void validate() const;
};

// Per-turn cost of progressive compression: each turn pays only for the
// windows it completes, attending the compressed cache accumulated so far.
// Tokens left over from a partial window are paid for by the turn that
// completes the window.
std::vector<u64> flops_progressive(const CostConfig& cfg, const TurnSchedule& schedule);

// Per-turn cost when the whole history is re-compressed from scratch every
// turn (static baseline).
std::vector<u64> flops_static(const CostConfig& cfg, const TurnSchedule& schedule);

// CSV with header turn,context_len,progressive_flops,static_flops
void write_flops_csv(const std::string& path, const CostConfig& cfg, const TurnSchedule& schedule);

}  // namespace ug
