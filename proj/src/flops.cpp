#include "ug/flops.hpp"

#include <fstream>

namespace ug {

CostConfig CostConfig::from_model(const ModelConfig& m, int alpha) {
  CostConfig c;
  c.dim = m.dim;
  c.layers = m.layers;
  c.heads = m.heads;
  c.mlp_hidden = m.mlp_hidden;
  c.vocab = m.vocab;
  c.window = m.window;
  c.alpha = alpha;
  c.validate();
  return c;
}

void CostConfig::validate() const {
  if (dim < 1 || layers < 1 || heads < 1 || mlp_hidden < 1 || vocab < 2 || window < 1)
    throw config_error("cost config: all extents must be positive");
  if (alpha < 1) throw config_error("cost config: ratio must be >= 1");
}

u64 matmul_flops(i64 m, i64 k, i64 n) {
  if (m < 0 || k < 0 || n < 0) throw contract_error("matmul_flops: negative extent");
  return 2ull * static_cast<u64>(m) * static_cast<u64>(k) * static_cast<u64>(n);
}

u64 flops_pass(const CostConfig& cfg, i64 normal_rows, i64 ug_rows, i64 kv_len) {
  if (normal_rows < 1 || ug_rows < 0 || kv_len < normal_rows + ug_rows)
    throw contract_error("flops_pass: inconsistent row counts");
  const u64 D = static_cast<u64>(cfg.dim);
  const u64 r = static_cast<u64>(normal_rows + ug_rows);
  const u64 kv = static_cast<u64>(kv_len);
  const u64 proj = 6ull * r * D * D;                              // q,k,v for both streams
  const u64 scores = 2ull * r * kv * D;                           // q·k^T summed over heads
  const u64 values = 2ull * r * kv * D;                           // probs·v summed over heads
  const u64 output = 2ull * r * D * D;                            // per-stream output projection
  const u64 mlp = 6ull * r * D * static_cast<u64>(cfg.mlp_hidden);  // gate, up, down
  const u64 per_layer = proj + scores + values + output + mlp;
  const u64 head = 2ull * static_cast<u64>(normal_rows) * D * static_cast<u64>(cfg.vocab);
  return static_cast<u64>(cfg.layers) * per_layer + head;
}

u64 flops_forward(const CostConfig& cfg, i64 q_len, i64 kv_len) {
  return flops_pass(cfg, q_len, 0, kv_len);
}

void TurnSchedule::validate() const {
  if (turn_tokens.empty()) throw config_error("turn schedule: no turns");
  for (i64 t : turn_tokens)
    if (t < 1) throw config_error("turn schedule: every turn must add at least one token");
}

namespace {

// Compression passes triggered by streaming tokens: one per completed window,
// against the cache accumulated before it. Tokens short of a full window stay
// uncompressed (they are plain context in both schemes and cost nothing here).
struct WindowSim {
  const CostConfig& cfg;
  i64 cache_len = 0;
  i64 pending = 0;

  explicit WindowSim(const CostConfig& c) : cfg(c) {}

  // Feed `count` tokens; return the cost of the compress passes they complete.
  u64 feed(i64 count) {
    u64 cost = 0;
    pending += count;
    while (pending >= cfg.window) {
      const i64 n = cfg.window;
      const i64 k = ceil_div(n, cfg.alpha);
      cost += flops_pass(cfg, n, k, cache_len + n + k);
      cache_len += k;
      pending -= n;
    }
    return cost;
  }
};

}  // namespace

std::vector<u64> flops_progressive(const CostConfig& cfg, const TurnSchedule& schedule) {
  cfg.validate();
  schedule.validate();
  WindowSim sim(cfg);
  std::vector<u64> out;
  out.reserve(schedule.turn_tokens.size());
  for (i64 t : schedule.turn_tokens) out.push_back(sim.feed(t));
  return out;
}

std::vector<u64> flops_static(const CostConfig& cfg, const TurnSchedule& schedule) {
  cfg.validate();
  schedule.validate();
  std::vector<u64> out;
  out.reserve(schedule.turn_tokens.size());
  i64 history = 0;
  for (i64 t : schedule.turn_tokens) {
    history += t;
    WindowSim sim(cfg);
    out.push_back(sim.feed(history));  // re-encode the whole history from scratch
  }
  return out;
}

void write_flops_csv(const std::string& path, const CostConfig& cfg,
                     const TurnSchedule& schedule) {
  std::vector<u64> prog = flops_progressive(cfg, schedule);
  std::vector<u64> stat = flops_static(cfg, schedule);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot open " + path + " for writing");
  f << "turn,context_len,progressive_flops,static_flops\n";
  i64 context = 0;
  for (size_t i = 0; i < schedule.turn_tokens.size(); ++i) {
    context += schedule.turn_tokens[i];
    f << (i + 1) << ',' << context << ',' << prog[i] << ',' << stat[i] << '\n';
  }
  if (!f) throw io_error("failed writing " + path);
}

}  // namespace ug
