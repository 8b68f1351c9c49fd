#include <doctest.h>

#include <vector>

#include "test_util.hpp"
#include "ug/flops.hpp"

using namespace ug;

namespace {

CostConfig small_cost() {
  CostConfig c;
  c.dim = 8;
  c.layers = 1;
  c.heads = 2;
  c.mlp_hidden = 16;
  c.vocab = 11;
  c.window = 8;
  c.alpha = 4;
  return c;
}

}  // namespace

TEST_CASE("matmul cost follows the 2mkn convention") {
  CHECK(matmul_flops(2, 3, 4) == 48);
  CHECK(matmul_flops(1, 1, 1) == 2);
  CHECK(matmul_flops(0, 3, 4) == 0);
  CHECK_THROWS_AS(matmul_flops(-1, 2, 2), contract_error);
}

TEST_CASE("single-row readout matches the closed form") {
  CostConfig c = small_cost();
  // per layer: projections 6D^2 + scores 2D + values 2D + output 2D^2 + mlp 6*D*mlp
  u64 per_layer = 6 * 64 + 2 * 8 + 2 * 8 + 2 * 64 + 6 * 8 * 16;
  u64 head = 2 * 8 * 11;
  CHECK(flops_forward(c, 1, 1) == per_layer + head);
}

TEST_CASE("adding compression rows charges projections but not the readout head") {
  CostConfig c = small_cost();
  u64 without = flops_pass(c, 4, 0, 4);
  u64 with_slots = flops_pass(c, 4, 2, 6);
  // Two extra rows: projection/output/mlp work for 2 rows + score/value work
  // against 6 keys for all 6 rows vs 4 keys for 4 rows; head unchanged.
  u64 row_cost = 6 * 64 + 2 * 64 + 6 * 8 * 16;  // per extra row, per layer
  u64 attn_with = 4ull * 6 * 6 * 8, attn_without = 4ull * 4 * 4 * 8;
  CHECK(with_slots - without == 2 * row_cost + (attn_with - attn_without));
}

TEST_CASE("pass preconditions are enforced") {
  CostConfig c = small_cost();
  CHECK_THROWS_AS(flops_pass(c, 0, 1, 1), contract_error);
  CHECK_THROWS_AS(flops_pass(c, 4, 2, 5), contract_error);  // fewer keys than rows
  CostConfig bad = c;
  bad.alpha = 0;
  CHECK_THROWS_AS(bad.validate(), config_error);
}

TEST_CASE("analytic pass cost equals the instrumented engine exactly") {
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    ModelConfig mc;
    mc.dim = 8 << rng.below(2);  // 8 or 16
    mc.heads = 2;
    mc.layers = 1 + static_cast<i64>(rng.below(3));
    mc.mlp_hidden = mc.dim * (1 + static_cast<i64>(rng.below(3)));
    mc.vocab = 10 + static_cast<i64>(rng.below(40));
    mc.window = 8;
    Model<float> m;
    m.cfg = mc;
    m.init_random(1000 + trial);

    const int alpha = 1 << (1 + rng.below(3));  // 2, 4, 8
    const i64 n = 1 + static_cast<i64>(rng.below(mc.window));
    const i64 k = ceil_div(n, alpha);
    const i64 cache_len = static_cast<i64>(rng.below(6));

    std::vector<int32_t> toks(n);
    for (i64 i = 0; i < n; ++i) toks[i] = static_cast<int32_t>(rng.below(mc.vocab));

    std::vector<Tensor<float>> ks, vs;
    CacheView<float> view;
    view.len = cache_len;
    Rng crng(50 + trial);
    for (i64 l = 0; l < mc.layers; ++l) {
      ks.push_back(randn<float>({cache_len, mc.dim}, crng, 0.5));
      vs.push_back(randn<float>({cache_len, mc.dim}, crng, 0.5));
    }
    for (i64 l = 0; l < mc.layers; ++l) {
      view.k.push_back(&ks[l]);
      view.v.push_back(&vs[l]);
    }
    const CacheView<float>* cache = cache_len > 0 ? &view : nullptr;

    auto out = model_forward<float>(m, toks, k, cache, MaskVariant::stepwise, alpha);
    CostConfig cc = CostConfig::from_model(mc, alpha);
    CHECK(out.flops == flops_pass(cc, n, k, cache_len + n + k));
  }
}

TEST_CASE("analytic readout cost equals the instrumented plain decoder exactly") {
  ModelConfig mc;
  mc.dim = 16;
  mc.heads = 2;
  mc.layers = 2;
  mc.mlp_hidden = 32;
  mc.vocab = 23;
  mc.window = 8;
  Model<float> m;
  m.cfg = mc;
  m.init_random(7);
  std::vector<int32_t> toks{1, 5, 3, 9, 2, 7, 4};
  u64 measured = 0;
  plain_forward(m, toks, &measured);
  CostConfig cc = CostConfig::from_model(mc, 4);
  CHECK(measured == flops_forward(cc, 7, 7));
}

TEST_CASE("turn schedules are validated") {
  TurnSchedule s;
  CHECK_THROWS_AS(s.validate(), config_error);
  s.turn_tokens = {8, 0};
  CHECK_THROWS_AS(s.validate(), config_error);
}

TEST_CASE("progressive and static costs agree on the first turn") {
  CostConfig c = small_cost();
  for (i64 len : {i64(3), i64(8), i64(20)}) {
    TurnSchedule s{{len, len, len}};
    auto prog = flops_progressive(c, s);
    auto stat = flops_static(c, s);
    REQUIRE(prog.size() == 3);
    CHECK(prog[0] == stat[0]);
  }
}

TEST_CASE("per-turn progressive cost is flat for window-sized turns") {
  CostConfig c;  // desk-scale shape: attention stays a small slice of the pass
  c.dim = 128;
  c.layers = 4;
  c.heads = 4;
  c.mlp_hidden = 512;
  c.vocab = 257;
  c.window = 32;
  c.alpha = 8;
  TurnSchedule s{std::vector<i64>(16, c.window)};
  auto prog = flops_progressive(c, s);
  u64 lo = prog[0], hi = prog[0];
  for (u64 v : prog) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  CHECK(static_cast<double>(hi) / static_cast<double>(lo) < 1.10);
}

TEST_CASE("static recompression cost strictly grows and dominates") {
  CostConfig c = small_cost();
  TurnSchedule s{std::vector<i64>(6, c.window)};
  auto prog = flops_progressive(c, s);
  auto stat = flops_static(c, s);
  for (size_t i = 1; i < stat.size(); ++i) {
    CHECK(stat[i] > stat[i - 1]);
    CHECK(stat[i] > prog[i]);
  }
}

TEST_CASE("partial windows cost nothing until a turn completes them") {
  CostConfig c = small_cost();  // window 8
  TurnSchedule s{{5, 5, 6}};    // windows complete during turns 2 and 3
  auto prog = flops_progressive(c, s);
  CHECK(prog[0] == 0);
  CHECK(prog[1] == flops_pass(c, 8, 2, 10));      // first window, empty cache
  CHECK(prog[2] == flops_pass(c, 8, 2, 2 + 10));  // second window, 2 cached slots
}

TEST_CASE("a static turn re-encodes every completed window from scratch") {
  CostConfig c = small_cost();
  TurnSchedule s{{8, 8, 8}};
  auto stat = flops_static(c, s);
  u64 w1 = flops_pass(c, 8, 2, 10);
  u64 w2 = flops_pass(c, 8, 2, 12);
  u64 w3 = flops_pass(c, 8, 2, 14);
  CHECK(stat[0] == w1);
  CHECK(stat[1] == w1 + w2);
  CHECK(stat[2] == w1 + w2 + w3);
}

TEST_CASE("the cost table lands on disk with the documented layout") {
  ugtest::TempDir dir;
  CostConfig c = small_cost();
  TurnSchedule s{{8, 8, 8, 8}};
  std::string path = dir.file("flops.csv");
  write_flops_csv(path, c, s);
  std::string text = ugtest::read_file(path);
  REQUIRE(text.rfind("turn,context_len,progressive_flops,static_flops\n", 0) == 0);
  // Four data rows with cumulative context lengths.
  CHECK(text.find("\n1,8,") != std::string::npos);
  CHECK(text.find("\n2,16,") != std::string::npos);
  CHECK(text.find("\n4,32,") != std::string::npos);
}

TEST_CASE("cost config mirrors the model config") {
  ModelConfig mc;
  mc.dim = 24;
  mc.heads = 3;
  mc.layers = 5;
  mc.mlp_hidden = 48;
  mc.vocab = 99;
  mc.window = 16;
  CostConfig c = CostConfig::from_model(mc, 8);
  CHECK(c.dim == 24);
  CHECK(c.layers == 5);
  CHECK(c.mlp_hidden == 48);
  CHECK(c.vocab == 99);
  CHECK(c.window == 16);
  CHECK(c.alpha == 8);
}
