#include <doctest.h>

#include <cmath>
#include <vector>

#include "test_util.hpp"
#include "ug/compressor.hpp"
#include "ug/trainer.hpp"

using namespace ug;

namespace {

template <typename T>
Model<T> tiny_model(u64 seed, i64 dim = 16, i64 layers = 2, i64 window = 8) {
  Model<T> m;
  m.cfg.dim = dim;
  m.cfg.layers = layers;
  m.cfg.heads = 2;
  m.cfg.mlp_hidden = dim * 2;
  m.cfg.vocab = 23;
  m.cfg.window = window;
  m.cfg.dtype = dtype_of<T>();
  m.init_random(seed);
  return m;
}

std::vector<int32_t> tokens_mod(i64 n, i64 vocab, i64 shift = 0) {
  std::vector<int32_t> t(n);
  for (i64 i = 0; i < n; ++i) t[i] = static_cast<int32_t>((i * 5 + shift) % (vocab - 1));
  return t;
}

RatioSampler mono(int alpha) { return RatioSampler{RatioMode::monotonous, {alpha}, alpha, 0}; }

}  // namespace

TEST_CASE("appending one window grows the cache by ceil(len/ratio)") {
  auto m = tiny_model<float>(1);
  CompressedCache<float> cache;
  cache.init(m.cfg.layers, m.cfg.dim);
  CHECK(cache.empty());
  compress_append(m, cache, tokens_mod(8, m.cfg.vocab), 4, MaskVariant::stepwise);
  CHECK(cache.len() == 2);
  CHECK(cache.source_tokens == 8);
  CHECK(cache.boundary_logits.shape == Shape{1, m.cfg.vocab});
  cache.check_consistent();
}

TEST_CASE("three appends accumulate slot counts additively") {
  auto m = tiny_model<float>(2);
  CompressedCache<float> cache;
  cache.init(m.cfg.layers, m.cfg.dim);
  int ratios[3] = {2, 4, 2};
  i64 want = 0;
  for (int r : ratios) {
    compress_append(m, cache, tokens_mod(8, m.cfg.vocab, want), r, MaskVariant::stepwise);
    want += 8 / r;
  }
  CHECK(cache.len() == 10);
  CHECK(cache.log.size() == 3);
  CHECK(cache.source_tokens == 24);
}

TEST_CASE("appends never rewrite earlier cache rows") {
  auto m = tiny_model<float>(3);
  CompressedCache<float> cache;
  cache.init(m.cfg.layers, m.cfg.dim);
  compress_append(m, cache, tokens_mod(8, m.cfg.vocab), 2, MaskVariant::stepwise);
  std::vector<std::vector<float>> before_k, before_v;
  for (i64 l = 0; l < m.cfg.layers; ++l) {
    before_k.push_back(cache.k_layers[l].data);
    before_v.push_back(cache.v_layers[l].data);
  }
  compress_append(m, cache, tokens_mod(8, m.cfg.vocab, 3), 4, MaskVariant::stepwise);
  for (i64 l = 0; l < m.cfg.layers; ++l) {
    for (size_t i = 0; i < before_k[l].size(); ++i) {
      CHECK(cache.k_layers[l].data[i] == before_k[l][i]);
      CHECK(cache.v_layers[l].data[i] == before_v[l][i]);
    }
  }
}

TEST_CASE("window overflow and plan mismatches are rejected") {
  auto m = tiny_model<float>(4);
  CompressedCache<float> cache;
  cache.init(m.cfg.layers, m.cfg.dim);
  CHECK_THROWS_AS(compress_append(m, cache, tokens_mod(9, m.cfg.vocab), 2, MaskVariant::stepwise),
                  contract_error);
  SegmentPlan plan = make_plan(16, 8, mono(2));
  auto toks = tokens_mod(15, m.cfg.vocab);  // one short of the plan
  CHECK_THROWS_AS(compress_context(m, toks, plan, MaskVariant::stepwise), contract_error);
}

TEST_CASE("full-window monotonous compression hits the nominal factor") {
  auto m = tiny_model<float>(5);
  auto toks = tokens_mod(32, m.cfg.vocab);
  SegmentPlan plan = make_plan(32, 8, mono(4));
  auto cache = compress_context(m, toks, plan, MaskVariant::stepwise);
  CHECK(cache.len() == 8);  // 32 / 4
  CHECK(cache.len() == plan.ug_total());
  CHECK(cache.source_tokens == 32);
}

TEST_CASE_TEMPLATE("serial compression equals one unified-mask pass", T, float, double) {
  auto m = tiny_model<T>(6);
  RatioSampler s;
  s.mode = RatioMode::per_segment;
  s.seed = 71;
  const i64 total = 22;  // three windows: 8, 8, 6
  SegmentPlan plan = make_plan(total, 8, s);
  auto toks = tokens_mod(total, m.cfg.vocab);

  auto serial = compress_context(m, toks, plan, MaskVariant::stepwise);

  Tape<T> tape;
  std::vector<BlockSpec> blocks;
  for (const Segment& seg : plan.segments) blocks.push_back({seg.len(), seg.k, seg.alpha});
  auto g = forward_blocks<T>(tape, m, toks, blocks, MaskVariant::stepwise, nullptr);

  const double tol = std::is_same_v<T, float> ? 1e-4 : 1e-10;
  for (i64 l = 0; l < m.cfg.layers; ++l) {
    const auto& uk = tape.value(g.k_ug[l]);
    const auto& uv = tape.value(g.v_ug[l]);
    REQUIRE(uk.shape == serial.k_layers[l].shape);
    for (i64 i = 0; i < uk.numel(); ++i) {
      CHECK(std::abs(double(uk.data[i]) - double(serial.k_layers[l].data[i])) <= tol);
      CHECK(std::abs(double(uv.data[i]) - double(serial.v_layers[l].data[i])) <= tol);
    }
  }
}

TEST_CASE("slot accounting matches the plan over many random plans") {
  auto m = tiny_model<float>(7, /*dim=*/8, /*layers=*/1, /*window=*/8);
  Rng rng(72);
  for (int trial = 0; trial < 40; ++trial) {
    RatioSampler s;
    s.mode = RatioMode::per_segment;
    s.seed = rng.next_u64();
    i64 total = 1 + static_cast<i64>(rng.below(40));
    SegmentPlan plan = make_plan(total, 8, s);
    auto toks = tokens_mod(total, m.cfg.vocab, trial);
    auto cache = compress_context(m, toks, plan, MaskVariant::stepwise);
    i64 want = 0;
    for (const Segment& seg : plan.segments) want += ceil_div(seg.len(), seg.alpha);
    CHECK(cache.len() == want);
    CHECK(cache.len() == plan.ug_total());
  }
}

TEST_CASE("per-segment cost stays flat as the cache grows") {
  auto m = tiny_model<float>(8, /*dim=*/32);
  const i64 n_seg = 8, w = 8;
  auto toks = tokens_mod(n_seg * w, m.cfg.vocab);
  CompressedCache<float> cache;
  cache.init(m.cfg.layers, m.cfg.dim);
  std::vector<u64> deltas;
  u64 prev = 0;
  for (i64 i = 0; i < n_seg; ++i) {
    std::vector<int32_t> seg(toks.begin() + i * w, toks.begin() + (i + 1) * w);
    compress_append(m, cache, seg, 8, MaskVariant::stepwise);
    deltas.push_back(cache.flops_used - prev);
    prev = cache.flops_used;
  }
  u64 lo = deltas[0], hi = deltas[0];
  for (u64 d : deltas) {
    lo = std::min(lo, d);
    hi = std::max(hi, d);
  }
  CHECK(static_cast<double>(hi) / static_cast<double>(lo) < 1.10);
}

TEST_CASE("untrained scoring lands near the uniform baseline") {
  auto m = tiny_model<float>(9);
  auto toks = tokens_mod(16, m.cfg.vocab);
  auto cache = compress_context(m, toks, make_plan(16, 8, mono(4)), MaskVariant::stepwise);
  auto cont = tokens_mod(24, m.cfg.vocab, 7);
  auto nll = score_nll(m, cache, cont, mono(4), MaskVariant::stepwise);
  REQUIRE(nll.size() == cont.size());
  double mean = 0;
  for (double v : nll) mean += v;
  mean /= static_cast<double>(nll.size());
  double uniform = std::log(static_cast<double>(m.cfg.vocab));
  CHECK(mean > uniform * 0.9);
  CHECK(mean < uniform * 1.1);
}

TEST_CASE("scoring is invariant to call chunking and bitwise repeatable") {
  auto m = tiny_model<float>(10);
  auto toks = tokens_mod(16, m.cfg.vocab);
  auto cache = compress_context(m, toks, make_plan(16, 8, mono(2)), MaskVariant::stepwise);
  auto cont = tokens_mod(20, m.cfg.vocab, 3);

  auto one_shot = score_nll(m, cache, cont, mono(4), MaskVariant::stepwise);
  auto again = score_nll(m, cache, cont, mono(4), MaskVariant::stepwise);
  CHECK(one_shot == again);

  DecodeState<float> ds(m, cache, mono(4), MaskVariant::stepwise);
  std::vector<int32_t> head(cont.begin(), cont.begin() + 7);
  std::vector<int32_t> tail(cont.begin() + 7, cont.end());
  auto part1 = ds.score(head);
  auto part2 = ds.score(tail);
  part1.insert(part1.end(), part2.begin(), part2.end());
  CHECK(part1 == one_shot);
}

TEST_CASE("a fresh session with no history cannot predict") {
  auto m = tiny_model<float>(11);
  CompressedCache<float> cache;
  cache.init(m.cfg.layers, m.cfg.dim);
  DecodeState<float> ds(m, cache, mono(4), MaskVariant::stepwise);
  CHECK_THROWS_AS(ds.next_logits(), contract_error);
}

TEST_CASE("the session tail folds into the cache when it reaches a window") {
  auto m = tiny_model<float>(12);
  auto toks = tokens_mod(8, m.cfg.vocab);
  auto cache = compress_context(m, toks, make_plan(8, 8, mono(2)), MaskVariant::stepwise);
  DecodeState<float> ds(m, cache, mono(4), MaskVariant::stepwise);
  const size_t log_before = ds.cache.log.size();
  const i64 w = m.cfg.window;
  for (i64 i = 0; i < w + 5; ++i) {
    ds.push(static_cast<int32_t>(i % (m.cfg.vocab - 1)));
    CHECK(static_cast<i64>(ds.tail.size()) < w);  // never reaches a full window
  }
  CHECK(ds.cache.log.size() == log_before + 1);  // exactly one mid-session fold
  CHECK(ds.tail.size() == 5);
  // The session owns a private copy; the input cache is untouched.
  CHECK(cache.log.size() == log_before);
}

TEST_CASE("greedy generation is deterministic, sampling is seed-reproducible") {
  auto m = tiny_model<float>(13);
  auto toks = tokens_mod(16, m.cfg.vocab);
  auto cache = compress_context(m, toks, make_plan(16, 8, mono(4)), MaskVariant::stepwise);
  auto prompt = tokens_mod(4, m.cfg.vocab, 2);

  GenMode greedy{true, 0.0, 0};
  auto a = generate(m, cache, prompt, 12, greedy, mono(4), MaskVariant::stepwise);
  auto b = generate(m, cache, prompt, 12, greedy, mono(4), MaskVariant::stepwise);
  REQUIRE(a.size() == 12);
  CHECK(a == b);

  GenMode s1{false, 1.0, 42}, s2{false, 1.0, 43};
  auto c = generate(m, cache, prompt, 12, s1, mono(4), MaskVariant::stepwise);
  auto d = generate(m, cache, prompt, 12, s1, mono(4), MaskVariant::stepwise);
  auto e = generate(m, cache, prompt, 12, s2, mono(4), MaskVariant::stepwise);
  CHECK(c == d);
  CHECK(c != e);  // near-uniform logits: different seeds almost surely diverge
}

TEST_CASE("caches round-trip byte-exactly and score identically") {
  ugtest::TempDir dir;
  auto m = tiny_model<float>(14);
  auto toks = tokens_mod(24, m.cfg.vocab);
  RatioSampler s;
  s.mode = RatioMode::per_segment;
  s.seed = 99;
  auto cache = compress_context(m, toks, make_plan(24, 8, s), MaskVariant::stepwise);

  std::string p1 = dir.file("a.ugc"), p2 = dir.file("b.ugc");
  cache_save(p1, cache, m.cfg);
  auto back = cache_load<float>(p1, m.cfg);
  cache_save(p2, back, m.cfg);
  CHECK(ugtest::read_file(p1) == ugtest::read_file(p2));

  CHECK(back.len() == cache.len());
  CHECK(back.source_tokens == cache.source_tokens);
  REQUIRE(back.log.size() == cache.log.size());
  for (size_t i = 0; i < cache.log.size(); ++i) {
    CHECK(back.log[i].alpha == cache.log[i].alpha);
    CHECK(back.log[i].k == cache.log[i].k);
    CHECK(back.log[i].src_start == cache.log[i].src_start);
    CHECK(back.log[i].src_end == cache.log[i].src_end);
  }
  auto cont = tokens_mod(10, m.cfg.vocab, 5);
  CHECK(score_nll(m, cache, cont, mono(4), MaskVariant::stepwise) ==
        score_nll(m, back, cont, mono(4), MaskVariant::stepwise));
}

TEST_CASE("a cache built by one model is rejected by a mismatched config") {
  ugtest::TempDir dir;
  auto m = tiny_model<float>(15);
  auto toks = tokens_mod(8, m.cfg.vocab);
  auto cache = compress_context(m, toks, make_plan(8, 8, mono(2)), MaskVariant::stepwise);
  std::string p = dir.file("c.ugc");
  cache_save(p, cache, m.cfg);
  ModelConfig other = m.cfg;
  other.dim = 32;
  CHECK_THROWS_AS(cache_load<float>(p, other), io_error);
}
