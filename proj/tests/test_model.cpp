#include <doctest.h>

#include <cmath>
#include <vector>

#include "test_util.hpp"
#include "ug/model.hpp"
#include "ug/refmodel.hpp"

using namespace ug;

namespace {

ModelConfig tiny_cfg() {
  ModelConfig cfg;
  cfg.dim = 16;
  cfg.layers = 2;
  cfg.heads = 2;
  cfg.mlp_hidden = 32;
  cfg.vocab = 23;
  cfg.window = 8;
  return cfg;
}

template <typename T>
Model<T> tiny_model(u64 seed, ModelConfig cfg = tiny_cfg()) {
  cfg.dtype = dtype_of<T>();
  Model<T> m;
  m.cfg = cfg;
  m.init_random(seed);
  return m;
}

std::vector<int32_t> tokens_mod(i64 n, i64 vocab, i64 shift = 0) {
  std::vector<int32_t> t(n);
  for (i64 i = 0; i < n; ++i) t[i] = static_cast<int32_t>((i * 7 + shift) % (vocab - 1));
  return t;
}

template <typename T>
u64 model_hash(const Model<T>& m) {
  u64 h = 0;
  for (const auto& [name, t] : m.named_params()) h ^= data_hash(*t) * fnv1a64(name);
  return h;
}

}  // namespace

TEST_CASE("random init is reproducible and seed-sensitive") {
  auto a = tiny_model<float>(3), b = tiny_model<float>(3), c = tiny_model<float>(4);
  CHECK(model_hash(a) == model_hash(b));
  CHECK(model_hash(a) != model_hash(c));
}

TEST_CASE("compression projections start as exact copies of the base") {
  auto m = tiny_model<float>(5);
  for (const auto& layer : m.layers) {
    CHECK(layer.wq_ug.data == layer.wq_nt.data);
    CHECK(layer.wk_ug.data == layer.wk_nt.data);
    CHECK(layer.wv_ug.data == layer.wv_nt.data);
    CHECK(layer.wo_ug.data == layer.wo_nt.data);
  }
}

TEST_CASE("the shared slot embedding starts at the token-table mean") {
  auto m = tiny_model<double>(6);
  const i64 V = m.cfg.vocab, D = m.cfg.dim;
  for (i64 c = 0; c < D; ++c) {
    double mean = 0.0;
    for (i64 r = 0; r < V; ++r) mean += m.tok_embedding.data[r * D + c];
    mean /= static_cast<double>(V);
    CHECK(m.ug_embedding.data[c] == doctest::Approx(mean).epsilon(1e-12));
  }
}

TEST_CASE("trainable flags split parameters into the two documented sets") {
  auto m = tiny_model<float>(7);
  m.mark_ug_trainable();
  size_t total = 0;
  for (auto* p : m.ug_params()) {
    CHECK(p->requires_grad);
    ++total;
  }
  for (auto* p : m.base_params()) {
    CHECK_FALSE(p->requires_grad);
    ++total;
  }
  CHECK(total == m.named_params().size());
  // 4 projections per layer plus the shared embedding are trainable.
  CHECK(m.ug_params().size() == static_cast<size_t>(4 * m.cfg.layers + 1));
}

TEST_CASE("re-running the copy init does not disturb the plain path") {
  auto m = tiny_model<float>(8);
  auto toks = tokens_mod(10, m.cfg.vocab);
  Tensor<float> before = plain_forward(m, toks);
  m.init_ug_from_base();
  Tensor<float> after = plain_forward(m, toks);
  CHECK(before.data == after.data);
}

TEST_CASE("rotary positions follow the slot layout") {
  Positions p = positions_for(AttentionLayout{2, 4, 2}, 2);
  CHECK(p.key == std::vector<i64>{0, 1, 2, 3, 4, 5, 3, 5});
  CHECK(p.query == std::vector<i64>{2, 3, 4, 5, 3, 5});
}

TEST_CASE("a single slot covering the window sits at the last token") {
  Positions p = positions_for(AttentionLayout{0, 5, 1}, 5);
  CHECK(p.key == std::vector<i64>{0, 1, 2, 3, 4, 4});
  CHECK(p.key.back() == 4);
}

TEST_CASE("positions never exceed the window occupancy") {
  for (i64 cache : {i64(0), i64(3), i64(9)})
    for (i64 n = 1; n <= 12; ++n)
      for (int alpha : {2, 4}) {
        Positions p = positions_for(AttentionLayout{cache, n, ceil_div(n, alpha)}, alpha);
        for (i64 v : p.key) CHECK(v < cache + n);
        for (i64 v : p.query) CHECK(v < cache + n);
      }
}

TEST_CASE("segment forward produces the contracted shapes") {
  auto m = tiny_model<float>(9);
  auto toks = tokens_mod(8, m.cfg.vocab);
  SegmentForward<float> out = model_forward<float>(m, toks, 4, nullptr, MaskVariant::stepwise, 2);
  CHECK(out.logits.shape == Shape{8, m.cfg.vocab});
  REQUIRE(out.k_ug.size() == static_cast<size_t>(m.cfg.layers));
  for (i64 l = 0; l < m.cfg.layers; ++l) {
    CHECK(out.k_ug[l].shape == Shape{4, m.cfg.dim});
    CHECK(out.v_ug[l].shape == Shape{4, m.cfg.dim});
  }
  CHECK(out.flops > 0);
}

TEST_CASE("segment forward is deterministic") {
  auto m = tiny_model<float>(10);
  auto toks = tokens_mod(8, m.cfg.vocab);
  auto a = model_forward<float>(m, toks, 4, nullptr, MaskVariant::stepwise, 2);
  auto b = model_forward<float>(m, toks, 4, nullptr, MaskVariant::stepwise, 2);
  CHECK(a.logits.data == b.logits.data);
  for (size_t l = 0; l < a.k_ug.size(); ++l) {
    CHECK(a.k_ug[l].data == b.k_ug[l].data);
    CHECK(a.v_ug[l].data == b.v_ug[l].data);
  }
}

TEST_CASE("over-long segments and bad tokens are rejected") {
  auto m = tiny_model<float>(11);
  auto toks = tokens_mod(m.cfg.window + 1, m.cfg.vocab);
  CHECK_THROWS_AS(model_forward<float>(m, toks, 5, nullptr, MaskVariant::stepwise, 2), contract_error);
  std::vector<int32_t> bad{0, 1, static_cast<int32_t>(m.cfg.vocab)};
  CHECK_THROWS_AS(model_forward<float>(m, bad, 2, nullptr, MaskVariant::stepwise, 2), contract_error);
}

TEST_CASE("with no compression slots the engine matches the straight-line decoder") {
  auto m = tiny_model<float>(12);
  auto toks = tokens_mod(11, m.cfg.vocab);
  Tensor<float> got = plain_forward(m, toks);
  Tensor<float> want = ref::decoder_logits(m, toks);
  REQUIRE(got.shape == want.shape);
  for (i64 i = 0; i < got.numel(); ++i)
    CHECK(std::abs(static_cast<double>(got.data[i]) - static_cast<double>(want.data[i])) <= 1e-6);
}

TEST_CASE("the straight-line decoder also pins the f64 path") {
  auto m = tiny_model<double>(13);
  auto toks = tokens_mod(9, m.cfg.vocab);
  Tensor<double> got = plain_forward(m, toks);
  Tensor<double> want = ref::decoder_logits(m, toks);
  for (i64 i = 0; i < got.numel(); ++i) CHECK(std::abs(got.data[i] - want.data[i]) <= 1e-12);
}

TEST_CASE("cache order is semantic: permuting slots changes the logits") {
  auto m = tiny_model<float>(14);
  Rng rng(15);
  const i64 D = m.cfg.dim;
  std::vector<Tensor<float>> k_store, v_store, k_swap, v_swap;
  for (i64 l = 0; l < m.cfg.layers; ++l) {
    k_store.push_back(randn<float>({2, D}, rng, 0.5f));
    v_store.push_back(randn<float>({2, D}, rng, 0.5f));
    Tensor<float> k({2, D}), v({2, D});
    for (i64 c = 0; c < D; ++c) {
      k.at(0, c) = k_store[l].at(1, c);
      k.at(1, c) = k_store[l].at(0, c);
      v.at(0, c) = v_store[l].at(1, c);
      v.at(1, c) = v_store[l].at(0, c);
    }
    k_swap.push_back(std::move(k));
    v_swap.push_back(std::move(v));
  }
  CacheView<float> v1, v2;
  v1.len = v2.len = 2;
  for (i64 l = 0; l < m.cfg.layers; ++l) {
    v1.k.push_back(&k_store[l]);
    v1.v.push_back(&v_store[l]);
    v2.k.push_back(&k_swap[l]);
    v2.v.push_back(&v_swap[l]);
  }
  auto toks = tokens_mod(6, m.cfg.vocab);
  auto a = model_forward(m, toks, 3, &v1, MaskVariant::stepwise, 2);
  auto b = model_forward(m, toks, 3, &v2, MaskVariant::stepwise, 2);
  double diff = 0;
  for (i64 i = 0; i < a.logits.numel(); ++i)
    diff = std::max(diff, std::abs(static_cast<double>(a.logits.data[i]) - b.logits.data[i]));
  CHECK(diff > 1e-6);
}

TEST_CASE("checkpoints round-trip byte-exactly and reproduce logits") {
  ugtest::TempDir dir;
  auto m = tiny_model<float>(16);
  m.mark_ug_trainable();
  std::string p1 = dir.file("m1.ugckpt"), p2 = dir.file("m2.ugckpt");
  model_save(p1, m);
  Model<float> n = model_load<float>(p1);
  model_save(p2, n);
  CHECK(ugtest::read_file(p1) == ugtest::read_file(p2));

  auto toks = tokens_mod(7, m.cfg.vocab);
  CHECK(plain_forward(m, toks).data == plain_forward(n, toks).data);
  // Trainable flags survive the trip.
  CHECK(n.ug_embedding.requires_grad);
  CHECK_FALSE(n.head.requires_grad);

  ModelConfig peek = checkpoint_config(p1);
  CHECK(peek.dim == m.cfg.dim);
  CHECK(peek.layers == m.cfg.layers);
  CHECK(peek.dtype == Dtype::f32);
}

TEST_CASE("config validation rejects inconsistent extents") {
  ModelConfig cfg = tiny_cfg();
  cfg.heads = 3;  // 16 % 3 != 0
  CHECK_THROWS_AS(cfg.validate(), config_error);
  cfg = tiny_cfg();
  cfg.vocab = 1;
  CHECK_THROWS_AS(cfg.validate(), config_error);
}

TEST_CASE("config key-value form round-trips") {
  ModelConfig cfg = tiny_cfg();
  cfg.variant = MaskVariant::segmentation;
  cfg.dtype = Dtype::f64;
  ModelConfig back = ModelConfig::from_kv(cfg.to_kv());
  CHECK(back.dim == cfg.dim);
  CHECK(back.layers == cfg.layers);
  CHECK(back.heads == cfg.heads);
  CHECK(back.mlp_hidden == cfg.mlp_hidden);
  CHECK(back.vocab == cfg.vocab);
  CHECK(back.window == cfg.window);
  CHECK(back.variant == cfg.variant);
  CHECK(back.dtype == cfg.dtype);
}
