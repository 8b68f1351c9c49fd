#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "test_util.hpp"
#include "ug/evalharness.hpp"

using namespace ug;

namespace {

const std::string kKeys = "ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";
const std::string kValues = "abcdefghijklmnop";
const std::string kFiller = "qrstuvwxyz ";

template <typename T>
Model<T> byte_model(u64 seed, i64 dim = 16, i64 window = 8) {
  Model<T> m;
  m.cfg.dim = dim;
  m.cfg.layers = 2;
  m.cfg.heads = 2;
  m.cfg.mlp_hidden = dim * 2;
  m.cfg.vocab = kByteVocab + 1;
  m.cfg.window = window;
  m.cfg.dtype = dtype_of<T>();
  m.init_random(seed);
  return m;
}

std::string to_text(const std::vector<int32_t>& toks) {
  std::string s;
  for (int32_t t : toks) s += static_cast<char>(t);
  return s;
}

i64 count_occurrences(const std::string& hay, const std::string& needle) {
  i64 n = 0;
  for (size_t pos = 0; (pos = hay.find(needle, pos)) != std::string::npos; ++pos) ++n;
  return n;
}

KvTaskSpec small_spec(u64 seed = 5) {
  KvTaskSpec spec;
  spec.n_pairs = 4;
  spec.context_len = 96;
  spec.seed = seed;
  return spec;
}

}  // namespace

TEST_CASE("task specs reject impossible geometry") {
  KvTaskSpec spec = small_spec();
  spec.context_len = 20;  // 4 records of 7 chars do not fit
  CHECK_THROWS_AS(spec.validate(), config_error);
  spec = small_spec();
  spec.n_pairs = 0;
  CHECK_THROWS_AS(spec.validate(), config_error);
  spec = small_spec();
  spec.target = KvTaskSpec::Target::by_depth;
  spec.depth = 4;  // only indices 0..3 exist
  CHECK_THROWS_AS(spec.validate(), config_error);
}

TEST_CASE("instances respect the model's training-length regime") {
  KvTaskSpec spec = small_spec();
  ModelConfig cfg;
  cfg.window = 8;  // 16 windows of 8 = 128 max; 96 + 4 + 3 fits
  CHECK_NOTHROW(spec.validate_against(cfg));
  spec.context_len = 160;
  CHECK_THROWS_AS(spec.validate_against(cfg), config_error);
}

TEST_CASE("generation is deterministic in the seed") {
  KvTaskSpec spec = small_spec(42);
  KvInstance a = gen_kv_task(spec), b = gen_kv_task(spec);
  CHECK(a.context == b.context);
  CHECK(a.query == b.query);
  CHECK(a.answer == b.answer);
  CHECK(a.target_index == b.target_index);
  spec.seed = 43;
  KvInstance c = gen_kv_task(spec);
  CHECK(a.context != c.context);
}

TEST_CASE("instances have the contracted shape and alphabets") {
  for (u64 seed = 1; seed <= 30; ++seed) {
    KvInstance inst = gen_kv_task(small_spec(seed));
    KvTaskSpec spec = small_spec(seed);
    REQUIRE(static_cast<i64>(inst.context.size()) == spec.context_len);
    REQUIRE(static_cast<i64>(inst.query.size()) == spec.query_len());
    REQUIRE(static_cast<i64>(inst.answer.size()) == spec.value_len);

    std::string ctx = to_text(inst.context);
    for (char ch : ctx) {
      bool ok = kKeys.find(ch) != std::string::npos || kValues.find(ch) != std::string::npos ||
                kFiller.find(ch) != std::string::npos || ch == '=' || ch == ';' ;
      CHECK(ok);
    }
    std::string q = to_text(inst.query);
    CHECK(q.front() == '?');
    CHECK(q.back() == '=');
    for (char ch : to_text(inst.answer)) CHECK(kValues.find(ch) != std::string::npos);
  }
}

TEST_CASE("the queried record exists exactly once and carries the answer") {
  for (u64 seed = 1; seed <= 30; ++seed) {
    KvInstance inst = gen_kv_task(small_spec(seed));
    std::string ctx = to_text(inst.context);
    std::string key = to_text(inst.query).substr(1);  // strip '?', keep trailing '='
    std::string answer = to_text(inst.answer);
    // The key…= prefix and the full record appear exactly once; so does the
    // answer string itself (value alphabet is disjoint from keys and filler).
    CHECK(count_occurrences(ctx, key) == 1);
    CHECK(count_occurrences(ctx, key + answer + ";") == 1);
    CHECK(count_occurrences(ctx, answer) == 1);
  }
}

TEST_CASE("target selection modes pick the advertised record") {
  KvTaskSpec spec = small_spec(9);
  spec.target = KvTaskSpec::Target::first_pair;
  CHECK(gen_kv_task(spec).target_index == 0);
  spec.target = KvTaskSpec::Target::by_depth;
  spec.depth = 2;
  CHECK(gen_kv_task(spec).target_index == 2);
  spec.target = KvTaskSpec::Target::random_pair;
  std::set<i64> seen;
  for (u64 s = 1; s <= 40; ++s) {
    spec.seed = s;
    seen.insert(gen_kv_task(spec).target_index);
  }
  CHECK(seen.size() > 1);
}

TEST_CASE("instance sets are stable per index") {
  KvTaskSpec spec = small_spec(11);
  auto big = gen_kv_set(spec, 6);
  auto small = gen_kv_set(spec, 3);
  REQUIRE(big.size() == 6);
  for (size_t i = 0; i < small.size(); ++i) {
    CHECK(big[i].context == small[i].context);
    CHECK(big[i].answer == small[i].answer);
  }
  // Distinct instances within a set.
  CHECK(big[0].context != big[1].context);
}

TEST_CASE("exact-match scoring counts whole answers only") {
  auto set = gen_kv_set(small_spec(13), 8);
  AnswerFn perfect = [](const KvInstance& inst, int) { return inst.answer; };
  AnswerFn wrong = [](const KvInstance& inst, int) {
    auto a = inst.answer;
    a[0] = (a[0] == 'a') ? 'b' : 'a';  // one wrong byte spoils the match
    return a;
  };
  int call = 0;
  AnswerFn alternating = [&](const KvInstance& inst, int alpha) {
    return (call++ % 2 == 0) ? perfect(inst, alpha) : wrong(inst, alpha);
  };
  CHECK(retrieval_accuracy(set, 2, perfect) == doctest::Approx(1.0));
  CHECK(retrieval_accuracy(set, 2, wrong) == doctest::Approx(0.0));
  CHECK(retrieval_accuracy(set, 2, alternating) == doctest::Approx(0.5));
}

TEST_CASE("task training samples concatenate context, query and answer") {
  KvTaskSpec spec = small_spec(17);
  KvTaskSource src(spec);
  Rng rng(3);
  auto sample = src.sample(rng);
  REQUIRE(static_cast<i64>(sample.size()) ==
          spec.context_len + spec.query_len() + spec.value_len);
  std::string text = to_text(sample);
  size_t qpos = text.find('?', 0);
  REQUIRE(qpos != std::string::npos);
  CHECK(qpos == static_cast<size_t>(spec.context_len));  // query right after the context

  Rng rng2(3);
  CHECK(src.sample(rng2) == sample);  // pure function of the stream
  CHECK(src.sample(rng) != sample);   // fresh instance on the next draw
}

TEST_CASE("a random-weight model answers with the right shape but no skill") {
  auto m = byte_model<float>(19);
  KvTaskSpec spec = small_spec(21);
  auto inst = gen_kv_task(spec);
  auto ans = model_answer(m, inst, 2, MaskVariant::stepwise);
  CHECK(ans.size() == inst.answer.size());
  for (int32_t t : ans) CHECK(t < kByteVocab);

  auto accs = eval_retrieval(m, spec, {2, 8}, 6, MaskVariant::stepwise);
  REQUIRE(accs.size() == 2);
  for (double a : accs) {
    CHECK(a >= 0.0);
    CHECK(a <= 0.6);  // 16^-3 chance per instance of guessing right
  }
}

TEST_CASE("held-out perplexity of an untrained model sits near uniform") {
  auto m = byte_model<float>(23);
  std::vector<int32_t> corpus = synth_tokens(7, 2000);
  PplProtocol proto;
  proto.n_samples = 3;
  proto.context_len = 32;
  proto.score_len = 16;
  double ppl = eval_ppl(m, corpus, 4, proto, MaskVariant::stepwise);
  double log_uniform = std::log(static_cast<double>(kByteVocab + 1));
  CHECK(std::log(ppl) > 0.9 * log_uniform);
  CHECK(std::log(ppl) < 1.1 * log_uniform);
  double vppl = eval_ppl_vanilla(m, corpus, proto);
  CHECK(std::log(vppl) > 0.9 * log_uniform);
  CHECK(std::log(vppl) < 1.1 * log_uniform);
}

TEST_CASE("curve inspection finds the first step under a target") {
  ObjectiveCurve c;
  c.objective = Objective::compression_lm;
  c.val_ppl = {{0, 250.0}, {10, 120.0}, {20, 80.0}, {30, 85.0}};
  CHECK(first_step_reaching(c, 130.0) == 10);
  CHECK(first_step_reaching(c, 80.0) == 20);
  CHECK(first_step_reaching(c, 10.0) == -1);
}

TEST_CASE("objective comparison trains both arms on one start and protocol") {
  auto m = byte_model<float>(29);
  m.mark_ug_trainable();
  KvTaskSpec spec = small_spec(31);
  KvTaskSource src(spec);
  TrainConfig cfg;
  cfg.lr = 1e-3;
  cfg.steps = 4;
  cfg.batch_size = 1;
  cfg.sample_len = 104;
  cfg.seed = 33;
  cfg.val_every = 2;
  cfg.val_samples = 2;
  cfg.ed_target_len = 3;

  auto curves = compare_objectives(m, src, cfg);
  REQUIRE(curves.size() == 2);
  CHECK(curves[0].objective == Objective::compression_lm);
  CHECK(curves[1].objective == Objective::encode_decode);
  for (const auto& c : curves) {
    REQUIRE(c.val_ppl.size() >= 2);
    CHECK(c.val_ppl.front().first == 0);
    for (auto [step, ppl] : c.val_ppl) CHECK(std::isfinite(ppl));
  }
  // Shared validation protocol: both arms report on the same step grid.
  REQUIRE(curves[0].val_ppl.size() == curves[1].val_ppl.size());
  for (size_t i = 0; i < curves[0].val_ppl.size(); ++i)
    CHECK(curves[0].val_ppl[i].first == curves[1].val_ppl[i].first);
}

TEST_CASE("ablation rows land on disk with one accuracy column per ratio") {
  ugtest::TempDir dir;
  std::vector<AblationRow> rows;
  AblationRow r;
  r.cell = {MaskVariant::stepwise, RatioMode::per_segment, 4};
  r.accuracy = {0.75, 0.5};
  rows.push_back(r);
  r.cell = {MaskVariant::segmentation, RatioMode::monotonous, 4};
  r.accuracy = {0.25, 0.125};
  rows.push_back(r);
  std::string path = dir.file("ablation.csv");
  write_ablation_csv(path, rows, {2, 8});
  std::string text = ugtest::read_file(path);
  CHECK(text.rfind("mask,sampling,fixed_ratio,acc_x2,acc_x8\n", 0) == 0);
  CHECK(text.find("stepwise,per_segment,4,0.750000,0.500000\n") != std::string::npos);
  CHECK(text.find("segmentation,monotonous,4,0.250000,0.125000\n") != std::string::npos);

  rows[0].accuracy.pop_back();
  CHECK_THROWS_AS(write_ablation_csv(dir.file("bad.csv"), rows, {2, 8}), contract_error);
}
