#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ug/compressor.hpp"
#include "ug/corpus.hpp"
#include "ug/model.hpp"
#include "ug/trainer.hpp"

namespace ug {

// Synthetic key-value retrieval. The context interleaves `key=value;`
// records with filler drawn from an alphabet disjoint from keys, values and
// punctuation, so every answer occurs in the context exactly once. The query
// `?key=` asks for one record's value.
struct KvTaskSpec {
  i64 n_pairs = 4;
  i64 key_len = 2;    // chars from A-Z0-9
  i64 value_len = 3;  // chars from a-p
  i64 context_len = 96;
  enum class Target { first_pair, random_pair, by_depth };
  Target target = Target::random_pair;
  i64 depth = 0;  // record index when target == by_depth
  u64 seed = 1;

  i64 query_len() const { return key_len + 2; }  // '?' key '='
  i64 record_len() const { return key_len + value_len + 2; }
  void validate() const;
  // Generated instances must fit the model's training length regime.
  void validate_against(const ModelConfig& cfg) const;
};

struct KvInstance {
  std::vector<int32_t> context;
  std::vector<int32_t> query;
  std::vector<int32_t> answer;
  i64 target_index = 0;
};

KvInstance gen_kv_task(const KvTaskSpec& spec);
// n instances with per-index seeds derived from spec.seed.
std::vector<KvInstance> gen_kv_set(const KvTaskSpec& spec, i64 n_instances);

// Exact-match accuracy of an answer generator over an instance set. The
// generator abstraction exists so the scoring loop itself is testable with
// an oracle that copies the true answer.
using AnswerFn = std::function<std::vector<int32_t>(const KvInstance&, int alpha)>;
double retrieval_accuracy(const std::vector<KvInstance>& set, int alpha, const AnswerFn& answer);

// Compress the context at a monotonous ratio, feed the query, greedy-decode
// answer-length tokens.
template <typename T>
std::vector<int32_t> model_answer(Model<T>& m, const KvInstance& inst, int alpha,
                                  MaskVariant variant);

// Accuracy per ratio on a seeded instance set (the same set for every ratio).
template <typename T>
std::vector<double> eval_retrieval(Model<T>& m, const KvTaskSpec& spec,
                                   const std::vector<int>& ratios, i64 n_instances,
                                   MaskVariant variant);

// Held-out perplexity of `score_len` tokens after a compressed context of
// `context_len` tokens (monotonous ratio), averaged over seeded samples.
struct PplProtocol {
  i64 n_samples = 8;
  i64 context_len = 96;
  i64 score_len = 32;
  u64 seed = 7;
};
template <typename T>
double eval_ppl(Model<T>& m, const std::vector<int32_t>& corpus, int ratio,
                const PplProtocol& proto, MaskVariant variant);
// Same samples and scored positions, raw (uncompressed) context.
template <typename T>
double eval_ppl_vanilla(Model<T>& m, const std::vector<int32_t>& corpus,
                        const PplProtocol& proto);

// Training samples for the retrieval task: context ++ query ++ answer as one
// token stream, a fresh instance per draw.
struct KvTaskSource final : SampleSource {
  KvTaskSpec spec;
  explicit KvTaskSource(const KvTaskSpec& s) : spec(s) { spec.validate(); }
  std::vector<int32_t> sample(Rng& rng) override;
};

// Ablation grid: one model trained per (mask variant, ratio sampling) cell
// with a shared seed, corpus and step budget, then evaluated on retrieval
// accuracy at each probe ratio.
struct AblationCell {
  MaskVariant variant = MaskVariant::stepwise;
  RatioMode ratio_mode = RatioMode::per_segment;
  int fixed_ratio = 4;
};
struct AblationConfig {
  ModelConfig model;
  TrainConfig train;
  KvTaskSpec task;
  std::vector<AblationCell> cells;
  std::vector<int> eval_ratios{2, 8};
  i64 eval_instances = 32;
  u64 eval_seed = 99;
};
struct AblationRow {
  AblationCell cell;
  std::vector<double> accuracy;  // aligned with eval_ratios
};
// Every cell starts from `start` when given (e.g., a model with a pretrained
// base path), otherwise from a fresh init with the shared training seed.
template <typename T>
std::vector<AblationRow> run_ablation(const AblationConfig& cfg, const Model<T>* start = nullptr);
// Header: mask,sampling,acc_x<r> per probe ratio; one row per cell.
void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows,
                        const std::vector<int>& eval_ratios);

// Sample-efficiency comparison: train one model per objective from the same
// starting point on identical data and steps; report each arm's validation
// perplexity curve (shared validation protocol, so the curves are
// comparable).
struct ObjectiveCurve {
  Objective objective;
  std::vector<std::pair<i64, double>> val_ppl;  // (step, ppl)
};
template <typename T>
std::vector<ObjectiveCurve> compare_objectives(const Model<T>& start, SampleSource& source,
                                               const TrainConfig& cfg);

// First step at which a curve reaches `target` ppl; -1 if it never does.
i64 first_step_reaching(const ObjectiveCurve& curve, double target);

}  // namespace ug
