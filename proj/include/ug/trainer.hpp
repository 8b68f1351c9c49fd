#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ug/compressor.hpp"
#include "ug/model.hpp"
#include "ug/segment.hpp"

namespace ug {

enum class Objective { compression_lm, encode_decode };
const char* objective_name(Objective o);
Objective objective_from_name(const std::string& s);

enum class TrainPhase { pretrain_analog, finetune_analog };
const char* train_phase_name(TrainPhase p);

struct TrainConfig {
  Objective objective = Objective::compression_lm;
  double lr = 1e-3;
  i64 steps = 100;
  i64 batch_size = 8;
  i64 sample_len = 128;  // tokens per training sample (corpus sources)
  RatioMode ratio_mode = RatioMode::per_segment;
  std::vector<int> ratio_candidates{2, 4, 8, 16, 32};
  int fixed_ratio = 4;
  MaskVariant variant = MaskVariant::stepwise;
  u64 seed = 0;
  i64 val_every = 0;  // 0 = no validation
  i64 val_samples = 8;
  TrainPhase phase = TrainPhase::finetune_analog;
  i64 ed_target_len = 0;  // encode-decode target length; 0 = model window

  void validate() const;
};

// Mean next-token NLL over every token outside the first segment, computed
// in one unified-mask full-sequence pass (each block attends earlier blocks'
// compression slots only). The first segment has no compressed context to
// condition on and is excluded.
template <typename T>
Val compression_lm_loss_graph(Tape<T>& tape, Model<T>& m, std::span<const int32_t> tokens,
                              const SegmentPlan& plan, MaskVariant variant);
template <typename T>
double compression_lm_loss(Model<T>& m, std::span<const int32_t> tokens, const SegmentPlan& plan,
                           MaskVariant variant);

// Baseline objective: compress the whole input at one ratio, supervise only
// the target tokens (which ride along as a final readout block). The target
// must fit in one window.
template <typename T>
Val encode_decode_loss_graph(Tape<T>& tape, Model<T>& m, std::span<const int32_t> input,
                             std::span<const int32_t> target, int alpha, MaskVariant variant);
template <typename T>
double encode_decode_loss(Model<T>& m, std::span<const int32_t> input,
                          std::span<const int32_t> target, int alpha, MaskVariant variant);

// Yields one training sample per call. Implementations must be a pure
// function of the Rng stream they are handed.
struct SampleSource {
  virtual std::vector<int32_t> sample(Rng& rng) = 0;
  virtual ~SampleSource() = default;
};

// Random contiguous slices of a byte-token corpus.
struct ByteCorpusSource final : SampleSource {
  const std::vector<int32_t>* corpus = nullptr;
  i64 sample_len = 0;
  ByteCorpusSource(const std::vector<int32_t>& c, i64 len) : corpus(&c), sample_len(len) {
    if (len < 2) throw config_error("corpus source: sample_len must be >= 2");
    if (static_cast<i64>(c.size()) < len)
      throw config_error("corpus source: corpus shorter than sample_len");
  }
  std::vector<int32_t> sample(Rng& rng) override;
};

template <typename T>
struct Adam {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  i64 t = 0;
  std::vector<std::vector<double>> m1, m2;
  void init(const std::vector<Tensor<T>*>& params);
  void step(const std::vector<Tensor<T>*>& params, double lr);
};

struct MetricsRow {
  i64 step = 0;
  std::string phase;
  double train_loss = 0.0;
  std::optional<double> val_ppl;
  double lr = 0.0;
  std::string objective;
};
// Header: step,phase,train_loss,val_ppl,lr,objective
void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows);

struct TrainReport {
  std::vector<MetricsRow> rows;
  std::optional<double> final_val_ppl;
};

// Optimizes whatever is currently marked trainable (the ug set under
// production flags) with the configured objective. Validation perplexity is
// always the compression-lm loss on a fixed seeded sample set with
// monotonous x4 plans, so curves from different objectives are comparable.
template <typename T>
TrainReport train(Model<T>& m, SampleSource& source, const TrainConfig& cfg,
                  SampleSource* val_source = nullptr);

// Plain causal-LM training of the frozen-to-be base parameters (the
// stand-in for a pretrained backbone). Flips flags to the base set for the
// duration, then re-copies the base projections into the ug set and restores
// production flags.
template <typename T>
TrainReport pretrain_base(Model<T>& m, SampleSource& source, const TrainConfig& cfg,
                          SampleSource* val_source = nullptr);

// Frozen-parameter watchdog: byte-level copies of every frozen tensor plus
// vanilla-path probe logits, compared after training.
template <typename T>
struct ModelSnapshot {
  std::vector<std::pair<std::string, Tensor<T>>> frozen;
  std::vector<int32_t> probe;
  Tensor<T> probe_logits;
};
template <typename T>
ModelSnapshot<T> snapshot_frozen(Model<T>& m, std::span<const int32_t> probe);

struct FreezeReport {
  std::vector<std::string> drifted;  // names of frozen tensors that changed
  bool probe_drifted = false;
  bool ok() const { return drifted.empty() && !probe_drifted; }
};
template <typename T>
FreezeReport freeze_audit(Model<T>& m, const ModelSnapshot<T>& before);

}  // namespace ug
