#include "ug/trainer.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace ug {

const char* objective_name(Objective o) {
  return o == Objective::compression_lm ? "compression-lm" : "encode-decode";
}

Objective objective_from_name(const std::string& s) {
  if (s == "compression-lm" || s == "compression_lm") return Objective::compression_lm;
  if (s == "encode-decode" || s == "encode_decode") return Objective::encode_decode;
  throw config_error("unknown objective: " + s);
}

const char* train_phase_name(TrainPhase p) {
  return p == TrainPhase::pretrain_analog ? "pretrain-analog" : "finetune-analog";
}

void TrainConfig::validate() const {
  if (lr <= 0) throw config_error("train: lr must be positive");
  if (steps < 1) throw config_error("train: steps must be >= 1");
  if (batch_size < 1) throw config_error("train: batch_size must be >= 1");
  if (sample_len < 2) throw config_error("train: sample_len must be >= 2");
  if (val_every < 0 || val_samples < 1) throw config_error("train: bad validation cadence");
  if (ed_target_len < 0) throw config_error("train: bad encode-decode target length");
  RatioSampler s;
  s.mode = ratio_mode;
  s.candidates = ratio_candidates;
  s.fixed_alpha = fixed_ratio;
  s.validate();
}

template <typename T>
Val compression_lm_loss_graph(Tape<T>& tape, Model<T>& m, std::span<const int32_t> tokens,
                              const SegmentPlan& plan, MaskVariant variant) {
  plan.validate();
  if (static_cast<i64>(tokens.size()) != plan.total)
    throw contract_error("compression_lm_loss: token count does not match plan");
  if (plan.count() < 2)
    throw contract_error("compression_lm_loss: plan has a single segment, nothing to supervise");

  std::vector<BlockSpec> blocks;
  for (const Segment& s : plan.segments) blocks.push_back(BlockSpec{s.len(), s.k, s.alpha});
  auto g = forward_blocks<T>(tape, m, tokens, blocks, variant, nullptr);

  const i64 t = plan.total, len1 = plan.segments[0].len();
  std::vector<int32_t> targets(t, 0);
  std::vector<uint8_t> include(t, 0);
  for (i64 p = 0; p + 1 < t; ++p) {
    targets[p] = tokens[p + 1];
    include[p] = (p + 1 >= len1) ? 1 : 0;
  }
  return tape.cross_entropy_mean(g.logits, std::move(targets), std::move(include));
}

template <typename T>
double compression_lm_loss(Model<T>& m, std::span<const int32_t> tokens, const SegmentPlan& plan,
                           MaskVariant variant) {
  Tape<T> tape;
  Val loss = compression_lm_loss_graph(tape, m, tokens, plan, variant);
  return static_cast<double>(tape.value(loss).data[0]);
}

template <typename T>
Val encode_decode_loss_graph(Tape<T>& tape, Model<T>& m, std::span<const int32_t> input,
                             std::span<const int32_t> target, int alpha, MaskVariant variant) {
  if (input.empty()) throw contract_error("encode_decode_loss: empty input");
  if (target.empty()) throw contract_error("encode_decode_loss: empty target");
  if (static_cast<i64>(target.size()) > m.cfg.window)
    throw contract_error("encode_decode_loss: target longer than one window");
  if (alpha < 1) throw contract_error("encode_decode_loss: ratio must be >= 1");

  SegmentPlan plan = partition(static_cast<i64>(input.size()), m.cfg.window);
  std::vector<BlockSpec> blocks;
  for (Segment& s : plan.segments) {
    s.alpha = alpha;
    s.k = ceil_div(s.len(), alpha);
    blocks.push_back(BlockSpec{s.len(), s.k, alpha});
  }
  // Target rides along as a final readout block (no compression slots).
  blocks.push_back(BlockSpec{static_cast<i64>(target.size()), 0, 1});

  std::vector<int32_t> tokens(input.begin(), input.end());
  tokens.insert(tokens.end(), target.begin(), target.end());
  auto g = forward_blocks<T>(tape, m, tokens, blocks, variant, nullptr);

  const i64 t = static_cast<i64>(tokens.size()), in_len = static_cast<i64>(input.size());
  std::vector<int32_t> targets(t, 0);
  std::vector<uint8_t> include(t, 0);
  for (i64 p = 0; p + 1 < t; ++p) {
    targets[p] = tokens[p + 1];
    include[p] = (p + 1 >= in_len) ? 1 : 0;  // supervise target tokens only
  }
  return tape.cross_entropy_mean(g.logits, std::move(targets), std::move(include));
}

template <typename T>
double encode_decode_loss(Model<T>& m, std::span<const int32_t> input,
                          std::span<const int32_t> target, int alpha, MaskVariant variant) {
  Tape<T> tape;
  Val loss = encode_decode_loss_graph(tape, m, input, target, alpha, variant);
  return static_cast<double>(tape.value(loss).data[0]);
}

std::vector<int32_t> ByteCorpusSource::sample(Rng& rng) {
  i64 max_start = static_cast<i64>(corpus->size()) - sample_len;
  i64 start = max_start == 0 ? 0 : static_cast<i64>(rng.below(max_start + 1));
  return std::vector<int32_t>(corpus->begin() + start, corpus->begin() + start + sample_len);
}

template <typename T>
void Adam<T>::init(const std::vector<Tensor<T>*>& params) {
  t = 0;
  m1.clear();
  m2.clear();
  for (auto* p : params) {
    m1.emplace_back(p->data.size(), 0.0);
    m2.emplace_back(p->data.size(), 0.0);
  }
}

template <typename T>
void Adam<T>::step(const std::vector<Tensor<T>*>& params, double lr) {
  if (m1.size() != params.size()) throw contract_error("adam: not initialized for these params");
  ++t;
  double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor<T>& p = *params[i];
    if (p.grad.size() != p.data.size()) continue;  // no gradient flowed this step
    for (size_t j = 0; j < p.data.size(); ++j) {
      double g = static_cast<double>(p.grad[j]);
      m1[i][j] = beta1 * m1[i][j] + (1.0 - beta1) * g;
      m2[i][j] = beta2 * m2[i][j] + (1.0 - beta2) * g * g;
      double update = lr * (m1[i][j] / c1) / (std::sqrt(m2[i][j] / c2) + eps);
      p.data[j] = static_cast<T>(static_cast<double>(p.data[j]) - update);
    }
  }
}

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw io_error("cannot write " + path);
  out << "step,phase,train_loss,val_ppl,lr,objective\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%.8g", r.train_loss);
    out << r.step << "," << r.phase << "," << buf << ",";
    if (r.val_ppl) {
      std::snprintf(buf, sizeof(buf), "%.8g", *r.val_ppl);
      out << buf;
    }
    std::snprintf(buf, sizeof(buf), "%.8g", r.lr);
    out << "," << buf << "," << r.objective << "\n";
  }
  if (!out) throw io_error("write failed: " + path);
}

namespace {

// Shared training loop. `build` constructs the per-sample loss graph;
// `val_loss` scores one held-out sample.
template <typename T, typename BuildFn, typename ValFn>
TrainReport train_loop(Model<T>& m, SampleSource& source, const TrainConfig& cfg,
                       SampleSource* val_source, const std::string& objective_label,
                       const BuildFn& build, const ValFn& val_loss) {
  cfg.validate();
  std::vector<Tensor<T>*> params;
  for (auto& [name, p] : m.named_params())
    if (p->requires_grad) params.push_back(p);
  if (params.empty()) throw contract_error("train: no trainable parameters");

  Adam<T> opt;
  opt.init(params);
  Rng data_rng(derive_seed(cfg.seed, "train.data"));
  Rng plan_rng(derive_seed(cfg.seed, "train.plans"));

  // Fixed validation set, drawn once.
  std::vector<std::vector<int32_t>> val_set;
  if (cfg.val_every > 0 && val_source) {
    Rng val_rng(derive_seed(cfg.seed, "train.val"));
    for (i64 i = 0; i < cfg.val_samples; ++i) val_set.push_back(val_source->sample(val_rng));
  }
  auto run_validation = [&]() -> double {
    double acc = 0.0;
    for (size_t i = 0; i < val_set.size(); ++i) acc += val_loss(val_set[i], static_cast<i64>(i));
    return std::exp(acc / static_cast<double>(val_set.size()));
  };

  TrainReport report;
  const std::string phase = train_phase_name(cfg.phase);
  for (i64 step = 0; step < cfg.steps; ++step) {
    double lr_t = cfg.lr * (1.0 - static_cast<double>(step) / static_cast<double>(cfg.steps));
    for (auto* p : params) {
      p->ensure_grad();
      p->zero_grad();
    }
    double batch_loss = 0.0;
    for (i64 b = 0; b < cfg.batch_size; ++b) {
      std::vector<int32_t> tokens = source.sample(data_rng);
      Tape<T> tape;
      Val loss = build(tape, tokens, plan_rng);
      batch_loss += static_cast<double>(tape.value(loss).data[0]);
      Val scaled = tape.scale(loss, 1.0 / static_cast<double>(cfg.batch_size));
      tape.backward(scaled);
    }
    batch_loss /= static_cast<double>(cfg.batch_size);
    if (!std::isfinite(batch_loss))
      throw numeric_error("train: non-finite loss at step " + std::to_string(step) + " (" +
                          objective_label + ", lr " + std::to_string(lr_t) + ")");
    opt.step(params, lr_t);

    MetricsRow row;
    row.step = step;
    row.phase = phase;
    row.train_loss = batch_loss;
    row.lr = lr_t;
    row.objective = objective_label;
    bool last = (step + 1 == cfg.steps);
    if (!val_set.empty() && cfg.val_every > 0 && (step % cfg.val_every == 0 || last)) {
      row.val_ppl = run_validation();
      report.final_val_ppl = row.val_ppl;
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

}  // namespace

template <typename T>
TrainReport train(Model<T>& m, SampleSource& source, const TrainConfig& cfg,
                  SampleSource* val_source) {
  RatioSampler proto;
  proto.mode = cfg.ratio_mode;
  proto.candidates = cfg.ratio_candidates;
  proto.fixed_alpha = cfg.fixed_ratio;
  proto.validate();

  const i64 w = m.cfg.window;
  i64 ed_target = cfg.ed_target_len == 0 ? w : cfg.ed_target_len;

  auto build = [&, ed_target](Tape<T>& tape, const std::vector<int32_t>& tokens,
                              Rng& plan_rng) -> Val {
    if (cfg.objective == Objective::compression_lm) {
      RatioSampler s = proto;
      s.seed = plan_rng.next_u64();
      SegmentPlan plan = make_plan(static_cast<i64>(tokens.size()), w, s);
      return compression_lm_loss_graph(tape, m, tokens, plan, cfg.variant);
    }
    // Encode-decode: one ratio per sample; per-segment mode collapses to a
    // per-sample draw since the whole input shares one ratio by definition.
    int alpha = proto.fixed_alpha;
    if (proto.mode != RatioMode::monotonous)
      alpha = proto.candidates[plan_rng.below(proto.candidates.size())];
    i64 t = static_cast<i64>(tokens.size());
    if (t <= ed_target)
      throw contract_error("encode_decode: sample of " + std::to_string(t) +
                           " tokens cannot hold a target of " + std::to_string(ed_target));
    std::span<const int32_t> all(tokens.data(), tokens.size());
    return encode_decode_loss_graph(tape, m, all.first(t - ed_target), all.subspan(t - ed_target),
                                    alpha, cfg.variant);
  };

  // Validation is always the compression-lm metric with fixed monotonous x4
  // plans so different objectives produce comparable curves.
  auto val_loss = [&](const std::vector<int32_t>& tokens, i64 idx) {
    RatioSampler s;
    s.mode = RatioMode::monotonous;
    s.fixed_alpha = 4;
    s.seed = derive_seed(cfg.seed, "val.plan." + std::to_string(idx));
    SegmentPlan plan = make_plan(static_cast<i64>(tokens.size()), w, s);
    return compression_lm_loss(m, tokens, plan, cfg.variant);
  };

  return train_loop<T>(m, source, cfg, val_source, objective_name(cfg.objective), build, val_loss);
}

template <typename T>
TrainReport pretrain_base(Model<T>& m, SampleSource& source, const TrainConfig& cfg,
                          SampleSource* val_source) {
  m.mark_base_trainable();
  auto plain_loss_graph = [&](Tape<T>& tape, const std::vector<int32_t>& tokens, Rng&) -> Val {
    auto g = forward_blocks<T>(tape, m, tokens,
                               {BlockSpec{static_cast<i64>(tokens.size()), 0, 1}}, m.cfg.variant,
                               nullptr);
    i64 t = static_cast<i64>(tokens.size());
    std::vector<int32_t> targets(t, 0);
    std::vector<uint8_t> include(t, 0);
    for (i64 p = 0; p + 1 < t; ++p) {
      targets[p] = tokens[p + 1];
      include[p] = 1;
    }
    return tape.cross_entropy_mean(g.logits, std::move(targets), std::move(include));
  };
  auto val_loss = [&](const std::vector<int32_t>& tokens, i64) {
    Tape<T> tape;
    Rng unused(0);
    Val loss = plain_loss_graph(tape, tokens, unused);
    return static_cast<double>(tape.value(loss).data[0]);
  };

  TrainReport report;
  try {
    report = train_loop<T>(m, source, cfg, val_source, "plain_lm", plain_loss_graph, val_loss);
  } catch (...) {
    m.init_ug_from_base();
    throw;
  }
  // The freshly trained base becomes the frozen backbone; re-derive the ug
  // parameters from it and restore production flags.
  m.init_ug_from_base();
  return report;
}

template <typename T>
ModelSnapshot<T> snapshot_frozen(Model<T>& m, std::span<const int32_t> probe) {
  ModelSnapshot<T> snap;
  for (auto& [name, p] : m.named_params())
    if (!p->requires_grad) snap.frozen.emplace_back(name, *p);
  snap.probe.assign(probe.begin(), probe.end());
  if (!snap.probe.empty()) snap.probe_logits = plain_forward(m, probe);
  return snap;
}

template <typename T>
FreezeReport freeze_audit(Model<T>& m, const ModelSnapshot<T>& before) {
  FreezeReport report;
  auto params = m.named_params();
  for (const auto& [name, old] : before.frozen) {
    const Tensor<T>* now = nullptr;
    for (auto& [n, p] : params)
      if (n == name) now = p;
    if (!now || now->shape != old.shape ||
        std::memcmp(now->data.data(), old.data.data(), old.data.size() * sizeof(T)) != 0)
      report.drifted.push_back(name);
  }
  if (!before.probe.empty()) {
    Tensor<T> logits = plain_forward(m, before.probe);
    report.probe_drifted =
        logits.shape != before.probe_logits.shape ||
        std::memcmp(logits.data.data(), before.probe_logits.data.data(),
                    logits.data.size() * sizeof(T)) != 0;
  }
  return report;
}

#define UG_INSTANTIATE_TRAINER(T)                                                             \
  template Val compression_lm_loss_graph<T>(Tape<T>&, Model<T>&, std::span<const int32_t>,    \
                                            const SegmentPlan&, MaskVariant);                 \
  template double compression_lm_loss<T>(Model<T>&, std::span<const int32_t>,                 \
                                         const SegmentPlan&, MaskVariant);                    \
  template Val encode_decode_loss_graph<T>(Tape<T>&, Model<T>&, std::span<const int32_t>,     \
                                           std::span<const int32_t>, int, MaskVariant);       \
  template double encode_decode_loss<T>(Model<T>&, std::span<const int32_t>,                  \
                                        std::span<const int32_t>, int, MaskVariant);          \
  template struct Adam<T>;                                                                    \
  template TrainReport train<T>(Model<T>&, SampleSource&, const TrainConfig&, SampleSource*); \
  template TrainReport pretrain_base<T>(Model<T>&, SampleSource&, const TrainConfig&,         \
                                        SampleSource*);                                       \
  template ModelSnapshot<T> snapshot_frozen<T>(Model<T>&, std::span<const int32_t>);          \
  template FreezeReport freeze_audit<T>(Model<T>&, const ModelSnapshot<T>&);

UG_INSTANTIATE_TRAINER(float)
UG_INSTANTIATE_TRAINER(double)

}  // namespace ug
