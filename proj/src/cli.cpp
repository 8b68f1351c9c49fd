#include "ug/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "ug/compressor.hpp"
#include "ug/config.hpp"
#include "ug/corpus.hpp"
#include "ug/evalharness.hpp"
#include "ug/flops.hpp"
#include "ug/kernels.hpp"
#include "ug/model.hpp"
#include "ug/refmodel.hpp"
#include "ug/trainer.hpp"

namespace ug {

namespace {

namespace fs = std::filesystem;

std::string read_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot read file: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::string join_path(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

void ensure_out_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw io_error("cannot create output dir " + dir + ": " + ec.message());
}

// Dispatch a pipeline on the dtype a checkpoint (or config) asks for.
template <typename F>
int with_dtype(Dtype dt, F&& f) {
  if (dt == Dtype::f32) return f.template operator()<float>();
  return f.template operator()<double>();
}

std::vector<int32_t> load_corpus_tokens(const RunConfig& rc) {
  if (!rc.corpus_path.empty()) {
    std::vector<int32_t> toks = ingest_bytes(read_file_bytes(rc.corpus_path));
    if (toks.empty()) throw config_error("corpus file is empty: " + rc.corpus_path);
    return toks;
  }
  const i64 len = std::max<i64>(rc.train.sample_len * 64, 8192);
  return synth_tokens(derive_seed(rc.seed, "corpus"), len);
}

int cmd_train(const std::string& config_path, i64 pretrain_steps, bool on_task) {
  RunConfig rc = run_config_from_file(config_path);
  return with_dtype(rc.model.dtype, [&]<typename T>() {
    Model<T> m;
    if (!rc.checkpoint_path.empty()) {
      m = model_load<T>(rc.checkpoint_path);
    } else {
      m.cfg = rc.model;
      m.init_random(derive_seed(rc.seed, "model"));
    }

    std::vector<int32_t> corpus = load_corpus_tokens(rc);
    ByteCorpusSource corpus_source(corpus, rc.train.sample_len);
    KvTaskSource task_source(rc.task);
    SampleSource& source = on_task ? static_cast<SampleSource&>(task_source)
                                   : static_cast<SampleSource&>(corpus_source);

    ensure_out_dir(rc.out_dir);
    std::vector<MetricsRow> all_rows;
    if (pretrain_steps > 0) {
      // Warm up the frozen backbone on the same distribution the compression
      // phase will see; the circuits that read the cache live in base weights.
      TrainConfig pre = rc.train;
      pre.steps = pretrain_steps;
      pre.phase = TrainPhase::pretrain_analog;
      TrainReport rep = pretrain_base(m, source, pre, &source);
      all_rows.insert(all_rows.end(), rep.rows.begin(), rep.rows.end());
    }

    TrainReport rep = train(m, source, rc.train, &source);
    all_rows.insert(all_rows.end(), rep.rows.begin(), rep.rows.end());

    write_metrics_csv(join_path(rc.out_dir, "metrics.csv"), all_rows);
    model_save(join_path(rc.out_dir, "model.ugckpt"), m);
    if (rep.final_val_ppl)
      std::printf("final val_ppl %.6f\n", *rep.final_val_ppl);
    std::printf("wrote %s and %s\n", join_path(rc.out_dir, "metrics.csv").c_str(),
                join_path(rc.out_dir, "model.ugckpt").c_str());
    return 0;
  });
}

int cmd_eval(const std::string& config_path, const std::string& model_path,
             const std::string& metric, std::vector<int> ratios, i64 instances) {
  RunConfig rc = run_config_from_file(config_path);
  if (ratios.empty()) ratios = {2, 4, 8};
  for (int r : ratios)
    if (r < 1) throw config_error("eval: ratios must be >= 1");
  if (instances < 1) throw config_error("eval: instances must be >= 1");
  if (metric != "retrieval" && metric != "ppl")
    throw config_error("eval: metric must be retrieval or ppl");
  const std::string path = model_path.empty() ? rc.checkpoint_path : model_path;
  if (path.empty()) throw config_error("eval: no model checkpoint given");
  ModelConfig mc = checkpoint_config(path);
  return with_dtype(mc.dtype, [&]<typename T>() {
    Model<T> m = model_load<T>(path);
    if (metric == "retrieval") {
      KvTaskSpec spec = rc.task;
      std::vector<double> acc = eval_retrieval(m, spec, ratios, instances, rc.train.variant);
      std::printf("ratio,accuracy\n");
      for (size_t i = 0; i < ratios.size(); ++i)
        std::printf("%d,%.6f\n", ratios[i], acc[i]);
    } else {
      std::vector<int32_t> corpus = load_corpus_tokens(rc);
      PplProtocol proto;
      proto.n_samples = instances;
      proto.context_len = rc.task.context_len;
      proto.score_len = std::min<i64>(m.cfg.window, 32);
      proto.seed = derive_seed(rc.seed, "eval.ppl");
      std::printf("ratio,ppl\n");
      for (int r : ratios)
        std::printf("%d,%.6f\n", r, eval_ppl(m, corpus, r, proto, rc.train.variant));
      std::printf("vanilla,%.6f\n", eval_ppl_vanilla(m, corpus, proto));
    }
    return 0;
  });
}

int cmd_compress(const std::string& model_path, const std::string& input_path, int ratio,
                 const std::string& mask_name, const std::string& out_dir) {
  if (ratio < 1) throw config_error("compress: ratio must be >= 1");
  MaskVariant variant = mask_variant_from_name(mask_name);
  ModelConfig mc = checkpoint_config(model_path);
  return with_dtype(mc.dtype, [&]<typename T>() {
    Model<T> m = model_load<T>(model_path);
    std::vector<int32_t> tokens = ingest_bytes(read_file_bytes(input_path));
    if (tokens.empty()) throw config_error("compress: input file is empty");
    RatioSampler sampler{RatioMode::monotonous, {ratio}, ratio, 0};
    SegmentPlan plan = make_plan(static_cast<i64>(tokens.size()), m.cfg.window, sampler);
    CompressedCache<T> cache = compress_context(m, tokens, plan, variant);
    ensure_out_dir(out_dir);
    const std::string out = join_path(out_dir, "cache.ugc");
    cache_save(out, cache, m.cfg);
    std::printf("compressed %lld tokens into %lld cache slots (%llu matmul flops) -> %s\n",
                static_cast<long long>(cache.source_tokens), static_cast<long long>(cache.len()),
                static_cast<unsigned long long>(cache.flops_used), out.c_str());
    return 0;
  });
}

int cmd_score(const std::string& model_path, const std::string& cache_path,
              const std::string& input_path, int ratio, const std::string& mask_name) {
  if (ratio < 1) throw config_error("score: ratio must be >= 1");
  MaskVariant variant = mask_variant_from_name(mask_name);
  ModelConfig mc = checkpoint_config(model_path);
  return with_dtype(mc.dtype, [&]<typename T>() {
    Model<T> m = model_load<T>(model_path);
    CompressedCache<T> cache = cache_load<T>(cache_path, m.cfg);
    std::vector<int32_t> tokens = ingest_bytes(read_file_bytes(input_path));
    if (tokens.empty()) throw config_error("score: input file is empty");
    RatioSampler sampler{RatioMode::monotonous, {ratio}, ratio, 0};
    std::vector<double> nll = score_nll(m, cache, tokens, sampler, variant);
    double sum = 0.0;
    for (double v : nll) sum += v;
    double mean = sum / static_cast<double>(nll.size());
    std::printf("tokens=%zu mean_nll=%.6f ppl=%.6f\n", nll.size(), mean, std::exp(mean));
    return 0;
  });
}

int cmd_generate(const std::string& model_path, const std::string& cache_path,
                 const std::string& prompt, i64 n_new, double temperature, u64 seed, int ratio,
                 const std::string& mask_name) {
  if (n_new < 1) throw config_error("generate: need --n >= 1");
  if (ratio < 1) throw config_error("generate: ratio must be >= 1");
  if (temperature < 0) throw config_error("generate: temperature must be >= 0");
  MaskVariant variant = mask_variant_from_name(mask_name);
  ModelConfig mc = checkpoint_config(model_path);
  return with_dtype(mc.dtype, [&]<typename T>() {
    Model<T> m = model_load<T>(model_path);
    CompressedCache<T> cache;
    cache.init(m.cfg.layers, m.cfg.dim);
    if (!cache_path.empty()) cache = cache_load<T>(cache_path, m.cfg);
    if (cache.empty() && prompt.empty())
      throw config_error("generate: need a cache or a non-empty prompt to condition on");
    std::vector<int32_t> prompt_ids = ingest_bytes(prompt);
    GenMode mode;
    mode.greedy = temperature == 0.0;
    mode.temperature = temperature;
    mode.seed = seed;
    RatioSampler sampler{RatioMode::monotonous, {ratio}, ratio, derive_seed(seed, "gen.ratios")};
    std::vector<int32_t> out = generate(m, cache, prompt_ids, n_new, mode, sampler, variant);
    std::string text = detokenize(out);
    std::fwrite(text.data(), 1, text.size(), stdout);
    std::fputc('\n', stdout);
    return 0;
  });
}

int cmd_flops(i64 turns, i64 turn_len, const CostConfig& cost, const std::string& out_dir) {
  if (turns < 1 || turn_len < 1) throw config_error("flops: --turns and --turn-len must be >= 1");
  cost.validate();
  TurnSchedule schedule;
  schedule.turn_tokens.assign(turns, turn_len);
  ensure_out_dir(out_dir);
  const std::string out = join_path(out_dir, "flops.csv");
  write_flops_csv(out, cost, schedule);
  std::printf("wrote %s\n", out.c_str());
  return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& out_dir_flag) {
  RunConfig rc = run_config_from_file(config_path);
  const std::string out_dir = out_dir_flag.empty() ? rc.out_dir : out_dir_flag;
  AblationConfig ac;
  ac.model = rc.model;
  ac.train = rc.train;
  ac.task = rc.task;
  ac.cells = {
      {MaskVariant::stepwise, RatioMode::per_segment, rc.train.fixed_ratio},
      {MaskVariant::stepwise, RatioMode::monotonous, rc.train.fixed_ratio},
      {MaskVariant::segmentation, RatioMode::per_segment, rc.train.fixed_ratio},
      {MaskVariant::segmentation, RatioMode::monotonous, rc.train.fixed_ratio},
  };
  ac.eval_ratios = {2, 8};
  ac.eval_instances = 32;
  ac.eval_seed = derive_seed(rc.seed, "ablate.eval");
  return with_dtype(rc.model.dtype, [&]<typename T>() {
    std::vector<AblationRow> rows = run_ablation<T>(ac);
    ensure_out_dir(out_dir);
    const std::string out = join_path(out_dir, "ablation.csv");
    write_ablation_csv(out, rows, ac.eval_ratios);
    std::printf("wrote %s\n", out.c_str());
    return 0;
  });
}

void selftest_check(bool ok, const std::string& what) {
  if (!ok) throw contract_error("selftest failed: " + what);
  std::printf("ok %s\n", what.c_str());
}

int cmd_selftest() {
  // Kernel agreement: the parallel path must match the serial one bitwise.
  {
    Rng r(123);
    const i64 m = 64, k = 48, n = 80;
    Tensor<float> a = randn<float>({m, k}, r, 1.0), b = randn<float>({k, n}, r, 1.0);
    Tensor<float> c1({m, n}), c2({m, n});
    kern::gemm(a.data.data(), b.data.data(), c1.data.data(), m, k, n);
    kern::serial::gemm(a.data.data(), b.data.data(), c2.data.data(), m, k, n);
    selftest_check(c1.data == c2.data, "gemm parallel == serial (bitwise)");
  }

  // Mask shapes: every slot's receptive field follows the declared rule.
  {
    AttentionLayout layout{0, 4, 2};
    Mask ms = stepwise_mask(layout, 2);
    selftest_check(ms.row_cols(4) == std::vector<i64>({0, 1, 4}) &&
                       ms.row_cols(5) == std::vector<i64>({0, 1, 2, 3, 4, 5}),
                   "stepwise compression rows grow with their anchor");
    Mask mg = segmentation_mask(layout, 2);
    selftest_check(mg.row_cols(4) == std::vector<i64>({0, 1, 4}) &&
                       mg.row_cols(5) == std::vector<i64>({2, 3, 4, 5}),
                   "segmentation compression rows see only their slice");
    ms.validate();
    mg.validate();
    selftest_check(true, "mask invariants hold");
  }

  // Gradients: taped backward against central differences on a small model.
  {
    ModelConfig cfg;
    cfg.dim = 8;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.mlp_hidden = 16;
    cfg.vocab = 13;
    cfg.window = 4;
    cfg.dtype = Dtype::f64;
    Model<double> m;
    m.cfg = cfg;
    m.init_random(7);
    std::vector<int32_t> toks{1, 5, 3, 9, 2, 7};
    RatioSampler sampler{RatioMode::monotonous, {2}, 2, 0};
    SegmentPlan plan = make_plan(6, 4, sampler);
    auto build = [&](Tape<double>& tape) {
      return compression_lm_loss_graph(tape, m, toks, plan, MaskVariant::stepwise);
    };
    double err = grad_check(build, m.ug_params(), 1e-5);
    selftest_check(err < 1e-4, "loss gradients match finite differences");
  }

  // Streaming invariance: one-shot scoring equals chunked scoring.
  {
    ModelConfig cfg;
    cfg.dim = 16;
    cfg.layers = 2;
    cfg.heads = 2;
    cfg.mlp_hidden = 32;
    cfg.vocab = kByteVocab + 1;
    cfg.window = 8;
    Model<float> m;
    m.cfg = cfg;
    m.init_random(11);
    std::vector<int32_t> ctx = synth_tokens(5, 16), cont = synth_tokens(6, 20);
    RatioSampler sampler{RatioMode::monotonous, {4}, 4, 0};
    SegmentPlan plan = make_plan(16, 8, sampler);
    CompressedCache<float> cache = compress_context(m, ctx, plan, MaskVariant::stepwise);
    std::vector<double> once = score_nll(m, cache, cont, sampler, MaskVariant::stepwise);
    DecodeState<float> st(m, cache, sampler, MaskVariant::stepwise);
    std::vector<double> parts = st.score(std::span<const int32_t>(cont.data(), 7));
    auto rest = st.score(std::span<const int32_t>(cont.data() + 7, cont.size() - 7));
    parts.insert(parts.end(), rest.begin(), rest.end());
    selftest_check(once == parts, "chunked scoring equals one-shot scoring");
  }

  std::printf("selftest passed\n");
  return 0;
}

}  // namespace

int cli_run(int argc, const char* const* argv) {
  CLI::App app{"progressive context compression for a byte-level language model"};
  app.require_subcommand(1);

  std::string config_path, model_path, cache_path, input_path, out_dir = ".", mask_name =
      "stepwise";
  std::string metric = "retrieval", prompt;
  std::vector<int> ratios;
  i64 pretrain_steps = 0, instances = 32, n_new = 32, turns = 3, turn_len = 32;
  int ratio = 4;
  double temperature = 0.0;
  u64 seed = 1;
  bool on_task = false;
  CostConfig cost;

  CLI::App* c_train = app.add_subcommand("train", "train compression parameters");
  c_train->add_option("--config", config_path, "run configuration file")->required();
  c_train->add_option("--pretrain", pretrain_steps, "base-parameter warmup steps first");
  c_train->add_flag("--task", on_task, "train on the key-value retrieval task");

  CLI::App* c_eval = app.add_subcommand("eval", "evaluate a checkpoint");
  c_eval->add_option("--config", config_path, "run configuration file")->required();
  c_eval->add_option("--model", model_path, "checkpoint path (overrides config)");
  c_eval->add_option("--metric", metric, "retrieval | ppl");
  c_eval->add_option("--ratios", ratios, "compression ratios to probe")->delimiter(',');
  c_eval->add_option("--instances", instances, "instances / samples per cell");

  CLI::App* c_compress = app.add_subcommand("compress", "compress a byte file into a cache");
  c_compress->add_option("--model", model_path, "checkpoint path")->required();
  c_compress->add_option("--input", input_path, "byte file to compress")->required();
  c_compress->add_option("--ratio", ratio, "compression ratio");
  c_compress->add_option("--mask", mask_name, "stepwise | segmentation | full_coverage");
  c_compress->add_option("--out", out_dir, "output directory");

  CLI::App* c_score = app.add_subcommand("score", "teacher-forced NLL of a continuation");
  c_score->add_option("--model", model_path, "checkpoint path")->required();
  c_score->add_option("--cache", cache_path, "compressed cache file")->required();
  c_score->add_option("--input", input_path, "continuation byte file")->required();
  c_score->add_option("--ratio", ratio, "ratio for mid-scoring compressions");
  c_score->add_option("--mask", mask_name, "mask variant");

  CLI::App* c_generate = app.add_subcommand("generate", "sample a continuation");
  c_generate->add_option("--model", model_path, "checkpoint path")->required();
  c_generate->add_option("--cache", cache_path, "compressed cache file");
  c_generate->add_option("--prompt", prompt, "prompt text");
  c_generate->add_option("--n", n_new, "tokens to generate");
  c_generate->add_option("--temperature", temperature, "0 = greedy");
  c_generate->add_option("--seed", seed, "sampling seed");
  c_generate->add_option("--ratio", ratio, "ratio for mid-generation compressions");
  c_generate->add_option("--mask", mask_name, "mask variant");

  CLI::App* c_flops = app.add_subcommand("flops", "progressive vs static cost table");
  c_flops->add_option("--turns", turns, "number of turns");
  c_flops->add_option("--turn-len", turn_len, "new tokens per turn");
  c_flops->add_option("--dim", cost.dim, "model width");
  c_flops->add_option("--layers", cost.layers, "layer count");
  c_flops->add_option("--heads", cost.heads, "head count");
  c_flops->add_option("--mlp", cost.mlp_hidden, "MLP hidden width");
  c_flops->add_option("--vocab", cost.vocab, "vocabulary size");
  c_flops->add_option("--window", cost.window, "window size");
  c_flops->add_option("--alpha", cost.alpha, "compression ratio");
  c_flops->add_option("--out", out_dir, "output directory");

  CLI::App* c_ablate = app.add_subcommand("ablate", "mask x ratio-sampling ablation grid");
  c_ablate->add_option("--config", config_path, "run configuration file")->required();
  c_ablate->add_option("--out", out_dir, "output directory (overrides config)");

  app.add_subcommand("selftest", "built-in oracle checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);  // --help and friends
  } catch (const CLI::ParseError& e) {
    app.exit(e);  // prints the message and usage hint
    return 2;
  }

  try {
    if (c_train->parsed()) return cmd_train(config_path, pretrain_steps, on_task);
    if (c_eval->parsed()) return cmd_eval(config_path, model_path, metric, ratios, instances);
    if (c_compress->parsed())
      return cmd_compress(model_path, input_path, ratio, mask_name, out_dir);
    if (c_score->parsed()) return cmd_score(model_path, cache_path, input_path, ratio, mask_name);
    if (c_generate->parsed())
      return cmd_generate(model_path, cache_path, prompt, n_new, temperature, seed, ratio,
                          mask_name);
    if (c_flops->parsed()) return cmd_flops(turns, turn_len, cost, out_dir);
    if (c_ablate->parsed()) return cmd_ablate(config_path, out_dir);
    return cmd_selftest();
  } catch (const config_error& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}

}  // namespace ug
