#include <doctest.h>

#include <string>

#include "test_util.hpp"
#include "ug/config.hpp"

using namespace ug;

TEST_CASE("key=value parsing handles comments, blanks and spacing") {
  auto kv = parse_kv_text(
      "# leading comment\n"
      "\n"
      "  model.dim = 64   \n"
      "train.lr=0.01  # inline comment\n"
      "run.out_dir = results/run a\n");
  REQUIRE(kv.size() == 3);
  CHECK(kv[0] == std::pair<std::string, std::string>{"model.dim", "64"});
  CHECK(kv[1] == std::pair<std::string, std::string>{"train.lr", "0.01"});
  // Values keep interior spaces, only the ends are trimmed.
  CHECK(kv[2].second == "results/run a");

  CHECK(parse_kv_text("").empty());
  CHECK(parse_kv_text("   \n# only noise\n\n").empty());
  CHECK_THROWS_AS(parse_kv_text("no equals sign here\n"), config_error);
  CHECK_THROWS_AS(parse_kv_text("= value without key\n"), config_error);
}

TEST_CASE("an empty config yields validated defaults") {
  RunConfig rc = run_config_from_text("");
  CHECK(rc.seed == 1);
  CHECK(rc.out_dir == ".");
  CHECK_NOTHROW(rc.validate());
}

TEST_CASE("every section key lands in the right field") {
  RunConfig rc = run_config_from_text(
      "model.dim = 64\n"
      "model.layers = 3\n"
      "model.heads = 4\n"
      "model.mlp_hidden = 96\n"
      "model.vocab = 300\n"
      "model.window = 16\n"
      "model.mask = segmentation\n"
      "train.objective = encode-decode\n"
      "train.lr = 0.002\n"
      "train.steps = 7\n"
      "train.batch_size = 3\n"
      "train.sample_len = 48\n"
      "train.ratio_mode = monotonous\n"
      "train.ratio_candidates = 2, 4, 8\n"
      "train.fixed_ratio = 8\n"
      "train.mask = full_coverage\n"
      "train.seed = 77\n"
      "train.val_every = 5\n"
      "train.val_samples = 2\n"
      "train.ed_target_len = 6\n"
      "task.n_pairs = 3\n"
      "task.key_len = 2\n"
      "task.value_len = 3\n"
      "task.context_len = 80\n"
      "task.target = depth\n"
      "task.depth = 1\n"
      "task.seed = 88\n"
      "run.corpus = corpus.bin\n"
      "run.checkpoint = model.ugckpt\n"
      "run.cache = cache.ugc\n"
      "run.out_dir = out\n"
      "run.seed = 99\n");
  CHECK(rc.model.dim == 64);
  CHECK(rc.model.layers == 3);
  CHECK(rc.model.heads == 4);
  CHECK(rc.model.mlp_hidden == 96);
  CHECK(rc.model.vocab == 300);
  CHECK(rc.model.window == 16);
  CHECK(rc.model.variant == MaskVariant::segmentation);
  CHECK(rc.train.objective == Objective::encode_decode);
  CHECK(rc.train.lr == doctest::Approx(0.002));
  CHECK(rc.train.steps == 7);
  CHECK(rc.train.batch_size == 3);
  CHECK(rc.train.sample_len == 48);
  CHECK(rc.train.ratio_mode == RatioMode::monotonous);
  CHECK(rc.train.ratio_candidates == std::vector<int>{2, 4, 8});
  CHECK(rc.train.fixed_ratio == 8);
  CHECK(rc.train.variant == MaskVariant::full_coverage);
  CHECK(rc.train.seed == 77);
  CHECK(rc.train.val_every == 5);
  CHECK(rc.train.val_samples == 2);
  CHECK(rc.train.ed_target_len == 6);
  CHECK(rc.task.n_pairs == 3);
  CHECK(rc.task.key_len == 2);
  CHECK(rc.task.value_len == 3);
  CHECK(rc.task.context_len == 80);
  CHECK(rc.task.target == KvTaskSpec::Target::by_depth);
  CHECK(rc.task.depth == 1);
  CHECK(rc.task.seed == 88);
  CHECK(rc.corpus_path == "corpus.bin");
  CHECK(rc.checkpoint_path == "model.ugckpt");
  CHECK(rc.cache_path == "cache.ugc");
  CHECK(rc.out_dir == "out");
  CHECK(rc.seed == 99);
}

TEST_CASE("partial model overrides keep the other model defaults") {
  ModelConfig def;
  RunConfig rc = run_config_from_text("model.dim = 64\nmodel.heads = 8\n");
  CHECK(rc.model.dim == 64);
  CHECK(rc.model.heads == 8);
  CHECK(rc.model.layers == def.layers);
  CHECK(rc.model.window == def.window);
  CHECK(rc.model.vocab == def.vocab);
  CHECK(rc.model.norm_eps == doctest::Approx(def.norm_eps));
}

TEST_CASE("component seeds derive from the run seed unless pinned") {
  RunConfig rc = run_config_from_text("run.seed = 123\n");
  CHECK(rc.train.seed == derive_seed(123, "train"));
  CHECK(rc.task.seed == derive_seed(123, "task"));

  RunConfig pinned = run_config_from_text("run.seed = 123\ntrain.seed = 5\n");
  CHECK(pinned.train.seed == 5);
  CHECK(pinned.task.seed == derive_seed(123, "task"));

  // Key order must not matter for the derivation.
  RunConfig swapped = run_config_from_text("train.steps = 9\nrun.seed = 123\n");
  CHECK(swapped.train.seed == derive_seed(123, "train"));
}

TEST_CASE("unknown keys are rejected by name") {
  try {
    run_config_from_text("train.momentum = 0.9\n");
    FAIL("expected config_error");
  } catch (const config_error& e) {
    CHECK(std::string(e.what()).find("unknown config key: train.momentum") != std::string::npos);
  }
  CHECK_THROWS_AS(run_config_from_text("model.colour = red\n"), config_error);
  CHECK_THROWS_AS(run_config_from_text("banana = 3\n"), config_error);
}

TEST_CASE("malformed values are config errors, not crashes") {
  CHECK_THROWS_AS(run_config_from_text("train.steps = ten\n"), config_error);
  CHECK_THROWS_AS(run_config_from_text("train.lr = fast\n"), config_error);
  CHECK_THROWS_AS(run_config_from_text("train.steps = 7x\n"), config_error);
  CHECK_THROWS_AS(run_config_from_text("train.ratio_candidates = 2,,4\n"), config_error);
  CHECK_THROWS_AS(run_config_from_text("task.target = middle\n"), config_error);
  CHECK_THROWS_AS(run_config_from_text("train.mask = diagonal\n"), config_error);
  CHECK_THROWS_AS(run_config_from_text("train.ratio_mode = sometimes\n"), config_error);
  CHECK_THROWS_AS(run_config_from_text("model.dtype = f16\n"), config_error);
}

TEST_CASE("cross-field validation runs before any config is returned") {
  // dim not divisible by heads
  CHECK_THROWS_AS(run_config_from_text("model.dim = 30\nmodel.heads = 4\n"), config_error);
  // task instance too long for the model's training regime
  CHECK_THROWS_AS(run_config_from_text("model.window = 4\ntask.context_len = 90\n"),
                  config_error);
  CHECK_THROWS_AS(run_config_from_text("run.out_dir =\n"), config_error);
  CHECK_THROWS_AS(run_config_from_text("train.steps = 0\n"), config_error);
}

TEST_CASE("configs load from files with the same semantics") {
  ugtest::TempDir dir;
  std::string path = dir.file("run.cfg");
  ugtest::write_file(path, "run.seed = 42\nmodel.dim = 64\n# done\n");
  RunConfig rc = run_config_from_file(path);
  CHECK(rc.seed == 42);
  CHECK(rc.model.dim == 64);
  CHECK(rc.train.seed == derive_seed(42, "train"));
  CHECK_THROWS_AS(run_config_from_file(dir.file("missing.cfg")), config_error);
}
