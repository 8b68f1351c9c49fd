#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ug/evalharness.hpp"
#include "ug/model.hpp"
#include "ug/trainer.hpp"

namespace ug {

// Flat key=value run configuration with section prefixes (model., train.,
// task., run.). Unknown keys are errors; everything is validated before any
// work starts. Seeds left unset derive from the root run.seed by component
// name.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  KvTaskSpec task;
  std::string corpus_path;
  std::string checkpoint_path;
  std::string cache_path;
  std::string out_dir = ".";
  u64 seed = 1;

  void validate() const;
};

// Parses "key = value" lines; '#' starts a comment, blank lines are skipped.
std::vector<std::pair<std::string, std::string>> parse_kv_text(std::string_view text);

RunConfig run_config_from_text(std::string_view text);
RunConfig run_config_from_file(const std::string& path);

}  // namespace ug
