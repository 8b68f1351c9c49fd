#include "ug/config.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

namespace ug {

namespace {

std::string trim(std::string_view s) {
  size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return std::string(s.substr(a, b - a));
}

i64 to_i64(const std::string& v, const std::string& key) {
  try {
    size_t used = 0;
    i64 x = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw config_error("bad integer for " + key + ": " + v);
  }
}

u64 to_u64(const std::string& v, const std::string& key) {
  try {
    size_t used = 0;
    u64 x = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw config_error("bad unsigned integer for " + key + ": " + v);
  }
}

double to_double(const std::string& v, const std::string& key) {
  try {
    size_t used = 0;
    double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw config_error("bad number for " + key + ": " + v);
  }
}

std::vector<int> to_int_list(const std::string& v, const std::string& key) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) throw config_error("empty element in " + key + ": " + v);
    out.push_back(static_cast<int>(to_i64(item, key)));
  }
  if (out.empty()) throw config_error("empty list for " + key);
  return out;
}

KvTaskSpec::Target target_from_name(const std::string& v, const std::string& key) {
  if (v == "first") return KvTaskSpec::Target::first_pair;
  if (v == "random") return KvTaskSpec::Target::random_pair;
  if (v == "depth") return KvTaskSpec::Target::by_depth;
  throw config_error("bad target policy for " + key + ": " + v +
                     " (want first | random | depth)");
}

}  // namespace

std::vector<std::pair<std::string, std::string>> parse_kv_text(std::string_view text) {
  std::vector<std::pair<std::string, std::string>> out;
  size_t pos = 0;
  int line_no = 0;
  while (pos <= text.size()) {
    size_t nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? nl : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    size_t hash = line.find('#');
    if (hash != std::string_view::npos) line = line.substr(0, hash);
    std::string stripped = trim(line);
    if (stripped.empty()) continue;
    size_t eq = stripped.find('=');
    if (eq == std::string::npos)
      throw config_error("config line " + std::to_string(line_no) + ": expected key=value, got '" +
                         stripped + "'");
    std::string key = trim(std::string_view(stripped).substr(0, eq));
    std::string val = trim(std::string_view(stripped).substr(eq + 1));
    if (key.empty()) throw config_error("config line " + std::to_string(line_no) + ": empty key");
    out.emplace_back(std::move(key), std::move(val));
  }
  return out;
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  task.validate_against(model);
  if (out_dir.empty()) throw config_error("run.out_dir must not be empty");
}

RunConfig run_config_from_text(std::string_view text) {
  RunConfig rc;
  std::vector<std::pair<std::string, std::string>> model_kv;
  bool train_seed_set = false, task_seed_set = false;

  for (const auto& [k, v] : parse_kv_text(text)) {
    if (k.rfind("model.", 0) == 0) {
      model_kv.emplace_back(k, v);
    } else if (k == "train.objective") rc.train.objective = objective_from_name(v);
    else if (k == "train.lr") rc.train.lr = to_double(v, k);
    else if (k == "train.steps") rc.train.steps = to_i64(v, k);
    else if (k == "train.batch_size") rc.train.batch_size = to_i64(v, k);
    else if (k == "train.sample_len") rc.train.sample_len = to_i64(v, k);
    else if (k == "train.ratio_mode") rc.train.ratio_mode = ratio_mode_from_name(v);
    else if (k == "train.ratio_candidates") rc.train.ratio_candidates = to_int_list(v, k);
    else if (k == "train.fixed_ratio") rc.train.fixed_ratio = static_cast<int>(to_i64(v, k));
    else if (k == "train.mask") rc.train.variant = mask_variant_from_name(v);
    else if (k == "train.seed") { rc.train.seed = to_u64(v, k); train_seed_set = true; }
    else if (k == "train.val_every") rc.train.val_every = to_i64(v, k);
    else if (k == "train.val_samples") rc.train.val_samples = to_i64(v, k);
    else if (k == "train.ed_target_len") rc.train.ed_target_len = to_i64(v, k);
    else if (k == "task.n_pairs") rc.task.n_pairs = to_i64(v, k);
    else if (k == "task.key_len") rc.task.key_len = to_i64(v, k);
    else if (k == "task.value_len") rc.task.value_len = to_i64(v, k);
    else if (k == "task.context_len") rc.task.context_len = to_i64(v, k);
    else if (k == "task.target") rc.task.target = target_from_name(v, k);
    else if (k == "task.depth") rc.task.depth = to_i64(v, k);
    else if (k == "task.seed") { rc.task.seed = to_u64(v, k); task_seed_set = true; }
    else if (k == "run.corpus") rc.corpus_path = v;
    else if (k == "run.checkpoint") rc.checkpoint_path = v;
    else if (k == "run.cache") rc.cache_path = v;
    else if (k == "run.out_dir") rc.out_dir = v;
    else if (k == "run.seed") rc.seed = to_u64(v, k);
    else throw config_error("unknown config key: " + k);
  }

  if (!model_kv.empty()) {
    // Let unspecified model keys keep their defaults.
    auto defaults = rc.model.to_kv();
    for (const auto& [k, v] : model_kv) {
      bool known = false;
      for (auto& [dk, dv] : defaults)
        if (dk == k) { dv = v; known = true; break; }
      if (!known) throw config_error("unknown config key: " + k);
    }
    rc.model = ModelConfig::from_kv(defaults);
  }

  if (!train_seed_set) rc.train.seed = derive_seed(rc.seed, "train");
  if (!task_seed_set) rc.task.seed = derive_seed(rc.seed, "task");
  rc.validate();
  return rc;
}

RunConfig run_config_from_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw config_error("cannot read config file: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return run_config_from_text(ss.str());
}

}  // namespace ug
