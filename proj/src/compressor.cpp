#include "ug/compressor.hpp"

#include <cmath>

namespace ug {

namespace {

i64 to_i64(const std::string& s, const char* what) {
  try {
    size_t used = 0;
    i64 v = std::stoll(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw io_error(std::string("cache: bad ") + what + ": " + s);
  }
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  size_t start = 0;
  while (true) {
    size_t c = s.find(',', start);
    if (c == std::string::npos) {
      out.push_back(s.substr(start));
      break;
    }
    out.push_back(s.substr(start, c - start));
    start = c + 1;
  }
  return out;
}

}  // namespace

template <typename T>
void CompressedCache<T>::init(i64 layers, i64 dim) {
  k_layers.assign(layers, Tensor<T>({0, dim}));
  v_layers.assign(layers, Tensor<T>({0, dim}));
  log.clear();
  source_tokens = 0;
  boundary_logits = Tensor<T>();
  flops_used = 0;
}

template <typename T>
CacheView<T> CompressedCache<T>::view() {
  CacheView<T> v;
  v.len = len();
  for (auto& k : k_layers) v.k.push_back(&k);
  for (auto& val : v_layers) v.v.push_back(&val);
  return v;
}

template <typename T>
void CompressedCache<T>::check_consistent() const {
  i64 total = 0;
  for (const auto& s : log) total += s.k;
  for (const auto& k : k_layers)
    if (k.rows() != total) throw shape_error("cache: K rows disagree with segment log");
  for (const auto& v : v_layers)
    if (v.rows() != total) throw shape_error("cache: V rows disagree with segment log");
}

namespace {

template <typename T>
Tensor<T> append_rows(const Tensor<T>& base, const Tensor<T>& extra) {
  if (base.cols() != extra.cols()) throw shape_error("cache append: column mismatch");
  Tensor<T> out({base.rows() + extra.rows(), base.cols()});
  std::copy(base.data.begin(), base.data.end(), out.data.begin());
  std::copy(extra.data.begin(), extra.data.end(), out.data.begin() + base.numel());
  return out;
}

}  // namespace

template <typename T>
void compress_append(Model<T>& m, CompressedCache<T>& cache, std::span<const int32_t> tokens,
                     int alpha, MaskVariant variant) {
  const i64 n = static_cast<i64>(tokens.size());
  if (n < 1) throw contract_error("compress_append: empty segment");
  if (n > m.cfg.window)
    throw contract_error("window overflow: segment of " + std::to_string(n) +
                         " tokens exceeds window " + std::to_string(m.cfg.window));
  if (alpha < 1) throw contract_error("compress_append: ratio must be >= 1");
  if (cache.k_layers.empty()) cache.init(m.cfg.layers, m.cfg.dim);
  if (cache.k_layers.size() != static_cast<size_t>(m.cfg.layers))
    throw shape_error("compress_append: cache layer count does not match model");

  const i64 k = ceil_div(n, alpha);
  CacheView<T> view = cache.view();
  SegmentForward<T> fw = model_forward(m, tokens, k, cache.empty() ? nullptr : &view, variant, alpha);

  for (i64 l = 0; l < m.cfg.layers; ++l) {
    cache.k_layers[l] = append_rows(cache.k_layers[l], fw.k_ug[l]);
    cache.v_layers[l] = append_rows(cache.v_layers[l], fw.v_ug[l]);
  }
  typename CompressedCache<T>::SegmentRecord rec;
  rec.alpha = alpha;
  rec.k = k;
  rec.src_start = cache.source_tokens + 1;
  rec.src_end = cache.source_tokens + n;
  cache.log.push_back(rec);
  cache.source_tokens += n;
  // Prediction for the first token after this window, kept so decoding can
  // resume once the raw window is gone.
  Tensor<T> last({1, m.cfg.vocab});
  std::copy(fw.logits.data.end() - m.cfg.vocab, fw.logits.data.end(), last.data.begin());
  cache.boundary_logits = std::move(last);
  cache.flops_used += fw.flops;
  cache.check_consistent();
}

template <typename T>
CompressedCache<T> compress_context(Model<T>& m, std::span<const int32_t> tokens,
                                    const SegmentPlan& plan, MaskVariant variant) {
  plan.validate();
  if (static_cast<i64>(tokens.size()) != plan.total)
    throw contract_error("compress_context: " + std::to_string(tokens.size()) +
                         " tokens for a plan of " + std::to_string(plan.total));
  if (plan.window != m.cfg.window)
    throw contract_error("compress_context: plan window " + std::to_string(plan.window) +
                         " does not match model window " + std::to_string(m.cfg.window));
  CompressedCache<T> cache;
  cache.init(m.cfg.layers, m.cfg.dim);
  for (const Segment& seg : plan.segments)
    compress_append(m, cache, tokens.subspan(seg.start - 1, seg.len()), seg.alpha, variant);
  return cache;
}

template <typename T>
DecodeState<T>::DecodeState(Model<T>& m, const CompressedCache<T>& start, RatioSampler s,
                            MaskVariant v)
    : model(&m), cache(start), sampler(std::move(s)), variant(v) {
  if (cache.k_layers.empty()) cache.init(m.cfg.layers, m.cfg.dim);
  // Session draws its ratios from one stream seeded off the sampler seed.
  sampler.validate();
}

template <typename T>
Tensor<T> DecodeState<T>::next_logits() {
  if (tail.empty()) {
    if (cache.boundary_logits.numel() == 0)
      throw contract_error("decode: nothing to condition on (empty cache and tail)");
    return cache.boundary_logits;
  }
  CacheView<T> view = cache.view();
  SegmentForward<T> fw =
      model_forward(*model, std::span<const int32_t>(tail.data(), tail.size()), 0,
                    cache.empty() ? nullptr : &view, variant, 1);
  Tensor<T> out({1, model->cfg.vocab});
  std::copy(fw.logits.data.end() - model->cfg.vocab, fw.logits.data.end(), out.data.begin());
  cache.flops_used += fw.flops;
  return out;
}

template <typename T>
void DecodeState<T>::push(int32_t token) {
  tail.push_back(token);
  if (static_cast<i64>(tail.size()) == model->cfg.window) {
    // Window complete: fold it into the cache. The boundary logits recorded
    // by the append equal the k=0 readout at the same position, so the next
    // prediction is unchanged by the fold.
    RatioSampler step = sampler;
    step.seed = Rng(sampler.seed).split(cache.log.size()).state;
    int alpha = assign_ratios(partition(model->cfg.window, model->cfg.window), step)
                    .segments[0]
                    .alpha;
    compress_append(*model, cache, std::span<const int32_t>(tail.data(), tail.size()), alpha,
                    variant);
    tail.clear();
  }
}

template <typename T>
std::vector<double> DecodeState<T>::score(std::span<const int32_t> tokens) {
  if (tokens.empty()) throw contract_error("score: empty continuation");
  std::vector<double> nll;
  nll.reserve(tokens.size());
  const i64 V = model->cfg.vocab;
  for (int32_t tok : tokens) {
    if (tok < 0 || tok >= V) throw contract_error("score: token id outside vocab");
    Tensor<T> logits = next_logits();
    const T* row = logits.data.data();
    double mx = static_cast<double>(row[0]);
    for (i64 c = 1; c < V; ++c) mx = std::max(mx, static_cast<double>(row[c]));
    double lse = 0.0;
    for (i64 c = 0; c < V; ++c) lse += std::exp(static_cast<double>(row[c]) - mx);
    lse = mx + std::log(lse);
    nll.push_back(lse - static_cast<double>(row[tok]));
    push(tok);
  }
  return nll;
}

template <typename T>
std::vector<double> score_nll(Model<T>& m, const CompressedCache<T>& cache,
                              std::span<const int32_t> continuation, const RatioSampler& sampler,
                              MaskVariant variant) {
  DecodeState<T> state(m, cache, sampler, variant);
  return state.score(continuation);
}

template <typename T>
std::vector<int32_t> generate(Model<T>& m, const CompressedCache<T>& cache,
                              std::span<const int32_t> prompt, i64 max_new, const GenMode& mode,
                              const RatioSampler& sampler, MaskVariant variant) {
  if (max_new < 1) throw contract_error("generate: max_new must be >= 1");
  DecodeState<T> state(m, cache, sampler, variant);
  for (int32_t tok : prompt) state.push(tok);

  Rng rng(Rng(mode.seed).split("generate").state);
  const i64 V = m.cfg.vocab;
  std::vector<int32_t> out;
  out.reserve(max_new);
  for (i64 i = 0; i < max_new; ++i) {
    Tensor<T> logits = state.next_logits();
    const T* row = logits.data.data();
    int32_t pick = 0;
    if (mode.greedy) {
      for (i64 c = 1; c < V; ++c)
        if (row[c] > row[pick]) pick = static_cast<int32_t>(c);
    } else {
      if (mode.temperature <= 0) throw contract_error("generate: temperature must be positive");
      double mx = static_cast<double>(row[0]);
      for (i64 c = 1; c < V; ++c) mx = std::max(mx, static_cast<double>(row[c]));
      std::vector<double> p(V);
      double sum = 0.0;
      for (i64 c = 0; c < V; ++c) {
        p[c] = std::exp((static_cast<double>(row[c]) - mx) / mode.temperature);
        sum += p[c];
      }
      double u = rng.uniform() * sum, acc = 0.0;
      pick = static_cast<int32_t>(V - 1);
      for (i64 c = 0; c < V; ++c) {
        acc += p[c];
        if (u < acc) {
          pick = static_cast<int32_t>(c);
          break;
        }
      }
    }
    out.push_back(pick);
    state.push(pick);
  }
  return out;
}

template <typename T>
void cache_save(const std::string& path, const CompressedCache<T>& cache, const ModelConfig& cfg) {
  cache.check_consistent();
  TensorFile f;
  f.magic = kCacheMagic;
  f.set("cache.dim", std::to_string(cfg.dim));
  f.set("cache.layers", std::to_string(cfg.layers));
  f.set("cache.dtype", dtype_name(dtype_of<T>()));
  f.set("cache.source_tokens", std::to_string(cache.source_tokens));
  for (size_t i = 0; i < cache.log.size(); ++i) {
    const auto& s = cache.log[i];
    f.set("cache.segment." + std::to_string(i),
          std::to_string(s.alpha) + "," + std::to_string(s.k) + "," + std::to_string(s.src_start) +
              "," + std::to_string(s.src_end));
  }
  for (size_t l = 0; l < cache.k_layers.size(); ++l) {
    f.add_tensor("k_ca.layer" + std::to_string(l), cache.k_layers[l], false);
    f.add_tensor("v_ca.layer" + std::to_string(l), cache.v_layers[l], false);
  }
  if (cache.boundary_logits.numel() > 0)
    f.add_tensor("boundary_logits", cache.boundary_logits, false);
  save_tensor_file(path, f);
}

template <typename T>
CompressedCache<T> cache_load(const std::string& path, const ModelConfig& cfg) {
  TensorFile f = load_tensor_file(path, kCacheMagic);
  if (to_i64(f.get("cache.dim"), "dim") != cfg.dim ||
      to_i64(f.get("cache.layers"), "layers") != cfg.layers)
    throw io_error(path + ": cache geometry does not match model");
  if (f.get("cache.dtype") != dtype_name(dtype_of<T>()))
    throw io_error(path + ": cache dtype is " + f.get("cache.dtype"));
  CompressedCache<T> cache;
  cache.init(cfg.layers, cfg.dim);
  cache.source_tokens = to_i64(f.get("cache.source_tokens"), "source_tokens");
  for (size_t i = 0;; ++i) {
    const std::string* s = f.find("cache.segment." + std::to_string(i));
    if (!s) break;
    auto parts = split_commas(*s);
    if (parts.size() != 4) throw io_error(path + ": malformed segment record");
    typename CompressedCache<T>::SegmentRecord rec;
    rec.alpha = static_cast<int>(to_i64(parts[0], "segment ratio"));
    rec.k = to_i64(parts[1], "segment k");
    rec.src_start = to_i64(parts[2], "segment start");
    rec.src_end = to_i64(parts[3], "segment end");
    cache.log.push_back(rec);
  }
  for (i64 l = 0; l < cfg.layers; ++l) {
    cache.k_layers[l] = f.get_tensor<T>("k_ca.layer" + std::to_string(l));
    cache.v_layers[l] = f.get_tensor<T>("v_ca.layer" + std::to_string(l));
  }
  if (f.find_entry("boundary_logits")) cache.boundary_logits = f.get_tensor<T>("boundary_logits");
  cache.check_consistent();
  return cache;
}

#define UG_INSTANTIATE_COMPRESSOR(T)                                                           \
  template struct CompressedCache<T>;                                                          \
  template struct DecodeState<T>;                                                              \
  template void compress_append<T>(Model<T>&, CompressedCache<T>&, std::span<const int32_t>,   \
                                   int, MaskVariant);                                          \
  template CompressedCache<T> compress_context<T>(Model<T>&, std::span<const int32_t>,         \
                                                  const SegmentPlan&, MaskVariant);            \
  template std::vector<double> score_nll<T>(Model<T>&, const CompressedCache<T>&,              \
                                            std::span<const int32_t>, const RatioSampler&,     \
                                            MaskVariant);                                      \
  template std::vector<int32_t> generate<T>(Model<T>&, const CompressedCache<T>&,              \
                                            std::span<const int32_t>, i64, const GenMode&,     \
                                            const RatioSampler&, MaskVariant);                 \
  template void cache_save<T>(const std::string&, const CompressedCache<T>&,                   \
                              const ModelConfig&);                                             \
  template CompressedCache<T> cache_load<T>(const std::string&, const ModelConfig&);

UG_INSTANTIATE_COMPRESSOR(float)
UG_INSTANTIATE_COMPRESSOR(double)

}  // namespace ug
