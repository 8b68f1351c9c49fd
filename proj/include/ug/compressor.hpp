#pragma once

#include <span>
#include <string>
#include <vector>

#include "ug/model.hpp"
#include "ug/segment.hpp"

namespace ug {

// Append-only store of every emitted compression token's per-layer key/value
// state (pre-rotation), plus bookkeeping of what was compressed. Also keeps
// the logits the model produced at the final position of the last compressed
// window ("boundary logits"), which is the prediction for the first token
// after the compressed context — without it that token would have no
// conditioning path once the raw window is discarded.
template <typename T>
struct CompressedCache {
  struct SegmentRecord {
    int alpha = 0;
    i64 k = 0;
    i64 src_start = 0, src_end = 0;  // 1-based source token span
  };

  std::vector<Tensor<T>> k_layers, v_layers;  // per layer: L_ca x D
  std::vector<SegmentRecord> log;
  i64 source_tokens = 0;
  Tensor<T> boundary_logits;  // 1 x V; empty until the first append
  u64 flops_used = 0;         // forward matmul FLOPs spent building this cache

  void init(i64 layers, i64 dim);
  i64 len() const { return k_layers.empty() ? 0 : k_layers[0].rows(); }
  bool empty() const { return len() == 0; }
  CacheView<T> view();
  void check_consistent() const;
};

// Compresses one segment into the cache: model_forward with
// k = ceil(len/alpha) compression slots, concatenate the per-layer K/V onto
// the cache, append to the segment log, refresh the boundary logits.
template <typename T>
void compress_append(Model<T>& m, CompressedCache<T>& cache, std::span<const int32_t> tokens,
                     int alpha, MaskVariant variant);

// Walks a plan segment by segment. Linear in token count at fixed window.
template <typename T>
CompressedCache<T> compress_context(Model<T>& m, std::span<const int32_t> tokens,
                                    const SegmentPlan& plan, MaskVariant variant);

// Streaming decode/score session. Owns a private copy of the cache: raw
// tokens accumulate in the tail and are compressed into the cache the moment
// the tail reaches the window size (ratio drawn from the sampler), so the
// tail is always shorter than w. Scoring is therefore invariant to how a
// continuation is chunked across calls.
template <typename T>
struct DecodeState {
  Model<T>* model = nullptr;
  CompressedCache<T> cache;
  std::vector<int32_t> tail;
  RatioSampler sampler;  // ratios for mid-session compressions
  MaskVariant variant = MaskVariant::stepwise;

  DecodeState(Model<T>& m, const CompressedCache<T>& start, RatioSampler s, MaskVariant v);

  // Logits predicting the next token given cache + tail. With an empty tail
  // this is the stored boundary logits (contract error if there are none).
  Tensor<T> next_logits();
  void push(int32_t token);
  // Teacher-forced NLLs of the tokens, advancing the session.
  std::vector<double> score(std::span<const int32_t> tokens);
};

// One-shot scoring against a snapshot of the cache (the cache itself is not
// advanced; a private copy inside the DecodeState is).
template <typename T>
std::vector<double> score_nll(Model<T>& m, const CompressedCache<T>& cache,
                              std::span<const int32_t> continuation, const RatioSampler& sampler,
                              MaskVariant variant);

struct GenMode {
  bool greedy = true;
  double temperature = 1.0;
  u64 seed = 0;
};

template <typename T>
std::vector<int32_t> generate(Model<T>& m, const CompressedCache<T>& cache,
                              std::span<const int32_t> prompt, i64 max_new, const GenMode& mode,
                              const RatioSampler& sampler, MaskVariant variant);

inline const std::string kCacheMagic = "UGCACHE1";

template <typename T>
void cache_save(const std::string& path, const CompressedCache<T>& cache, const ModelConfig& cfg);
template <typename T>
CompressedCache<T> cache_load(const std::string& path, const ModelConfig& cfg);

}  // namespace ug
