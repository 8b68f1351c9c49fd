#pragma once

#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ug/common.hpp"
#include "ug/corpus.hpp"
#include "ug/mask.hpp"
#include "ug/serialize.hpp"
#include "ug/tape.hpp"
#include "ug/tensor.hpp"

namespace ug {

struct ModelConfig {
  i64 dim = 128;
  i64 layers = 4;
  i64 heads = 4;
  i64 mlp_hidden = 256;
  i64 vocab = kByteVocab + 1;
  i64 window = 32;
  MaskVariant variant = MaskVariant::stepwise;
  Dtype dtype = Dtype::f32;
  double norm_eps = 1e-5;
  double rope_theta = 10000.0;

  i64 head_dim() const { return dim / heads; }
  void validate() const;

  std::vector<std::pair<std::string, std::string>> to_kv() const;
  static ModelConfig from_kv(const std::vector<std::pair<std::string, std::string>>& kv);
};

// One transformer block. The nt ("normal token") projections are the frozen
// base path; the ug projections are the trainable compression path and start
// as exact copies of the base ones. Norm gains and the gated MLP are shared
// by both streams and stay frozen.
template <typename T>
struct LayerParams {
  Tensor<T> attn_gain, mlp_gain;
  Tensor<T> wq_nt, wk_nt, wv_nt, wo_nt;
  Tensor<T> wq_ug, wk_ug, wv_ug, wo_ug;
  Tensor<T> w_gate, w_up, w_down;
};

template <typename T>
struct Model {
  ModelConfig cfg;
  Tensor<T> tok_embedding;  // vocab x D, frozen
  Tensor<T> ug_embedding;   // 1 x D, trainable; the one shared compression-token embedding
  Tensor<T> final_gain;     // D, frozen
  Tensor<T> head;           // D x vocab, frozen
  std::vector<LayerParams<T>> layers;

  void init_random(u64 seed);
  // Copies every W_*^nt into W_*^ug and sets the ug embedding to the mean
  // row of the token-embedding table. Idempotent.
  void init_ug_from_base();

  // Deterministic (name, tensor) walk over all parameters.
  std::vector<std::pair<std::string, Tensor<T>*>> named_params();
  std::vector<std::pair<std::string, const Tensor<T>*>> named_params() const;
  std::vector<Tensor<T>*> ug_params();    // trainable set
  std::vector<Tensor<T>*> base_params();  // frozen set

  // Production flags: base frozen, ug trainable.
  void mark_ug_trainable();
  // Pretraining flags: base trainable, ug frozen.
  void mark_base_trainable();
};

// Integer rotary positions for one attention pass. Cache slots take their
// emission order 0..L_ca-1; normal slots continue L_ca..L_ca+n-1; compression
// slot j sits at the end of its stepwise field, L_ca + min(j*alpha, n) - 1.
// Query positions are the key positions of the [normal | ug] slots.
struct Positions {
  std::vector<i64> key;
  std::vector<i64> query;
};
Positions positions_for(const AttentionLayout& layout, int alpha);

// Non-owning per-layer view of the compressed cache (pre-rotation K/V).
template <typename T>
struct CacheView {
  std::vector<Tensor<T>*> k, v;
  i64 len = 0;
  bool empty() const { return len == 0; }
};

// One run of slots in a multi-segment pass: `len` normal tokens followed by
// `k` compression slots with ratio alpha. k = 0 means a readout-only block.
struct BlockSpec {
  i64 len = 0;
  i64 k = 0;
  int alpha = 1;
};

// Graph-building forward over consecutive blocks against an optional
// external cache. Each block attends the external cache plus all earlier
// blocks' compression slots (never their normal slots), with per-block masks
// and rotary positions; this is what makes one unified pass mathematically
// identical to the serial per-segment procedure.
template <typename T>
struct ForwardGraph {
  Val logits;                // (sum of len) x V
  std::vector<Val> k_ug;     // per layer: (sum of k) x D, pre-rotation
  std::vector<Val> v_ug;
  bool has_ug = false;
};
template <typename T>
ForwardGraph<T> forward_blocks(Tape<T>& tape, Model<T>& m, std::span<const int32_t> tokens,
                               const std::vector<BlockSpec>& blocks, MaskVariant variant,
                               const CacheView<T>* cache);

// Single-segment forward (values only): logits for every normal position and
// the per-layer pre-rotation K^ug/V^ug to append to the cache.
template <typename T>
struct SegmentForward {
  Tensor<T> logits;
  std::vector<Tensor<T>> k_ug, v_ug;
  u64 flops = 0;
};
template <typename T>
SegmentForward<T> model_forward(Model<T>& m, std::span<const int32_t> segment_tokens, i64 k,
                                const CacheView<T>* cache, MaskVariant variant, int alpha);

// Plain causal decoder path: k = 0, no cache, no window limit. This is the
// backbone used for base pretraining and vanilla-path probes.
template <typename T>
Tensor<T> plain_forward(Model<T>& m, std::span<const int32_t> tokens, u64* flops = nullptr);

// Single transformer block applied to explicit streams (test surface).
template <typename T>
struct LayerForwardOut {
  Tensor<T> h_nt, h_ug;      // post-block hidden states
  Tensor<T> k_ug, v_ug;      // pre-rotation compression K/V of this layer
};
template <typename T>
LayerForwardOut<T> layer_forward(Model<T>& m, i64 layer, const Tensor<T>& h_nt,
                                 const Tensor<T>& h_ug, Tensor<T>* k_ca, Tensor<T>* v_ca,
                                 const Mask& mask, const Positions& pos);

inline const std::string kCheckpointMagic = "UGCKPT1";

template <typename T>
void model_save(const std::string& path, const Model<T>& m);
template <typename T>
Model<T> model_load(const std::string& path);
// Reads only the header (for dtype dispatch before choosing T).
ModelConfig checkpoint_config(const std::string& path);

}  // namespace ug
