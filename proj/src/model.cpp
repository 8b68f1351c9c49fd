#include "ug/model.hpp"

#include <cmath>
#include <cstdio>

namespace ug {

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

i64 parse_i64(const std::string& s, const std::string& key) {
  try {
    size_t used = 0;
    i64 v = std::stoll(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw config_error("bad integer for " + key + ": " + s);
  }
}

double parse_double(const std::string& s, const std::string& key) {
  try {
    size_t used = 0;
    double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw config_error("bad number for " + key + ": " + s);
  }
}

}  // namespace

void ModelConfig::validate() const {
  if (dim < 1 || layers < 1 || heads < 1 || mlp_hidden < 1 || vocab < 2 || window < 1)
    throw config_error("model config: all extents must be positive");
  if (dim % heads != 0) throw config_error("model config: dim not divisible by heads");
  if (head_dim() % 2 != 0) throw config_error("model config: head_dim must be even for rotary");
  if (norm_eps <= 0) throw config_error("model config: norm_eps must be positive");
  if (rope_theta <= 0) throw config_error("model config: rope_theta must be positive");
}

std::vector<std::pair<std::string, std::string>> ModelConfig::to_kv() const {
  return {
      {"model.dim", std::to_string(dim)},
      {"model.layers", std::to_string(layers)},
      {"model.heads", std::to_string(heads)},
      {"model.mlp_hidden", std::to_string(mlp_hidden)},
      {"model.vocab", std::to_string(vocab)},
      {"model.window", std::to_string(window)},
      {"model.mask", mask_variant_name(variant)},
      {"model.dtype", dtype_name(dtype)},
      {"model.norm_eps", fmt_double(norm_eps)},
      {"model.rope_theta", fmt_double(rope_theta)},
  };
}

ModelConfig ModelConfig::from_kv(const std::vector<std::pair<std::string, std::string>>& kv) {
  ModelConfig c;
  for (const auto& [k, v] : kv) {
    if (k == "model.dim") c.dim = parse_i64(v, k);
    else if (k == "model.layers") c.layers = parse_i64(v, k);
    else if (k == "model.heads") c.heads = parse_i64(v, k);
    else if (k == "model.mlp_hidden") c.mlp_hidden = parse_i64(v, k);
    else if (k == "model.vocab") c.vocab = parse_i64(v, k);
    else if (k == "model.window") c.window = parse_i64(v, k);
    else if (k == "model.mask") c.variant = mask_variant_from_name(v);
    else if (k == "model.dtype") c.dtype = dtype_from_name(v);
    else if (k == "model.norm_eps") c.norm_eps = parse_double(v, k);
    else if (k == "model.rope_theta") c.rope_theta = parse_double(v, k);
    else throw config_error("unknown model config key: " + k);
  }
  c.validate();
  return c;
}

template <typename T>
void Model<T>::init_random(u64 seed) {
  cfg.validate();
  cfg.dtype = dtype_of<T>();
  const double std_w = 0.02;
  Rng root(seed);
  auto fill = [&](Tensor<T>& t, Shape shape, const std::string& name) {
    Rng r = root.split(name);
    t = randn<T>(std::move(shape), r, std_w);
  };
  fill(tok_embedding, {cfg.vocab, cfg.dim}, "tok_embedding");
  fill(ug_embedding, {1, cfg.dim}, "ug_embedding");
  final_gain = Tensor<T>({cfg.dim}, T(1));
  fill(head, {cfg.dim, cfg.vocab}, "head");
  layers.assign(cfg.layers, LayerParams<T>{});
  for (i64 l = 0; l < cfg.layers; ++l) {
    LayerParams<T>& lp = layers[l];
    std::string p = "layers." + std::to_string(l) + ".";
    lp.attn_gain = Tensor<T>({cfg.dim}, T(1));
    lp.mlp_gain = Tensor<T>({cfg.dim}, T(1));
    fill(lp.wq_nt, {cfg.dim, cfg.dim}, p + "wq_nt");
    fill(lp.wk_nt, {cfg.dim, cfg.dim}, p + "wk_nt");
    fill(lp.wv_nt, {cfg.dim, cfg.dim}, p + "wv_nt");
    fill(lp.wo_nt, {cfg.dim, cfg.dim}, p + "wo_nt");
    fill(lp.w_gate, {cfg.dim, cfg.mlp_hidden}, p + "w_gate");
    fill(lp.w_up, {cfg.dim, cfg.mlp_hidden}, p + "w_up");
    fill(lp.w_down, {cfg.mlp_hidden, cfg.dim}, p + "w_down");
  }
  init_ug_from_base();
  mark_ug_trainable();
}

template <typename T>
void Model<T>::init_ug_from_base() {
  for (auto& lp : layers) {
    lp.wq_ug = lp.wq_nt;
    lp.wk_ug = lp.wk_nt;
    lp.wv_ug = lp.wv_nt;
    lp.wo_ug = lp.wo_nt;
  }
  // Shared compression-token embedding starts at the mean of the token table.
  ug_embedding = Tensor<T>({1, cfg.dim});
  for (i64 c = 0; c < cfg.dim; ++c) {
    double acc = 0.0;
    for (i64 r = 0; r < cfg.vocab; ++r)
      acc += static_cast<double>(tok_embedding.data[r * cfg.dim + c]);
    ug_embedding.data[c] = static_cast<T>(acc / static_cast<double>(cfg.vocab));
  }
  mark_ug_trainable();
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> Model<T>::named_params() {
  std::vector<std::pair<std::string, Tensor<T>*>> out;
  out.emplace_back("tok_embedding", &tok_embedding);
  out.emplace_back("ug_embedding", &ug_embedding);
  out.emplace_back("final_gain", &final_gain);
  out.emplace_back("head", &head);
  for (size_t l = 0; l < layers.size(); ++l) {
    std::string p = "layers." + std::to_string(l) + ".";
    LayerParams<T>& lp = layers[l];
    out.emplace_back(p + "attn_gain", &lp.attn_gain);
    out.emplace_back(p + "wq_nt", &lp.wq_nt);
    out.emplace_back(p + "wk_nt", &lp.wk_nt);
    out.emplace_back(p + "wv_nt", &lp.wv_nt);
    out.emplace_back(p + "wo_nt", &lp.wo_nt);
    out.emplace_back(p + "wq_ug", &lp.wq_ug);
    out.emplace_back(p + "wk_ug", &lp.wk_ug);
    out.emplace_back(p + "wv_ug", &lp.wv_ug);
    out.emplace_back(p + "wo_ug", &lp.wo_ug);
    out.emplace_back(p + "mlp_gain", &lp.mlp_gain);
    out.emplace_back(p + "w_gate", &lp.w_gate);
    out.emplace_back(p + "w_up", &lp.w_up);
    out.emplace_back(p + "w_down", &lp.w_down);
  }
  return out;
}

template <typename T>
std::vector<std::pair<std::string, const Tensor<T>*>> Model<T>::named_params() const {
  auto mut = const_cast<Model<T>*>(this)->named_params();
  std::vector<std::pair<std::string, const Tensor<T>*>> out;
  out.reserve(mut.size());
  for (auto& [n, t] : mut) out.emplace_back(n, t);
  return out;
}

namespace {
bool is_ug_param(const std::string& name) {
  return name == "ug_embedding" || name.find("_ug") != std::string::npos;
}
}  // namespace

template <typename T>
std::vector<Tensor<T>*> Model<T>::ug_params() {
  std::vector<Tensor<T>*> out;
  for (auto& [n, t] : named_params())
    if (is_ug_param(n)) out.push_back(t);
  return out;
}

template <typename T>
std::vector<Tensor<T>*> Model<T>::base_params() {
  std::vector<Tensor<T>*> out;
  for (auto& [n, t] : named_params())
    if (!is_ug_param(n)) out.push_back(t);
  return out;
}

template <typename T>
void Model<T>::mark_ug_trainable() {
  for (auto& [n, t] : named_params()) t->requires_grad = is_ug_param(n);
}

template <typename T>
void Model<T>::mark_base_trainable() {
  for (auto& [n, t] : named_params()) t->requires_grad = !is_ug_param(n);
}

Positions positions_for(const AttentionLayout& layout, int alpha) {
  layout.validate();
  const i64 L = layout.cache_len, n = layout.normal_len, k = layout.ug_len;
  if (k > 0 && alpha < 1) throw contract_error("positions_for: ratio must be >= 1");
  Positions p;
  p.key.reserve(layout.cols());
  for (i64 c = 0; c < L; ++c) p.key.push_back(c);
  for (i64 j = 1; j <= n; ++j) p.key.push_back(L + j - 1);
  for (i64 j = 1; j <= k; ++j) p.key.push_back(L + std::min<i64>(j * alpha, n) - 1);
  p.query.assign(p.key.begin() + L, p.key.end());
  return p;
}

namespace {

// Per-block attention context shared across layers of one pass.
struct BlockCtx {
  i64 nt_off = 0, nt_len = 0;
  i64 ug_off = 0, ug_len = 0;
  std::shared_ptr<const Mask> mask;
  std::shared_ptr<const Positions> pos;
};

template <typename T>
struct LayerStepOut {
  Val h_nt, h_ug;
  Val k_ug, v_ug;  // whole ug stream of this layer, pre-rotation
};

// One transformer block over both streams, block-wise attention against
// [external cache | earlier blocks' ug | own normal | own ug].
template <typename T>
LayerStepOut<T> layer_step(Tape<T>& tape, const ModelConfig& cfg, LayerParams<T>& lp, Val h_nt,
                           Val h_ug, bool has_ug, Val cache_k, Val cache_v, bool has_cache,
                           const std::vector<BlockCtx>& blocks) {
  const i64 hd = cfg.head_dim();
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(hd));

  Val attn_gain = tape.leaf(lp.attn_gain);
  Val x_nt = tape.rms_norm(h_nt, attn_gain, cfg.norm_eps);
  Val q_nt = tape.matmul(x_nt, tape.leaf(lp.wq_nt));
  Val k_nt = tape.matmul(x_nt, tape.leaf(lp.wk_nt));
  Val v_nt = tape.matmul(x_nt, tape.leaf(lp.wv_nt));

  Val q_ug, k_ug, v_ug;
  if (has_ug) {
    Val x_ug = tape.rms_norm(h_ug, attn_gain, cfg.norm_eps);
    q_ug = tape.matmul(x_ug, tape.leaf(lp.wq_ug));
    k_ug = tape.matmul(x_ug, tape.leaf(lp.wk_ug));
    v_ug = tape.matmul(x_ug, tape.leaf(lp.wv_ug));
  }

  Val wo_nt = tape.leaf(lp.wo_nt);
  Val wo_ug;
  std::vector<Val> out_nt_blocks, out_ug_blocks;
  for (const BlockCtx& b : blocks) {
    // Queries: [own normal | own ug].
    std::vector<Val> qp{tape.slice_rows(q_nt, b.nt_off, b.nt_off + b.nt_len)};
    if (b.ug_len > 0) qp.push_back(tape.slice_rows(q_ug, b.ug_off, b.ug_off + b.ug_len));
    Val q = qp.size() > 1 ? tape.concat_rows(qp) : qp[0];

    // Keys/values in emission order.
    std::vector<Val> kp, vp;
    if (has_cache) {
      kp.push_back(cache_k);
      vp.push_back(cache_v);
    }
    if (b.ug_off > 0) {
      kp.push_back(tape.slice_rows(k_ug, 0, b.ug_off));
      vp.push_back(tape.slice_rows(v_ug, 0, b.ug_off));
    }
    kp.push_back(tape.slice_rows(k_nt, b.nt_off, b.nt_off + b.nt_len));
    vp.push_back(tape.slice_rows(v_nt, b.nt_off, b.nt_off + b.nt_len));
    if (b.ug_len > 0) {
      kp.push_back(tape.slice_rows(k_ug, b.ug_off, b.ug_off + b.ug_len));
      vp.push_back(tape.slice_rows(v_ug, b.ug_off, b.ug_off + b.ug_len));
    }
    Val kk = kp.size() > 1 ? tape.concat_rows(kp) : kp[0];
    Val vv = vp.size() > 1 ? tape.concat_rows(vp) : vp[0];

    Val q_rot = tape.rope(q, b.pos->query, cfg.heads, cfg.rope_theta);
    Val k_rot = tape.rope(kk, b.pos->key, cfg.heads, cfg.rope_theta);

    std::vector<Val> ctx_heads;
    ctx_heads.reserve(cfg.heads);
    for (i64 h = 0; h < cfg.heads; ++h) {
      Val qh = tape.slice_cols(q_rot, h * hd, (h + 1) * hd);
      Val kh = tape.slice_cols(k_rot, h * hd, (h + 1) * hd);
      Val vh = tape.slice_cols(vv, h * hd, (h + 1) * hd);
      Val scores = tape.scale(tape.matmul_bt(qh, kh), att_scale);
      Val probs = tape.masked_softmax_rows(scores, b.mask);
      ctx_heads.push_back(tape.matmul(probs, vh));
    }
    Val ctx = cfg.heads > 1 ? tape.concat_cols(ctx_heads) : ctx_heads[0];

    out_nt_blocks.push_back(tape.matmul(tape.slice_rows(ctx, 0, b.nt_len), wo_nt));
    if (b.ug_len > 0) {
      if (!wo_ug.valid()) wo_ug = tape.leaf(lp.wo_ug);
      out_ug_blocks.push_back(
          tape.matmul(tape.slice_rows(ctx, b.nt_len, b.nt_len + b.ug_len), wo_ug));
    }
  }

  Val attn_nt = out_nt_blocks.size() > 1 ? tape.concat_rows(out_nt_blocks) : out_nt_blocks[0];
  h_nt = tape.add(h_nt, attn_nt);
  if (has_ug) {
    Val attn_ug = out_ug_blocks.size() > 1 ? tape.concat_rows(out_ug_blocks) : out_ug_blocks[0];
    h_ug = tape.add(h_ug, attn_ug);
  }

  // Shared gated MLP on each stream.
  Val mlp_gain = tape.leaf(lp.mlp_gain);
  Val w_gate = tape.leaf(lp.w_gate), w_up = tape.leaf(lp.w_up), w_down = tape.leaf(lp.w_down);
  auto mlp = [&](Val h) {
    Val y = tape.rms_norm(h, mlp_gain, cfg.norm_eps);
    Val act = tape.mul(tape.silu(tape.matmul(y, w_gate)), tape.matmul(y, w_up));
    return tape.add(h, tape.matmul(act, w_down));
  };
  h_nt = mlp(h_nt);
  if (has_ug) h_ug = mlp(h_ug);

  LayerStepOut<T> out;
  out.h_nt = h_nt;
  out.h_ug = h_ug;
  out.k_ug = k_ug;
  out.v_ug = v_ug;
  return out;
}

}  // namespace

template <typename T>
ForwardGraph<T> forward_blocks(Tape<T>& tape, Model<T>& m, std::span<const int32_t> tokens,
                               const std::vector<BlockSpec>& blocks, MaskVariant variant,
                               const CacheView<T>* cache) {
  m.cfg.validate();
  if (blocks.empty()) throw contract_error("forward: no blocks");
  i64 n_total = 0, k_total = 0;
  for (const BlockSpec& b : blocks) {
    if (b.len < 1) throw contract_error("forward: empty block");
    if (b.k < 0) throw contract_error("forward: negative ug count");
    if (b.k > 0 && b.len > m.cfg.window)
      throw contract_error("window overflow: segment of " + std::to_string(b.len) +
                           " tokens exceeds window " + std::to_string(m.cfg.window));
    n_total += b.len;
    k_total += b.k;
  }
  if (static_cast<i64>(tokens.size()) != n_total)
    throw contract_error("forward: " + std::to_string(tokens.size()) + " tokens for blocks of " +
                         std::to_string(n_total));
  for (int32_t t : tokens)
    if (t < 0 || t >= m.cfg.vocab)
      throw contract_error("forward: token id " + std::to_string(t) + " outside vocab");

  const i64 L_ext = cache ? cache->len : 0;
  if (cache && L_ext > 0 &&
      (cache->k.size() != static_cast<size_t>(m.cfg.layers) ||
       cache->v.size() != static_cast<size_t>(m.cfg.layers)))
    throw shape_error("forward: cache layer count does not match model");

  // Per-block masks and positions, shared across layers.
  std::vector<BlockCtx> ctx;
  ctx.reserve(blocks.size());
  i64 nt_off = 0, ug_off = 0;
  for (const BlockSpec& b : blocks) {
    BlockCtx c;
    c.nt_off = nt_off;
    c.nt_len = b.len;
    c.ug_off = ug_off;
    c.ug_len = b.k;
    AttentionLayout layout{L_ext + ug_off, b.len, b.k};
    c.mask = std::make_shared<const Mask>(build_mask(variant, layout, b.alpha));
    c.pos = std::make_shared<const Positions>(positions_for(layout, b.alpha));
    ctx.push_back(std::move(c));
    nt_off += b.len;
    ug_off += b.k;
  }

  std::vector<int32_t> ids(tokens.begin(), tokens.end());
  Val h_nt = tape.gather_rows(tape.leaf(m.tok_embedding), std::move(ids));
  Val h_ug;
  bool has_ug = k_total > 0;
  if (has_ug) h_ug = tape.broadcast_row(tape.leaf(m.ug_embedding), k_total);

  ForwardGraph<T> out;
  out.has_ug = has_ug;
  bool has_cache = L_ext > 0;
  for (i64 l = 0; l < m.cfg.layers; ++l) {
    Val ck, cv;
    if (has_cache) {
      ck = tape.leaf(*cache->k[l]);
      cv = tape.leaf(*cache->v[l]);
    }
    auto step = layer_step(tape, m.cfg, m.layers[l], h_nt, h_ug, has_ug, ck, cv, has_cache, ctx);
    h_nt = step.h_nt;
    h_ug = step.h_ug;
    if (has_ug) {
      out.k_ug.push_back(step.k_ug);
      out.v_ug.push_back(step.v_ug);
    }
  }

  Val x = tape.rms_norm(h_nt, tape.leaf(m.final_gain), m.cfg.norm_eps);
  out.logits = tape.matmul(x, tape.leaf(m.head));
  return out;
}

template <typename T>
SegmentForward<T> model_forward(Model<T>& m, std::span<const int32_t> segment_tokens, i64 k,
                                const CacheView<T>* cache, MaskVariant variant, int alpha) {
  const i64 n = static_cast<i64>(segment_tokens.size());
  if (n < 1) throw contract_error("model_forward: empty segment");
  if (n > m.cfg.window)
    throw contract_error("window overflow: segment of " + std::to_string(n) +
                         " tokens exceeds window " + std::to_string(m.cfg.window));
  if (k > 0 && k != ceil_div(n, alpha))
    throw contract_error("model_forward: k=" + std::to_string(k) + " inconsistent with ceil(" +
                         std::to_string(n) + "/" + std::to_string(alpha) + ")");
  Tape<T> tape;
  auto g = forward_blocks(tape, m, segment_tokens, {BlockSpec{n, k, alpha}}, variant, cache);
  SegmentForward<T> out;
  out.logits = tape.value(g.logits);
  if (k > 0) {
    for (i64 l = 0; l < m.cfg.layers; ++l) {
      out.k_ug.push_back(tape.value(g.k_ug[l]));
      out.v_ug.push_back(tape.value(g.v_ug[l]));
    }
  }
  out.flops = tape.matmul_flops();
  return out;
}

template <typename T>
Tensor<T> plain_forward(Model<T>& m, std::span<const int32_t> tokens, u64* flops) {
  if (tokens.empty()) throw contract_error("plain_forward: empty input");
  Tape<T> tape;
  auto g = forward_blocks<T>(tape, m, tokens, {BlockSpec{static_cast<i64>(tokens.size()), 0, 1}},
                             m.cfg.variant, nullptr);
  if (flops) *flops = tape.matmul_flops();
  return tape.value(g.logits);
}

template <typename T>
LayerForwardOut<T> layer_forward(Model<T>& m, i64 layer, const Tensor<T>& h_nt,
                                 const Tensor<T>& h_ug, Tensor<T>* k_ca, Tensor<T>* v_ca,
                                 const Mask& mask, const Positions& pos) {
  if (layer < 0 || layer >= m.cfg.layers) throw contract_error("layer_forward: bad layer index");
  const i64 n = h_nt.rows();
  const i64 k = h_ug.numel() == 0 ? 0 : h_ug.rows();
  const i64 L = k_ca ? k_ca->rows() : 0;
  if (mask.rows != n + k || mask.cols != L + n + k)
    throw shape_error("layer_forward: mask " + std::to_string(mask.rows) + "x" +
                      std::to_string(mask.cols) + " does not fit layout");
  if (static_cast<i64>(pos.key.size()) != mask.cols ||
      static_cast<i64>(pos.query.size()) != mask.rows)
    throw shape_error("layer_forward: positions do not fit layout");

  Tape<T> tape;
  Val nt = tape.constant(h_nt);
  Val ug;
  bool has_ug = k > 0;
  if (has_ug) ug = tape.constant(h_ug);
  Val ck, cv;
  bool has_cache = L > 0;
  if (has_cache) {
    ck = tape.leaf(*k_ca);
    cv = tape.leaf(*v_ca);
  }
  BlockCtx b;
  b.nt_off = 0;
  b.nt_len = n;
  b.ug_off = 0;
  b.ug_len = k;
  b.mask = std::make_shared<const Mask>(mask);
  b.pos = std::make_shared<const Positions>(pos);
  auto step = layer_step(tape, m.cfg, m.layers[layer], nt, ug, has_ug, ck, cv, has_cache, {b});

  LayerForwardOut<T> out;
  out.h_nt = tape.value(step.h_nt);
  if (has_ug) {
    out.h_ug = tape.value(step.h_ug);
    out.k_ug = tape.value(step.k_ug);
    out.v_ug = tape.value(step.v_ug);
  }
  return out;
}

template <typename T>
void model_save(const std::string& path, const Model<T>& m) {
  TensorFile f;
  f.magic = kCheckpointMagic;
  f.config = m.cfg.to_kv();
  for (const auto& [name, t] : m.named_params()) f.add_tensor(name, *t, t->requires_grad);
  save_tensor_file(path, f);
}

template <typename T>
Model<T> model_load(const std::string& path) {
  TensorFile f = load_tensor_file(path, kCheckpointMagic);
  Model<T> m;
  m.cfg = ModelConfig::from_kv(f.config);
  if (m.cfg.dtype != dtype_of<T>())
    throw io_error(path + ": checkpoint dtype is " + dtype_name(m.cfg.dtype));
  m.layers.assign(m.cfg.layers, LayerParams<T>{});
  for (auto& [name, t] : m.named_params()) *t = f.get_tensor<T>(name);
  return m;
}

ModelConfig checkpoint_config(const std::string& path) {
  TensorFile f = load_tensor_file_header(path, kCheckpointMagic);
  return ModelConfig::from_kv(f.config);
}

#define UG_INSTANTIATE_MODEL(T)                                                               \
  template struct Model<T>;                                                                   \
  template ForwardGraph<T> forward_blocks<T>(Tape<T>&, Model<T>&, std::span<const int32_t>,   \
                                             const std::vector<BlockSpec>&, MaskVariant,     \
                                             const CacheView<T>*);                            \
  template SegmentForward<T> model_forward<T>(Model<T>&, std::span<const int32_t>, i64,      \
                                              const CacheView<T>*, MaskVariant, int);        \
  template Tensor<T> plain_forward<T>(Model<T>&, std::span<const int32_t>, u64*);            \
  template LayerForwardOut<T> layer_forward<T>(Model<T>&, i64, const Tensor<T>&,             \
                                               const Tensor<T>&, Tensor<T>*, Tensor<T>*,     \
                                               const Mask&, const Positions&);               \
  template void model_save<T>(const std::string&, const Model<T>&);                          \
  template Model<T> model_load<T>(const std::string&);

UG_INSTANTIATE_MODEL(float)
UG_INSTANTIATE_MODEL(double)

}  // namespace ug
