#include "ug/refmodel.hpp"

#include <cmath>
#include <vector>

namespace ug::ref {

namespace {

// y[j] = sum_p x[p] * w[p*cols + j], double accumulation, cast at the end.
template <typename T>
void matvec_rowmajor(const T* x, const T* w, T* y, i64 dim, i64 cols) {
  std::vector<double> acc(cols, 0.0);
  for (i64 p = 0; p < dim; ++p) {
    double xv = static_cast<double>(x[p]);
    for (i64 j = 0; j < cols; ++j) acc[j] += xv * static_cast<double>(w[p * cols + j]);
  }
  for (i64 j = 0; j < cols; ++j) y[j] = static_cast<T>(acc[j]);
}

template <typename T>
void rms_row(const T* x, const T* gain, T* y, i64 d, double eps) {
  double ms = 0.0;
  for (i64 c = 0; c < d; ++c) {
    double v = static_cast<double>(x[c]);
    ms += v * v;
  }
  double inv = 1.0 / std::sqrt(ms / static_cast<double>(d) + eps);
  for (i64 c = 0; c < d; ++c)
    y[c] = static_cast<T>(static_cast<double>(x[c]) * inv * static_cast<double>(gain[c]));
}

template <typename T>
void rope_row(T* x, i64 heads, i64 hd, i64 pos, double theta) {
  i64 half = hd / 2;
  for (i64 h = 0; h < heads; ++h) {
    T* xh = x + h * hd;
    for (i64 i = 0; i < half; ++i) {
      double ang = static_cast<double>(pos) * std::pow(theta, -2.0 * static_cast<double>(i) / hd);
      double c = std::cos(ang), s = std::sin(ang);
      double a = static_cast<double>(xh[i]), b = static_cast<double>(xh[i + half]);
      xh[i] = static_cast<T>(a * c - b * s);
      xh[i + half] = static_cast<T>(a * s + b * c);
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> decoder_logits(const Model<T>& m, std::span<const int32_t> tokens) {
  const ModelConfig& cfg = m.cfg;
  const i64 n = static_cast<i64>(tokens.size());
  const i64 D = cfg.dim, hd = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  if (n < 1) throw contract_error("reference decoder: empty input");

  // Hidden states, one row per position.
  std::vector<std::vector<T>> h(n, std::vector<T>(D));
  for (i64 t = 0; t < n; ++t) {
    int32_t id = tokens[t];
    if (id < 0 || id >= cfg.vocab) throw contract_error("reference decoder: bad token id");
    for (i64 c = 0; c < D; ++c) h[t][c] = m.tok_embedding.data[id * D + c];
  }

  std::vector<T> x(D), q(D);
  for (i64 l = 0; l < cfg.layers; ++l) {
    const LayerParams<T>& lp = m.layers[l];
    // Attention: cache rotated keys and raw values for the causal prefix.
    std::vector<std::vector<T>> krot(n, std::vector<T>(D)), v(n, std::vector<T>(D));
    std::vector<std::vector<T>> attn(n, std::vector<T>(D));
    for (i64 t = 0; t < n; ++t) {
      rms_row(h[t].data(), lp.attn_gain.data.data(), x.data(), D, cfg.norm_eps);
      matvec_rowmajor(x.data(), lp.wk_nt.data.data(), krot[t].data(), D, D);
      matvec_rowmajor(x.data(), lp.wv_nt.data.data(), v[t].data(), D, D);
      rope_row(krot[t].data(), cfg.heads, hd, t, cfg.rope_theta);
      matvec_rowmajor(x.data(), lp.wq_nt.data.data(), q.data(), D, D);
      rope_row(q.data(), cfg.heads, hd, t, cfg.rope_theta);

      std::vector<T> ctx(D);
      std::vector<T> srow(t + 1);
      std::vector<double> ex(t + 1);
      for (i64 hh = 0; hh < cfg.heads; ++hh) {
        for (i64 s = 0; s <= t; ++s) {
          double dot = 0.0;
          for (i64 i = 0; i < hd; ++i)
            dot += static_cast<double>(q[hh * hd + i]) * static_cast<double>(krot[s][hh * hd + i]);
          srow[s] = static_cast<T>(static_cast<double>(static_cast<T>(dot)) * scale);
        }
        double mx = static_cast<double>(srow[0]);
        for (i64 s = 1; s <= t; ++s) mx = std::max(mx, static_cast<double>(srow[s]));
        double sum = 0.0;
        for (i64 s = 0; s <= t; ++s) {
          ex[s] = std::exp(static_cast<double>(srow[s]) - mx);
          sum += ex[s];
        }
        std::vector<double> acc(hd, 0.0);
        for (i64 s = 0; s <= t; ++s) {
          double p = static_cast<double>(static_cast<T>(ex[s] / sum));
          for (i64 i = 0; i < hd; ++i) acc[i] += p * static_cast<double>(v[s][hh * hd + i]);
        }
        for (i64 i = 0; i < hd; ++i) ctx[hh * hd + i] = static_cast<T>(acc[i]);
      }
      std::vector<T> o(D);
      matvec_rowmajor(ctx.data(), lp.wo_nt.data.data(), o.data(), D, D);
      for (i64 c = 0; c < D; ++c) attn[t][c] = o[c];
    }
    for (i64 t = 0; t < n; ++t)
      for (i64 c = 0; c < D; ++c) h[t][c] = static_cast<T>(h[t][c] + attn[t][c]);

    // Gated MLP.
    std::vector<T> gate(cfg.mlp_hidden), up(cfg.mlp_hidden), act(cfg.mlp_hidden), down(D);
    for (i64 t = 0; t < n; ++t) {
      rms_row(h[t].data(), lp.mlp_gain.data.data(), x.data(), D, cfg.norm_eps);
      matvec_rowmajor(x.data(), lp.w_gate.data.data(), gate.data(), D, cfg.mlp_hidden);
      matvec_rowmajor(x.data(), lp.w_up.data.data(), up.data(), D, cfg.mlp_hidden);
      for (i64 j = 0; j < cfg.mlp_hidden; ++j) {
        double g = static_cast<double>(gate[j]);
        double sig = 1.0 / (1.0 + std::exp(-g));
        act[j] = static_cast<T>(static_cast<T>(g * sig) * up[j]);
      }
      matvec_rowmajor(act.data(), lp.w_down.data.data(), down.data(), cfg.mlp_hidden, D);
      for (i64 c = 0; c < D; ++c) h[t][c] = static_cast<T>(h[t][c] + down[c]);
    }
  }

  Tensor<T> logits({n, cfg.vocab});
  for (i64 t = 0; t < n; ++t) {
    rms_row(h[t].data(), m.final_gain.data.data(), x.data(), D, cfg.norm_eps);
    matvec_rowmajor(x.data(), m.head.data.data(), logits.data.data() + t * cfg.vocab, D,
                    cfg.vocab);
  }
  return logits;
}

template Tensor<float> decoder_logits<float>(const Model<float>&, std::span<const int32_t>);
template Tensor<double> decoder_logits<double>(const Model<double>&, std::span<const int32_t>);

}  // namespace ug::ref
