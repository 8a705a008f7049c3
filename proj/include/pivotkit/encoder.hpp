#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "pivotkit/corpus.hpp"
#include "pivotkit/detail/linalg.hpp"
#include "pivotkit/error.hpp"
#include "pivotkit/injection.hpp"
#include "pivotkit/kg.hpp"

namespace pivotkit {

struct EncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t embed_dim = 64;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t max_soft_pos = 160;
  std::size_t ffn_dim = 128;
  std::size_t num_classes = 2;

  std::size_t head_dim() const { return embed_dim / heads; }

  void validate() const {
    if (vocab_size < 1 || embed_dim < 1 || layers < 1 || heads < 1 || max_soft_pos < 1 ||
        ffn_dim < 1 || num_classes < 1)
      throw Error("encoder dimensions must all be at least 1");
    if (embed_dim % heads != 0) throw Error("embed_dim must be divisible by heads");
  }

  bool operator==(const EncoderConfig&) const = default;
};

/// Named region of the flat parameter vector.
struct TensorSlot {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t size() const { return rows * cols; }
};

struct LayerOffsets {
  std::size_t wq, bq, wk, bk, wv, bv, wo, bo;
  std::size_t ln1_g, ln1_b;
  std::size_t w1, b1, w2, b2;
  std::size_t ln2_g, ln2_b;
};

/// Offsets of every tensor inside one flat parameter (or gradient) vector.
struct ParamLayout {
  std::size_t tok_emb = 0, pos_emb = 0;
  std::vector<LayerOffsets> layers;
  std::size_t cls_w = 0, cls_b = 0, mlm_w = 0, mlm_b = 0;
  std::size_t total = 0;
  std::vector<TensorSlot> slots;

  explicit ParamLayout(const EncoderConfig& c) {
    const std::size_t d = c.embed_dim, f = c.ffn_dim;
    auto take = [&](std::string name, std::size_t rows, std::size_t cols) {
      slots.push_back({std::move(name), total, rows, cols});
      const std::size_t at = total;
      total += rows * cols;
      return at;
    };
    tok_emb = take("tok_emb", c.vocab_size, d);
    pos_emb = take("pos_emb", c.max_soft_pos, d);
    for (std::size_t l = 0; l < c.layers; ++l) {
      const std::string p = "layer" + std::to_string(l) + ".";
      LayerOffsets o{};
      o.wq = take(p + "wq", d, d);
      o.bq = take(p + "bq", 1, d);
      o.wk = take(p + "wk", d, d);
      o.bk = take(p + "bk", 1, d);
      o.wv = take(p + "wv", d, d);
      o.bv = take(p + "bv", 1, d);
      o.wo = take(p + "wo", d, d);
      o.bo = take(p + "bo", 1, d);
      o.ln1_g = take(p + "ln1_g", 1, d);
      o.ln1_b = take(p + "ln1_b", 1, d);
      o.w1 = take(p + "w1", d, f);
      o.b1 = take(p + "b1", 1, f);
      o.w2 = take(p + "w2", f, d);
      o.b2 = take(p + "b2", 1, d);
      o.ln2_g = take(p + "ln2_g", 1, d);
      o.ln2_b = take(p + "ln2_b", 1, d);
      layers.push_back(o);
    }
    cls_w = take("cls_w", d, c.num_classes);
    cls_b = take("cls_b", 1, c.num_classes);
    mlm_w = take("mlm_w", d, c.vocab_size);
    mlm_b = take("mlm_b", 1, c.vocab_size);
  }
};

/// All trainable weights in one flat vector of doubles.
class ModelParams {
 public:
  explicit ModelParams(EncoderConfig config)
      : config_((config.validate(), config)), layout_(config_), values_(layout_.total, 0.0) {}

  /// Weights and embeddings uniform(-scale, scale); biases 0; layer-norm
  /// gains 1.
  static ModelParams init_uniform(const EncoderConfig& config, std::uint64_t seed,
                                  double scale = 0.05) {
    ModelParams p(config);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-scale, scale);
    for (const auto& s : p.layout_.slots) {
      const bool gain = s.name.ends_with("_g");
      const bool bias = s.rows == 1 && !gain;
      for (std::size_t i = 0; i < s.size(); ++i)
        p.values_[s.offset + i] = gain ? 1.0 : bias ? 0.0 : dist(rng);
    }
    return p;
  }

  const EncoderConfig& config() const { return config_; }
  const ParamLayout& layout() const { return layout_; }
  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }
  std::size_t size() const { return values_.size(); }

  bool operator==(const ModelParams& o) const {
    return config_ == o.config_ && values_ == o.values_;
  }

 private:
  EncoderConfig config_;
  ParamLayout layout_;
  std::vector<double> values_;
};

/// Integer form of a FlattenedInput.
struct EncodedInput {
  std::vector<int> ids;
  std::vector<int> soft_pos;
  std::vector<std::uint8_t> visible;

  std::size_t size() const { return ids.size(); }

  /// Plain sequence: positions 0..n-1, everything visible.
  static EncodedInput plain(std::vector<int> ids) {
    EncodedInput in;
    const std::size_t n = ids.size();
    in.ids = std::move(ids);
    in.soft_pos.resize(n);
    for (std::size_t i = 0; i < n; ++i) in.soft_pos[i] = static_cast<int>(i);
    in.visible.assign(n * n, 1);
    return in;
  }
};

inline EncodedInput encode_input(const FlattenedInput& in, const Vocabulary& vocab) {
  EncodedInput out;
  out.ids.reserve(in.size());
  for (const auto& t : in.tokens) out.ids.push_back(vocab.id(t));
  out.soft_pos.assign(in.soft_pos.begin(), in.soft_pos.end());
  out.visible = in.visible;
  return out;
}

struct Prediction {
  std::vector<double> logits;
  std::vector<double> probs;
};

struct EncoderOutput {
  Prediction prediction;
  std::vector<double> hidden;  // n x embed_dim, final layer
  /// attention[layer][head], post-softmax; filled only when requested.
  std::vector<std::vector<SquareMatrix>> attention;
};

struct MaskedToken {
  std::size_t position = 0;
  int target = 0;
};

/// One training example: the input plus optional class and masked-word
/// targets.
struct TrainingExample {
  EncodedInput input;
  std::optional<std::size_t> class_index;
  std::vector<MaskedToken> masked;
};

/// Weighted sum of mean class cross-entropy (over examples with a class) and
/// mean masked-word cross-entropy (over all masked positions in the batch).
struct LossSpec {
  double cls_weight = 1.0;
  double mlm_weight = 0.0;
};

struct LossBreakdown {
  double total = 0.0;
  double cls = 0.0;
  double mlm = 0.0;
};

struct LossAndGradients {
  LossBreakdown loss;
  std::vector<double> grad;
};

/// Large negative logit standing in for -inf. exp(kMaskedLogit - max)
/// underflows to exactly 0.0 for any finite visible logit range.
inline constexpr double kMaskedLogit = -1e30;
inline constexpr double kLayerNormEps = 1e-5;

namespace detail {

struct LayerCache {
  std::vector<double> x, q, k, v, attn, ctx, xhat1, rstd1, h1, f1, g, xhat2, rstd2, out;
};

struct ForwardCache {
  std::vector<LayerCache> layers;
  const std::vector<double>& hidden() const { return layers.back().out; }
};

inline void softmax_inplace(std::span<double> v) {
  double mx = v[0];
  for (double x : v) mx = std::max(mx, x);
  double s = 0.0;
  for (double& x : v) {
    x = std::exp(x - mx);
    s += x;
  }
  for (double& x : v) x /= s;
}

inline void layer_norm(const double* r, const double* gain, const double* bias, std::size_t n,
                       std::size_t d, double* xhat, double* rstd, double* out) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* ri = r + i * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += ri[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (ri[j] - mean) * (ri[j] - mean);
    var /= static_cast<double>(d);
    const double rs = 1.0 / std::sqrt(var + kLayerNormEps);
    rstd[i] = rs;
    for (std::size_t j = 0; j < d; ++j) {
      xhat[i * d + j] = (ri[j] - mean) * rs;
      out[i * d + j] = gain[j] * xhat[i * d + j] + bias[j];
    }
  }
}

/// Accumulates gain/bias gradients and writes dr (the gradient w.r.t. the
/// layer-norm input).
inline void layer_norm_backward(const double* dy, const double* xhat, const double* rstd,
                                const double* gain, std::size_t n, std::size_t d, double* dgain,
                                double* dbias, double* dr) {
  std::vector<double> dxhat(d);
  for (std::size_t i = 0; i < n; ++i) {
    double m1 = 0.0, m2 = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double g = dy[i * d + j];
      dgain[j] += g * xhat[i * d + j];
      dbias[j] += g;
      dxhat[j] = g * gain[j];
      m1 += dxhat[j];
      m2 += dxhat[j] * xhat[i * d + j];
    }
    m1 /= static_cast<double>(d);
    m2 /= static_cast<double>(d);
    for (std::size_t j = 0; j < d; ++j)
      dr[i * d + j] = rstd[i] * (dxhat[j] - m1 - xhat[i * d + j] * m2);
  }
}

inline void check_input(const EncoderConfig& c, const EncodedInput& in) {
  const std::size_t n = in.size();
  if (n == 0) throw Error("encoder input is empty");
  if (in.soft_pos.size() != n || in.visible.size() != n * n)
    throw Error("encoder input fields disagree in length");
  for (std::size_t i = 0; i < n; ++i) {
    if (in.ids[i] < 0 || static_cast<std::size_t>(in.ids[i]) >= c.vocab_size)
      throw Error("token id " + std::to_string(in.ids[i]) + " out of range");
    if (in.soft_pos[i] < 0 || static_cast<std::size_t>(in.soft_pos[i]) >= c.max_soft_pos)
      throw Error("soft position " + std::to_string(in.soft_pos[i]) + " out of range");
    if (!in.visible[i * n + i]) throw Error("visible matrix diagonal must be true");
  }
}

inline ForwardCache forward_cached(const ModelParams& params, const EncodedInput& in) {
  const auto& c = params.config();
  check_input(c, in);
  const auto& L = params.layout();
  const double* P = params.data();
  const std::size_t n = in.size(), d = c.embed_dim, f = c.ffn_dim, H = c.heads,
                    dh = c.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  ForwardCache cache;
  cache.layers.resize(c.layers);
  std::vector<double> x(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    const double* te = P + L.tok_emb + static_cast<std::size_t>(in.ids[i]) * d;
    const double* pe = P + L.pos_emb + static_cast<std::size_t>(in.soft_pos[i]) * d;
    for (std::size_t j = 0; j < d; ++j) x[i * d + j] = te[j] + pe[j];
  }

  std::vector<double> scores(n);
  for (std::size_t l = 0; l < c.layers; ++l) {
    const auto& o = L.layers[l];
    auto& lc = cache.layers[l];
    lc.x = std::move(x);
    lc.q.assign(n * d, 0.0);
    lc.k.assign(n * d, 0.0);
    lc.v.assign(n * d, 0.0);
    gemm_nn(lc.x.data(), P + o.wq, lc.q.data(), n, d, d);
    gemm_nn(lc.x.data(), P + o.wk, lc.k.data(), n, d, d);
    gemm_nn(lc.x.data(), P + o.wv, lc.v.data(), n, d, d);
    add_bias(lc.q.data(), P + o.bq, n, d);
    add_bias(lc.k.data(), P + o.bk, n, d);
    add_bias(lc.v.data(), P + o.bv, n, d);

    lc.attn.assign(H * n * n, 0.0);
    lc.ctx.assign(n * d, 0.0);
    for (std::size_t h = 0; h < H; ++h) {
      const std::size_t off = h * dh;
      double* A = lc.attn.data() + h * n * n;
      for (std::size_t i = 0; i < n; ++i) {
        double* row = A + i * n;
        for (std::size_t j = 0; j < n; ++j) {
          if (!in.visible[i * n + j]) {
            row[j] = kMaskedLogit;
            continue;
          }
          double s = 0.0;
          for (std::size_t t = 0; t < dh; ++t) s += lc.q[i * d + off + t] * lc.k[j * d + off + t];
          row[j] = s * scale;
        }
        softmax_inplace(std::span<double>(row, n));
        for (std::size_t j = 0; j < n; ++j) {
          const double a = row[j];
          if (a == 0.0) continue;
          for (std::size_t t = 0; t < dh; ++t) lc.ctx[i * d + off + t] += a * lc.v[j * d + off + t];
        }
      }
    }

    std::vector<double> r1 = lc.x;
    gemm_nn(lc.ctx.data(), P + o.wo, r1.data(), n, d, d);
    add_bias(r1.data(), P + o.bo, n, d);
    lc.xhat1.resize(n * d);
    lc.rstd1.resize(n);
    lc.h1.resize(n * d);
    layer_norm(r1.data(), P + o.ln1_g, P + o.ln1_b, n, d, lc.xhat1.data(), lc.rstd1.data(),
               lc.h1.data());

    lc.f1.assign(n * f, 0.0);
    gemm_nn(lc.h1.data(), P + o.w1, lc.f1.data(), n, d, f);
    add_bias(lc.f1.data(), P + o.b1, n, f);
    lc.g.resize(n * f);
    for (std::size_t i = 0; i < n * f; ++i) lc.g[i] = gelu(lc.f1[i]);
    std::vector<double> r2 = lc.h1;
    gemm_nn(lc.g.data(), P + o.w2, r2.data(), n, f, d);
    add_bias(r2.data(), P + o.b2, n, d);
    lc.xhat2.resize(n * d);
    lc.rstd2.resize(n);
    lc.out.resize(n * d);
    layer_norm(r2.data(), P + o.ln2_g, P + o.ln2_b, n, d, lc.xhat2.data(), lc.rstd2.data(),
               lc.out.data());
    x = lc.out;
  }
  return cache;
}

/// logits[m] = h[d] * W[d x m] + b[m]
inline std::vector<double> linear_head(const double* h, const double* w, const double* b,
                                       std::size_t d, std::size_t m) {
  std::vector<double> out(b, b + m);
  gemm_nn(h, w, out.data(), 1, d, m);
  return out;
}

inline Prediction classify(const ModelParams& params, const std::vector<double>& hidden) {
  const auto& c = params.config();
  const auto& L = params.layout();
  Prediction p;
  p.logits = linear_head(hidden.data(), params.data() + L.cls_w, params.data() + L.cls_b,
                         c.embed_dim, c.num_classes);
  p.probs = p.logits;
  softmax_inplace(p.probs);
  return p;
}

inline std::vector<double> mlm_logits_at(const ModelParams& params,
                                         const std::vector<double>& hidden, std::size_t pos) {
  const auto& c = params.config();
  const auto& L = params.layout();
  return linear_head(hidden.data() + pos * c.embed_dim, params.data() + L.mlm_w,
                     params.data() + L.mlm_b, c.embed_dim, c.vocab_size);
}

/// -log softmax(logits)[target], and softmax(logits) - onehot in `grad`.
inline double cross_entropy(const std::vector<double>& logits, std::size_t target,
                            std::vector<double>* grad) {
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double s = 0.0;
  for (double v : logits) s += std::exp(v - mx);
  const double lse = mx + std::log(s);
  if (grad) {
    grad->resize(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) (*grad)[i] = std::exp(logits[i] - lse);
    (*grad)[target] -= 1.0;
  }
  return lse - logits[target];
}

inline void backward(const ModelParams& params, const EncodedInput& in, const ForwardCache& cache,
                     std::vector<double> dx, double* G) {
  const auto& c = params.config();
  const auto& L = params.layout();
  const double* P = params.data();
  const std::size_t n = in.size(), d = c.embed_dim, f = c.ffn_dim, H = c.heads,
                    dh = c.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  std::vector<double> dr2(n * d), dg(n * f), dh1(n * d), dr1(n * d), dctx(n * d), dq(n * d),
      dk(n * d), dv(n * d), dA(n), dS(n);
  for (std::size_t l = c.layers; l-- > 0;) {
    const auto& o = L.layers[l];
    const auto& lc = cache.layers[l];

    layer_norm_backward(dx.data(), lc.xhat2.data(), lc.rstd2.data(), P + o.ln2_g, n, d,
                        G + o.ln2_g, G + o.ln2_b, dr2.data());
    dh1 = dr2;
    gemm_tn(lc.g.data(), dr2.data(), G + o.w2, n, f, d);
    sum_rows(dr2.data(), G + o.b2, n, d);
    std::fill(dg.begin(), dg.end(), 0.0);
    gemm_nt(dr2.data(), P + o.w2, dg.data(), n, f, d);
    for (std::size_t i = 0; i < n * f; ++i) dg[i] *= gelu_grad(lc.f1[i]);
    gemm_tn(lc.h1.data(), dg.data(), G + o.w1, n, d, f);
    sum_rows(dg.data(), G + o.b1, n, f);
    gemm_nt(dg.data(), P + o.w1, dh1.data(), n, d, f);

    layer_norm_backward(dh1.data(), lc.xhat1.data(), lc.rstd1.data(), P + o.ln1_g, n, d,
                        G + o.ln1_g, G + o.ln1_b, dr1.data());
    dx = dr1;
    gemm_tn(lc.ctx.data(), dr1.data(), G + o.wo, n, d, d);
    sum_rows(dr1.data(), G + o.bo, n, d);
    std::fill(dctx.begin(), dctx.end(), 0.0);
    gemm_nt(dr1.data(), P + o.wo, dctx.data(), n, d, d);

    std::fill(dq.begin(), dq.end(), 0.0);
    std::fill(dk.begin(), dk.end(), 0.0);
    std::fill(dv.begin(), dv.end(), 0.0);
    for (std::size_t h = 0; h < H; ++h) {
      const std::size_t off = h * dh;
      const double* A = lc.attn.data() + h * n * n;
      for (std::size_t i = 0; i < n; ++i) {
        const double* ai = A + i * n;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          double s = 0.0;
          if (ai[j] != 0.0) {
            for (std::size_t t = 0; t < dh; ++t)
              s += dctx[i * d + off + t] * lc.v[j * d + off + t];
            for (std::size_t t = 0; t < dh; ++t)
              dv[j * d + off + t] += ai[j] * dctx[i * d + off + t];
          }
          dA[j] = s;
          dot += s * ai[j];
        }
        for (std::size_t j = 0; j < n; ++j) {
          dS[j] = ai[j] * (dA[j] - dot) * scale;
          if (dS[j] == 0.0) continue;
          for (std::size_t t = 0; t < dh; ++t) {
            dq[i * d + off + t] += dS[j] * lc.k[j * d + off + t];
            dk[j * d + off + t] += dS[j] * lc.q[i * d + off + t];
          }
        }
      }
    }
    gemm_tn(lc.x.data(), dq.data(), G + o.wq, n, d, d);
    gemm_tn(lc.x.data(), dk.data(), G + o.wk, n, d, d);
    gemm_tn(lc.x.data(), dv.data(), G + o.wv, n, d, d);
    sum_rows(dq.data(), G + o.bq, n, d);
    sum_rows(dk.data(), G + o.bk, n, d);
    sum_rows(dv.data(), G + o.bv, n, d);
    gemm_nt(dq.data(), P + o.wq, dx.data(), n, d, d);
    gemm_nt(dk.data(), P + o.wk, dx.data(), n, d, d);
    gemm_nt(dv.data(), P + o.wv, dx.data(), n, d, d);
  }
  for (std::size_t i = 0; i < n; ++i) {
    double* te = G + L.tok_emb + static_cast<std::size_t>(in.ids[i]) * d;
    double* pe = G + L.pos_emb + static_cast<std::size_t>(in.soft_pos[i]) * d;
    for (std::size_t j = 0; j < d; ++j) {
      te[j] += dx[i * d + j];
      pe[j] += dx[i * d + j];
    }
  }
}

inline void count_targets(std::span<const TrainingExample> batch, std::size_t& n_cls,
                          std::size_t& n_mask) {
  n_cls = 0;
  n_mask = 0;
  for (const auto& ex : batch) {
    if (ex.class_index) ++n_cls;
    n_mask += ex.masked.size();
  }
}

inline LossBreakdown loss_impl(const ModelParams& params, std::span<const TrainingExample> batch,
                               const LossSpec& spec, std::vector<double>* grad) {
  const auto& c = params.config();
  const auto& L = params.layout();
  const std::size_t d = c.embed_dim;
  std::size_t n_cls = 0, n_mask = 0;
  count_targets(batch, n_cls, n_mask);
  const bool use_cls = spec.cls_weight != 0.0 && n_cls > 0;
  const bool use_mlm = spec.mlm_weight != 0.0 && n_mask > 0;
  if (grad) grad->assign(params.size(), 0.0);
  LossBreakdown out;
  if (!use_cls && !use_mlm) return out;
  double* G = grad ? grad->data() : nullptr;
  std::vector<double> dlogits;
  for (const auto& ex : batch) {
    const bool ex_cls = use_cls && ex.class_index;
    const bool ex_mlm = use_mlm && !ex.masked.empty();
    if (!ex_cls && !ex_mlm) continue;
    auto cache = forward_cached(params, ex.input);
    const auto& h = cache.hidden();
    std::vector<double> dhidden;
    if (G) dhidden.assign(h.size(), 0.0);
    if (ex_cls) {
      if (*ex.class_index >= c.num_classes) throw Error("class index out of range");
      const auto logits = linear_head(h.data(), params.data() + L.cls_w, params.data() + L.cls_b,
                                      d, c.num_classes);
      out.cls += cross_entropy(logits, *ex.class_index, G ? &dlogits : nullptr) /
                 static_cast<double>(n_cls);
      if (G) {
        const double w = spec.cls_weight / static_cast<double>(n_cls);
        for (auto& v : dlogits) v *= w;
        gemm_tn(h.data(), dlogits.data(), G + L.cls_w, 1, d, c.num_classes);
        sum_rows(dlogits.data(), G + L.cls_b, 1, c.num_classes);
        gemm_nt(dlogits.data(), params.data() + L.cls_w, dhidden.data(), 1, d, c.num_classes);
      }
    }
    if (ex_mlm) {
      for (const auto& m : ex.masked) {
        if (m.position >= ex.input.size()) throw Error("masked position out of range");
        if (m.target < 0 || static_cast<std::size_t>(m.target) >= c.vocab_size)
          throw Error("masked target out of range");
        const auto logits = mlm_logits_at(params, h, m.position);
        out.mlm += cross_entropy(logits, static_cast<std::size_t>(m.target),
                                 G ? &dlogits : nullptr) /
                   static_cast<double>(n_mask);
        if (G) {
          const double w = spec.mlm_weight / static_cast<double>(n_mask);
          for (auto& v : dlogits) v *= w;
          const double* hp = h.data() + m.position * d;
          gemm_tn(hp, dlogits.data(), G + L.mlm_w, 1, d, c.vocab_size);
          sum_rows(dlogits.data(), G + L.mlm_b, 1, c.vocab_size);
          gemm_nt(dlogits.data(), params.data() + L.mlm_w, dhidden.data() + m.position * d, 1, d,
                  c.vocab_size);
        }
      }
    }
    if (G) backward(params, ex.input, cache, std::move(dhidden), G);
  }
  out.total = (use_cls ? spec.cls_weight * out.cls : 0.0) +
              (use_mlm ? spec.mlm_weight * out.mlm : 0.0);
  return out;
}

}  // namespace detail

struct ForwardOptions {
  bool keep_attention = false;
};

/// Classification from the [CLS] position (index 0) plus the final hidden
/// states. Invisible pairs get exactly zero attention weight.
inline EncoderOutput forward(const ModelParams& params, const EncodedInput& input,
                             const ForwardOptions& opts = {}) {
  auto cache = detail::forward_cached(params, input);
  EncoderOutput out;
  out.hidden = cache.hidden();
  out.prediction = detail::classify(params, out.hidden);
  if (opts.keep_attention) {
    const auto& c = params.config();
    const std::size_t n = input.size();
    for (const auto& lc : cache.layers) {
      std::vector<SquareMatrix> heads;
      for (std::size_t h = 0; h < c.heads; ++h) {
        SquareMatrix m(n);
        std::copy_n(lc.attn.begin() + static_cast<std::ptrdiff_t>(h * n * n), n * n,
                    m.values.begin());
        heads.push_back(std::move(m));
      }
      out.attention.push_back(std::move(heads));
    }
  }
  return out;
}

inline std::vector<EncoderOutput> forward(const ModelParams& params,
                                          std::span<const EncodedInput> batch,
                                          const ForwardOptions& opts = {}) {
  std::vector<EncoderOutput> out;
  out.reserve(batch.size());
  for (const auto& in : batch) out.push_back(forward(params, in, opts));
  return out;
}

inline Prediction predict(const ModelParams& params, const EncodedInput& input) {
  return detail::classify(params, detail::forward_cached(params, input).hidden());
}

/// Vocabulary logits at every masked position of every example, in order.
inline std::vector<std::vector<double>> mlm_forward(const ModelParams& params,
                                                    std::span<const TrainingExample> batch) {
  std::vector<std::vector<double>> out;
  for (const auto& ex : batch) {
    if (ex.masked.empty()) throw Error("mlm_forward: example without masked positions");
    auto cache = detail::forward_cached(params, ex.input);
    for (const auto& m : ex.masked) {
      if (m.position >= ex.input.size()) throw Error("masked position out of range");
      out.push_back(detail::mlm_logits_at(params, cache.hidden(), m.position));
    }
  }
  return out;
}

inline LossBreakdown compute_loss(const ModelParams& params, std::span<const TrainingExample> batch,
                                  const LossSpec& spec) {
  return detail::loss_impl(params, batch, spec, nullptr);
}

/// Exact analytic gradients of the loss, laid out like the parameters.
inline LossAndGradients gradients(const ModelParams& params, std::span<const TrainingExample> batch,
                                  const LossSpec& spec) {
  LossAndGradients out;
  out.loss = detail::loss_impl(params, batch, spec, &out.grad);
  return out;
}

/// params -= lr * grad
inline void apply_gradients(ModelParams& params, std::span<const double> grad, double lr) {
  if (grad.size() != params.size()) throw Error("gradient size does not match parameters");
  auto v = params.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr * grad[i];
}

/// Adam with bias correction. Moments live here, not in the parameters.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(std::size_t n, double beta1 = 0.9, double beta2 = 0.999,
                         double eps = 1e-8)
      : m_(n, 0.0), v_(n, 0.0), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ModelParams& params, std::span<const double> grad, double lr) {
    if (grad.size() != params.size() || grad.size() != m_.size())
      throw Error("gradient size does not match optimizer state");
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    auto p = params.values();
    for (std::size_t i = 0; i < p.size(); ++i) {
      m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
      v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
      p[i] -= lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
    }
  }

  std::size_t steps() const { return t_; }

 private:
  std::vector<double> m_, v_;
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
};

// ---------------------------------------------------------------------------
// Checkpoints: "PVKCKPT1" magic, u32 version, seven u64 config fields, u64
// parameter count, then the parameters as little-endian IEEE-754 doubles.

inline constexpr std::array<char, 8> kCheckpointMagic{'P', 'V', 'K', 'C', 'K', 'P', 'T', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <typename T>
void write_le(std::ostream& out, T v) {
  static_assert(std::is_unsigned_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <typename T>
T read_le(std::istream& in) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    const int c = in.get();
    if (c == EOF) throw Error("checkpoint truncated");
    v |= static_cast<T>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return v;
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const ModelParams& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  out.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  detail::write_le<std::uint32_t>(out, kCheckpointVersion);
  const auto& c = params.config();
  for (std::size_t v : {c.vocab_size, c.embed_dim, c.layers, c.heads, c.max_soft_pos, c.ffn_dim,
                        c.num_classes})
    detail::write_le<std::uint64_t>(out, v);
  detail::write_le<std::uint64_t>(out, params.size());
  for (double v : params.values()) detail::write_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
}

inline ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kCheckpointMagic) throw Error(path.string() + ": not a pivotkit checkpoint");
  if (detail::read_le<std::uint32_t>(in) != kCheckpointVersion)
    throw Error(path.string() + ": unsupported checkpoint version");
  EncoderConfig c;
  for (std::size_t* f : {&c.vocab_size, &c.embed_dim, &c.layers, &c.heads, &c.max_soft_pos,
                         &c.ffn_dim, &c.num_classes})
    *f = static_cast<std::size_t>(detail::read_le<std::uint64_t>(in));
  ModelParams params(c);
  if (detail::read_le<std::uint64_t>(in) != params.size())
    throw Error(path.string() + ": parameter count does not match config");
  for (double& v : params.values()) v = std::bit_cast<double>(detail::read_le<std::uint64_t>(in));
  if (in.peek() != EOF) throw Error(path.string() + ": trailing bytes after parameters");
  return params;
}

// ---------------------------------------------------------------------------
// Builtin attention provider

/// Last-layer attention of a plain sentence, averaged over heads. The [CLS]
/// row and column are dropped; each word is one token.
inline WordAttentionMatrix attention_dump(const ModelParams& params, const Vocabulary& vocab,
                                          std::span<const std::string> words) {
  std::vector<int> ids{Vocabulary::kCls};
  for (const auto& w : words) ids.push_back(vocab.id(w));
  const auto out = forward(params, EncodedInput::plain(std::move(ids)), {.keep_attention = true});
  const std::size_t n = words.size();
  std::vector<SquareMatrix> heads;
  for (const auto& full : out.attention.back()) {
    SquareMatrix m(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) m(i, j) = full(i + 1, j + 1);
    heads.push_back(std::move(m));
  }
  std::vector<WordSpan> spans(n);
  for (std::size_t i = 0; i < n; ++i) spans[i] = {i, i + 1};
  return average_attention(heads, spans, {words.begin(), words.end()},
                           AttentionProvenance::BuiltinEncoder);
}

}  // namespace pivotkit
