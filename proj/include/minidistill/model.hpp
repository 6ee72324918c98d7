#pragma once

// Trainable bi-encoder: token + learned positional embeddings, pre-LN
// transformer encoder layers (softmax multi-head attention, GELU feed-forward),
// mean pooling. Forward records an activation tape; backward computes exact
// gradients of <pooled output, grad_output> for every parameter.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "minidistill/error.hpp"
#include "minidistill/rng.hpp"
#include "minidistill/tensor.hpp"
#include "minidistill/vocab.hpp"

namespace minidistill {

struct ModelConfig {
  std::size_t num_layers = 1;
  std::size_t hidden_dim = 128;
  std::size_t num_heads = 2;
  std::size_t ffn_dim = 512;
  std::size_t max_seq_len = 64;
  std::size_t vocab_size = kSpecialTokens.size();

  void validate() const {
    if (num_layers < 1 || hidden_dim < 1 || num_heads < 1 || ffn_dim < 1 || max_seq_len < 1 ||
        vocab_size < 1) {
      throw InvalidInput("model config: all sizes must be >= 1");
    }
    if (hidden_dim % num_heads != 0) {
      throw InvalidInput("model config: hidden_dim " + std::to_string(hidden_dim) +
                         " is not divisible by num_heads " + std::to_string(num_heads));
    }
  }

  std::size_t head_dim() const { return hidden_dim / num_heads; }

  std::size_t parameters_per_layer() const {
    const std::size_t d = hidden_dim;
    return 4 * (d * d + d) + (d * ffn_dim + ffn_dim) + (ffn_dim * d + d) + 4 * d;
  }

  std::size_t parameter_count() const {
    return vocab_size * hidden_dim + max_seq_len * hidden_dim + num_layers * parameters_per_layer();
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Bias and layer-norm vectors are 1 x n matrices so that every parameter is a
// Matrix.
struct EncoderLayerParams {
  Matrix wq, bq, wk, bk, wv, bv, wo, bo;
  Matrix w1, b1, w2, b2;
  Matrix ln1_gain, ln1_bias, ln2_gain, ln2_bias;

  static EncoderLayerParams zeros(const ModelConfig& c) {
    const std::size_t d = c.hidden_dim, f = c.ffn_dim;
    EncoderLayerParams p;
    p.wq = Matrix(d, d); p.bq = Matrix(1, d);
    p.wk = Matrix(d, d); p.bk = Matrix(1, d);
    p.wv = Matrix(d, d); p.bv = Matrix(1, d);
    p.wo = Matrix(d, d); p.bo = Matrix(1, d);
    p.w1 = Matrix(d, f); p.b1 = Matrix(1, f);
    p.w2 = Matrix(f, d); p.b2 = Matrix(1, d);
    p.ln1_gain = Matrix(1, d); p.ln1_bias = Matrix(1, d);
    p.ln2_gain = Matrix(1, d); p.ln2_bias = Matrix(1, d);
    return p;
  }

  // Visits parameters in their fixed declaration order.
  template <typename Self, typename Fn>
  static void visit(Self& self, const std::string& prefix, Fn&& fn) {
    fn(prefix + "attn.wq", self.wq); fn(prefix + "attn.bq", self.bq);
    fn(prefix + "attn.wk", self.wk); fn(prefix + "attn.bk", self.bk);
    fn(prefix + "attn.wv", self.wv); fn(prefix + "attn.bv", self.bv);
    fn(prefix + "attn.wo", self.wo); fn(prefix + "attn.bo", self.bo);
    fn(prefix + "ffn.w1", self.w1); fn(prefix + "ffn.b1", self.b1);
    fn(prefix + "ffn.w2", self.w2); fn(prefix + "ffn.b2", self.b2);
    fn(prefix + "ln1.gain", self.ln1_gain); fn(prefix + "ln1.bias", self.ln1_bias);
    fn(prefix + "ln2.gain", self.ln2_gain); fn(prefix + "ln2.bias", self.ln2_bias);
  }

  friend bool operator==(const EncoderLayerParams&, const EncoderLayerParams&) = default;
};

struct EncoderModel {
  ModelConfig config;
  Matrix embedding;   // vocab_size x hidden_dim
  Matrix positional;  // max_seq_len x hidden_dim
  std::vector<EncoderLayerParams> layers;

  /// Same shapes as `config`, every entry zero. Also serves as a gradient set.
  static EncoderModel zeros(const ModelConfig& c) {
    c.validate();
    EncoderModel m;
    m.config = c;
    m.embedding = Matrix(c.vocab_size, c.hidden_dim);
    m.positional = Matrix(c.max_seq_len, c.hidden_dim);
    m.layers.assign(c.num_layers, EncoderLayerParams::zeros(c));
    return m;
  }

  template <typename Fn>
  void for_each_parameter(Fn&& fn) {
    visit(*this, fn);
  }
  template <typename Fn>
  void for_each_parameter(Fn&& fn) const {
    visit(*this, fn);
  }

  std::vector<Matrix*> parameters() {
    std::vector<Matrix*> out;
    for_each_parameter([&](const std::string&, Matrix& m) { out.push_back(&m); });
    return out;
  }
  std::vector<const Matrix*> parameters() const {
    std::vector<const Matrix*> out;
    for_each_parameter([&](const std::string&, const Matrix& m) { out.push_back(&m); });
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each_parameter([&](const std::string&, const Matrix& m) { n += m.size(); });
    return n;
  }

  /// Throws InvalidInput when any tensor disagrees with `config`.
  void check_shapes() const {
    const auto ref = zeros(config);
    const auto mine = parameters();
    const auto want = ref.parameters();
    if (mine.size() != want.size()) throw InvalidInput("model has wrong number of tensors");
    for (std::size_t i = 0; i < mine.size(); ++i) {
      if (!mine[i]->same_shape(*want[i])) throw InvalidInput("model tensor shape disagrees with config");
    }
  }

  friend bool operator==(const EncoderModel&, const EncoderModel&) = default;

 private:
  template <typename Self, typename Fn>
  static void visit(Self& self, Fn&& fn) {
    fn(std::string("embedding"), self.embedding);
    fn(std::string("positional"), self.positional);
    for (std::size_t l = 0; l < self.layers.size(); ++l) {
      EncoderLayerParams::visit(self.layers[l], "layer" + std::to_string(l) + ".", fn);
    }
  }
};

using ModelGradients = EncoderModel;

/// Weights ~ N(0, 1/hidden_dim); biases 0; layer-norm gains 1.
inline EncoderModel init_model(const ModelConfig& config, std::uint64_t seed) {
  auto m = EncoderModel::zeros(config);
  Pcg32 rng(seed);
  const double scale = 1.0 / std::sqrt(static_cast<double>(config.hidden_dim));
  m.for_each_parameter([&](const std::string& name, Matrix& p) {
    const auto leaf = name.substr(name.rfind('.') + 1);
    if (leaf == "gain") {
      p.fill(1.0);
    } else if (!leaf.starts_with('b')) {
      for (auto& x : p.values()) x = scale * rng.normal();
    }
  });
  return m;
}

namespace nn {

inline constexpr double kLayerNormEps = 1e-5;

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

inline double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

struct LayerNormCache {
  Matrix xhat;
  std::vector<double> rstd;
};

inline Matrix layer_norm(const Matrix& x, const Matrix& gain, const Matrix& bias, LayerNormCache* cache) {
  const std::size_t n = x.rows(), d = x.cols();
  Matrix y(n, d);
  if (cache) {
    cache->xhat = Matrix(n, d);
    cache->rstd.assign(n, 0.0);
  }
  for (std::size_t r = 0; r < n; ++r) {
    const auto row = x.row(r);
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
    for (std::size_t c = 0; c < d; ++c) {
      const double xh = (row[c] - mean) * rstd;
      y(r, c) = xh * gain(0, c) + bias(0, c);
      if (cache) cache->xhat(r, c) = xh;
    }
    if (cache) cache->rstd[r] = rstd;
  }
  return y;
}

// dx += LN backward of dy; accumulates gain/bias gradients.
inline void layer_norm_backward(const Matrix& dy, const LayerNormCache& cache, const Matrix& gain,
                                Matrix& dgain, Matrix& dbias, Matrix& dx) {
  const std::size_t n = dy.rows(), d = dy.cols();
  std::vector<double> dxhat(d);
  for (std::size_t r = 0; r < n; ++r) {
    double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const double g = dy(r, c);
      const double xh = cache.xhat(r, c);
      dgain(0, c) += g * xh;
      dbias(0, c) += g;
      dxhat[c] = g * gain(0, c);
      mean_dxhat += dxhat[c];
      mean_dxhat_xhat += dxhat[c] * xh;
    }
    mean_dxhat /= static_cast<double>(d);
    mean_dxhat_xhat /= static_cast<double>(d);
    for (std::size_t c = 0; c < d; ++c) {
      dx(r, c) += cache.rstd[r] * (dxhat[c] - mean_dxhat - cache.xhat(r, c) * mean_dxhat_xhat);
    }
  }
}

inline void softmax_rows(Matrix& s) {
  for (std::size_t r = 0; r < s.rows(); ++r) {
    auto row = s.row(r);
    double mx = row[0];
    for (double v : row) mx = std::max(mx, v);
    double sum = 0.0;
    for (auto& v : row) {
      v = std::exp(v - mx);
      sum += v;
    }
    for (auto& v : row) v /= sum;
  }
}

inline Matrix linear(const Matrix& x, const Matrix& w, const Matrix& b) {
  Matrix y;
  matmul(x, w, y);
  add_row_bias(y, b);
  return y;
}

/// Columns [offset, offset + width) as a new matrix.
inline Matrix column_block(const Matrix& x, std::size_t offset, std::size_t width) {
  Matrix out(x.rows(), width);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t c = 0; c < width; ++c) out(r, c) = x(r, offset + c);
  }
  return out;
}

inline void add_column_block(Matrix& x, const Matrix& block, std::size_t offset) {
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t c = 0; c < block.cols(); ++c) x(r, offset + c) += block(r, c);
  }
}

}  // namespace nn

struct LayerTape {
  Matrix x_in;
  nn::LayerNormCache ln1;
  Matrix h1;
  Matrix q, k, v;
  std::vector<Matrix> attention;  // per head, seq x seq, rows sum to 1
  Matrix context;
  Matrix x_mid;
  nn::LayerNormCache ln2;
  Matrix h2;
  Matrix ffn_pre;
  Matrix ffn_act;
};

struct ActivationTape {
  ModelConfig config;
  std::vector<TokenId> ids;  // after truncation
  std::size_t original_length = 0;
  bool truncated = false;
  std::vector<LayerTape> layers;
  Matrix output;  // seq x hidden_dim, before pooling
};

struct EncodeResult {
  EmbeddingVector embedding;
  std::optional<ActivationTape> tape;
  bool truncated = false;
};

inline EmbeddingVector mean_pool(const Matrix& x) {
  if (x.rows() == 0) throw InvalidInput("mean_pool: empty sequence");
  EmbeddingVector out(x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto row = x.row(r);
    for (std::size_t c = 0; c < x.cols(); ++c) out[c] += row[c];
  }
  for (auto& v : out.values) v /= static_cast<double>(x.rows());
  return out;
}

/// a.b / (|a||b|), clamped to [-1, 1].
inline double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b) {
  if (a.dim() != b.dim()) throw InvalidInput("cosine_similarity: dimension mismatch");
  const double na = std::sqrt(squared_norm(a.span()));
  const double nb = std::sqrt(squared_norm(b.span()));
  if (na == 0.0 || nb == 0.0) throw InvalidInput("cosine_similarity: zero-norm input");
  return std::clamp(dot(a.span(), b.span()) / (na * nb), -1.0, 1.0);
}

// Sequences longer than max_seq_len are truncated; EncodeResult::truncated
// (and the tape) record it.
inline EncodeResult encode(const EncoderModel& model, std::span<const TokenId> token_ids, bool train_mode) {
  const auto& cfg = model.config;
  if (token_ids.empty()) throw InvalidInput("encode: empty token sequence");
  const std::size_t seq = std::min(token_ids.size(), cfg.max_seq_len);
  for (std::size_t t = 0; t < seq; ++t) {
    if (token_ids[t] >= cfg.vocab_size) {
      throw InvalidInput("encode: token id " + std::to_string(token_ids[t]) + " >= vocab size " +
                         std::to_string(cfg.vocab_size));
    }
  }
  const std::size_t d = cfg.hidden_dim, hd = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  EncodeResult result;
  result.truncated = seq < token_ids.size();
  ActivationTape tape;
  if (train_mode) {
    tape.config = cfg;
    tape.ids.assign(token_ids.begin(), token_ids.begin() + static_cast<std::ptrdiff_t>(seq));
    tape.original_length = token_ids.size();
    tape.truncated = result.truncated;
    tape.layers.resize(cfg.num_layers);
  }

  Matrix x(seq, d);
  for (std::size_t t = 0; t < seq; ++t) {
    const auto e = model.embedding.row(token_ids[t]);
    const auto p = model.positional.row(t);
    for (std::size_t c = 0; c < d; ++c) x(t, c) = e[c] + p[c];
  }

  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    const auto& P = model.layers[l];
    LayerTape* lt = train_mode ? &tape.layers[l] : nullptr;
    if (lt) lt->x_in = x;

    Matrix h1 = nn::layer_norm(x, P.ln1_gain, P.ln1_bias, lt ? &lt->ln1 : nullptr);
    Matrix q = nn::linear(h1, P.wq, P.bq);
    Matrix k = nn::linear(h1, P.wk, P.bk);
    Matrix v = nn::linear(h1, P.wv, P.bv);
    Matrix context(seq, d);
    for (std::size_t h = 0; h < cfg.num_heads; ++h) {
      const Matrix qh = nn::column_block(q, h * hd, hd);
      const Matrix kh = nn::column_block(k, h * hd, hd);
      const Matrix vh = nn::column_block(v, h * hd, hd);
      Matrix scores;
      matmul_nt(qh, kh, scores);
      for (auto& s : scores.values()) s *= scale;
      nn::softmax_rows(scores);
      Matrix ctx;
      matmul(scores, vh, ctx);
      nn::add_column_block(context, ctx, h * hd);
      if (lt) lt->attention.push_back(std::move(scores));
    }
    Matrix attn_out = nn::linear(context, P.wo, P.bo);
    add_in_place(x, attn_out);
    if (lt) {
      lt->h1 = std::move(h1);
      lt->q = std::move(q);
      lt->k = std::move(k);
      lt->v = std::move(v);
      lt->context = std::move(context);
      lt->x_mid = x;
    }

    Matrix h2 = nn::layer_norm(x, P.ln2_gain, P.ln2_bias, lt ? &lt->ln2 : nullptr);
    Matrix pre = nn::linear(h2, P.w1, P.b1);
    Matrix act = pre;
    for (auto& a : act.values()) a = nn::gelu(a);
    Matrix ffn_out = nn::linear(act, P.w2, P.b2);
    add_in_place(x, ffn_out);
    if (lt) {
      lt->h2 = std::move(h2);
      lt->ffn_pre = std::move(pre);
      lt->ffn_act = std::move(act);
    }
  }

  result.embedding = mean_pool(x);
  if (train_mode) {
    tape.output = std::move(x);
    result.tape = std::move(tape);
  }
  return result;
}

/// Inference-only convenience.
inline EmbeddingVector embed(const EncoderModel& model, std::span<const TokenId> token_ids) {
  return encode(model, token_ids, false).embedding;
}

struct EncoderGradients {
  ModelGradients params;
  Matrix input;  // d loss / d (token embedding + positional), seq x hidden_dim
};

// Adds the gradient of <pooled output, grad_output> into `grads` (which must
// have the model's shapes). Returns the gradient w.r.t. the summed input
// embeddings.
inline Matrix backward_accumulate(const EncoderModel& model, const ActivationTape& tape,
                                  const EmbeddingVector& grad_output, ModelGradients& grads) {
  const auto& cfg = model.config;
  if (!(tape.config == cfg) || tape.layers.size() != cfg.num_layers || tape.ids.empty()) {
    throw InvalidInput("backward: tape was not produced by this model");
  }
  if (grad_output.dim() != cfg.hidden_dim) throw InvalidInput("backward: grad_output dimension mismatch");
  if (!(grads.config == cfg)) throw InvalidInput("backward: gradient set shape mismatch");

  const std::size_t seq = tape.ids.size(), d = cfg.hidden_dim, hd = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  Matrix dx(seq, d);
  for (std::size_t t = 0; t < seq; ++t) {
    for (std::size_t c = 0; c < d; ++c) dx(t, c) = grad_output[c] / static_cast<double>(seq);
  }

  for (std::size_t li = cfg.num_layers; li-- > 0;) {
    const auto& P = model.layers[li];
    auto& G = grads.layers[li];
    const auto& T = tape.layers[li];

    // Feed-forward block: x_out = x_mid + gelu(h2 W1 + b1) W2 + b2.
    matmul_tn(T.ffn_act, dx, G.w2, true);
    accumulate_column_sums(dx, G.b2);
    Matrix dact;
    matmul_nt(dx, P.w2, dact);
    for (std::size_t i = 0; i < dact.size(); ++i) dact.values()[i] *= nn::gelu_grad(T.ffn_pre.values()[i]);
    matmul_tn(T.h2, dact, G.w1, true);
    accumulate_column_sums(dact, G.b1);
    Matrix dh2;
    matmul_nt(dact, P.w1, dh2);
    Matrix dx_mid = dx;
    nn::layer_norm_backward(dh2, T.ln2, P.ln2_gain, G.ln2_gain, G.ln2_bias, dx_mid);

    // Attention block: x_mid = x_in + concat_h(softmax(Q_h K_h^T s) V_h) Wo + bo.
    matmul_tn(T.context, dx_mid, G.wo, true);
    accumulate_column_sums(dx_mid, G.bo);
    Matrix dcontext;
    matmul_nt(dx_mid, P.wo, dcontext);
    Matrix dq(seq, d), dk(seq, d), dv(seq, d);
    for (std::size_t h = 0; h < cfg.num_heads; ++h) {
      const Matrix& A = T.attention[h];
      const Matrix qh = nn::column_block(T.q, h * hd, hd);
      const Matrix kh = nn::column_block(T.k, h * hd, hd);
      const Matrix vh = nn::column_block(T.v, h * hd, hd);
      const Matrix dctx = nn::column_block(dcontext, h * hd, hd);

      Matrix dA;
      matmul_nt(dctx, vh, dA);
      Matrix dvh;
      matmul_tn(A, dctx, dvh);
      Matrix dS(seq, seq);
      for (std::size_t r = 0; r < seq; ++r) {
        const double row_dot = dot(dA.row(r), A.row(r));
        for (std::size_t c = 0; c < seq; ++c) dS(r, c) = A(r, c) * (dA(r, c) - row_dot) * scale;
      }
      Matrix dqh, dkh;
      matmul(dS, kh, dqh);
      matmul_tn(dS, qh, dkh);
      nn::add_column_block(dq, dqh, h * hd);
      nn::add_column_block(dk, dkh, h * hd);
      nn::add_column_block(dv, dvh, h * hd);
    }
    matmul_tn(T.h1, dq, G.wq, true);
    matmul_tn(T.h1, dk, G.wk, true);
    matmul_tn(T.h1, dv, G.wv, true);
    accumulate_column_sums(dq, G.bq);
    accumulate_column_sums(dk, G.bk);
    accumulate_column_sums(dv, G.bv);
    Matrix dh1;
    matmul_nt(dq, P.wq, dh1);
    matmul_nt(dk, P.wk, dh1, true);
    matmul_nt(dv, P.wv, dh1, true);
    Matrix dx_in = dx_mid;
    nn::layer_norm_backward(dh1, T.ln1, P.ln1_gain, G.ln1_gain, G.ln1_bias, dx_in);
    dx = std::move(dx_in);
  }

  for (std::size_t t = 0; t < seq; ++t) {
    auto de = grads.embedding.row(tape.ids[t]);
    auto dp = grads.positional.row(t);
    const auto g = dx.row(t);
    for (std::size_t c = 0; c < d; ++c) {
      de[c] += g[c];
      dp[c] += g[c];
    }
  }
  return dx;
}

/// Gradients of <encode(model, ids), grad_output> with respect to every parameter.
inline EncoderGradients backward(const EncoderModel& model, const ActivationTape& tape,
                                 const EmbeddingVector& grad_output) {
  EncoderGradients out{ModelGradients::zeros(model.config), {}};
  out.input = backward_accumulate(model, tape, grad_output, out.params);
  return out;
}

}  // namespace minidistill
