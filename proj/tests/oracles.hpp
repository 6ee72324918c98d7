#pragma once

// Test-only reference implementations. Nothing here calls into the library's
// numeric paths; they are written out longhand so the two can disagree.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "minidistill/model.hpp"

namespace oracle {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

inline Mat to_mat(const minidistill::Matrix& m) {
  Mat out(m.rows(), Vec(m.cols()));
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) out[r][c] = m(r, c);
  return out;
}

inline Vec to_vec(const minidistill::Matrix& m) { return Vec(m.values().begin(), m.values().end()); }

inline Mat mul(const Mat& a, const Mat& b) {
  Mat out(a.size(), Vec(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b[0].size(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < b.size(); ++k) s += a[i][k] * b[k][j];
      out[i][j] = s;
    }
  return out;
}

inline Mat affine(const Mat& x, const minidistill::Matrix& w, const minidistill::Matrix& b) {
  Mat y = mul(x, to_mat(w));
  for (auto& row : y)
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += b(0, c);
  return y;
}

inline Mat layer_norm(const Mat& x, const minidistill::Matrix& g, const minidistill::Matrix& b, double eps) {
  Mat y = x;
  for (std::size_t r = 0; r < x.size(); ++r) {
    const double n = static_cast<double>(x[r].size());
    const double mu = std::accumulate(x[r].begin(), x[r].end(), 0.0) / n;
    double var = 0.0;
    for (double v : x[r]) var += (v - mu) * (v - mu);
    var /= n;
    for (std::size_t c = 0; c < x[r].size(); ++c) y[r][c] = (x[r][c] - mu) / std::sqrt(var + eps) * g(0, c) + b(0, c);
  }
  return y;
}

// Straight-line forward pass of the pre-LN encoder with mean pooling.
inline Vec forward(const minidistill::EncoderModel& m, const std::vector<minidistill::TokenId>& ids) {
  const auto& cfg = m.config;
  const std::size_t seq = std::min(ids.size(), cfg.max_seq_len);
  const std::size_t d = cfg.hidden_dim, heads = cfg.num_heads, hd = d / heads;
  Mat x(seq, Vec(d));
  for (std::size_t t = 0; t < seq; ++t)
    for (std::size_t c = 0; c < d; ++c) x[t][c] = m.embedding(ids[t], c) + m.positional(t, c);

  for (const auto& L : m.layers) {
    const Mat h = layer_norm(x, L.ln1_gain, L.ln1_bias, minidistill::nn::kLayerNormEps);
    const Mat q = affine(h, L.wq, L.bq), k = affine(h, L.wk, L.bk), v = affine(h, L.wv, L.bv);
    Mat ctx(seq, Vec(d, 0.0));
    for (std::size_t head = 0; head < heads; ++head) {
      for (std::size_t i = 0; i < seq; ++i) {
        Vec w(seq);
        for (std::size_t j = 0; j < seq; ++j) {
          double s = 0.0;
          for (std::size_t c = 0; c < hd; ++c) s += q[i][head * hd + c] * k[j][head * hd + c];
          w[j] = s / std::sqrt(static_cast<double>(hd));
        }
        const double mx = *std::max_element(w.begin(), w.end());
        double z = 0.0;
        for (auto& e : w) z += (e = std::exp(e - mx));
        for (std::size_t j = 0; j < seq; ++j)
          for (std::size_t c = 0; c < hd; ++c) ctx[i][head * hd + c] += w[j] / z * v[j][head * hd + c];
      }
    }
    const Mat attn = affine(ctx, L.wo, L.bo);
    for (std::size_t t = 0; t < seq; ++t)
      for (std::size_t c = 0; c < d; ++c) x[t][c] += attn[t][c];

    const Mat h2 = layer_norm(x, L.ln2_gain, L.ln2_bias, minidistill::nn::kLayerNormEps);
    Mat u = affine(h2, L.w1, L.b1);
    for (auto& row : u)
      for (auto& e : row) e = 0.5 * e * (1.0 + std::erf(e / std::sqrt(2.0)));
    const Mat f = affine(u, L.w2, L.b2);
    for (std::size_t t = 0; t < seq; ++t)
      for (std::size_t c = 0; c < d; ++c) x[t][c] += f[t][c];
  }
  Vec pooled(d, 0.0);
  for (std::size_t t = 0; t < seq; ++t)
    for (std::size_t c = 0; c < d; ++c) pooled[c] += x[t][c] / static_cast<double>(seq);
  return pooled;
}

inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

struct GradCheckResult {
  double worst_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t checked = 0;
};

// Central differences over every parameter entry of `model`. `loss` must
// evaluate the scalar objective for the current parameter values.
inline GradCheckResult check_gradients(minidistill::EncoderModel& model, const minidistill::ModelGradients& analytic,
                                       const std::function<double()>& loss, double h, double floor) {
  GradCheckResult res;
  auto params = model.parameters();
  const auto grads = analytic.parameters();
  std::vector<std::string> names;
  model.for_each_parameter([&](const std::string& n, const minidistill::Matrix&) { names.push_back(n); });
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto vals = params[p]->values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double saved = vals[i];
      // Divide by the step actually representable, not the nominal 2h.
      const double hi = saved + h, lo = saved - h;
      vals[i] = hi;
      const double up = loss();
      vals[i] = lo;
      const double down = loss();
      vals[i] = saved;
      const double numeric = (up - down) / (hi - lo);
      const double err = relative_error(grads[p]->values()[i], numeric, floor);
      ++res.checked;
      if (err > res.worst_relative_error) {
        res.worst_relative_error = err;
        res.worst_parameter = names[p] + "[" + std::to_string(i) + "]";
      }
    }
  }
  return res;
}

// ---- ranking metrics, by definition, one query at a time ----

inline double brute_rr(const std::vector<int>& rel_flags, std::size_t k) {
  for (std::size_t i = 0; i < rel_flags.size() && i < k; ++i)
    if (rel_flags[i]) return 1.0 / static_cast<double>(i + 1);
  return 0.0;
}

inline double brute_dcg(const std::vector<int>& rel_flags, std::size_t k) {
  double s = 0.0;
  for (std::size_t i = 0; i < rel_flags.size() && i < k; ++i)
    if (rel_flags[i]) s += 1.0 / std::log2(static_cast<double>(i) + 2.0);
  return s;
}

// Ideal DCG as the maximum DCG over every ordering of the flags.
inline double brute_ndcg(std::vector<int> rel_flags, std::size_t k) {
  const double dcg = brute_dcg(rel_flags, k);
  std::sort(rel_flags.begin(), rel_flags.end());
  double best = 0.0;
  do {
    best = std::max(best, brute_dcg(rel_flags, k));
  } while (std::next_permutation(rel_flags.begin(), rel_flags.end()));
  return best == 0.0 ? 0.0 : dcg / best;
}

inline double brute_ap(const std::vector<int>& rel_flags, std::size_t k, std::size_t total_relevant) {
  if (total_relevant == 0) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < rel_flags.size() && i < k; ++i) {
    if (!rel_flags[i]) continue;
    std::size_t hits = 0;
    for (std::size_t j = 0; j <= i; ++j) hits += rel_flags[j] ? 1 : 0;
    s += static_cast<double>(hits) / static_cast<double>(i + 1);
  }
  return s / static_cast<double>(std::min(k, total_relevant));
}

// Spearman by ranking through pairwise comparison counts, then Pearson.
inline Vec rank_by_counting(const Vec& xs) {
  Vec ranks(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    double less = 0, equal = 0;
    for (double y : xs) {
      if (y < xs[i]) ++less;
      if (y == xs[i]) ++equal;
    }
    ranks[i] = less + (equal + 1.0) / 2.0;
  }
  return ranks;
}

inline double pearson(const Vec& a, const Vec& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i] / n;
    mb += b[i] / n;
  }
  double num = 0, da = 0, db = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - ma) * (b[i] - mb);
    da += (a[i] - ma) * (a[i] - ma);
    db += (b[i] - mb) * (b[i] - mb);
  }
  return num / std::sqrt(da * db);
}

inline double spearman(const Vec& a, const Vec& b) { return pearson(rank_by_counting(a), rank_by_counting(b)); }

// Quartiles by sorting and interpolating at p (n - 1).
inline Vec sort_and_interpolate(Vec xs) {
  std::sort(xs.begin(), xs.end());
  Vec out;
  for (double p : {0.25, 0.5, 0.75}) {
    const double h = p * static_cast<double>(xs.size() - 1);
    const double lo = std::floor(h), hi = std::ceil(h);
    out.push_back(xs[static_cast<std::size_t>(lo)] +
                  (h - lo) * (xs[static_cast<std::size_t>(hi)] - xs[static_cast<std::size_t>(lo)]));
  }
  return out;
}

}  // namespace oracle
