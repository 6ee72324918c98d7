#pragma once

// Training objectives. Each returns the loss together with its exact gradient
// with respect to the input embeddings.

#include <cmath>
#include <span>
#include <vector>

#include "minidistill/error.hpp"
#include "minidistill/tensor.hpp"

namespace minidistill {

struct TripletConfig {
  double epsilon = 1.0;  // margin; Euclidean distance

  void validate() const {
    if (!(epsilon > 0.0)) throw InvalidInput("triplet margin must be > 0");
  }
};

struct TripletLossResult {
  double loss = 0.0;
  EmbeddingVector grad_query, grad_positive, grad_negative;
};

namespace detail {

inline void require_same_dim(const EmbeddingVector& a, const EmbeddingVector& b, const char* what) {
  if (a.dim() != b.dim()) throw InvalidInput(std::string(what) + ": dimension mismatch");
}

inline double distance(const EmbeddingVector& a, const EmbeddingVector& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

}  // namespace detail

/// max(|q - p| - |q - n| + epsilon, 0). Zero (sub)gradient when the hinge is
/// inactive or exactly at the kink, and for a distance term that is zero.
inline TripletLossResult triplet_loss(const EmbeddingVector& q, const EmbeddingVector& p,
                                      const EmbeddingVector& n, const TripletConfig& cfg) {
  cfg.validate();
  detail::require_same_dim(q, p, "triplet_loss");
  detail::require_same_dim(q, n, "triplet_loss");
  const std::size_t d = q.dim();
  TripletLossResult r{0.0, EmbeddingVector(d), EmbeddingVector(d), EmbeddingVector(d)};
  const double dp = detail::distance(q, p);
  const double dn = detail::distance(q, n);
  const double z = dp - dn + cfg.epsilon;
  if (z <= 0.0) return r;
  r.loss = z;
  for (std::size_t i = 0; i < d; ++i) {
    const double up = dp > 0.0 ? (q[i] - p[i]) / dp : 0.0;
    const double un = dn > 0.0 ? (q[i] - n[i]) / dn : 0.0;
    r.grad_query[i] = up - un;
    r.grad_positive[i] = -up;
    r.grad_negative[i] = un;
  }
  return r;
}

/// One distillation item: student source, student target, teacher source.
struct DistillItem {
  EmbeddingVector student_source;
  EmbeddingVector student_target;
  EmbeddingVector teacher_source;
};

struct DistillLossResult {
  double loss = 0.0;
  std::vector<EmbeddingVector> grad_source;  // per item, d loss / d student_source
  std::vector<EmbeddingVector> grad_target;  // per item, d loss / d student_target
};

// (1/|batch|) sum_i |s_x - t_x|^2 + |s_t - t_x|^2, where t_x is the teacher's
// source-side embedding. Both student encodings are pulled toward it.
inline DistillLossResult distill_mse_batch(std::span<const DistillItem> batch) {
  if (batch.empty()) throw InvalidInput("distill_mse_batch: empty batch");
  const std::size_t d = batch.front().teacher_source.dim();
  const double inv = 1.0 / static_cast<double>(batch.size());
  DistillLossResult r;
  r.grad_source.reserve(batch.size());
  r.grad_target.reserve(batch.size());
  for (const auto& item : batch) {
    if (item.student_source.dim() != d || item.student_target.dim() != d || item.teacher_source.dim() != d) {
      throw InvalidInput("distill_mse_batch: dimension mismatch");
    }
    EmbeddingVector gs(d), gt(d);
    double sum = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double es = item.student_source[i] - item.teacher_source[i];
      const double et = item.student_target[i] - item.teacher_source[i];
      sum += es * es + et * et;
      gs[i] = 2.0 * es * inv;
      gt[i] = 2.0 * et * inv;
    }
    r.loss += sum;
    r.grad_source.push_back(std::move(gs));
    r.grad_target.push_back(std::move(gt));
  }
  r.loss *= inv;
  return r;
}

struct CosineRegressionResult {
  double loss = 0.0;
  double cosine = 0.0;
  EmbeddingVector grad_a, grad_b;
};

/// (cos(a, b) - gold)^2. Uses the unclamped cosine so the gradient is exact.
inline CosineRegressionResult cosine_regression_loss(const EmbeddingVector& a, const EmbeddingVector& b,
                                                     double gold) {
  detail::require_same_dim(a, b, "cosine_regression_loss");
  if (!(gold >= 0.0 && gold <= 1.0)) throw InvalidInput("cosine_regression_loss: gold outside [0, 1]");
  const double na = std::sqrt(squared_norm(a.span()));
  const double nb = std::sqrt(squared_norm(b.span()));
  if (na == 0.0 || nb == 0.0) throw InvalidInput("cosine_regression_loss: zero-norm input");
  const std::size_t d = a.dim();
  const double c = dot(a.span(), b.span()) / (na * nb);
  const double diff = c - gold;
  CosineRegressionResult r{diff * diff, c, EmbeddingVector(d), EmbeddingVector(d)};
  // d cos / d a = b / (|a||b|) - cos * a / |a|^2
  for (std::size_t i = 0; i < d; ++i) {
    r.grad_a[i] = 2.0 * diff * (b[i] / (na * nb) - c * a[i] / (na * na));
    r.grad_b[i] = 2.0 * diff * (a[i] / (na * nb) - c * b[i] / (nb * nb));
  }
  return r;
}

}  // namespace minidistill
