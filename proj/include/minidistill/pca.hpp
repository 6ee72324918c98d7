#pragma once

// PCA projection head: reduces d_in-dimensional teacher embeddings to k
// dimensions. Fitted once, frozen afterwards.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "minidistill/error.hpp"
#include "minidistill/tensor.hpp"

namespace minidistill {

struct PcaProjection {
  EmbeddingVector mean;             // d_in
  Matrix components;                // d_in x k, orthonormal columns
  std::vector<double> explained_variance;  // k, non-increasing

  std::size_t input_dim() const { return components.rows(); }
  std::size_t output_dim() const { return components.cols(); }

  void check_invariants(double tol = 1e-6) const {
    const std::size_t d = input_dim(), k = output_dim();
    if (mean.dim() != d || explained_variance.size() != k || k == 0) {
      throw InvalidInput("pca projection: inconsistent shapes");
    }
    for (std::size_t i = 0; i < k; ++i) {
      if (i > 0 && explained_variance[i] > explained_variance[i - 1]) {
        throw InvalidInput("pca projection: explained variance not sorted");
      }
      for (std::size_t j = i; j < k; ++j) {
        double s = 0.0;
        for (std::size_t r = 0; r < d; ++r) s += components(r, i) * components(r, j);
        if (std::abs(s - (i == j ? 1.0 : 0.0)) > tol) throw InvalidInput("pca projection: components not orthonormal");
      }
    }
  }

  friend bool operator==(const PcaProjection&, const PcaProjection&) = default;
};

namespace detail {

struct SymmetricEigen {
  std::vector<double> values;  // descending
  Matrix vectors;              // columns match values
};

// Cyclic Jacobi rotations on a symmetric matrix until the off-diagonal mass
// is negligible.
inline SymmetricEigen jacobi_eigen(Matrix a) {
  const std::size_t n = a.rows();
  Matrix v(n, n);
  for (std::size_t i = 0; i < n; ++i) v(i, i) = 1.0;

  auto off_norm = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) s += a(i, j) * a(i, j);
    return s;
  };
  double total = 0.0;
  for (double x : a.values()) total += x * x;

  for (int sweep = 0; sweep < 100; ++sweep) {
    if (off_norm() <= 1e-30 * std::max(total, 1e-300)) break;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return a(x, x) > a(y, y); });
  SymmetricEigen out{std::vector<double>(n), Matrix(n, n)};
  for (std::size_t j = 0; j < n; ++j) {
    out.values[j] = a(order[j], order[j]);
    for (std::size_t i = 0; i < n; ++i) out.vectors(i, j) = v(i, order[j]);
  }
  return out;
}

}  // namespace detail

// Rows of `samples` are observations. Components are the top-k eigenvectors of
// the sample covariance (denominator n - 1), each flipped so that its
// largest-magnitude entry is positive.
inline PcaProjection fit_pca(const Matrix& samples, std::size_t k) {
  const std::size_t n = samples.rows(), d = samples.cols();
  if (n < 2) throw InvalidInput("fit_pca: need at least 2 samples");
  if (k < 1 || k > std::min(n - 1, d)) {
    throw InvalidInput("fit_pca: k = " + std::to_string(k) + " outside [1, " +
                       std::to_string(std::min(n - 1, d)) + "]");
  }

  PcaProjection p;
  p.mean = EmbeddingVector(d);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) p.mean[c] += samples(r, c);
  for (auto& m : p.mean.values) m /= static_cast<double>(n);

  Matrix centered(n, d);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) centered(r, c) = samples(r, c) - p.mean[c];
  Matrix cov;
  matmul_tn(centered, centered, cov);
  for (auto& x : cov.values()) x /= static_cast<double>(n - 1);

  auto eig = detail::jacobi_eigen(cov);

  const double largest = std::max(eig.values.front(), 0.0);
  const double tol = largest * static_cast<double>(d) * 1e-12;
  std::size_t rank = 0;
  for (double ev : eig.values) rank += ev > tol && largest > 0.0 ? 1 : 0;
  if (rank < k) {
    throw InvalidInput("fit_pca: data has rank " + std::to_string(rank) + ", cannot fit k = " +
                       std::to_string(k) + " components");
  }

  p.components = Matrix(d, k);
  p.explained_variance.resize(k);
  for (std::size_t j = 0; j < k; ++j) {
    std::size_t arg = 0;
    for (std::size_t i = 1; i < d; ++i) {
      if (std::abs(eig.vectors(i, j)) > std::abs(eig.vectors(arg, j))) arg = i;
    }
    const double sign = eig.vectors(arg, j) < 0.0 ? -1.0 : 1.0;
    for (std::size_t i = 0; i < d; ++i) p.components(i, j) = sign * eig.vectors(i, j);
    p.explained_variance[j] = std::max(eig.values[j], 0.0);
  }
  return p;
}

/// components^T (v - mean)
inline EmbeddingVector project(const PcaProjection& p, const EmbeddingVector& v) {
  const std::size_t d = p.input_dim(), k = p.output_dim();
  if (v.dim() != d) {
    throw InvalidInput("project: expected dimension " + std::to_string(d) + ", got " + std::to_string(v.dim()));
  }
  EmbeddingVector out(k);
  for (std::size_t i = 0; i < d; ++i) {
    const double centered = v[i] - p.mean[i];
    for (std::size_t j = 0; j < k; ++j) out[j] += p.components(i, j) * centered;
  }
  return out;
}

/// mean + components * z
inline EmbeddingVector reconstruct(const PcaProjection& p, const EmbeddingVector& z) {
  const std::size_t d = p.input_dim(), k = p.output_dim();
  if (z.dim() != k) throw InvalidInput("reconstruct: dimension mismatch");
  EmbeddingVector out = p.mean;
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < k; ++j) out[i] += p.components(i, j) * z[j];
  return out;
}

/// Mean over rows of |x - reconstruct(project(x))|^2.
inline double reconstruction_error(const PcaProjection& p, const Matrix& samples) {
  double total = 0.0;
  for (std::size_t r = 0; r < samples.rows(); ++r) {
    EmbeddingVector x(std::vector<double>(samples.row(r).begin(), samples.row(r).end()));
    const auto back = reconstruct(p, project(p, x));
    for (std::size_t c = 0; c < x.dim(); ++c) total += (x[c] - back[c]) * (x[c] - back[c]);
  }
  return total / static_cast<double>(samples.rows());
}

}  // namespace minidistill
