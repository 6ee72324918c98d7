#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "minidistill/error.hpp"
#include "minidistill/tensor.hpp"

namespace minidistill {

struct ScheduleConfig {
  double peak_lr = 2e-5;
  double warmup_fraction = 0.1;
  std::size_t total_steps = 1;

  void validate() const {
    if (!(peak_lr > 0.0)) throw InvalidInput("peak_lr must be > 0");
    if (!(warmup_fraction > 0.0 && warmup_fraction <= 1.0)) {
      throw InvalidInput("warmup_fraction must lie in (0, 1]");
    }
    if (total_steps < 1) throw InvalidInput("total_steps must be >= 1");
  }

  std::size_t warmup_steps() const {
    // The slack keeps products like 0.1 * 30 = 3.0000000000000004 from rounding up.
    const double exact = warmup_fraction * static_cast<double>(total_steps);
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(exact - 1e-9)));
  }
};

/// Linear warmup over ceil(fraction * total) steps, then constant.
inline double warmup_lr(std::size_t step, const ScheduleConfig& cfg) {
  cfg.validate();
  if (step >= cfg.total_steps) {
    throw InvalidInput("warmup_lr: step " + std::to_string(step) + " outside [0, " +
                       std::to_string(cfg.total_steps) + ")");
  }
  const std::size_t w = cfg.warmup_steps();
  if (step + 1 < w) return cfg.peak_lr * (static_cast<double>(step + 1) / static_cast<double>(w));
  return cfg.peak_lr;
}

struct AdamState {
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  std::vector<Matrix> first_moment;
  std::vector<Matrix> second_moment;
  std::uint64_t t = 0;
};

/// Bias-corrected Adam update of `params` in place. Lazily sizes a fresh state.
inline void adam_step(std::span<Matrix* const> params, std::span<const Matrix* const> grads, AdamState& state,
                      double lr) {
  if (params.size() != grads.size()) throw InvalidInput("adam_step: parameter/gradient count mismatch");
  if (state.first_moment.empty() && state.t == 0) {
    for (const auto* p : params) {
      state.first_moment.emplace_back(p->rows(), p->cols());
      state.second_moment.emplace_back(p->rows(), p->cols());
    }
  }
  if (state.first_moment.size() != params.size()) throw InvalidInput("adam_step: state/parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i]->same_shape(*grads[i]) || !params[i]->same_shape(state.first_moment[i])) {
      throw InvalidInput("adam_step: shape mismatch in tensor " + std::to_string(i));
    }
  }

  ++state.t;
  const double c1 = 1.0 - std::pow(AdamState::kBeta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(AdamState::kBeta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i]->values();
    const auto g = grads[i]->values();
    auto m = state.first_moment[i].values();
    auto v = state.second_moment[i].values();
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = AdamState::kBeta1 * m[j] + (1.0 - AdamState::kBeta1) * g[j];
      v[j] = AdamState::kBeta2 * v[j] + (1.0 - AdamState::kBeta2) * g[j] * g[j];
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      p[j] -= lr * mhat / (std::sqrt(vhat) + AdamState::kEps);
    }
  }
}

}  // namespace minidistill
