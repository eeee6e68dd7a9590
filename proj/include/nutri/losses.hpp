#pragma once

// PMAE metric and the difficulty-weighted multi-task nutrition loss.

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "nutri/model.hpp"
#include "nutri/tensor.hpp"

namespace nutri {

inline constexpr double kPmaeDenominatorFloor = 1e-8;
inline constexpr double kKpiEpsilon = 1e-3;
inline constexpr double kDefaultSmoothing = 0.3;

// MAE / mean(y_true) as a fraction (multiply by 100 for percent). Throws
// DegenerateInputError when mean(y_true) <= 1e-8.
double pmae(std::span<const double> y_true, std::span<const double> y_pred);

// 1 / (1 - clamp(p, 0, 1 - eps)).
double kpi(double pmae_fraction, double eps = kKpiEpsilon);

struct TaskWeights {
  std::array<double, kNumTasks> w{1.0, 1.0, 1.0, 1.0, 1.0};
  double smoothing = kDefaultSmoothing;
  std::int64_t t = 0;
};

// alpha * kpi + (1 - alpha) * w_prev, without renormalization.
std::array<double, kNumTasks> smooth_weights(const TaskWeights& tw, const std::array<double, kNumTasks>& kpis);

// Smoothing step followed by renormalization to sum(w) == kNumTasks.
TaskWeights update_weights(const TaskWeights& tw, const std::array<double, kNumTasks>& kpis);

// Per-task batch PMAE as fractions; preds and targets are [N, 5].
std::array<double, kNumTasks> batch_pmae(const Tensor& preds, const Tensor& targets);

// sum_i w_i * PMAE_i over the batch. The per-task target mean is a
// constant of the batch. Throws DegenerateInputError when a task's batch
// target mean is <= 1e-8.
Tensor nutri_loss(const Tensor& preds, const Tensor& targets, const TaskWeights& tw);

// nutri + lambda * align. `align` may be undefined (treated as 0).
Tensor total_loss(const Tensor& nutri, const Tensor& align, double lambda);

struct PmaeReport {
  std::array<double, kNumTasks> task_percent{};
  double mean_percent = 0.0;
  std::size_t samples = 0;

  bool operator==(const PmaeReport&) const = default;
};

// Dataset-level PMAE per task.
PmaeReport evaluate_pmae(const std::vector<NutritionVector>& truth, const std::vector<NutritionVector>& predicted);

// Mean absolute deviation over mean, per task: the PMAE of predicting the
// split mean for every sample.
PmaeReport mean_predictor_pmae(const std::vector<NutritionVector>& truth);

}  // namespace nutri
