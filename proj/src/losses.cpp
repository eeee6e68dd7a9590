#include "nutri/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "nutri/errors.hpp"
#include "nutri/ops.hpp"

namespace nutri {

double pmae(std::span<const double> y_true, std::span<const double> y_pred) {
  if (y_true.empty() || y_true.size() != y_pred.size()) {
    throw DimensionError("pmae: need equal, nonzero lengths");
  }
  double abs_err = 0.0, total = 0.0;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    abs_err += std::fabs(y_true[i] - y_pred[i]);
    total += y_true[i];
  }
  const auto n = static_cast<double>(y_true.size());
  const double denom = total / n;
  if (!(denom > kPmaeDenominatorFloor)) {
    throw DegenerateInputError("pmae: mean of targets " + std::to_string(denom) + " is not above 1e-8");
  }
  return (abs_err / n) / denom;
}

double kpi(double pmae_fraction, double eps) {
  const double p = std::clamp(pmae_fraction, 0.0, 1.0 - eps);
  return 1.0 / (1.0 - p);
}

std::array<double, kNumTasks> smooth_weights(const TaskWeights& tw, const std::array<double, kNumTasks>& kpis) {
  std::array<double, kNumTasks> out{};
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = tw.smoothing * kpis[i] + (1.0 - tw.smoothing) * tw.w[i];
  return out;
}

TaskWeights update_weights(const TaskWeights& tw, const std::array<double, kNumTasks>& kpis) {
  for (double k : kpis) {
    if (!(k > 0.0)) throw ParameterError("update_weights: KPIs must be positive");
  }
  TaskWeights next = tw;
  next.w = smooth_weights(tw, kpis);
  const double s = std::accumulate(next.w.begin(), next.w.end(), 0.0);
  for (auto& w : next.w) w *= static_cast<double>(kNumTasks) / s;
  ++next.t;
  return next;
}

namespace {

void check_batch(const Tensor& preds, const Tensor& targets) {
  if (preds.rank() != 2 || preds.dim(1) != kNumTasks || preds.shape() != targets.shape()) {
    throw DimensionError("nutrition loss: expected matching [N, 5] tensors, got " + shape_str(preds.shape()) +
                         " and " + shape_str(targets.shape()));
  }
}

std::array<double, kNumTasks> target_means(const Tensor& targets) {
  std::array<double, kNumTasks> m{};
  const auto n = static_cast<std::size_t>(targets.dim(0));
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t i = 0; i < kNumTasks; ++i) m[i] += targets.data()[b * kNumTasks + i];
  for (std::size_t i = 0; i < kNumTasks; ++i) {
    m[i] /= static_cast<double>(n);
    if (!(m[i] > kPmaeDenominatorFloor)) {
      throw DegenerateInputError(std::string("nutrition loss: batch target mean for ") + kTaskNames[i] +
                                 " is not above 1e-8; resample the batch or floor the denominator");
    }
  }
  return m;
}

}  // namespace

std::array<double, kNumTasks> batch_pmae(const Tensor& preds, const Tensor& targets) {
  check_batch(preds, targets);
  const auto means = target_means(targets);
  std::array<double, kNumTasks> out{};
  const auto n = static_cast<std::size_t>(targets.dim(0));
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t i = 0; i < kNumTasks; ++i) {
      out[i] += std::fabs(preds.data()[b * kNumTasks + i] - targets.data()[b * kNumTasks + i]);
    }
  for (std::size_t i = 0; i < kNumTasks; ++i) out[i] = out[i] / static_cast<double>(n) / means[i];
  return out;
}

Tensor nutri_loss(const Tensor& preds, const Tensor& targets, const TaskWeights& tw) {
  check_batch(preds, targets);
  const auto means = target_means(targets);
  std::vector<double> coeff(kNumTasks);
  for (std::size_t i = 0; i < kNumTasks; ++i) coeff[i] = tw.w[i] / means[i];
  const auto mae = mean_batch(abs(sub(preds, targets.detach())));  // [5]
  return sum(mul(mae, Tensor::from({kNumTasks}, std::move(coeff))));
}

Tensor total_loss(const Tensor& nutri, const Tensor& align, double lambda) {
  if (!(lambda >= 0.0)) throw ParameterError("total_loss: lambda must be >= 0");
  if (!align.defined() || lambda == 0.0) return nutri;
  return add(nutri, scale(align, lambda));
}

PmaeReport evaluate_pmae(const std::vector<NutritionVector>& truth, const std::vector<NutritionVector>& predicted) {
  if (truth.empty() || truth.size() != predicted.size()) {
    throw DimensionError("evaluate_pmae: need equal, nonzero sample counts");
  }
  PmaeReport r;
  r.samples = truth.size();
  std::vector<double> t(truth.size()), p(truth.size());
  for (std::size_t i = 0; i < kNumTasks; ++i) {
    for (std::size_t s = 0; s < truth.size(); ++s) {
      t[s] = truth[s][i];
      p[s] = predicted[s][i];
    }
    r.task_percent[i] = 100.0 * pmae(t, p);
  }
  r.mean_percent = std::accumulate(r.task_percent.begin(), r.task_percent.end(), 0.0) / kNumTasks;
  return r;
}

PmaeReport mean_predictor_pmae(const std::vector<NutritionVector>& truth) {
  if (truth.empty()) throw DimensionError("mean_predictor_pmae: empty split");
  NutritionVector m;
  for (const auto& v : truth) m += v;
  m = (1.0 / static_cast<double>(truth.size())) * m;
  PmaeReport r;
  r.samples = truth.size();
  for (std::size_t i = 0; i < kNumTasks; ++i) {
    if (!(m[i] > kPmaeDenominatorFloor)) throw DegenerateInputError("mean_predictor_pmae: zero target mean");
    double mad = 0.0;
    for (const auto& v : truth) mad += std::fabs(v[i] - m[i]);
    r.task_percent[i] = 100.0 * (mad / static_cast<double>(truth.size())) / m[i];
  }
  r.mean_percent = std::accumulate(r.task_percent.begin(), r.task_percent.end(), 0.0) / kNumTasks;
  return r;
}

}  // namespace nutri
