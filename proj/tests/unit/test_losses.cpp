#include <doctest.h>

#include <cmath>
#include <numeric>

#include "nutri/errors.hpp"
#include "nutri/losses.hpp"
#include "nutri/ops.hpp"
#include "support/gradcheck.hpp"

using namespace nutri;
using nutri::testing::gradcheck;
using nutri::testing::random_tensor;

TEST_CASE("pmae hand cases") {
  const std::vector<double> t{100, 200, 300}, p{110, 180, 300};
  // MAE 10, mean 200.
  CHECK(std::fabs(pmae(t, p) - 0.05) < 1e-12);
  CHECK(pmae(t, t) == 0.0);
  const std::vector<double> z{0, 0, 0};
  CHECK(std::fabs(pmae(t, z) - 1.0) < 1e-12);
  CHECK_THROWS_AS(pmae(z, t), DegenerateInputError);
  CHECK_THROWS_AS(pmae(t, std::vector<double>{1, 2}), DimensionError);
  CHECK_THROWS_AS(pmae(std::vector<double>{}, std::vector<double>{}), DimensionError);
}

TEST_CASE("kpi closed forms") {
  CHECK(kpi(0.5) == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(kpi(0.0) == 1.0);
  CHECK(kpi(-0.3) == 1.0);
  CHECK(kpi(1.0) == doctest::Approx(1.0 / kKpiEpsilon));
  CHECK(kpi(5.0) == doctest::Approx(1.0 / kKpiEpsilon));
  CHECK(kpi(0.25) < kpi(0.5));
}

TEST_CASE("task weights: fixed point and geometric convergence") {
  TaskWeights tw;
  const std::array<double, kNumTasks> ones{1, 1, 1, 1, 1};
  const auto same = update_weights(tw, ones);
  for (double w : same.w) CHECK(w == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(same.t == 1);

  // Constant KPIs: unnormalized weights approach k geometrically, the gap
  // shrinking by (1 - alpha) each step.
  const std::array<double, kNumTasks> k{2, 1.5, 1.2, 3, 1.1};
  TaskWeights raw;
  std::array<double, kNumTasks> prev_gap{};
  for (std::size_t i = 0; i < kNumTasks; ++i) prev_gap[i] = raw.w[i] - k[i];
  for (int step = 0; step < 10; ++step) {
    raw.w = smooth_weights(raw, k);
    for (std::size_t i = 0; i < kNumTasks; ++i) {
      const double gap = raw.w[i] - k[i];
      CHECK(gap == doctest::Approx(0.7 * prev_gap[i]).epsilon(1e-12));
      prev_gap[i] = gap;
    }
  }
  // Normalized update: sums to 5 and converges to 5 k / sum(k).
  TaskWeights norm;
  for (int step = 0; step < 200; ++step) norm = update_weights(norm, k);
  const double ks = std::accumulate(k.begin(), k.end(), 0.0);
  CHECK(std::accumulate(norm.w.begin(), norm.w.end(), 0.0) == doctest::Approx(5.0));
  for (std::size_t i = 0; i < kNumTasks; ++i) CHECK(norm.w[i] == doctest::Approx(5.0 * k[i] / ks).epsilon(1e-9));
  CHECK_THROWS_AS(update_weights(norm, {1, 1, 0, 1, 1}), ParameterError);
}

TEST_CASE("nutrition loss equals weighted per-task pmae and differentiates") {
  auto preds = random_tensor({6, 5}, 1, 10, 200, true);
  const auto targets = random_tensor({6, 5}, 2, 10, 200);
  const TaskWeights uniform;
  const auto per_task = batch_pmae(preds, targets);
  const double mean_pmae = std::accumulate(per_task.begin(), per_task.end(), 0.0) / kNumTasks;
  CHECK(nutri_loss(preds, targets, uniform).item() == doctest::Approx(5.0 * mean_pmae).epsilon(1e-12));

  // Per-task PMAE against the scalar metric.
  for (std::size_t i = 0; i < kNumTasks; ++i) {
    std::vector<double> t, p;
    for (std::size_t b = 0; b < 6; ++b) {
      t.push_back(targets.data()[b * 5 + i]);
      p.push_back(preds.data()[b * 5 + i]);
    }
    CHECK(per_task[i] == doctest::Approx(pmae(t, p)).epsilon(1e-12));
  }

  TaskWeights tw;
  tw.w = {0.5, 2.0, 1.0, 0.7, 0.8};
  double expect = 0.0;
  for (std::size_t i = 0; i < kNumTasks; ++i) expect += tw.w[i] * per_task[i];
  CHECK(nutri_loss(preds, targets, tw).item() == doctest::Approx(expect).epsilon(1e-12));
  CHECK(gradcheck([&] { return nutri_loss(preds, targets, tw); }, {preds}).max_rel_error < 1e-4);

  CHECK_THROWS_AS(nutri_loss(preds, Tensor::zeros({6, 5}), tw), DegenerateInputError);
  CHECK_THROWS_AS(nutri_loss(preds, random_tensor({5, 5}, 3), tw), DimensionError);
}

TEST_CASE("total loss adds the weighted alignment term") {
  const auto n = Tensor::scalar(2.0), a = Tensor::scalar(0.5);
  CHECK(total_loss(n, a, 0.1).item() == doctest::Approx(2.05));
  CHECK(total_loss(n, Tensor(), 0.1).item() == 2.0);
  CHECK(total_loss(n, a, 0.0).item() == 2.0);
  CHECK_THROWS_AS(total_loss(n, a, -1.0), ParameterError);
}

TEST_CASE("dataset pmae and the mean predictor") {
  std::vector<NutritionVector> truth(4), pred(4);
  for (int s = 0; s < 4; ++s)
    for (int i = 0; i < kNumTasks; ++i) {
      truth[s][i] = 10.0 * (s + 1) + i;
      pred[s][i] = truth[s][i] + (s % 2 ? 2.0 : -2.0);
    }
  const auto r = evaluate_pmae(truth, pred);
  CHECK(r.samples == 4);
  for (int i = 0; i < kNumTasks; ++i) CHECK(r.task_percent[i] == doctest::Approx(100.0 * 2.0 / (25.0 + i)).epsilon(1e-12));

  // Mean predictor: mean |x - m| / m. Values 10,20,30,40 + i: MAD = 10.
  const auto mp = mean_predictor_pmae(truth);
  for (int i = 0; i < kNumTasks; ++i) CHECK(mp.task_percent[i] == doctest::Approx(100.0 * 10.0 / (25.0 + i)).epsilon(1e-12));
  std::vector<NutritionVector> m_pred(4);
  for (auto& v : m_pred)
    for (int i = 0; i < kNumTasks; ++i) v[i] = 25.0 + i;
  const auto as_pred = evaluate_pmae(truth, m_pred);
  for (int i = 0; i < kNumTasks; ++i) CHECK(as_pred.task_percent[i] == doctest::Approx(mp.task_percent[i]).epsilon(1e-12));
  CHECK_THROWS_AS(evaluate_pmae(truth, {}), DimensionError);
  CHECK_THROWS_AS(mean_predictor_pmae({}), DimensionError);
}
