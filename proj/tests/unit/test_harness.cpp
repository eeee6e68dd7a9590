#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>

#include "nutri/checkpoint.hpp"
#include "nutri/config.hpp"
#include "nutri/errors.hpp"
#include "nutri/ops.hpp"
#include "nutri/optim.hpp"
#include "nutri/report.hpp"
#include "nutri/trainer.hpp"

using namespace nutri;
namespace fs = std::filesystem;

namespace {

Config tiny_config(const fs::path& root) {
  Config c;
  c.data.root = root.string();
  c.data.synth.canvas = 32;
  c.data.synth.samples = 40;
  c.model.input_size = 16;
  c.model.widths = {4, 8};
  c.model.unify_width = 8;
  c.model.unify_grid = 2;
  c.model.attn_dim = 8;
  c.model.refiner_hidden = 4;
  c.train.epochs = 2;
  c.train.batch_size = 8;
  c.train.verbose = false;
  c.optim.lr = 3e-3;
  return c;
}

// One corpus shared by the training tests.
const Experiment& experiment() {
  static const Experiment ex = [] {
    const auto root = fs::temp_directory_path() / "nutri_harness_corpus";
    fs::remove_all(root);
    return prepare_experiment(tiny_config(root));
  }();
  return ex;
}

Config experiment_config() { return tiny_config(fs::temp_directory_path() / "nutri_harness_corpus"); }

bool same_values(const std::vector<NutritionVector>& a, const std::vector<NutritionVector>& b) {
  return a == b;
}

}  // namespace

TEST_CASE("cosine schedule") {
  CHECK(cosine_lr(0.1, 0, 10) == doctest::Approx(0.1));
  CHECK(cosine_lr(0.1, 5, 10) == doctest::Approx(0.05));
  CHECK(cosine_lr(0.1, 10, 10) == doctest::Approx(0.0));
  CHECK(cosine_lr(0.1, 3, 0) == 0.1);
  for (int e = 1; e <= 10; ++e) CHECK(cosine_lr(0.1, e, 10) < cosine_lr(0.1, e - 1, 10));
}

TEST_CASE("adam step against a hand computation") {
  auto p = Tensor::from({2}, {1.0, -2.0}, true);
  auto frozen = Tensor::from({1}, {3.0}, true);
  ParamList params;
  params.add("p", p);
  params.add("frozen", frozen);
  Adam adam(params, {0.1, 0.9, 0.999, 1e-8, 0.01});
  backward(sum(mul(p, Tensor::from({2}, {0.5, -1.0}))));
  adam.step();
  // g' = g + wd * p; first step: m_hat = g', v_hat = g'^2.
  const double g0 = 0.5 + 0.01 * 1.0, g1 = -1.0 + 0.01 * -2.0;
  CHECK(p.data()[0] == doctest::Approx(1.0 - 0.1 * g0 / (std::fabs(g0) + 1e-8)).epsilon(1e-14));
  CHECK(p.data()[1] == doctest::Approx(-2.0 - 0.1 * g1 / (std::fabs(g1) + 1e-8)).epsilon(1e-14));
  CHECK(frozen.data()[0] == 3.0);  // no gradient, untouched
  CHECK(adam.steps() == 1);

  // Second step with the same gradient, by hand.
  params.zero_grad();
  backward(sum(mul(p, Tensor::from({2}, {0.5, -1.0}))));
  const double q = p.data()[0];
  const double g = 0.5 + 0.01 * q;
  const double m = 0.9 * (0.1 * g0) + 0.1 * g;
  const double v = 0.999 * (0.001 * g0 * g0) + 0.001 * g * g;
  const double mh = m / (1 - 0.81), vh = v / (1 - 0.999 * 0.999);
  adam.step();
  CHECK(p.data()[0] == doctest::Approx(q - 0.1 * mh / (std::sqrt(vh) + 1e-8)).epsilon(1e-13));

  const auto st = adam.state();
  Adam other(params, {});
  other.load_state(st, adam.steps());
  CHECK(other.steps() == 2);
  CHECK_THROWS_AS(other.load_state({}, 1), DataError);
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  auto cfg = experiment_config();
  NutritionModel model(cfg.model, 11);
  const TaskWeights tw{{0.9, 1.1, 1.0, 1.2, 0.8}, 0.3, 4};
  auto ckpt = make_checkpoint(model, cfg, 3, tw);
  cfg.train.seed = 11;
  ckpt.config = cfg.to_map();
  const auto path = fs::temp_directory_path() / "nutri_harness.ckpt";
  save_checkpoint(path, ckpt);
  const auto back = load_checkpoint(path);
  CHECK(back.config == ckpt.config);
  CHECK(back.fingerprint == ckpt.fingerprint);
  CHECK(back.epoch == 3);
  CHECK(back.weights.w == tw.w);
  CHECK(back.weights.t == 4);
  REQUIRE(back.tensors.size() == ckpt.tensors.size());

  const auto restored = model_from_checkpoint(back);
  const auto& ex = experiment();
  CHECK(same_values(predict_all(*restored, ex.test, 8), predict_all(model, ex.test, 8)));

  SUBCASE("different shapes are listed") {
    auto other = cfg;
    other.model.widths = {4, 16};
    NutritionModel wide(other.model, 1);
    try {
      restore(wide.params(), back.tensors);
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("incompatible checkpoint") != std::string::npos);
      CHECK(msg.find("stage1") != std::string::npos);
    }
  }
  SUBCASE("same shapes but a different computation") {
    auto tampered = back;
    auto c = cfg;
    c.model.mask_k_fraction = 0.25;
    tampered.config = c.to_map();
    CHECK_THROWS_AS(model_from_checkpoint(tampered), ConfigError);
  }
  SUBCASE("corrupt files") {
    const auto bad = fs::temp_directory_path() / "nutri_harness_bad.ckpt";
    {
      std::ofstream os(bad, std::ios::binary);
      os << "NCKPjunk";
    }
    CHECK_THROWS_AS(load_checkpoint(bad), DataError);
    CHECK_THROWS_AS(load_checkpoint(fs::temp_directory_path() / "nutri_missing.ckpt"), DataError);
  }
}

TEST_CASE("reports parse back exactly") {
  PmaeReport a;
  a.task_percent = {12.3456789, 8.5, 20.0, 15.25, 9.125};
  a.mean_percent = 13.0;
  a.samples = 30;
  PmaeReport b = a;
  b.task_percent[0] = 1.0 / 3.0;
  const std::vector<ReportRow> rows{{"baseline", a}, {"+fafm", b}};
  CHECK(parse_records(format_records(rows)) == rows);
  const auto table = format_table(rows);
  for (const char* col : {"Model", "Calories", "Mass", "Fat", "Carb.", "Protein", "Mean"}) {
    CHECK(table.find(col) != std::string::npos);
  }
  CHECK(table.find("12.35") != std::string::npos);
  CHECK(table.find("baseline") < table.find("+fafm"));
  CHECK_THROWS_AS(parse_records("{not json}\n"), DataError);
  const auto pred = prediction_record("x.ppm", NutritionVector{{100, 200, 3, 4, 5}}, "fp");
  CHECK(pred.find("kcal") != std::string::npos);
}

TEST_CASE("holdout partitions the training split") {
  const auto [tr, va] = holdout(30, 0.1, 42);
  CHECK(va.size() == 3);
  CHECK(tr.size() == 27);
  std::set<std::size_t> all(tr.begin(), tr.end());
  all.insert(va.begin(), va.end());
  CHECK(all.size() == 30);
  CHECK(holdout(30, 0.1, 42) == std::make_pair(tr, va));
  CHECK(holdout(30, 0.0, 42).second.empty());
}

TEST_CASE("training lowers the error and is deterministic") {
  const auto& ex = experiment();
  REQUIRE(ex.train.count() > 0);
  REQUIRE_FALSE(ex.val.empty());
  auto cfg = experiment_config();

  auto untrained_cfg = cfg;
  untrained_cfg.train.epochs = 0;
  const auto start = train_model(untrained_cfg, ex.train, {});
  CHECK(start.selected_epoch == 0);
  const double before = evaluate_model(*start.model, ex.train, 8).mean_percent;

  cfg.train.epochs = 6;
  const auto out_dir = fs::temp_directory_path() / "nutri_harness_run";
  fs::remove_all(out_dir);
  const auto a = train_model(cfg, ex.train, ex.val, nullptr, nullptr, out_dir);
  const auto b = train_model(cfg, ex.train, ex.val);
  CHECK(a.log.size() == 6);
  CHECK(a.selected_epoch >= 1);
  CHECK(evaluate_model(*a.model, ex.train, 8).mean_percent < before);
  for (const auto& f : {"best.ckpt", "final.ckpt", "log.jsonl"}) CHECK(fs::exists(out_dir / f));
  for (std::size_t i = 0; i < a.log.size(); ++i) CHECK(a.log[i].train_loss == b.log[i].train_loss);
  CHECK(same_values(predict_all(*a.model, ex.test, 8), predict_all(*b.model, ex.test, 8)));

  // The stored best checkpoint reproduces the returned model.
  const auto best = model_from_checkpoint(load_checkpoint(out_dir / "best.ckpt"));
  CHECK(same_values(predict_all(*best, ex.test, 8), predict_all(*a.model, ex.test, 8)));

  SUBCASE("fine-tuning for zero epochs keeps the model") {
    auto ft = cfg;
    ft.train.epochs = 0;
    const auto same = train_model(ft, ex.train, {}, &a.checkpoint);
    CHECK(same_values(predict_all(*same.model, ex.test, 8), predict_all(*a.model, ex.test, 8)));
  }
  SUBCASE("fine-tuning rejects another architecture") {
    auto other = cfg;
    other.model.use_mph = false;
    CHECK_THROWS_AS(train_model(other, ex.train, {}, &a.checkpoint), ConfigError);
  }
  SUBCASE("sample size must match the model") {
    auto other = cfg;
    other.model.input_size = 32;
    CHECK_THROWS_AS(train_model(other, ex.train, {}), ConfigError);
  }
}

TEST_CASE("scenes smaller than the model input are rejected") {
  auto cfg = tiny_config(fs::temp_directory_path() / "nutri_harness_corpus");
  cfg.model.input_size = 64;
  CHECK_THROWS_AS(prepare_experiment(cfg), ConfigError);
}

TEST_CASE("ablation produces the four rows in order") {
  const auto& ex = experiment();
  auto cfg = experiment_config();
  cfg.train.epochs = 1;
  const auto rows = run_ablation(cfg, ex);
  REQUIRE(rows.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(rows[i].name == kAblationRows[i]);
    CHECK(rows[i].report.samples == ex.test.count());
  }
}

TEST_CASE("an existing corpus with other settings is refused") {
  experiment();
  auto cfg = experiment_config();
  cfg.data.synth.samples = 41;
  CHECK_THROWS_AS(ensure_corpus(cfg), DataError);
}
