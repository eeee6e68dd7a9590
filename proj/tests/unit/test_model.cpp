#include <doctest.h>

#include <cmath>

#include "nutri/errors.hpp"
#include "nutri/model.hpp"
#include "nutri/ops.hpp"
#include "support/gradcheck.hpp"

using namespace nutri;
using nutri::testing::gradcheck;
using nutri::testing::random_tensor;
using nutri::testing::weighted_sum;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.input_size = 32;
  c.widths = {4, 8, 16};
  c.unify_width = 8;
  c.unify_grid = 2;
  c.attn_dim = 8;
  c.refiner_hidden = 4;
  return c;
}

void randomize(Tensor& t, std::uint64_t seed, double amp = 0.5) {
  const auto r = random_tensor(t.shape(), seed, -amp, amp);
  std::copy(r.data().begin(), r.data().end(), t.mutable_data().begin());
}

Tensor slice_sample(const Tensor& x, std::int64_t n) {
  Shape s = x.shape();
  const auto per = x.numel() / static_cast<std::size_t>(s[0]);
  s[0] = 1;
  std::vector<double> v(x.data().begin() + static_cast<std::ptrdiff_t>(per * n),
                        x.data().begin() + static_cast<std::ptrdiff_t>(per * (n + 1)));
  return Tensor::from(s, std::move(v));
}

bool has_param(const NutritionModel& m, const std::string& prefix) {
  for (const auto& p : m.params().items())
    if (p.name.rfind(prefix, 0) == 0) return true;
  return false;
}

}  // namespace

TEST_CASE("forward shapes and positive predictions") {
  const NutritionModel model(small_config(), 3);
  const auto rgb = random_tensor({4, 3, 32, 32}, 1, 0, 1);
  const auto depth = random_tensor({4, 1, 32, 32}, 2, -1, 1);
  const auto res = model.forward(rgb, depth);
  CHECK(res.prediction.shape() == Shape{4, 5});
  for (double v : res.prediction.data()) CHECK(v > 0.0);
  CHECK(res.adapted_depth.shape() == Shape{4, 1, 32, 32});
  CHECK(res.align_rgb.shape() == Shape{4, 16});
  CHECK(res.align_depth.shape() == Shape{4, 16});
  REQUIRE(res.fused.size() == 3);
  CHECK(res.fused[2].shape() == Shape{4, 16, 4, 4});
  CHECK_THROWS_AS(model.forward(rgb, Tensor()), ContractError);
  CHECK_THROWS_AS(model.forward(rgb, random_tensor({4, 1, 16, 16}, 3)), DimensionError);
}

TEST_CASE("predictions do not depend on batch composition") {
  auto cfg = small_config();
  cfg.hard_mask_inference = true;
  const NutritionModel model(cfg, 5);
  const auto rgb = random_tensor({8, 3, 32, 32}, 11, 0, 1);
  const auto depth = random_tensor({8, 1, 32, 32}, 12, 0, 1);
  const auto batch = model.predict(rgb, depth);
  for (std::int64_t n : {0, 3, 7}) {
    const auto one = model.predict(slice_sample(rgb, n), slice_sample(depth, n));
    for (int t = 0; t < kNumTasks; ++t) CHECK(std::fabs(one.data()[t] - batch.data()[n * 5 + t]) <= 1e-6);
  }
}

TEST_CASE("initialization is deterministic and module toggles are independent") {
  const NutritionModel a(small_config(), 9), b(small_config(), 9);
  REQUIRE(a.params().size() == b.params().size());
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    const auto x = a.params().items()[i].tensor.data(), y = b.params().items()[i].tensor.data();
    CHECK(std::equal(x.begin(), x.end(), y.begin()));
  }
  auto cfg = small_config();
  cfg.use_fafm = false;
  const NutritionModel c(cfg, 9);
  const auto* w0 = a.params().find("rgb_encoder.stage0.conv1.weight");
  const auto* w1 = c.params().find("rgb_encoder.stage0.conv1.weight");
  REQUIRE(w0 != nullptr);
  REQUIRE(w1 != nullptr);
  CHECK(std::equal(w0->data().begin(), w0->data().end(), w1->data().begin()));
}

TEST_CASE("module toggles select parameters") {
  auto cfg = small_config();
  cfg.use_fafm = cfg.use_ssra = cfg.use_mph = false;
  const NutritionModel baseline(cfg, 1);
  CHECK_FALSE(has_param(baseline, "depth_encoder."));
  CHECK_FALSE(has_param(baseline, "mph."));
  CHECK(baseline.forward(random_tensor({2, 3, 32, 32}, 1), Tensor()).prediction.shape() == Shape{2, 5});

  cfg.use_fafm = true;
  const NutritionModel fafm(cfg, 1);
  CHECK(has_param(fafm, "depth_encoder."));
  CHECK(has_param(fafm, "fusion."));
  CHECK_FALSE(has_param(fafm, "ssra."));

  cfg.use_fafm = false;
  cfg.use_ssra = true;
  const NutritionModel ssra(cfg, 1);
  CHECK(has_param(ssra, "ssra."));
  CHECK_FALSE(has_param(ssra, "fusion."));

  cfg.use_mph = true;
  const NutritionModel mph(cfg, 1);
  CHECK(has_param(mph, "mph.attention."));
  CHECK(has_param(mph, "mph.channel_mask."));

  auto bad = small_config();
  bad.input_size = 4;
  CHECK_THROWS_AS(NutritionModel(bad, 1), ConfigError);
  bad = small_config();
  bad.mask_k_fraction = 0.0;
  CHECK_THROWS_AS(NutritionModel(bad, 1), ConfigError);
}

TEST_CASE("cross attention starts as the identity and differentiates") {
  Rng rng(3);
  CrossAttentionBlock block(6, 4, rng);
  auto q = random_tensor({2, 6, 5}, 1, -1, 1, true);
  auto kv = random_tensor({2, 6, 7}, 2, -1, 1, true);
  const auto out = block.forward(q, kv);
  for (std::size_t i = 0; i < q.numel(); ++i) CHECK(out.tokens.data()[i] == q.data()[i]);
  for (int r = 0; r < 10; ++r) {
    double s = 0.0;
    for (int c = 0; c < 7; ++c) s += out.attention.data()[r * 7 + c];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
  randomize(block.wv(), 4);
  std::vector<Tensor> inputs{q, kv};
  for (const auto& p : block.params().items()) inputs.push_back(p.tensor);
  CHECK(gradcheck([&] { return weighted_sum(block(q, kv)); }, inputs).max_rel_error < 1e-4);
}

TEST_CASE("gated fusion is a per-channel convex combination") {
  Rng rng(5);
  const GatedFusion gate(4, rng);
  auto a = random_tensor({2, 4, 6}, 1, -1, 1, true);
  auto b = random_tensor({2, 4, 6}, 2, -1, 1, true);
  const auto res = gate.forward(a, b);
  for (std::int64_t n = 0; n < 2; ++n)
    for (std::int64_t c = 0; c < 4; ++c) {
      const double g = res.gate.data()[n * 4 + c];
      CHECK(g > 0.0);
      CHECK(g < 1.0);
      for (std::int64_t t = 0; t < 6; ++t) {
        const auto i = static_cast<std::size_t>((n * 4 + c) * 6 + t);
        CHECK(res.out.data()[i] == doctest::Approx(g * a.data()[i] + (1 - g) * b.data()[i]).epsilon(1e-12));
      }
    }
  std::vector<Tensor> inputs{a, b};
  for (const auto& p : gate.params().items()) inputs.push_back(p.tensor);
  CHECK(gradcheck([&] { return weighted_sum(gate(a, b)); }, inputs).max_rel_error < 1e-4);
  CHECK_THROWS_AS(gate(a, random_tensor({2, 4, 5}, 3)), DimensionError);
}

TEST_CASE("channel mask: soft halves at init, hard keeps k channels") {
  Rng rng(7);
  ChannelMask cm(8, rng);
  auto x = random_tensor({3, 8, 5}, 1, -1, 1, true);
  const auto soft = mask_channels(x, cm);
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(soft.data()[i] == doctest::Approx(0.5 * x.data()[i]));

  randomize(cm.fc2_weight(), 2);
  randomize(cm.fc2_bias(), 3);
  for (std::int64_t k : {1, 3, 8}) {
    const auto hard = mask_channels(x, cm, MaskMode::kHard, k);
    const auto scores = cm.logits(x);
    for (std::int64_t n = 0; n < 3; ++n) {
      std::int64_t kept = 0;
      double min_kept = 1e300, max_dropped = -1e300;
      for (std::int64_t c = 0; c < 8; ++c) {
        bool on = false;
        for (std::int64_t t = 0; t < 5; ++t) {
          const auto i = static_cast<std::size_t>((n * 8 + c) * 5 + t);
          if (hard.data()[i] != 0.0) {
            on = true;
            CHECK(hard.data()[i] == x.data()[i]);
          }
        }
        const double s = scores.data()[n * 8 + c];
        if (on) {
          ++kept;
          min_kept = std::min(min_kept, s);
        } else {
          max_dropped = std::max(max_dropped, s);
        }
      }
      CHECK(kept == k);
      CHECK(min_kept >= max_dropped);
    }
  }
  CHECK_THROWS_AS(mask_channels(x, cm, MaskMode::kHard, 0), ParameterError);
  CHECK_THROWS_AS(mask_channels(x, cm, MaskMode::kHard, 9), ParameterError);

  std::vector<Tensor> inputs{x};
  for (const auto& p : cm.params().items()) inputs.push_back(p.tensor);
  CHECK(gradcheck([&] { return weighted_sum(mask_channels(x, cm)); }, inputs).max_rel_error < 1e-4);
}

TEST_CASE("unifier maps stages to a common token grid") {
  Rng rng(2);
  Unifier u({4, 4}, 4, 2, rng);
  u.set_identity();
  const auto f0 = random_tensor({1, 4, 4, 4}, 1);
  const auto f1 = random_tensor({1, 4, 2, 2}, 2);
  const auto maps = u({f0, f1});
  CHECK(maps[0].shape() == Shape{1, 4, 2, 2});
  CHECK(maps[1].shape() == Shape{1, 4, 2, 2});
  const auto pooled = adaptive_avg_pool(f0, 2, 2);
  for (std::size_t i = 0; i < pooled.numel(); ++i) CHECK(maps[0].data()[i] == doctest::Approx(pooled.data()[i]));
  for (std::size_t i = 0; i < f1.numel(); ++i) CHECK(maps[1].data()[i] == doctest::Approx(f1.data()[i]));
  CHECK(maps_to_tokens(maps).shape() == Shape{1, 4, 8});
  CHECK_THROWS_AS(u({f0}), DimensionError);
  Unifier uneven({4, 8}, 4, 2, rng);
  CHECK_THROWS_AS(uneven.set_identity(), ContractError);
}

TEST_CASE("full pipeline at 64x64, batch of 8") {
  const NutritionModel model(ModelConfig{}, 42);
  const auto rgb = random_tensor({8, 3, 64, 64}, 1, 0, 1);
  const auto depth = random_tensor({8, 1, 64, 64}, 2, 0, 1);
  const auto res = model.forward(rgb, depth);
  CHECK(res.prediction.shape() == Shape{8, 5});
  model.params().zero_grad();
  backward(mean(res.prediction));
  std::size_t with_grad = 0;
  for (const auto& p : model.params().items()) {
    for (double g : p.tensor.grad()) CHECK(std::isfinite(g));
    with_grad += !p.tensor.grad().empty();
  }
  CHECK(with_grad > model.params().size() / 2);
}
