#include <doctest.h>

#include <cmath>

#include "nutri/errors.hpp"
#include "nutri/ops.hpp"
#include "support/gradcheck.hpp"

using namespace nutri;
using nutri::testing::gradcheck;
using nutri::testing::random_tensor;
using nutri::testing::weighted_sum;

namespace {

constexpr double kTol = 1e-4;

// Direct loop cross-correlation, the reference for conv2d.
std::vector<double> naive_conv(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const auto o = w.dim(0), k = w.dim(2);
  const auto oh = (h + 2 * pad - k) / stride + 1, ow = (wd + 2 * pad - k) / stride + 1;
  std::vector<double> out(static_cast<std::size_t>(n * o * oh * ow));
  const auto xd = x.data();
  const auto wdat = w.data();
  for (std::int64_t s = 0; s < n; ++s)
    for (std::int64_t q = 0; q < o; ++q)
      for (std::int64_t i = 0; i < oh; ++i)
        for (std::int64_t j = 0; j < ow; ++j) {
          double acc = b.defined() ? b.data()[static_cast<std::size_t>(q)] : 0.0;
          for (std::int64_t ch = 0; ch < c; ++ch)
            for (std::int64_t ki = 0; ki < k; ++ki)
              for (std::int64_t kj = 0; kj < k; ++kj) {
                const auto y = i * stride - pad + ki, xx = j * stride - pad + kj;
                if (y < 0 || y >= h || xx < 0 || xx >= wd) continue;
                acc += xd[static_cast<std::size_t>(((s * c + ch) * h + y) * wd + xx)] *
                       wdat[static_cast<std::size_t>(((q * c + ch) * k + ki) * k + kj)];
              }
          out[static_cast<std::size_t>(((s * o + q) * oh + i) * ow + j)] = acc;
        }
  return out;
}

}  // namespace

TEST_CASE("conv2d matches the direct loop") {
  for (int stride : {1, 2}) {
    for (int pad : {0, 1}) {
      const auto x = random_tensor({2, 3, 7, 6}, 1);
      const auto w = random_tensor({4, 3, 3, 3}, 2);
      const auto b = random_tensor({4}, 3);
      const auto y = conv2d(x, w, b, stride, pad);
      const auto ref = naive_conv(x, w, b, stride, pad);
      REQUIRE(y.numel() == ref.size());
      for (std::size_t i = 0; i < ref.size(); ++i) CHECK(y.data()[i] == doctest::Approx(ref[i]).epsilon(1e-12));
    }
  }
  const auto x = random_tensor({1, 5, 4, 4}, 4);
  const auto w = random_tensor({3, 5, 1, 1}, 5);
  const auto ref = naive_conv(x, w, Tensor(), 1, 0);
  const auto y = conv2d(x, w, Tensor());
  for (std::size_t i = 0; i < ref.size(); ++i) CHECK(y.data()[i] == doctest::Approx(ref[i]).epsilon(1e-12));
}

TEST_CASE("conv2d gradients") {
  for (int stride : {1, 2}) {
    auto x = random_tensor({2, 2, 6, 5}, 10, -1, 1, true);
    auto w = random_tensor({3, 2, 3, 3}, 11, -1, 1, true);
    auto b = random_tensor({3}, 12, -1, 1, true);
    const auto r = gradcheck([&] { return weighted_sum(conv2d(x, w, b, stride, 1)); }, {x, w, b});
    CHECK(r.max_rel_error < kTol);
  }
}

TEST_CASE("matmul and bmm against explicit sums") {
  const auto a = random_tensor({2, 3}, 1);
  const auto b = random_tensor({3, 4}, 2);
  const auto c = matmul(a, b);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 4; ++j) {
      double s = 0.0;
      for (int k = 0; k < 3; ++k) s += a.data()[i * 3 + k] * b.data()[k * 4 + j];
      CHECK(c.data()[i * 4 + j] == doctest::Approx(s).epsilon(1e-14));
    }
  const auto ct = matmul(b, a, true, true);  // (b^T a^T) = (a b)^T
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 4; ++j) CHECK(ct.data()[j * 2 + i] == doctest::Approx(c.data()[i * 4 + j]).epsilon(1e-14));
  CHECK_THROWS_AS(matmul(a, a), DimensionError);
}

TEST_CASE("matmul and bmm gradients for every transpose combination") {
  for (bool ta : {false, true})
    for (bool tb : {false, true}) {
      auto a = random_tensor(ta ? Shape{4, 3} : Shape{3, 4}, 1, -1, 1, true);
      auto b = random_tensor(tb ? Shape{5, 4} : Shape{4, 5}, 2, -1, 1, true);
      CHECK(gradcheck([&] { return weighted_sum(matmul(a, b, ta, tb)); }, {a, b}).max_rel_error < kTol);
      auto ba = random_tensor(ta ? Shape{2, 4, 3} : Shape{2, 3, 4}, 3, -1, 1, true);
      auto bb = random_tensor(tb ? Shape{2, 5, 4} : Shape{2, 4, 5}, 4, -1, 1, true);
      CHECK(gradcheck([&] { return weighted_sum(bmm(ba, bb, ta, tb)); }, {ba, bb}).max_rel_error < kTol);
    }
}

TEST_CASE("adaptive average pooling follows the floor/ceil partition") {
  // 5 -> 3 bins: [0, 2), [1, 4), [3, 5).
  const auto x = Tensor::from({1, 1, 1, 5}, {1, 2, 3, 4, 5});
  const auto y = adaptive_avg_pool(x, 1, 3);
  CHECK(y.data()[0] == doctest::Approx(1.5));
  CHECK(y.data()[1] == doctest::Approx(3.0));
  CHECK(y.data()[2] == doctest::Approx(4.5));
  // Even division is plain block averaging.
  const auto z = adaptive_avg_pool(Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4}), 1, 1);
  CHECK(z.item() == doctest::Approx(2.5));
  CHECK_THROWS_AS(adaptive_avg_pool(x, 1, 6), DimensionError);
  CHECK_THROWS_AS(adaptive_avg_pool(x, 0, 1), DimensionError);

  auto g = random_tensor({2, 3, 7, 5}, 5, -1, 1, true);
  CHECK(gradcheck([&] { return weighted_sum(adaptive_avg_pool(g, 3, 2)); }, {g}).max_rel_error < kTol);
  CHECK(gradcheck([&] { return weighted_sum(global_avg_pool(g)); }, {g}).max_rel_error < kTol);
}

TEST_CASE("element-wise op gradients with batch broadcasting") {
  auto a = random_tensor({3, 4}, 1, -1, 1, true);
  auto b = random_tensor({3, 4}, 2, -1, 1, true);
  auto row = random_tensor({4}, 3, -1, 1, true);
  CHECK(gradcheck([&] { return weighted_sum(add(a, row)); }, {a, row}).max_rel_error < kTol);
  CHECK(gradcheck([&] { return weighted_sum(sub(a, b)); }, {a, b}).max_rel_error < kTol);
  CHECK(gradcheck([&] { return weighted_sum(mul(a, row)); }, {a, row}).max_rel_error < kTol);
  CHECK(gradcheck([&] { return weighted_sum(sigmoid(a)); }, {a}).max_rel_error < kTol);
  CHECK(gradcheck([&] { return weighted_sum(softplus(scale(a, 3.0))); }, {a}).max_rel_error < kTol);
  CHECK(gradcheck([&] { return weighted_sum(relu(a)); }, {a}).max_rel_error < kTol);
  CHECK(gradcheck([&] { return weighted_sum(abs(a)); }, {a}).max_rel_error < kTol);
  CHECK(gradcheck([&] { return mean(mul(a, a)); }, {a}).max_rel_error < kTol);
  CHECK(gradcheck([&] { return weighted_sum(mean_batch(a)); }, {a}).max_rel_error < kTol);
  CHECK(gradcheck([&] { return weighted_sum(center_per_sample(a)); }, {a}).max_rel_error < kTol);
  CHECK(gradcheck([&] { return weighted_sum(reshape(a, {2, 6})); }, {a}).max_rel_error < kTol);
  auto al = Tensor::scalar(0.7, true), be = Tensor::scalar(-0.2, true);
  CHECK(gradcheck([&] { return weighted_sum(scale_shift(a, al, be)); }, {a, al, be}).max_rel_error < kTol);
  CHECK_THROWS_AS(add(a, random_tensor({3}, 4)), DimensionError);
}

TEST_CASE("softmax rows sum to one and row ops differentiate") {
  auto x = random_tensor({3, 5}, 7, -3, 3, true);
  const auto s = softmax_rows(x);
  for (int r = 0; r < 3; ++r) {
    double t = 0.0;
    for (int c = 0; c < 5; ++c) t += s.data()[r * 5 + c];
    CHECK(t == doctest::Approx(1.0).epsilon(1e-14));
  }
  const auto ls = log_softmax_rows(x);
  for (std::size_t i = 0; i < 15; ++i) CHECK(ls.data()[i] == doctest::Approx(std::log(s.data()[i])).epsilon(1e-12));
  CHECK(gradcheck([&] { return weighted_sum(softmax_rows(x)); }, {x}).max_rel_error < kTol);
  CHECK(gradcheck([&] { return weighted_sum(log_softmax_rows(x)); }, {x}).max_rel_error < kTol);
  CHECK(gradcheck([&] { return weighted_sum(l2_normalize(x)); }, {x}).max_rel_error < kTol);
  auto sq = random_tensor({4, 4}, 8, -1, 1, true);
  CHECK(gradcheck([&] { return weighted_sum(diagonal(sq)); }, {sq}).max_rel_error < kTol);
  CHECK_THROWS_AS(l2_normalize(Tensor::zeros({2, 3})), DegenerateInputError);
}

TEST_CASE("channel ops and concat") {
  auto x = random_tensor({2, 3, 4, 2}, 1, -1, 1, true);
  auto w = random_tensor({5, 3}, 2, -1, 1, true);
  auto b = random_tensor({5}, 3, -1, 1, true);
  CHECK(gradcheck([&] { return weighted_sum(channel_linear(x, w, b)); }, {x, w, b}).max_rel_error < kTol);
  auto s = random_tensor({2, 3}, 4, -1, 1, true);
  CHECK(gradcheck([&] { return weighted_sum(scale_channels(x, s)); }, {x, s}).max_rel_error < kTol);
  auto y = random_tensor({2, 2, 4, 2}, 5, -1, 1, true);
  const auto c = concat_channels({x, y});
  CHECK(c.shape() == Shape{2, 5, 4, 2});
  CHECK(c.data()[3 * 8] == y.data()[0]);
  CHECK(gradcheck([&] { return weighted_sum(concat_channels({x, y})); }, {x, y}).max_rel_error < kTol);
  CHECK(gradcheck([&] { return weighted_sum(concat({x, x}, 2)); }, {x}).max_rel_error < kTol);

  // A 1x1 convolution and channel_linear agree.
  const auto as_conv = conv2d(x, reshape(w, {5, 3, 1, 1}), b);
  const auto lin = channel_linear(x, w, b);
  for (std::size_t i = 0; i < lin.numel(); ++i) CHECK(lin.data()[i] == doctest::Approx(as_conv.data()[i]).epsilon(1e-12));
}
