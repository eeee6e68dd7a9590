#include "nutri/depth_adapter.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "nutri/errors.hpp"
#include "nutri/ops.hpp"
#include "nutri/tensor_io.hpp"

namespace nutri {

ParamList AffineCalibration::params() const {
  ParamList p;
  p.add("alpha", alpha);
  p.add("beta", beta);
  return p;
}

ResidualRefiner::ResidualRefiner(Rng& rng, int hidden)
    : w1_(kaiming_uniform({hidden, 1, 3, 3}, 9, rng)),
      b1_(zeros_param({hidden})),
      w2_(kaiming_uniform({hidden, hidden, 3, 3}, 9 * hidden, rng)),
      b2_(zeros_param({hidden})),
      w3_(zeros_param({1, hidden, 3, 3})),
      b3_(zeros_param({1})) {}

Tensor ResidualRefiner::operator()(const Tensor& d_global) const {
  if (d_global.rank() != 4 || d_global.dim(1) != 1) {
    throw DimensionError("refine: expected [N, 1, H, W], got " + shape_str(d_global.shape()));
  }
  // The residual depends on local shape, not on the absolute offset, so the
  // stack sees each map relative to its own mean.
  auto h = relu(conv2d(center_per_sample(d_global), w1_, b1_, 1, 1));
  h = relu(conv2d(h, w2_, b2_, 1, 1));
  return conv2d(h, w3_, b3_, 1, 1);
}

ParamList ResidualRefiner::params() const {
  ParamList p;
  p.add("conv1.weight", w1_);
  p.add("conv1.bias", b1_);
  p.add("conv2.weight", w2_);
  p.add("conv2.bias", b2_);
  p.add("conv3.weight", w3_);
  p.add("conv3.bias", b3_);
  return p;
}

Tensor apply_affine(const Tensor& d_mono, const AffineCalibration& cal) {
  return scale_shift(d_mono, cal.alpha, cal.beta);
}

Tensor refine(const Tensor& d_global, const ResidualRefiner& f) { return f(d_global); }

Tensor adapt(const Tensor& d_mono, const AffineCalibration& cal, const ResidualRefiner& f) {
  auto d_global = apply_affine(d_mono, cal);
  return add(d_global, refine(d_global, f));
}

DepthAdapter::DepthAdapter(Rng& rng, bool use_refiner, int hidden)
    : refiner_(rng, hidden), use_refiner_(use_refiner) {}

Tensor DepthAdapter::operator()(const Tensor& d_mono) const {
  if (!use_refiner_) return apply_affine(d_mono, cal_);
  return adapt(d_mono, cal_, refiner_);
}

ParamList DepthAdapter::params() const {
  ParamList p;
  p.append("", cal_.params());
  if (use_refiner_) p.append("refiner.", refiner_.params());
  return p;
}

Tensor minmax_normalize(const Tensor& depth) {
  if (depth.rank() < 2) throw DimensionError("minmax_normalize: expected a batch, got " + shape_str(depth.shape()));
  const auto n = static_cast<std::size_t>(depth.dim(0));
  const std::size_t per = depth.numel() / n;
  const auto d = depth.data();
  std::vector<double> out(d.size(), 0.0);
  std::vector<std::size_t> lo(n), hi(n);
  std::vector<double> range(n);
  for (std::size_t s = 0; s < n; ++s) {
    const auto first = d.begin() + static_cast<std::ptrdiff_t>(s * per);
    const auto [mn, mx] = std::minmax_element(first, first + static_cast<std::ptrdiff_t>(per));
    lo[s] = static_cast<std::size_t>(mn - d.begin());
    hi[s] = static_cast<std::size_t>(mx - d.begin());
    range[s] = *mx - *mn;
    if (range[s] > 1e-12) {
      for (std::size_t i = 0; i < per; ++i) out[s * per + i] = (d[s * per + i] - *mn) / range[s];
    } else {
      range[s] = 0.0;
    }
  }
  auto y = std::make_shared<std::vector<double>>(out);
  return make_result("minmax_normalize", depth.shape(), std::move(out), {depth},
                     [depth, y, lo, hi, range, n, per](std::span<const double> g) {
                       auto gd = grad_sink(depth);
                       for (std::size_t s = 0; s < n; ++s) {
                         if (range[s] == 0.0) continue;
                         const double inv = 1.0 / range[s];
                         double to_min = 0.0, to_max = 0.0;
                         for (std::size_t i = 0; i < per; ++i) {
                           const std::size_t k = s * per + i;
                           gd[k] += g[k] * inv;
                           to_min += g[k] * ((*y)[k] - 1.0) * inv;
                           to_max -= g[k] * (*y)[k] * inv;
                         }
                         gd[lo[s]] += to_min;
                         gd[hi[s]] += to_max;
                       }
                     });
}

AffineFit fit_affine_closed_form(std::span<const double> d_mono, std::span<const double> d_gt) {
  if (d_mono.size() != d_gt.size()) throw DimensionError("fit_affine_closed_form: length mismatch");
  const auto n = static_cast<double>(d_mono.size());
  if (d_mono.size() < 2) throw DegenerateInputError("fit_affine_closed_form: need at least two samples");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < d_mono.size(); ++i) {
    mx += d_mono[i];
    my += d_gt[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < d_mono.size(); ++i) {
    const double dx = d_mono[i] - mx;
    sxx += dx * dx;
    sxy += dx * (d_gt[i] - my);
  }
  const auto [lo, hi] = std::minmax_element(d_mono.begin(), d_mono.end());
  if (*lo == *hi || !(sxx > 0.0)) throw DegenerateInputError("fit_affine_closed_form: d_mono is constant");
  AffineFit fit;
  fit.alpha = sxy / sxx;
  fit.beta = my - fit.alpha * mx;
  return fit;
}

Tensor smooth_field(std::int64_t height, std::int64_t width, std::uint64_t seed) {
  if (height < 1 || width < 1) throw DimensionError("smooth_field: empty grid");
  Rng rng(seed);
  std::uniform_real_distribution<double> freq(0.3, 1.2);  // cycles per image
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);
  std::uniform_real_distribution<double> weight(0.5, 1.0);
  constexpr int kWaves = 4;
  struct Wave {
    double kx, ky, ph, w;
  };
  std::vector<Wave> waves;
  for (int i = 0; i < kWaves; ++i) {
    const double f = freq(rng);
    const double th = angle(rng);
    waves.push_back({f * std::cos(th), f * std::sin(th), phase(rng), weight(rng)});
  }
  std::vector<double> v(static_cast<std::size_t>(height * width));
  double peak = 0.0;
  for (std::int64_t y = 0; y < height; ++y)
    for (std::int64_t x = 0; x < width; ++x) {
      const double u = (static_cast<double>(x) + 0.5) / static_cast<double>(width);
      const double t = (static_cast<double>(y) + 0.5) / static_cast<double>(height);
      double s = 0.0;
      for (const auto& w : waves) s += w.w * std::cos(2.0 * std::numbers::pi * (w.kx * u + w.ky * t) + w.ph);
      v[static_cast<std::size_t>(y * width + x)] = s;
      peak = std::max(peak, std::fabs(s));
    }
  if (peak > 0.0) {
    for (auto& s : v) s /= peak;
  }
  return Tensor::from({height, width}, std::move(v));
}

Tensor corrupt_depth(const Tensor& d_gt, const DepthCorruption& c, std::uint64_t seed) {
  if (c.a == 0.0) throw ParameterError("corrupt_depth: scale a must be nonzero");
  if (d_gt.rank() < 2) throw DimensionError("corrupt_depth: expected [.., H, W]");
  const auto H = d_gt.dim(-2), W = d_gt.dim(-1);
  const auto plane = static_cast<std::size_t>(H * W);
  std::vector<double> field;
  if (c.distortion_amp != 0.0) field = smooth_field(H, W, derive_seed(seed, 1)).to_vector();
  Rng noise_rng(derive_seed(seed, 2));
  std::normal_distribution<double> noise(0.0, 1.0);
  const auto g = d_gt.data();
  std::vector<double> out(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    double v = (g[i] - c.b) / c.a;
    if (!field.empty()) v += c.distortion_amp * field[i % plane];
    if (c.noise_sd > 0.0) v += c.noise_sd * noise(noise_rng);
    out[i] = v;
  }
  return Tensor::from(d_gt.shape(), std::move(out));
}

namespace {

Tensor load_depth_like(const Tensor& rgb, const std::filesystem::path& path) {
  if (rgb.rank() != 4) throw DimensionError("depth provider: expected [1, 3, H, W] image");
  auto d = load_tensor(path);
  if (d.rank() < 2) throw DataError(path.string() + ": depth tensor has rank < 2");
  const auto h = d.dim(-2), w = d.dim(-1);
  if (static_cast<std::int64_t>(d.numel()) != h * w) throw DataError(path.string() + ": expected one depth plane");
  d = Tensor::from({1, 1, h, w}, d.to_vector());
  if (h == rgb.dim(2) && w == rgb.dim(3)) return d;
  NoGradGuard guard;
  return adaptive_avg_pool(d, static_cast<int>(rgb.dim(2)), static_cast<int>(rgb.dim(3))).detach();
}

}  // namespace

Tensor FileDepthProvider::estimate(const Tensor& rgb, const DepthQuery& query) const {
  return load_depth_like(rgb, query.depth_path);
}

Tensor CorruptingDepthProvider::estimate(const Tensor& rgb, const DepthQuery& query) const {
  if (rgb.rank() != 4) throw DimensionError("depth provider: expected [1, 3, H, W] image");
  auto gt = load_tensor(query.depth_path);
  const auto h = gt.dim(-2), w = gt.dim(-1);
  gt = Tensor::from({1, 1, h, w}, gt.to_vector());
  auto mono = corrupt_depth(gt, corruption_, query.seed);
  if (h == rgb.dim(2) && w == rgb.dim(3)) return mono;
  NoGradGuard guard;
  return adaptive_avg_pool(mono, static_cast<int>(rgb.dim(2)), static_cast<int>(rgb.dim(3))).detach();
}

std::unique_ptr<DepthProvider> make_depth_provider(const std::string& tag, const DepthCorruption& c) {
  if (tag == "file") return std::make_unique<FileDepthProvider>();
  if (tag == "synthetic-corruptor") return std::make_unique<CorruptingDepthProvider>(c);
  throw ConfigError("unknown depth provider '" + tag + "' (expected file or synthetic-corruptor)");
}

}  // namespace nutri
