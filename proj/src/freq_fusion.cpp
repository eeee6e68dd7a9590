#include "nutri/freq_fusion.hpp"

#include <algorithm>
#include <cmath>

#include "nutri/errors.hpp"
#include "nutri/fft.hpp"
#include "nutri/ops.hpp"

namespace nutri {

namespace {

double signed_freq(std::int64_t u, std::int64_t n) { return static_cast<double>(u <= n / 2 ? u : u - n); }

// Returns the real part of the filtered planes and the largest |imag|.
std::pair<std::vector<double>, double> filter_planes(const Shape& shape, std::span<const double> values,
                                                     std::span<const double> mask) {
  ComplexTensor c{shape, std::vector<double>(values.begin(), values.end()), std::vector<double>(values.size(), 0.0)};
  c = fft2(c);
  const std::size_t plane = mask.size();
  for (std::size_t i = 0; i < c.numel(); ++i) {
    const double m = mask[i % plane];
    c.re[i] *= m;
    c.im[i] *= m;
  }
  c = ifft2(c);
  double max_im = 0.0;
  for (double v : c.im) max_im = std::max(max_im, std::fabs(v));
  return {std::move(c.re), max_im};
}

}  // namespace

double radial_frequency(std::int64_t u, std::int64_t v, std::int64_t height, std::int64_t width) {
  const auto hu = height / 2;
  const auto wv = width / 2;
  const double a = hu ? signed_freq(u, height) / static_cast<double>(hu) : 0.0;
  const double b = wv ? signed_freq(v, width) / static_cast<double>(wv) : 0.0;
  return std::sqrt(a * a + b * b) / std::sqrt(2.0);
}

LowpassMask LowpassMask::build(std::int64_t height, std::int64_t width, double kappa) {
  if (!(kappa >= 0.0 && kappa <= 1.0)) throw ParameterError("lowpass mask: kappa must lie in [0, 1]");
  if (height < 1 || width < 1) throw DimensionError("lowpass mask: empty grid");
  LowpassMask m;
  m.height_ = height;
  m.width_ = width;
  m.kappa_ = kappa;
  m.values_.resize(static_cast<std::size_t>(height * width));
  m.complement_.resize(m.values_.size());
  for (std::int64_t u = 0; u < height; ++u)
    for (std::int64_t v = 0; v < width; ++v) {
      const double keep = radial_frequency(u, v, height, width) <= kappa ? 1.0 : 0.0;
      m.values_[static_cast<std::size_t>(u * width + v)] = keep;
      m.complement_[static_cast<std::size_t>(u * width + v)] = 1.0 - keep;
    }
  return m;
}

Tensor spectral_filter(const Tensor& x, std::span<const double> mask, std::int64_t height, std::int64_t width) {
  if (x.rank() < 2 || x.dim(-2) != height || x.dim(-1) != width) {
    throw DimensionError("spectral_filter: mask is " + std::to_string(height) + "x" + std::to_string(width) +
                         ", input " + shape_str(x.shape()));
  }
  auto [re, max_im] = filter_planes(x.shape(), x.data(), mask);
  double scale_ref = 1.0;
  for (double v : x.data()) scale_ref = std::max(scale_ref, std::fabs(v));
  if (max_im > 1e-5 * scale_ref) {
    throw NumericIntegrityError("spectral_filter: imaginary residual " + std::to_string(max_im) +
                                " exceeds tolerance; mask is not conjugate-symmetric?");
  }
  std::vector<double> mask_copy(mask.begin(), mask.end());
  return make_result("spectral_filter", x.shape(), std::move(re), {x},
                     [x, mask_copy = std::move(mask_copy)](std::span<const double> g) {
                       auto gx = grad_sink(x);
                       auto [back, unused] = filter_planes(x.shape(), g, mask_copy);
                       for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += back[i];
                     });
}

BandSplit split_bands(const Tensor& x, const LowpassMask& mask) {
  return {spectral_filter(x, mask.values(), mask.height(), mask.width()),
          spectral_filter(x, mask.complement(), mask.height(), mask.width())};
}

FusionLayer::FusionLayer(std::int64_t channels, FusionInit init, Rng& rng) : channels_(channels) {
  if (channels < 1) throw DimensionError("FusionLayer: channels must be >= 1");
  if (init == FusionInit::kAverage) {
    // out[c] = 0.5 * F_H[c] + 0.5 * F_L[c]
    std::vector<double> w(static_cast<std::size_t>(channels * 2 * channels), 0.0);
    for (std::int64_t c = 0; c < channels; ++c) {
      w[static_cast<std::size_t>(c * 2 * channels + c)] = 0.5;
      w[static_cast<std::size_t>(c * 2 * channels + channels + c)] = 0.5;
    }
    weight_ = Tensor::from({channels, 2 * channels}, std::move(w), true);
  } else {
    weight_ = kaiming_uniform({channels, 2 * channels}, 2 * channels, rng);
  }
  bias_ = zeros_param({channels});
}

Tensor FusionLayer::operator()(const Tensor& f_high, const Tensor& f_low) const {
  if (f_high.dim(1) != channels_ || f_low.dim(1) != channels_) {
    throw DimensionError("FusionLayer: expected " + std::to_string(channels_) + " channels per band");
  }
  return channel_linear(concat_channels({f_high, f_low}), weight_, bias_);
}

ParamList FusionLayer::params() const {
  ParamList p;
  p.add("weight", weight_);
  p.add("bias", bias_);
  return p;
}

FusedBands fafm_fuse_parts(const Tensor& r, const Tensor& d, const LowpassMask& mask, const FusionLayer& layer) {
  if (r.shape() != d.shape()) {
    throw DimensionError("fafm_fuse: RGB " + shape_str(r.shape()) + " vs depth " + shape_str(d.shape()));
  }
  const auto rb = split_bands(r, mask);
  const auto db = split_bands(d, mask);
  FusedBands out;
  out.f_high = add(rb.high, db.high);
  out.f_low = add(rb.low, db.low);
  out.out = layer(out.f_high, out.f_low);
  return out;
}

Tensor fafm_fuse(const Tensor& r, const Tensor& d, const LowpassMask& mask, const FusionLayer& layer) {
  return fafm_fuse_parts(r, d, mask, layer).out;
}

Tensor alignment_loss(const Tensor& feats_r, const Tensor& feats_d, double tau) {
  if (!(tau > 0.0)) throw ParameterError("alignment_loss: tau must be positive");
  if (feats_r.rank() != 2 || feats_r.shape() != feats_d.shape() || feats_r.dim(0) < 1) {
    throw DimensionError("alignment_loss: expected matching [N, C] features, got " + shape_str(feats_r.shape()) +
                         " and " + shape_str(feats_d.shape()));
  }
  const auto fr = l2_normalize(feats_r);
  const auto fd = l2_normalize(feats_d);
  const auto logits = scale(matmul(fr, fd, false, true), 1.0 / tau);  // [N, N], row i = anchor i
  const auto log_p = log_softmax_rows(logits);
  return scale(mean(diagonal(log_p)), -1.0);
}

Tensor alignment_features(const Tensor& feature_map) { return global_avg_pool(feature_map); }

HierarchicalFusion::HierarchicalFusion(const std::vector<std::int64_t>& widths, std::vector<double> kappas,
                                       bool frequency_enabled, FusionInit init, Rng& rng)
    : kappas_(std::move(kappas)), enabled_(frequency_enabled) {
  if (kappas_.size() == 1 && widths.size() > 1) kappas_.assign(widths.size(), kappas_[0]);
  if (kappas_.size() != widths.size()) throw ConfigError("fusion: one kappa per stage (or a single shared value)");
  for (double k : kappas_) {
    if (!(k >= 0.0 && k <= 1.0)) throw ParameterError("fusion: kappa must lie in [0, 1]");
  }
  if (enabled_) {
    for (auto w : widths) layers_.emplace_back(w, init, rng);
  }
  mask_cache_.resize(widths.size());
}

const LowpassMask& HierarchicalFusion::mask_for(std::size_t stage, std::int64_t h, std::int64_t w) const {
  auto& cache = mask_cache_.at(stage);
  for (const auto& m : cache) {
    if (m.height() == h && m.width() == w) return m;
  }
  cache.push_back(LowpassMask::build(h, w, kappas_[stage]));
  return cache.back();
}

std::vector<Tensor> HierarchicalFusion::operator()(const std::vector<Tensor>& rgb_stages,
                                                   const std::vector<Tensor>& depth_stages) const {
  if (rgb_stages.size() != depth_stages.size() || rgb_stages.size() != kappas_.size()) {
    throw ConfigError("hierarchical fusion: got " + std::to_string(rgb_stages.size()) + " RGB and " +
                      std::to_string(depth_stages.size()) + " depth stages for a " + std::to_string(kappas_.size()) +
                      "-stage fusion");
  }
  std::vector<Tensor> fused;
  fused.reserve(rgb_stages.size());
  for (std::size_t s = 0; s < rgb_stages.size(); ++s) {
    const auto& r = rgb_stages[s];
    const auto& d = depth_stages[s];
    if (!enabled_) {
      fused.push_back(add(r, d));
      continue;
    }
    const auto& mask = mask_for(s, r.dim(-2), r.dim(-1));
    fused.push_back(fafm_fuse(r, d, mask, layers_[s]));
  }
  return fused;
}

ParamList HierarchicalFusion::params() const {
  ParamList p;
  for (std::size_t s = 0; s < layers_.size(); ++s) p.append("stage" + std::to_string(s) + ".", layers_[s].params());
  return p;
}

}  // namespace nutri
