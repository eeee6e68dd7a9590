#pragma once

// Frequency-domain RGB/depth fusion.
//
// Each feature map is split into a low band and a high band with a binary
// radial mask on the DFT grid, bands of the two modalities are summed
// separately, and a learnable 1x1 convolution recombines the two fused
// bands. A contrastive loss over pooled per-sample features keeps the two
// modalities aligned.

#include <cstdint>
#include <deque>
#include <span>
#include <vector>

#include "nutri/params.hpp"
#include "nutri/tensor.hpp"

namespace nutri {

// Normalized radial frequency of DFT bin (u, v) on an H x W grid:
// sqrt((fu/fu_max)^2 + (fv/fv_max)^2) / sqrt(2), fu and fv signed.
double radial_frequency(std::int64_t u, std::int64_t v, std::int64_t height, std::int64_t width);

class LowpassMask {
 public:
  // Bin is 1 iff radial_frequency <= kappa. Throws ParameterError when
  // kappa is outside [0, 1].
  static LowpassMask build(std::int64_t height, std::int64_t width, double kappa);

  std::int64_t height() const { return height_; }
  std::int64_t width() const { return width_; }
  double kappa() const { return kappa_; }
  std::span<const double> values() const { return values_; }
  std::span<const double> complement() const { return complement_; }
  double at(std::int64_t u, std::int64_t v) const { return values_[static_cast<std::size_t>(u * width_ + v)]; }

 private:
  std::int64_t height_ = 0, width_ = 0;
  double kappa_ = 0.0;
  std::vector<double> values_, complement_;
};

inline LowpassMask build_lowpass_mask(std::int64_t h, std::int64_t w, double kappa) {
  return LowpassMask::build(h, w, kappa);
}

// Re(F^-1(F(x) * mask)) per [H, W] plane of x. Differentiable; the
// operator is a real symmetric projection so its adjoint is itself.
// Throws NumericIntegrityError if the discarded imaginary part exceeds
// 1e-5 * max(1, max|x|).
Tensor spectral_filter(const Tensor& x, std::span<const double> mask, std::int64_t height, std::int64_t width);

struct BandSplit {
  Tensor low;
  Tensor high;
};

BandSplit split_bands(const Tensor& x, const LowpassMask& mask);

enum class FusionInit { kAverage, kRandom };

// 1x1 convolution 2C -> C applied to concat(F_H, F_L).
class FusionLayer {
 public:
  FusionLayer(std::int64_t channels, FusionInit init, Rng& rng);

  Tensor operator()(const Tensor& f_high, const Tensor& f_low) const;
  ParamList params() const;
  std::int64_t channels() const { return channels_; }

 private:
  std::int64_t channels_;
  Tensor weight_, bias_;
};

struct FusedBands {
  Tensor f_high;
  Tensor f_low;
  Tensor out;
};

FusedBands fafm_fuse_parts(const Tensor& r, const Tensor& d, const LowpassMask& mask, const FusionLayer& layer);
Tensor fafm_fuse(const Tensor& r, const Tensor& d, const LowpassMask& mask, const FusionLayer& layer);

// One-directional InfoNCE over cosine similarities: RGB rows are anchors,
// depth rows the candidates. feats_* are [N, C]. Throws ParameterError for
// tau <= 0 and DegenerateInputError for zero rows.
Tensor alignment_loss(const Tensor& feats_r, const Tensor& feats_d, double tau);

// Global feature vector used by the alignment loss: [N, C, H, W] -> [N, C].
Tensor alignment_features(const Tensor& feature_map);

// Per-stage fusion across the encoder hierarchy. With the frequency path
// disabled each stage is plain element-wise addition.
class HierarchicalFusion {
 public:
  HierarchicalFusion(const std::vector<std::int64_t>& widths, std::vector<double> kappas, bool frequency_enabled,
                     FusionInit init, Rng& rng);

  std::vector<Tensor> operator()(const std::vector<Tensor>& rgb_stages, const std::vector<Tensor>& depth_stages) const;
  ParamList params() const;
  bool frequency_enabled() const { return enabled_; }
  const LowpassMask& mask_for(std::size_t stage, std::int64_t h, std::int64_t w) const;

 private:
  std::vector<double> kappas_;
  bool enabled_;
  std::vector<FusionLayer> layers_;
  mutable std::vector<std::deque<LowpassMask>> mask_cache_;
};

}  // namespace nutri
