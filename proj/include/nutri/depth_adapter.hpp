#pragma once

// Scale-shift residual depth adaptation.
//
//   d_global = alpha * d_mono + beta
//   d_res    = f(d_global - mean)   (shallow conv stack, last layer zero)
//   d_out    = d_global + d_res
//
// Both stages start as the identity, so an untrained adapter passes the
// monocular depth through bit-for-bit.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>

#include "nutri/params.hpp"
#include "nutri/tensor.hpp"

namespace nutri {

struct AffineCalibration {
  Tensor alpha = Tensor::scalar(1.0, true);
  Tensor beta = Tensor::scalar(0.0, true);

  ParamList params() const;
};

// 1 -> hidden -> hidden -> 1 channels, 3x3 kernels with padding 1, ReLU
// between layers. The final layer is zero-initialized.
class ResidualRefiner {
 public:
  explicit ResidualRefiner(Rng& rng, int hidden = 16);

  Tensor operator()(const Tensor& d_global) const;
  ParamList params() const;

 private:
  Tensor w1_, b1_, w2_, b2_, w3_, b3_;
};

Tensor apply_affine(const Tensor& d_mono, const AffineCalibration& cal);
Tensor refine(const Tensor& d_global, const ResidualRefiner& f);
Tensor adapt(const Tensor& d_mono, const AffineCalibration& cal, const ResidualRefiner& f);

class DepthAdapter {
 public:
  DepthAdapter(Rng& rng, bool use_refiner = true, int hidden = 16);

  // [N, 1, H, W] -> [N, 1, H, W].
  Tensor operator()(const Tensor& d_mono) const;
  ParamList params() const;

  AffineCalibration& calibration() { return cal_; }
  const AffineCalibration& calibration() const { return cal_; }
  const ResidualRefiner& refiner() const { return refiner_; }
  bool uses_refiner() const { return use_refiner_; }

 private:
  AffineCalibration cal_;
  ResidualRefiner refiner_;
  bool use_refiner_;
};

// Per-sample min-max rescale of [N, 1, H, W] to [0, 1]. A flat sample maps
// to zeros. Differentiable, including through the extreme elements.
Tensor minmax_normalize(const Tensor& depth);

struct AffineFit {
  double alpha = 1.0;
  double beta = 0.0;
};

// Ordinary least squares for alpha * d_mono + beta ~ d_gt. Throws
// DegenerateInputError when d_mono has fewer than two distinct values.
AffineFit fit_affine_closed_form(std::span<const double> d_mono, std::span<const double> d_gt);

// Low-frequency random surface on an H x W grid with max |value| == 1.
Tensor smooth_field(std::int64_t height, std::int64_t width, std::uint64_t seed);

struct DepthCorruption {
  double a = 1.0;  // d_mono = (d_gt - b) / a + ...
  double b = 0.0;
  double distortion_amp = 0.0;
  double noise_sd = 0.0;
};

// Synthetic stand-in for a monocular estimate. d_gt is [.., H, W]; every
// sample in a batch receives the same smooth field for a given seed.
// Throws ParameterError when a == 0.
Tensor corrupt_depth(const Tensor& d_gt, const DepthCorruption& c, std::uint64_t seed);

struct DepthQuery {
  std::filesystem::path depth_path;  // precomputed estimate or ground truth
  std::uint64_t seed = 0;
};

// Produces a [1, 1, H, W] depth map for a [1, 3, H, W] image.
class DepthProvider {
 public:
  virtual ~DepthProvider() = default;
  virtual std::string tag() const = 0;
  virtual Tensor estimate(const Tensor& rgb, const DepthQuery& query) const = 0;
};

// Reads a precomputed depth file.
class FileDepthProvider final : public DepthProvider {
 public:
  std::string tag() const override { return "file"; }
  Tensor estimate(const Tensor& rgb, const DepthQuery& query) const override;
};

// Reads ground-truth depth and corrupts it with per-sample seeds.
class CorruptingDepthProvider final : public DepthProvider {
 public:
  explicit CorruptingDepthProvider(DepthCorruption c) : corruption_(c) {}
  std::string tag() const override { return "synthetic-corruptor"; }
  Tensor estimate(const Tensor& rgb, const DepthQuery& query) const override;

 private:
  DepthCorruption corruption_;
};

std::unique_ptr<DepthProvider> make_depth_provider(const std::string& tag, const DepthCorruption& c);

}  // namespace nutri
