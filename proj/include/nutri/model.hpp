#pragma once

// Dual-stream encoder plus mask-based prediction head.
//
// forward: RGB [N,3,H,W] and monocular depth [N,1,H,W]
//   depth -> (scale-shift residual adapter) -> min-max normalize
//   RGB, depth -> per-stream StageEncoder -> S stage maps each
//   stage maps -> HierarchicalFusion (frequency or additive) -> fused maps
//   head:
//     with MPH: unify both lists to tokens, cross-attend RGB tokens over
//               fused tokens, gated fusion, channel mask, global gated
//               fusion with the RGB tokens, pooled FC, softplus
//     without:  deepest fused (or RGB) map, pooled FC, softplus
//
// The depth stream is active whenever FAFM or SSRA is enabled; with all
// three toggles off the model is the RGB encoder plus head.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "nutri/depth_adapter.hpp"
#include "nutri/freq_fusion.hpp"
#include "nutri/params.hpp"
#include "nutri/tensor.hpp"

namespace nutri {

inline constexpr int kNumTasks = 5;
inline constexpr std::array<const char*, kNumTasks> kTaskNames{"calories", "mass", "fat", "carb", "protein"};
inline constexpr std::array<const char*, kNumTasks> kTaskUnits{"kcal", "g", "g", "g", "g"};
inline constexpr std::array<const char*, kNumTasks> kTaskColumns{"Calories", "Mass", "Fat", "Carb.", "Protein"};

struct NutritionVector {
  std::array<double, kNumTasks> values{};

  double& operator[](std::size_t i) { return values[i]; }
  double operator[](std::size_t i) const { return values[i]; }
  double calories() const { return values[0]; }
  double mass() const { return values[1]; }
  double fat() const { return values[2]; }
  double carbohydrate() const { return values[3]; }
  double protein() const { return values[4]; }

  NutritionVector& operator+=(const NutritionVector& o);
  friend NutritionVector operator+(NutritionVector a, const NutritionVector& b) { return a += b; }
  friend NutritionVector operator*(double s, NutritionVector a);
  bool operator==(const NutritionVector&) const = default;
};

struct ModelConfig {
  std::int64_t input_size = 64;
  std::vector<std::int64_t> widths{16, 32, 64, 128};
  bool use_fafm = true;
  bool use_ssra = true;
  bool use_mph = true;
  bool ssra_refiner = true;
  int refiner_hidden = 16;
  std::vector<double> kappas{0.25};
  FusionInit fusion_init = FusionInit::kAverage;
  std::int64_t unify_width = 64;
  std::int64_t unify_grid = 4;
  std::int64_t attn_dim = 64;
  double mask_k_fraction = 0.5;
  bool hard_mask_inference = false;

  bool depth_active() const { return use_fafm || use_ssra; }
  // Stable string over every field that affects parameter shapes or the
  // forward computation.
  std::string fingerprint() const;
};

class StageEncoder {
 public:
  StageEncoder(std::int64_t in_channels, const std::vector<std::int64_t>& widths, Rng& rng);

  // Throws DimensionError if H or W < 2^S.
  std::vector<Tensor> operator()(const Tensor& image) const;
  ParamList params() const;
  std::size_t stages() const { return layers_.size(); }

 private:
  struct Stage {
    Tensor w1, b1, w2, b2;
  };
  std::int64_t in_channels_;
  std::vector<Stage> layers_;
};

// Per-stage 1x1 projection to a common width, then adaptive pooling to a
// common grid. Output maps are [N, width, grid, grid].
class Unifier {
 public:
  Unifier(const std::vector<std::int64_t>& in_widths, std::int64_t width, std::int64_t grid, Rng& rng);
  // Projection weights set to the identity where in == out widths; used by
  // tests.
  void set_identity();

  std::vector<Tensor> operator()(const std::vector<Tensor>& features) const;
  ParamList params() const;

 private:
  std::int64_t width_, grid_;
  std::vector<Tensor> weights_, biases_;
};

// Tokens are laid out [N, C, T] (channel-major).
Tensor maps_to_tokens(const std::vector<Tensor>& maps);

class CrossAttentionBlock {
 public:
  // Value projection starts at zero, so the block starts as the identity.
  CrossAttentionBlock(std::int64_t token_dim, std::int64_t attn_dim, Rng& rng);

  struct Output {
    Tensor tokens;     // [N, C, Tq]
    Tensor attention;  // [N, Tq, Tk], rows sum to 1
  };
  Output forward(const Tensor& query_tokens, const Tensor& context_tokens) const;
  Tensor operator()(const Tensor& q, const Tensor& kv) const { return forward(q, kv).tokens; }
  ParamList params() const;

  Tensor& wq() { return wq_; }
  Tensor& wk() { return wk_; }
  Tensor& wv() { return wv_; }

 private:
  std::int64_t dim_, attn_dim_;
  Tensor wq_, wk_, wv_;
};

inline Tensor cross_attend(const Tensor& rgb_tokens, const Tensor& semantic_tokens, const CrossAttentionBlock& block) {
  return block(rgb_tokens, semantic_tokens);
}

// g = sigmoid(W [pool(a); pool(b)] + c) per channel;
// out = g * a + (1 - g) * b.
class GatedFusion {
 public:
  GatedFusion(std::int64_t channels, Rng& rng);

  struct Output {
    Tensor out;
    Tensor gate;  // [N, C]
  };
  Output forward(const Tensor& a, const Tensor& b) const;
  Tensor operator()(const Tensor& a, const Tensor& b) const { return forward(a, b).out; }
  ParamList params() const;

 private:
  Tensor weight_, bias_;
};

// Channel scorer: global pool -> FC(C, C/4) -> ReLU -> FC(C/4, C). The last
// layer starts at zero so the soft mask starts at 0.5 everywhere.
class ChannelMask {
 public:
  ChannelMask(std::int64_t channels, Rng& rng);

  Tensor logits(const Tensor& x) const;  // [N, C]
  ParamList params() const;
  std::int64_t channels() const { return channels_; }
  Tensor& fc2_weight() { return w2_; }
  Tensor& fc2_bias() { return b2_; }

 private:
  std::int64_t channels_;
  Tensor w1_, b1_, w2_, b2_;
};

enum class MaskMode { kSoft, kHard };

// Soft: sigmoid(logits) * x. Hard: keep the k highest-scoring channels per
// sample, zero the rest (not differentiable w.r.t. the scorer).
Tensor mask_channels(const Tensor& x, const ChannelMask& cm, MaskMode mode = MaskMode::kSoft, std::int64_t k = 0);

// Global average pool -> FC to 5 -> softplus -> optional per-task scale.
class PredictionHead {
 public:
  PredictionHead(std::int64_t channels, Rng& rng);

  Tensor operator()(const Tensor& features) const;  // [N, 5]
  ParamList params() const;
  Tensor& weight() { return weight_; }
  Tensor& bias() { return bias_; }
  // Non-trainable per-task output multiplier (defaults to 1).
  Tensor& output_scale() { return scale_; }
  const Tensor& output_scale() const { return scale_; }

 private:
  Tensor weight_, bias_, scale_;
};

struct ForwardResult {
  Tensor prediction;          // [N, 5]
  Tensor adapted_depth;       // [N, 1, H, W] before normalization, undefined without SSRA
  Tensor align_rgb;           // [N, C_S] pooled deepest RGB features
  Tensor align_depth;         // [N, C_S] pooled deepest depth features
  std::vector<Tensor> fused;  // per-stage fused maps
};

class NutritionModel {
 public:
  NutritionModel(ModelConfig cfg, std::uint64_t seed);

  // rgb [N,3,H,W] at cfg.input_size; depth [N,1,H,W] required when the
  // depth stream is active.
  ForwardResult forward(const Tensor& rgb, const Tensor& mono_depth, bool training = true) const;
  Tensor predict(const Tensor& rgb, const Tensor& mono_depth) const;

  const ModelConfig& config() const { return cfg_; }
  // Trainable parameters in a fixed order.
  const ParamList& params() const { return params_; }
  // Non-trainable state persisted with checkpoints.
  ParamList buffers() const;

  DepthAdapter* depth_adapter() { return ssra_ ? &*ssra_ : nullptr; }
  PredictionHead& head() { return *head_; }
  const PredictionHead& head() const { return *head_; }

 private:
  ModelConfig cfg_;
  StageEncoder rgb_encoder_;
  std::optional<StageEncoder> depth_encoder_;
  std::optional<DepthAdapter> ssra_;
  std::optional<HierarchicalFusion> fusion_;
  std::optional<Unifier> unify_rgb_, unify_sem_;
  std::optional<CrossAttentionBlock> attention_;
  std::optional<GatedFusion> gate_, global_gate_;
  std::optional<ChannelMask> channel_mask_;
  std::optional<PredictionHead> head_;
  ParamList params_;
};

}  // namespace nutri
