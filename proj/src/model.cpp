#include "nutri/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "nutri/errors.hpp"
#include "nutri/ops.hpp"

namespace nutri {

NutritionVector& NutritionVector::operator+=(const NutritionVector& o) {
  for (int i = 0; i < kNumTasks; ++i) values[static_cast<std::size_t>(i)] += o.values[static_cast<std::size_t>(i)];
  return *this;
}

NutritionVector operator*(double s, NutritionVector a) {
  for (auto& v : a.values) v *= s;
  return a;
}

std::string ModelConfig::fingerprint() const {
  std::ostringstream os;
  os.precision(17);
  os << "in=" << input_size << ";w=";
  for (std::size_t i = 0; i < widths.size(); ++i) os << (i ? "," : "") << widths[i];
  os << ";fafm=" << use_fafm << ";ssra=" << use_ssra << ";mph=" << use_mph << ";refiner=" << ssra_refiner
     << ";refiner_hidden=" << refiner_hidden << ";kappa=";
  for (std::size_t i = 0; i < kappas.size(); ++i) os << (i ? "," : "") << kappas[i];
  os << ";fusion_init=" << (fusion_init == FusionInit::kAverage ? "average" : "random") << ";unify=" << unify_width
     << "x" << unify_grid << ";attn=" << attn_dim << ";mask_k=" << mask_k_fraction << ";hard=" << hard_mask_inference;
  return os.str();
}

// ---------------------------------------------------------------- encoder

StageEncoder::StageEncoder(std::int64_t in_channels, const std::vector<std::int64_t>& widths, Rng& rng)
    : in_channels_(in_channels) {
  if (widths.empty()) throw ConfigError("encoder: at least one stage required");
  std::int64_t c = in_channels;
  for (std::size_t s = 0; s < widths.size(); ++s) {
    const auto w = widths[s];
    if (w < 1 || (s > 0 && w <= widths[s - 1])) throw ConfigError("encoder: stage widths must be strictly increasing");
    Stage st;
    st.w1 = kaiming_uniform({w, c, 3, 3}, c * 9, rng);
    st.b1 = zeros_param({w});
    st.w2 = kaiming_uniform({w, w, 3, 3}, w * 9, rng);
    st.b2 = zeros_param({w});
    layers_.push_back(std::move(st));
    c = w;
  }
}

std::vector<Tensor> StageEncoder::operator()(const Tensor& image) const {
  if (image.rank() != 4 || image.dim(1) != in_channels_) {
    throw DimensionError("encoder: expected [N, " + std::to_string(in_channels_) + ", H, W], got " +
                         shape_str(image.shape()));
  }
  const std::int64_t min_size = std::int64_t{1} << layers_.size();
  if (image.dim(2) < min_size || image.dim(3) < min_size) {
    throw DimensionError("encoder: input " + shape_str(image.shape()) + " smaller than 2^" +
                         std::to_string(layers_.size()) + " = " + std::to_string(min_size));
  }
  std::vector<Tensor> out;
  Tensor h = image;
  for (const auto& st : layers_) {
    h = relu(conv2d(h, st.w1, st.b1, 1, 1));
    h = relu(conv2d(h, st.w2, st.b2, 2, 1));
    out.push_back(h);
  }
  return out;
}

ParamList StageEncoder::params() const {
  ParamList p;
  for (std::size_t s = 0; s < layers_.size(); ++s) {
    const auto pre = "stage" + std::to_string(s) + ".";
    p.add(pre + "conv1.weight", layers_[s].w1);
    p.add(pre + "conv1.bias", layers_[s].b1);
    p.add(pre + "conv2.weight", layers_[s].w2);
    p.add(pre + "conv2.bias", layers_[s].b2);
  }
  return p;
}

// ---------------------------------------------------------------- unify

Unifier::Unifier(const std::vector<std::int64_t>& in_widths, std::int64_t width, std::int64_t grid, Rng& rng)
    : width_(width), grid_(grid) {
  if (in_widths.empty()) throw ConfigError("unify: empty feature list");
  for (auto c : in_widths) {
    weights_.push_back(kaiming_uniform({width, c}, c, rng));
    biases_.push_back(zeros_param({width}));
  }
}

void Unifier::set_identity() {
  for (auto& w : weights_) {
    if (w.dim(0) != w.dim(1)) throw ContractError("unify: identity projection needs equal widths");
    auto d = w.mutable_data();
    std::fill(d.begin(), d.end(), 0.0);
    for (std::int64_t i = 0; i < w.dim(0); ++i) d[static_cast<std::size_t>(i * w.dim(1) + i)] = 1.0;
  }
}

std::vector<Tensor> Unifier::operator()(const std::vector<Tensor>& features) const {
  if (features.empty() || features.size() != weights_.size()) {
    throw DimensionError("unify: expected " + std::to_string(weights_.size()) + " feature maps, got " +
                         std::to_string(features.size()));
  }
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < features.size(); ++i) {
    auto projected = channel_linear(features[i], weights_[i], biases_[i]);
    out.push_back(adaptive_avg_pool(projected, static_cast<int>(grid_), static_cast<int>(grid_)));
  }
  return out;
}

ParamList Unifier::params() const {
  ParamList p;
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    p.add("proj" + std::to_string(i) + ".weight", weights_[i]);
    p.add("proj" + std::to_string(i) + ".bias", biases_[i]);
  }
  return p;
}

Tensor maps_to_tokens(const std::vector<Tensor>& maps) {
  std::vector<Tensor> flat;
  for (const auto& m : maps) {
    if (m.rank() != 4) throw DimensionError("maps_to_tokens: expected [N, C, H, W]");
    flat.push_back(reshape(m, {m.dim(0), m.dim(1), m.dim(2) * m.dim(3)}));
  }
  return flat.size() == 1 ? flat[0] : concat(flat, 2);
}

// ---------------------------------------------------------------- attention

CrossAttentionBlock::CrossAttentionBlock(std::int64_t token_dim, std::int64_t attn_dim, Rng& rng)
    : dim_(token_dim),
      attn_dim_(attn_dim),
      wq_(uniform_init({attn_dim, token_dim}, 1.0 / std::sqrt(static_cast<double>(token_dim)), rng)),
      wk_(uniform_init({attn_dim, token_dim}, 1.0 / std::sqrt(static_cast<double>(token_dim)), rng)),
      wv_(zeros_param({token_dim, token_dim})) {}

CrossAttentionBlock::Output CrossAttentionBlock::forward(const Tensor& query_tokens,
                                                         const Tensor& context_tokens) const {
  if (query_tokens.rank() != 3 || context_tokens.rank() != 3 || query_tokens.dim(1) != dim_ ||
      context_tokens.dim(1) != dim_ || query_tokens.dim(0) != context_tokens.dim(0)) {
    throw DimensionError("cross_attend: expected [N, " + std::to_string(dim_) + ", T] tokens, got " +
                         shape_str(query_tokens.shape()) + " and " + shape_str(context_tokens.shape()));
  }
  const Tensor none;
  auto q = channel_linear(query_tokens, wq_, none);    // [N, d, Tq]
  auto k = channel_linear(context_tokens, wk_, none);  // [N, d, Tk]
  auto v = channel_linear(context_tokens, wv_, none);  // [N, C, Tk]
  auto scores = scale(bmm(q, k, true, false), 1.0 / std::sqrt(static_cast<double>(attn_dim_)));
  auto attn = softmax_rows(scores);    // [N, Tq, Tk]
  auto mixed = bmm(v, attn, false, true);  // [N, C, Tq]
  return {add(query_tokens, mixed), attn};
}

ParamList CrossAttentionBlock::params() const {
  ParamList p;
  p.add("wq", wq_);
  p.add("wk", wk_);
  p.add("wv", wv_);
  return p;
}

// ---------------------------------------------------------------- gating

GatedFusion::GatedFusion(std::int64_t channels, Rng& rng)
    : weight_(uniform_init({channels, 2 * channels}, 1.0 / std::sqrt(static_cast<double>(2 * channels)), rng)),
      bias_(zeros_param({channels})) {}

GatedFusion::Output GatedFusion::forward(const Tensor& a, const Tensor& b) const {
  if (a.shape() != b.shape()) {
    throw DimensionError("gated fusion: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  auto pooled = concat({global_avg_pool(a), global_avg_pool(b)}, 1);
  auto g = sigmoid(channel_linear(pooled, weight_, bias_));
  auto out = add(scale_channels(a, g), scale_channels(b, scale(g, -1.0, 1.0)));
  return {out, g};
}

ParamList GatedFusion::params() const {
  ParamList p;
  p.add("weight", weight_);
  p.add("bias", bias_);
  return p;
}

ChannelMask::ChannelMask(std::int64_t channels, Rng& rng) : channels_(channels) {
  const auto hidden = std::max<std::int64_t>(1, channels / 4);
  w1_ = kaiming_uniform({hidden, channels}, channels, rng);
  b1_ = zeros_param({hidden});
  w2_ = zeros_param({channels, hidden});
  b2_ = zeros_param({channels});
}

Tensor ChannelMask::logits(const Tensor& x) const {
  if (x.dim(1) != channels_) {
    throw DimensionError("channel mask: scorer has " + std::to_string(channels_) + " channels, input " +
                         shape_str(x.shape()));
  }
  return channel_linear(relu(channel_linear(global_avg_pool(x), w1_, b1_)), w2_, b2_);
}

ParamList ChannelMask::params() const {
  ParamList p;
  p.add("fc1.weight", w1_);
  p.add("fc1.bias", b1_);
  p.add("fc2.weight", w2_);
  p.add("fc2.bias", b2_);
  return p;
}

Tensor mask_channels(const Tensor& x, const ChannelMask& cm, MaskMode mode, std::int64_t k) {
  if (mode == MaskMode::kSoft) return scale_channels(x, sigmoid(cm.logits(x)));
  const auto C = cm.channels();
  if (k < 1 || k > C) {
    throw ParameterError("mask_channels: k = " + std::to_string(k) + " outside [1, " + std::to_string(C) + "]");
  }
  Tensor scores;
  {
    NoGradGuard guard;
    scores = cm.logits(x);
  }
  const auto N = x.dim(0);
  std::vector<double> keep(static_cast<std::size_t>(N * C), 0.0);
  std::vector<std::int64_t> idx(static_cast<std::size_t>(C));
  for (std::int64_t n = 0; n < N; ++n) {
    const double* s = scores.data().data() + n * C;
    std::iota(idx.begin(), idx.end(), 0);
    // Ties resolve to the lower channel index.
    std::stable_sort(idx.begin(), idx.end(), [s](std::int64_t a, std::int64_t b) { return s[a] > s[b]; });
    for (std::int64_t j = 0; j < k; ++j) keep[static_cast<std::size_t>(n * C + idx[static_cast<std::size_t>(j)])] = 1.0;
  }
  return scale_channels(x, Tensor::from({N, C}, std::move(keep)));
}

// ---------------------------------------------------------------- head

PredictionHead::PredictionHead(std::int64_t channels, Rng& rng)
    : weight_(uniform_init({kNumTasks, channels}, 1.0 / std::sqrt(static_cast<double>(channels)), rng)),
      bias_(zeros_param({kNumTasks})),
      scale_(Tensor::full({kNumTasks}, 1.0)) {}

Tensor PredictionHead::operator()(const Tensor& features) const {
  auto out = softplus(channel_linear(global_avg_pool(features), weight_, bias_));
  return mul(out, scale_);
}

ParamList PredictionHead::params() const {
  ParamList p;
  p.add("fc.weight", weight_);
  p.add("fc.bias", bias_);
  return p;
}

// ---------------------------------------------------------------- model

namespace {
enum Component : std::uint64_t {
  kRgbEncoder = 1,
  kDepthEncoder,
  kSsra,
  kFusion,
  kUnifyRgb,
  kUnifySem,
  kAttention,
  kGate,
  kMask,
  kGlobalGate,
  kHead
};
}

NutritionModel::NutritionModel(ModelConfig cfg, std::uint64_t seed)
    : cfg_(std::move(cfg)),
      rgb_encoder_([&] {
        Rng rng(derive_seed(seed, kRgbEncoder));
        return StageEncoder(3, cfg_.widths, rng);
      }()) {
  // Each component draws from its own stream so toggling one module leaves
  // the initial weights of every other module unchanged.
  auto stream = [seed](Component c) { return Rng(derive_seed(seed, c)); };
  if (cfg_.input_size < (std::int64_t{1} << cfg_.widths.size())) {
    throw ConfigError("model: input_size " + std::to_string(cfg_.input_size) + " too small for " +
                      std::to_string(cfg_.widths.size()) + " stages");
  }
  params_.append("rgb_encoder.", rgb_encoder_.params());
  if (cfg_.depth_active()) {
    auto r = stream(kDepthEncoder);
    depth_encoder_.emplace(1, cfg_.widths, r);
    params_.append("depth_encoder.", depth_encoder_->params());
    if (cfg_.use_ssra) {
      auto rs = stream(kSsra);
      ssra_.emplace(rs, cfg_.ssra_refiner, cfg_.refiner_hidden);
      params_.append("ssra.", ssra_->params());
    }
    auto rf = stream(kFusion);
    fusion_.emplace(cfg_.widths, cfg_.kappas, cfg_.use_fafm, cfg_.fusion_init, rf);
    params_.append("fusion.", fusion_->params());
  }
  std::int64_t head_channels = cfg_.widths.back();
  if (cfg_.use_mph) {
    if (!(cfg_.mask_k_fraction > 0.0 && cfg_.mask_k_fraction <= 1.0)) {
      throw ConfigError("model: mask_k_fraction must lie in (0, 1]");
    }
    auto r1 = stream(kUnifyRgb);
    unify_rgb_.emplace(cfg_.widths, cfg_.unify_width, cfg_.unify_grid, r1);
    auto r2 = stream(kUnifySem);
    unify_sem_.emplace(cfg_.widths, cfg_.unify_width, cfg_.unify_grid, r2);
    auto r3 = stream(kAttention);
    attention_.emplace(cfg_.unify_width, cfg_.attn_dim, r3);
    auto r4 = stream(kGate);
    gate_.emplace(cfg_.unify_width, r4);
    auto r5 = stream(kMask);
    channel_mask_.emplace(cfg_.unify_width, r5);
    auto r6 = stream(kGlobalGate);
    global_gate_.emplace(cfg_.unify_width, r6);
    params_.append("mph.unify_rgb.", unify_rgb_->params());
    params_.append("mph.unify_sem.", unify_sem_->params());
    params_.append("mph.attention.", attention_->params());
    params_.append("mph.gate.", gate_->params());
    params_.append("mph.channel_mask.", channel_mask_->params());
    params_.append("mph.global_gate.", global_gate_->params());
    head_channels = cfg_.unify_width;
  }
  auto rh = stream(kHead);
  head_.emplace(head_channels, rh);
  params_.append("head.", head_->params());
}

ParamList NutritionModel::buffers() const {
  ParamList b;
  b.add("head.output_scale", head_->output_scale(), false);
  return b;
}

ForwardResult NutritionModel::forward(const Tensor& rgb, const Tensor& mono_depth, bool training) const {
  if (rgb.rank() != 4 || rgb.dim(1) != 3) throw DimensionError("model: expected [N, 3, H, W] RGB, got " + shape_str(rgb.shape()));
  ForwardResult res;
  const auto rgb_stages = rgb_encoder_(rgb);
  std::vector<Tensor> fused = rgb_stages;
  if (cfg_.depth_active()) {
    if (!mono_depth.defined()) throw ContractError("model: depth stream active but no depth given");
    if (mono_depth.rank() != 4 || mono_depth.dim(0) != rgb.dim(0) || mono_depth.dim(1) != 1 ||
        mono_depth.dim(2) != rgb.dim(2) || mono_depth.dim(3) != rgb.dim(3)) {
      throw DimensionError("model: depth " + shape_str(mono_depth.shape()) + " does not match RGB " +
                           shape_str(rgb.shape()));
    }
    Tensor d = mono_depth;
    if (ssra_) {
      d = (*ssra_)(d);
      res.adapted_depth = d;
    }
    const auto depth_stages = (*depth_encoder_)(minmax_normalize(d));
    fused = (*fusion_)(rgb_stages, depth_stages);
    res.align_rgb = alignment_features(rgb_stages.back());
    res.align_depth = alignment_features(depth_stages.back());
  }
  if (cfg_.use_mph) {
    const auto rgb_tokens = maps_to_tokens((*unify_rgb_)(rgb_stages));
    const auto sem_tokens = maps_to_tokens((*unify_sem_)(fused));
    const auto attended = (*attention_)(rgb_tokens, sem_tokens);
    const auto gated = (*gate_)(attended, sem_tokens);
    Tensor masked;
    if (!training && cfg_.hard_mask_inference) {
      const auto k = std::max<std::int64_t>(
          1, static_cast<std::int64_t>(std::llround(cfg_.mask_k_fraction * static_cast<double>(cfg_.unify_width))));
      masked = mask_channels(gated, *channel_mask_, MaskMode::kHard, k);
    } else {
      masked = mask_channels(gated, *channel_mask_, MaskMode::kSoft);
    }
    res.prediction = (*head_)((*global_gate_)(rgb_tokens, masked));
  } else {
    res.prediction = (*head_)(fused.back());
  }
  res.fused = std::move(fused);
  return res;
}

Tensor NutritionModel::predict(const Tensor& rgb, const Tensor& mono_depth) const {
  NoGradGuard guard;
  return forward(rgb, mono_depth, false).prediction;
}

}  // namespace nutri
