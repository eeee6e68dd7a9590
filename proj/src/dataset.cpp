#include "nutri/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "nutri/errors.hpp"
#include "nutri/ops.hpp"
#include "nutri/params.hpp"
#include "nutri/tensor_io.hpp"

namespace nutri {

Batch SampleSet::batch(std::span<const std::size_t> indices) const {
  if (indices.empty()) throw DimensionError("empty batch");
  const auto b = static_cast<std::int64_t>(indices.size());
  const auto plane = static_cast<std::size_t>(size_ * size_);
  std::vector<double> rgb(indices.size() * 3 * plane), mono(indices.size() * plane), gt(indices.size() * plane),
      y(indices.size() * kNumTasks);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const auto& s = samples_.at(indices[k]);
    std::copy(s.rgb.begin(), s.rgb.end(), rgb.begin() + static_cast<std::ptrdiff_t>(k * 3 * plane));
    std::copy(s.mono.begin(), s.mono.end(), mono.begin() + static_cast<std::ptrdiff_t>(k * plane));
    std::copy(s.depth_gt.begin(), s.depth_gt.end(), gt.begin() + static_cast<std::ptrdiff_t>(k * plane));
    for (std::size_t i = 0; i < kNumTasks; ++i) y[k * kNumTasks + i] = s.label[i];
  }
  return {Tensor::from({b, 3, size_, size_}, std::move(rgb)), Tensor::from({b, 1, size_, size_}, std::move(mono)),
          Tensor::from({b, 1, size_, size_}, std::move(gt)),
          Tensor::from({b, static_cast<std::int64_t>(kNumTasks)}, std::move(y))};
}

std::vector<NutritionVector> SampleSet::labels() const {
  std::vector<NutritionVector> out;
  out.reserve(samples_.size());
  for (const auto& s : samples_) out.push_back(s.label);
  return out;
}

SampleSet SampleSet::select(std::span<const std::size_t> indices) const {
  SampleSet out(size_);
  for (auto i : indices) out.add(samples_.at(i));
  return out;
}

Tensor resize_to(const Tensor& image, std::int64_t size) {
  if (image.rank() != 4) throw DimensionError("resize: expected [1, C, H, W], got " + shape_str(image.shape()));
  if (image.dim(2) == size && image.dim(3) == size) return image;
  NoGradGuard guard;
  return adaptive_avg_pool(image, static_cast<int>(size), static_cast<int>(size)).detach();
}

std::uint64_t depth_query_seed(std::uint64_t scene_seed) { return derive_seed(scene_seed, 0xD0); }

namespace {

std::vector<float> to_float(const Tensor& t) {
  const auto d = t.data();
  return std::vector<float>(d.begin(), d.end());
}

Tensor as_image(Tensor t, std::int64_t channels) {
  if (t.rank() == 3 && t.dim(0) == channels) return Tensor::from({1, channels, t.dim(1), t.dim(2)}, t.to_vector());
  if (t.rank() == 4 && t.dim(0) == 1 && t.dim(1) == channels) return t;
  throw DataError("expected a " + std::to_string(channels) + "-channel image, got " + shape_str(t.shape()));
}

}  // namespace

SampleSet load_split(const Corpus& corpus, const std::string& split, std::int64_t size, const DepthProvider& provider) {
  SampleSet set(size);
  for (const auto& r : corpus.records) {
    if (split != "all" && r.split != split) continue;
    try {
      const auto rgb = resize_to(as_image(load_tensor(corpus.root / r.rgb_path), 3), size);
      const auto gt = resize_to(as_image(load_tensor(corpus.root / r.depth_path), 1), size);
      const auto mono = resize_to(provider.estimate(rgb, {corpus.root / r.depth_path, depth_query_seed(r.seed)}), size);
      set.add({r.id, to_float(rgb), to_float(mono), to_float(gt), r.label});
    } catch (const DataError& e) {
      throw DataError("sample " + r.id + ": " + e.what());
    }
  }
  return set;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> holdout(std::size_t n, double fraction, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(derive_seed(seed, 0x7A1));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[static_cast<std::size_t>(rng() % i)]);
  auto n_val = static_cast<std::size_t>(std::llround(static_cast<double>(n) * fraction));
  if (n_val >= n) n_val = n > 0 ? n - 1 : 0;
  std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::sort(val.begin(), val.end());
  std::sort(train.begin(), train.end());
  return {train, val};
}

}  // namespace nutri
