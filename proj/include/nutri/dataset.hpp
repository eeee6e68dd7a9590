#pragma once

// In-memory samples at model resolution and minibatch assembly.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nutri/depth_adapter.hpp"
#include "nutri/model.hpp"
#include "nutri/synth.hpp"
#include "nutri/tensor.hpp"

namespace nutri {

struct Sample {
  std::string id;
  std::vector<float> rgb;       // 3 x S x S
  std::vector<float> mono;      // S x S, provider depth
  std::vector<float> depth_gt;  // S x S, ground truth
  NutritionVector label;
};

struct Batch {
  Tensor rgb;       // [B, 3, S, S]
  Tensor mono;      // [B, 1, S, S]
  Tensor depth_gt;  // [B, 1, S, S]
  Tensor targets;   // [B, 5]
};

class SampleSet {
 public:
  SampleSet() = default;
  explicit SampleSet(std::int64_t size) : size_(size) {}

  void add(Sample s) { samples_.push_back(std::move(s)); }
  std::size_t count() const { return samples_.size(); }
  bool empty() const { return samples_.empty(); }
  std::int64_t size() const { return size_; }
  const Sample& operator[](std::size_t i) const { return samples_[i]; }

  Batch batch(std::span<const std::size_t> indices) const;
  std::vector<NutritionVector> labels() const;
  // Subset in the given order.
  SampleSet select(std::span<const std::size_t> indices) const;

 private:
  std::int64_t size_ = 0;
  std::vector<Sample> samples_;
};

// Resizes [1, C, H, W] to [1, C, size, size] by adaptive average pooling.
Tensor resize_to(const Tensor& image, std::int64_t size);

// Per-sample provider seed derived from the scene seed.
std::uint64_t depth_query_seed(std::uint64_t scene_seed);

// Loads every record of `split` ("train", "test" or "all") at model resolution.
SampleSet load_split(const Corpus& corpus, const std::string& split, std::int64_t size, const DepthProvider& provider);

// Seeded partition of [0, n) into (train, val) with round(n * fraction) in val.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> holdout(std::size_t n, double fraction, std::uint64_t seed);

}  // namespace nutri
