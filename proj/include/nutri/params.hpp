#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "nutri/tensor.hpp"

namespace nutri {

using Rng = std::mt19937_64;

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Ordered list of trainable tensors. Order is registration order and is
// what checkpoints and the optimizer iterate over.
class ParamList {
 public:
  // Marks t as requiring grad unless `trainable` is false (buffers).
  void add(std::string name, Tensor t, bool trainable = true);
  void append(const std::string& prefix, const ParamList& other);

  const std::vector<NamedTensor>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }
  std::size_t scalar_count() const;
  const Tensor* find(const std::string& name) const;
  void zero_grad() const;

 private:
  std::vector<NamedTensor> items_;
};

// Uniform(-b, b) with b = sqrt(6 / fan_in), suited to ReLU stacks.
Tensor kaiming_uniform(Shape shape, std::int64_t fan_in, Rng& rng);
Tensor uniform_init(Shape shape, double bound, Rng& rng);
Tensor zeros_param(Shape shape);

// Deterministic child seed for a named stream.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

}  // namespace nutri
