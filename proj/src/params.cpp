#include "nutri/params.hpp"

#include <cmath>

#include "nutri/errors.hpp"

namespace nutri {

void ParamList::add(std::string name, Tensor t, bool trainable) {
  if (find(name)) throw ContractError("duplicate parameter name " + name);
  if (trainable) t.set_requires_grad(true);
  items_.push_back({std::move(name), std::move(t)});
}

void ParamList::append(const std::string& prefix, const ParamList& other) {
  for (const auto& p : other.items()) add(prefix + p.name, p.tensor, p.tensor.requires_grad());
}

std::size_t ParamList::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : items_) n += p.tensor.numel();
  return n;
}

const Tensor* ParamList::find(const std::string& name) const {
  for (const auto& p : items_) {
    if (p.name == name) return &p.tensor;
  }
  return nullptr;
}

void ParamList::zero_grad() const {
  for (const auto& p : items_) {
    auto t = p.tensor;
    t.zero_grad();
  }
}

Tensor uniform_init(Shape shape, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor::from(std::move(shape), std::move(v), true);
}

Tensor kaiming_uniform(Shape shape, std::int64_t fan_in, Rng& rng) {
  return uniform_init(std::move(shape), std::sqrt(6.0 / static_cast<double>(fan_in)), rng);
}

Tensor zeros_param(Shape shape) { return Tensor::zeros(std::move(shape), true); }

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  // splitmix64 finalizer over the combined words
  std::uint64_t z = base + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace nutri
