#include "nutri/optim.hpp"

#include <cmath>
#include <numbers>

#include "nutri/errors.hpp"

namespace nutri {

double cosine_lr(double peak, int epoch, int total) {
  if (total <= 0) return peak;
  return peak * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch) / static_cast<double>(total)));
}

Adam::Adam(const ParamList& params, AdamOptions opts) : opts_(opts) {
  for (const auto& p : params.items()) {
    if (!p.tensor.requires_grad()) continue;
    params_.push_back(p);
    m_.emplace_back(p.tensor.numel(), 0.0);
    v_.emplace_back(p.tensor.numel(), 0.0);
  }
}

void Adam::reset() {
  for (auto& m : m_) std::fill(m.begin(), m.end(), 0.0);
  for (auto& v : v_) std::fill(v.begin(), v.end(), 0.0);
  t_ = 0;
}

void Adam::step() {
  ++t_;
  const double b1 = opts_.beta1, b2 = opts_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto t = params_[k].tensor;
    const auto g = t.grad();
    if (g.empty()) continue;
    auto w = t.mutable_data();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i] + opts_.weight_decay * w[i];
      m[i] = b1 * m[i] + (1.0 - b1) * gi;
      v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
      w[i] -= opts_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + opts_.eps);
    }
  }
}

std::vector<NamedTensor> Adam::state() const {
  std::vector<NamedTensor> out;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    const auto& shape = params_[k].tensor.shape();
    out.push_back({"adam.m." + params_[k].name, Tensor::from(shape, m_[k])});
    out.push_back({"adam.v." + params_[k].name, Tensor::from(shape, v_[k])});
  }
  return out;
}

void Adam::load_state(const std::vector<NamedTensor>& moments, std::int64_t steps) {
  if (moments.size() != 2 * params_.size()) throw DataError("optimizer state: moment count does not match parameters");
  for (std::size_t k = 0; k < params_.size(); ++k) {
    const auto& m = moments[2 * k];
    const auto& v = moments[2 * k + 1];
    if (m.name != "adam.m." + params_[k].name || v.name != "adam.v." + params_[k].name ||
        m.tensor.numel() != m_[k].size() || v.tensor.numel() != v_[k].size()) {
      throw DataError("optimizer state: mismatch at " + params_[k].name);
    }
    m_[k] = m.tensor.to_vector();
    v_[k] = v.tensor.to_vector();
  }
  t_ = steps;
}

}  // namespace nutri
