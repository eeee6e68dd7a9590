#pragma once

// Directional central-difference gradient checks.
//
// For a scalar function f of leaf tensors, compares the reverse-mode
// directional derivative g . u with (f(x + h u) - f(x - h u)) / 2h along
// random unit directions u spanning every input element.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "nutri/ops.hpp"
#include "nutri/tensor.hpp"

namespace nutri::testing {

struct GradcheckResult {
  double max_rel_error = 0.0;
  int directions = 0;
};

inline double relative_error(double a, double n) {
  return std::fabs(a - n) / std::max({std::fabs(a), std::fabs(n), 1e-7});
}

inline GradcheckResult gradcheck(const std::function<Tensor()>& f, std::vector<Tensor> inputs, int directions = 20,
                                 std::uint64_t seed = 1, double h = 1e-5) {
  for (auto& t : inputs) t.zero_grad();
  backward(f());
  std::vector<std::vector<double>> grads;
  for (const auto& t : inputs) {
    const auto g = t.grad();
    grads.emplace_back(t.numel(), 0.0);
    std::copy(g.begin(), g.end(), grads.back().begin());
  }

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  GradcheckResult res;
  for (int d = 0; d < directions; ++d) {
    std::vector<std::vector<double>> u;
    double norm = 0.0;
    for (const auto& t : inputs) {
      u.emplace_back(t.numel());
      for (auto& x : u.back()) {
        x = normal(rng);
        norm += x * x;
      }
    }
    norm = std::sqrt(norm);
    double analytic = 0.0;
    for (std::size_t k = 0; k < inputs.size(); ++k)
      for (std::size_t i = 0; i < u[k].size(); ++i) {
        u[k][i] /= norm;
        analytic += grads[k][i] * u[k][i];
      }
    std::vector<std::vector<double>> origin;
    for (const auto& t : inputs) origin.push_back(t.to_vector());
    auto place = [&](double s) {
      for (std::size_t k = 0; k < inputs.size(); ++k) {
        auto x = inputs[k].mutable_data();
        for (std::size_t i = 0; i < x.size(); ++i) x[i] = origin[k][i] + s * u[k][i];
      }
    };
    double fp, fm;
    {
      NoGradGuard guard;
      place(h);
      fp = f().item();
      place(-h);
      fm = f().item();
      place(0.0);
    }
    res.max_rel_error = std::max(res.max_rel_error, relative_error(analytic, (fp - fm) / (2.0 * h)));
    ++res.directions;
  }
  return res;
}

// Fixed random tensor for turning an op output into a scalar: sum(out * w).
inline Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0,
                            bool requires_grad = false) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

inline Tensor weighted_sum(const Tensor& out, std::uint64_t seed = 99) {
  return sum(mul(out, random_tensor(out.shape(), seed)));
}

}  // namespace nutri::testing
