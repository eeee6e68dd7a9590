#pragma once

// Adam with L2 weight decay and per-epoch learning-rate schedules.

#include <cstdint>
#include <vector>

#include "nutri/params.hpp"

namespace nutri {

// peak * (1 + cos(pi * epoch / total)) / 2; peak when total == 0.
double cosine_lr(double peak, int epoch, int total);

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // added to the gradient as wd * param
};

class Adam {
 public:
  Adam(const ParamList& params, AdamOptions opts);

  // Updates every trainable tensor that has a gradient buffer.
  void step();
  void reset();

  void set_lr(double lr) { opts_.lr = lr; }
  double lr() const { return opts_.lr; }
  const AdamOptions& options() const { return opts_; }
  std::int64_t steps() const { return t_; }

  // Moment buffers in parameter order, for checkpointing.
  std::vector<NamedTensor> state() const;
  // Throws DataError when names or sizes differ.
  void load_state(const std::vector<NamedTensor>& moments, std::int64_t steps);

 private:
  std::vector<NamedTensor> params_;
  std::vector<std::vector<double>> m_, v_;
  AdamOptions opts_;
  std::int64_t t_ = 0;
};

}  // namespace nutri
