#pragma once

#include <cstdint>
#include <vector>

#include "posefield/autodiff.hpp"

namespace posefield {

// Decoupled-weight-decay Adam with bias correction. Deterministic: update
// order follows the parameter list.
class AdamW {
 public:
  struct Config {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
  };

  AdamW() = default;
  AdamW(std::vector<ad::ParamBlock*> params, Config cfg);

  void step(double lr);
  void zero_grads();

  const std::vector<ad::ParamBlock*>& params() const { return params_; }
  const Config& config() const { return cfg_; }
  int64_t steps_taken() const { return t_; }

  // checkpoint access
  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  int64_t& step_counter() { return t_; }

 private:
  std::vector<ad::ParamBlock*> params_;
  Config cfg_;
  std::vector<std::vector<double>> m_, v_;
  int64_t t_ = 0;
};

// Exponential interpolation from start to end over [0, total].
double lr_at(int64_t step, int64_t total, double start, double end);

}  // namespace posefield
