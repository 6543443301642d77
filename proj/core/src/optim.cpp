#include "posefield/optim.hpp"

#include <cmath>

#include "posefield/check.hpp"

namespace posefield {

AdamW::AdamW(std::vector<ad::ParamBlock*> params, Config cfg)
    : params_(std::move(params)), cfg_(cfg) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (auto* p : params_) {
    m_.emplace_back(p->size(), 0.0);
    v_.emplace_back(p->size(), 0.0);
  }
}

void AdamW::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
  for (size_t p = 0; p < params_.size(); ++p) {
    auto& w = params_[p]->values;
    auto& g = params_[p]->grad;
    auto& m = m_[p];
    auto& v = v_[p];
    for (size_t i = 0; i < w.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * w[i]);
    }
  }
}

void AdamW::zero_grads() {
  for (auto* p : params_) p->zero_grad();
}

double lr_at(int64_t step, int64_t total, double start, double end) {
  PF_CHECK_MSG(step >= 0 && step <= total && total > 0, "lr_at: step outside [0, total]");
  PF_CHECK_MSG(start > 0 && end > 0, "lr_at: rates must be positive");
  return start * std::pow(end / start, double(step) / double(total));
}

}  // namespace posefield
