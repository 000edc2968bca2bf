#include "xfer/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace xfer {

Optimizer::Optimizer(std::vector<TensorPtr> params, OptimizerOptions opts)
    : params_(std::move(params)), opts_(opts) {
  if (opts_.lr <= 0.0) throw std::invalid_argument("optimizer: learning rate must be positive");
  slots_.reserve(params_.size());
  for (const auto& p : params_) {
    Slot s;
    s.param = p;
    if (!opts_.sgd) {
      s.m.assign(p->data.size(), 0.0);
      s.v.assign(p->data.size(), 0.0);
    }
    slots_.push_back(std::move(s));
  }
}

void Optimizer::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

void Optimizer::step() {
  for (auto& s : slots_) {
    if (s.param->grad.size() != s.param->data.size()) {
      throw std::runtime_error("optimizer: parameter is missing its gradient");
    }
    for (const double g : s.param->grad) {
      if (!std::isfinite(g)) throw std::runtime_error("optimizer: non-finite gradient");
    }
  }

  double clip_scale = 1.0;
  if (opts_.clip_norm > 0.0) {
    double sq = 0.0;
    for (const auto& s : slots_) {
      for (const double g : s.param->grad) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (norm > opts_.clip_norm) clip_scale = opts_.clip_norm / norm;
  }

  ++step_count_;
  if (opts_.sgd) {
    for (auto& s : slots_) {
      for (std::size_t i = 0; i < s.param->data.size(); ++i) {
        s.param->data[i] -= opts_.lr * clip_scale * s.param->grad[i];
      }
    }
    return;
  }

  const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(step_count_));
  const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(step_count_));
  for (auto& s : slots_) {
    for (std::size_t i = 0; i < s.param->data.size(); ++i) {
      const double g = clip_scale * s.param->grad[i];
      s.m[i] = opts_.beta1 * s.m[i] + (1.0 - opts_.beta1) * g;
      s.v[i] = opts_.beta2 * s.v[i] + (1.0 - opts_.beta2) * g * g;
      const double mhat = s.m[i] / bc1;
      const double vhat = s.v[i] / bc2;
      s.param->data[i] -= opts_.lr * mhat / (std::sqrt(vhat) + opts_.eps);
    }
  }
}

}  // namespace xfer
