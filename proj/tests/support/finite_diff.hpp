#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "xfer/tensor.hpp"

namespace xfer::testing {

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst;  // "param[i]" of the worst entry
};

// Central-difference check of every entry of every parameter against the
// autodiff gradient of the scalar loss built by `build`. `build` must
// construct a fresh graph over the same parameter tensors on each call.
// Relative error uses an absolute floor so near-zero gradients compare
// against the perturbation noise fairly.
inline GradCheckResult check_gradients(const std::vector<TensorPtr>& params,
                                       const std::function<TensorPtr()>& build,
                                       double eps = 1e-5, double floor = 1e-3) {
  for (const auto& p : params) {
    p->requires_grad = true;
    p->zero_grad();
  }
  const TensorPtr loss = build();
  backward(loss);
  std::vector<std::vector<double>> grads;
  grads.reserve(params.size());
  for (const auto& p : params) grads.push_back(p->grad);

  GradCheckResult res;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = *params[pi];
    for (int i = 0; i < p.size(); ++i) {
      const double saved = p.at(i);
      p.at(i) = saved + eps;
      const double up = build()->value();
      p.at(i) = saved - eps;
      const double down = build()->value();
      p.at(i) = saved;
      const double fd = (up - down) / (2.0 * eps);
      const double g = grads[pi][static_cast<std::size_t>(i)];
      const double denom = std::max({std::fabs(fd), std::fabs(g), floor});
      const double rel = std::fabs(fd - g) / denom;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst = "param" + std::to_string(pi) + "[" + std::to_string(i) + "]";
      }
    }
  }
  return res;
}

}  // namespace xfer::testing
