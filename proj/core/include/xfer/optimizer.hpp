#pragma once

#include <cstdint>
#include <vector>

#include "xfer/tensor.hpp"

namespace xfer {

struct OptimizerOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  bool sgd = false;         // plain SGD instead of adaptive moments
  double clip_norm = 0.0;   // global gradient-norm clip; 0 disables
};

// Adaptive-moment (or plain SGD) updates over a fixed parameter list.
// Parameters keep first/second moment slots of their own shape; the step
// counter drives bias correction. step() requires every parameter to carry a
// finite gradient of matching size.
class Optimizer {
 public:
  Optimizer(std::vector<TensorPtr> params, OptimizerOptions opts = {});

  void zero_grad();
  void step();

  std::int64_t step_count() const { return step_count_; }
  const OptimizerOptions& options() const { return opts_; }
  const std::vector<TensorPtr>& params() const { return params_; }

 private:
  struct Slot {
    TensorPtr param;
    std::vector<double> m;
    std::vector<double> v;
  };
  std::vector<TensorPtr> params_;
  std::vector<Slot> slots_;
  OptimizerOptions opts_;
  std::int64_t step_count_ = 0;
};

}  // namespace xfer
