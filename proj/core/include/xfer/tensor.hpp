#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace xfer {

class Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

// Dense double tensor doubling as a reverse-mode autodiff node. Ops record
// their inputs and a closure that scatters the output gradient back into
// them; backward() replays those closures in reverse topological order.
//
// Invariants: data.size() == product(shape); grad, once allocated, has the
// same length as data; every op output must be finite (NaN/Inf throws).
class Tensor {
 public:
  std::vector<int> shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until ensure_grad()
  bool requires_grad = false;

  std::vector<TensorPtr> parents;
  std::function<void(Tensor&)> backprop;  // accumulates this->grad into parents

  static TensorPtr make(std::vector<int> shape, std::vector<double> values,
                        bool requires_grad = false);
  static TensorPtr zeros(std::vector<int> shape, bool requires_grad = false);
  static TensorPtr full(std::vector<int> shape, double value, bool requires_grad = false);
  static TensorPtr scalar(double value, bool requires_grad = false);

  int size() const { return static_cast<int>(data.size()); }
  bool is_scalar() const { return data.size() == 1; }
  double value() const;  // scalar tensors only

  int rows() const;  // 2-D helpers
  int cols() const;

  double at(int i) const { return data[static_cast<std::size_t>(i)]; }
  double& at(int i) { return data[static_cast<std::size_t>(i)]; }
  double at(int r, int c) const;
  double& at(int r, int c);

  void ensure_grad();
  void zero_grad();
};

int shape_size(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

// Reverse-mode accumulation from a scalar loss. Seeds d(loss)/d(loss) = 1,
// zero-fills the grads of every reachable node, then runs each node's
// backprop closure in reverse topological order. Throws if the loss is not
// scalar or if a non-finite gradient shows up.
void backward(const TensorPtr& loss);

// ---- primitives -----------------------------------------------------------
// All ops validate shapes, propagate requires_grad from their inputs and
// check the forward result for NaN/Inf.

TensorPtr add(const TensorPtr& a, const TensorPtr& b);
TensorPtr sub(const TensorPtr& a, const TensorPtr& b);
TensorPtr mul(const TensorPtr& a, const TensorPtr& b);  // elementwise
TensorPtr neg(const TensorPtr& a);
TensorPtr scale(const TensorPtr& a, double c);
TensorPtr add_const(const TensorPtr& a, double c);

// [m,k] x [k,n] -> [m,n]; [m,k] x [k] -> [m]
TensorPtr matmul(const TensorPtr& a, const TensorPtr& b);

TensorPtr relu(const TensorPtr& a);
TensorPtr tanh_op(const TensorPtr& a);
TensorPtr sigmoid(const TensorPtr& a);
TensorPtr cos_op(const TensorPtr& a);
TensorPtr sin_op(const TensorPtr& a);

TensorPtr reshape(const TensorPtr& a, std::vector<int> new_shape);
TensorPtr slice_vec(const TensorPtr& a, int offset, int len);     // 1-D slice
TensorPtr row(const TensorPtr& a, int r);                         // 2-D -> 1-D
TensorPtr concat_vec(const TensorPtr& a, const TensorPtr& b);     // 1-D concat
TensorPtr stack_rows(const std::vector<TensorPtr>& rows);         // k x [n] -> [k,n]
TensorPtr stack_scalars(const std::vector<TensorPtr>& xs, std::vector<int> shape);

TensorPtr sum(const TensorPtr& a);
TensorPtr mean(const TensorPtr& a);
TensorPtr sum_scalars(const std::vector<TensorPtr>& xs);

// Euclidean distance ||a - b||_2 (not squared). The gradient at coincident
// inputs is taken as 0 (subgradient at the kink).
TensorPtr l2_distance(const TensorPtr& a, const TensorPtr& b);
TensorPtr squared_l2_distance(const TensorPtr& a, const TensorPtr& b);
// Same kernel, conventional name for matrix arguments.
TensorPtr frobenius_distance(const TensorPtr& a, const TensorPtr& b);

namespace detail {
// Shared op constructor: wires parents/backprop and runs the finite check.
TensorPtr make_op(std::vector<int> shape, std::vector<double> values,
                  std::vector<TensorPtr> parents, std::function<void(Tensor&)> backprop);
void check_finite(const std::vector<double>& values, const char* what);
}  // namespace detail

}  // namespace xfer
