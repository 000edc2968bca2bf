#include "xfer/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace xfer {

int shape_size(const std::vector<int>& shape) {
  int n = 1;
  for (const int d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor shape dimensions must be positive");
    n *= d;
  }
  return n;
}

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

namespace detail {

void check_finite(const std::vector<double>& values, const char* what) {
  for (const double v : values) {
    if (!std::isfinite(v)) {
      throw std::runtime_error(std::string("non-finite value in ") + what);
    }
  }
}

TensorPtr make_op(std::vector<int> shape, std::vector<double> values,
                  std::vector<TensorPtr> parents, std::function<void(Tensor&)> backprop) {
  check_finite(values, "op output");
  auto t = std::make_shared<Tensor>();
  t->shape = std::move(shape);
  t->data = std::move(values);
  if (static_cast<int>(t->data.size()) != shape_size(t->shape)) {
    throw std::invalid_argument("op output size does not match shape");
  }
  bool needs = false;
  for (const auto& p : parents) needs = needs || p->requires_grad;
  t->requires_grad = needs;
  if (needs) {
    t->parents = std::move(parents);
    t->backprop = std::move(backprop);
  }
  return t;
}

}  // namespace detail

TensorPtr Tensor::make(std::vector<int> shape, std::vector<double> values, bool requires_grad) {
  if (static_cast<int>(values.size()) != shape_size(shape)) {
    throw std::invalid_argument("tensor data size does not match shape " + shape_str(shape));
  }
  detail::check_finite(values, "tensor construction");
  auto t = std::make_shared<Tensor>();
  t->shape = std::move(shape);
  t->data = std::move(values);
  t->requires_grad = requires_grad;
  return t;
}

TensorPtr Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

TensorPtr Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
  const int n = shape_size(shape);
  return make(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), value),
              requires_grad);
}

TensorPtr Tensor::scalar(double value, bool requires_grad) {
  return make({1}, {value}, requires_grad);
}

double Tensor::value() const {
  if (!is_scalar()) throw std::logic_error("value() requires a scalar tensor");
  return data[0];
}

int Tensor::rows() const {
  if (shape.size() != 2) throw std::logic_error("rows() requires a 2-D tensor");
  return shape[0];
}

int Tensor::cols() const {
  if (shape.size() != 2) throw std::logic_error("cols() requires a 2-D tensor");
  return shape[1];
}

double Tensor::at(int r, int c) const {
  return data[static_cast<std::size_t>(r) * static_cast<std::size_t>(cols()) +
              static_cast<std::size_t>(c)];
}

double& Tensor::at(int r, int c) {
  return data[static_cast<std::size_t>(r) * static_cast<std::size_t>(cols()) +
              static_cast<std::size_t>(c)];
}

void Tensor::ensure_grad() {
  if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
}

void Tensor::zero_grad() {
  grad.assign(data.size(), 0.0);
}

void backward(const TensorPtr& loss) {
  if (!loss) throw std::invalid_argument("backward: null loss");
  if (!loss->is_scalar()) throw std::invalid_argument("backward: loss must be scalar");

  // Iterative post-order DFS; recursion would overflow on long LSTM chains.
  std::vector<Tensor*> topo;
  std::unordered_set<Tensor*> visited;
  std::vector<std::pair<Tensor*, std::size_t>> stack;
  stack.emplace_back(loss.get(), 0);
  visited.insert(loss.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Tensor* p = node->parents[next++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      topo.push_back(node);
      stack.pop_back();
    }
  }

  for (Tensor* t : topo) t->ensure_grad();
  loss->grad[0] = 1.0;

  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    Tensor* t = *it;
    if (t->backprop) t->backprop(*t);
  }
  for (Tensor* t : topo) detail::check_finite(t->grad, "gradient");
}

// ---- primitives -----------------------------------------------------------

namespace {

using detail::make_op;

void require_same_shape(const TensorPtr& a, const TensorPtr& b, const char* op) {
  if (a->shape != b->shape) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a->shape) +
                                " vs " + shape_str(b->shape));
  }
}

void accumulate(Tensor& dst, const std::vector<double>& g) {
  dst.ensure_grad();
  for (std::size_t i = 0; i < g.size(); ++i) dst.grad[i] += g[i];
}

}  // namespace

TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a->data.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->data[i] + b->data[i];
  return make_op(a->shape, std::move(out), {a, b}, [](Tensor& t) {
    accumulate(*t.parents[0], t.grad);
    accumulate(*t.parents[1], t.grad);
  });
}

TensorPtr sub(const TensorPtr& a, const TensorPtr& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a->data.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->data[i] - b->data[i];
  return make_op(a->shape, std::move(out), {a, b}, [](Tensor& t) {
    Tensor& pa = *t.parents[0];
    Tensor& pb = *t.parents[1];
    pa.ensure_grad();
    pb.ensure_grad();
    for (std::size_t i = 0; i < t.grad.size(); ++i) {
      pa.grad[i] += t.grad[i];
      pb.grad[i] -= t.grad[i];
    }
  });
}

TensorPtr mul(const TensorPtr& a, const TensorPtr& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a->data.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->data[i] * b->data[i];
  return make_op(a->shape, std::move(out), {a, b}, [](Tensor& t) {
    Tensor& pa = *t.parents[0];
    Tensor& pb = *t.parents[1];
    pa.ensure_grad();
    pb.ensure_grad();
    for (std::size_t i = 0; i < t.grad.size(); ++i) {
      pa.grad[i] += t.grad[i] * pb.data[i];
      pb.grad[i] += t.grad[i] * pa.data[i];
    }
  });
}

TensorPtr neg(const TensorPtr& a) { return scale(a, -1.0); }

TensorPtr scale(const TensorPtr& a, double c) {
  std::vector<double> out(a->data.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * a->data[i];
  return make_op(a->shape, std::move(out), {a}, [c](Tensor& t) {
    Tensor& pa = *t.parents[0];
    pa.ensure_grad();
    for (std::size_t i = 0; i < t.grad.size(); ++i) pa.grad[i] += c * t.grad[i];
  });
}

TensorPtr add_const(const TensorPtr& a, double c) {
  std::vector<double> out(a->data.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->data[i] + c;
  return make_op(a->shape, std::move(out), {a},
                 [](Tensor& t) { accumulate(*t.parents[0], t.grad); });
}

TensorPtr matmul(const TensorPtr& a, const TensorPtr& b) {
  if (a->shape.size() != 2) throw std::invalid_argument("matmul: lhs must be 2-D");
  const int m = a->shape[0];
  const int k = a->shape[1];
  const bool vec = b->shape.size() == 1;
  if (!vec && b->shape.size() != 2) throw std::invalid_argument("matmul: rhs must be 1-D or 2-D");
  const int bk = b->shape[0];
  const int n = vec ? 1 : b->shape[1];
  if (bk != k) {
    throw std::invalid_argument("matmul: inner dimensions differ " + shape_str(a->shape) +
                                " vs " + shape_str(b->shape));
  }
  std::vector<double> out(static_cast<std::size_t>(m) * static_cast<std::size_t>(n), 0.0);
  for (int i = 0; i < m; ++i) {
    for (int kk = 0; kk < k; ++kk) {
      const double av = a->data[static_cast<std::size_t>(i) * k + kk];
      const std::size_t brow = static_cast<std::size_t>(kk) * n;
      const std::size_t orow = static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) out[orow + j] += av * b->data[brow + j];
    }
  }
  std::vector<int> out_shape = vec ? std::vector<int>{m} : std::vector<int>{m, n};
  return make_op(std::move(out_shape), std::move(out), {a, b}, [m, k, n](Tensor& t) {
    Tensor& pa = *t.parents[0];
    Tensor& pb = *t.parents[1];
    pa.ensure_grad();
    pb.ensure_grad();
    // dA = G B^T, dB = A^T G
    for (int i = 0; i < m; ++i) {
      for (int kk = 0; kk < k; ++kk) {
        double acc = 0.0;
        for (int j = 0; j < n; ++j) {
          acc += t.grad[static_cast<std::size_t>(i) * n + j] *
                 pb.data[static_cast<std::size_t>(kk) * n + j];
        }
        pa.grad[static_cast<std::size_t>(i) * k + kk] += acc;
      }
    }
    for (int kk = 0; kk < k; ++kk) {
      for (int j = 0; j < n; ++j) {
        double acc = 0.0;
        for (int i = 0; i < m; ++i) {
          acc += pa.data[static_cast<std::size_t>(i) * k + kk] *
                 t.grad[static_cast<std::size_t>(i) * n + j];
        }
        pb.grad[static_cast<std::size_t>(kk) * n + j] += acc;
      }
    }
  });
}

namespace {

TensorPtr unary_map(const TensorPtr& a, double (*f)(double), double (*df)(double, double),
                    const char*) {
  std::vector<double> out(a->data.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a->data[i]);
  return make_op(a->shape, std::move(out), {a}, [df](Tensor& t) {
    Tensor& pa = *t.parents[0];
    pa.ensure_grad();
    for (std::size_t i = 0; i < t.grad.size(); ++i) {
      pa.grad[i] += t.grad[i] * df(pa.data[i], t.data[i]);
    }
  });
}

}  // namespace

TensorPtr relu(const TensorPtr& a) {
  return unary_map(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; }, "relu");
}

TensorPtr tanh_op(const TensorPtr& a) {
  return unary_map(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; },
      "tanh");
}

TensorPtr sigmoid(const TensorPtr& a) {
  return unary_map(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); }, "sigmoid");
}

TensorPtr cos_op(const TensorPtr& a) {
  return unary_map(
      a, [](double x) { return std::cos(x); }, [](double x, double) { return -std::sin(x); },
      "cos");
}

TensorPtr sin_op(const TensorPtr& a) {
  return unary_map(
      a, [](double x) { return std::sin(x); }, [](double x, double) { return std::cos(x); },
      "sin");
}

TensorPtr reshape(const TensorPtr& a, std::vector<int> new_shape) {
  if (shape_size(new_shape) != a->size()) {
    throw std::invalid_argument("reshape: element count mismatch");
  }
  return make_op(std::move(new_shape), a->data, {a},
                 [](Tensor& t) { accumulate(*t.parents[0], t.grad); });
}

TensorPtr slice_vec(const TensorPtr& a, int offset, int len) {
  if (a->shape.size() != 1) throw std::invalid_argument("slice_vec: 1-D tensor required");
  if (offset < 0 || len <= 0 || offset + len > a->size()) {
    throw std::invalid_argument("slice_vec: range out of bounds");
  }
  std::vector<double> out(a->data.begin() + offset, a->data.begin() + offset + len);
  return make_op({len}, std::move(out), {a}, [offset](Tensor& t) {
    Tensor& pa = *t.parents[0];
    pa.ensure_grad();
    for (std::size_t i = 0; i < t.grad.size(); ++i) {
      pa.grad[static_cast<std::size_t>(offset) + i] += t.grad[i];
    }
  });
}

TensorPtr row(const TensorPtr& a, int r) {
  if (a->shape.size() != 2) throw std::invalid_argument("row: 2-D tensor required");
  if (r < 0 || r >= a->rows()) throw std::invalid_argument("row: index out of bounds");
  const int n = a->cols();
  const std::size_t off = static_cast<std::size_t>(r) * n;
  std::vector<double> out(a->data.begin() + off, a->data.begin() + off + n);
  return make_op({n}, std::move(out), {a}, [off](Tensor& t) {
    Tensor& pa = *t.parents[0];
    pa.ensure_grad();
    for (std::size_t i = 0; i < t.grad.size(); ++i) pa.grad[off + i] += t.grad[i];
  });
}

TensorPtr concat_vec(const TensorPtr& a, const TensorPtr& b) {
  if (a->shape.size() != 1 || b->shape.size() != 1) {
    throw std::invalid_argument("concat_vec: 1-D tensors required");
  }
  std::vector<double> out;
  out.reserve(a->data.size() + b->data.size());
  out.insert(out.end(), a->data.begin(), a->data.end());
  out.insert(out.end(), b->data.begin(), b->data.end());
  const std::size_t na = a->data.size();
  return make_op({a->size() + b->size()}, std::move(out), {a, b}, [na](Tensor& t) {
    Tensor& pa = *t.parents[0];
    Tensor& pb = *t.parents[1];
    pa.ensure_grad();
    pb.ensure_grad();
    for (std::size_t i = 0; i < na; ++i) pa.grad[i] += t.grad[i];
    for (std::size_t i = na; i < t.grad.size(); ++i) pb.grad[i - na] += t.grad[i];
  });
}

TensorPtr stack_rows(const std::vector<TensorPtr>& rows) {
  if (rows.empty()) throw std::invalid_argument("stack_rows: empty input");
  const int n = rows[0]->size();
  for (const auto& r : rows) {
    if (r->shape.size() != 1 || r->size() != n) {
      throw std::invalid_argument("stack_rows: rows must be 1-D of equal length");
    }
  }
  std::vector<double> out;
  out.reserve(rows.size() * static_cast<std::size_t>(n));
  for (const auto& r : rows) out.insert(out.end(), r->data.begin(), r->data.end());
  std::vector<TensorPtr> parents(rows.begin(), rows.end());
  return make_op({static_cast<int>(rows.size()), n}, std::move(out), std::move(parents),
                 [n](Tensor& t) {
                   for (std::size_t k = 0; k < t.parents.size(); ++k) {
                     Tensor& p = *t.parents[k];
                     p.ensure_grad();
                     const std::size_t off = k * static_cast<std::size_t>(n);
                     for (int i = 0; i < n; ++i) p.grad[static_cast<std::size_t>(i)] += t.grad[off + i];
                   }
                 });
}

TensorPtr stack_scalars(const std::vector<TensorPtr>& xs, std::vector<int> shape) {
  if (static_cast<int>(xs.size()) != shape_size(shape)) {
    throw std::invalid_argument("stack_scalars: element count mismatch");
  }
  std::vector<double> out;
  out.reserve(xs.size());
  for (const auto& x : xs) {
    if (!x->is_scalar()) throw std::invalid_argument("stack_scalars: inputs must be scalars");
    out.push_back(x->data[0]);
  }
  std::vector<TensorPtr> parents(xs.begin(), xs.end());
  return make_op(std::move(shape), std::move(out), std::move(parents), [](Tensor& t) {
    for (std::size_t k = 0; k < t.parents.size(); ++k) {
      Tensor& p = *t.parents[k];
      p.ensure_grad();
      p.grad[0] += t.grad[k];
    }
  });
}

TensorPtr sum(const TensorPtr& a) {
  double acc = 0.0;
  for (const double v : a->data) acc += v;
  return make_op({1}, {acc}, {a}, [](Tensor& t) {
    Tensor& pa = *t.parents[0];
    pa.ensure_grad();
    for (double& g : pa.grad) g += t.grad[0];
  });
}

TensorPtr mean(const TensorPtr& a) { return scale(sum(a), 1.0 / a->size()); }

TensorPtr sum_scalars(const std::vector<TensorPtr>& xs) {
  if (xs.empty()) throw std::invalid_argument("sum_scalars: empty input");
  double acc = 0.0;
  for (const auto& x : xs) {
    if (!x->is_scalar()) throw std::invalid_argument("sum_scalars: inputs must be scalars");
    acc += x->data[0];
  }
  std::vector<TensorPtr> parents(xs.begin(), xs.end());
  return make_op({1}, {acc}, std::move(parents), [](Tensor& t) {
    for (auto& p : t.parents) {
      p->ensure_grad();
      p->grad[0] += t.grad[0];
    }
  });
}

namespace {

TensorPtr l2_kernel(const TensorPtr& a, const TensorPtr& b, bool squared, const char* op) {
  require_same_shape(a, b, op);
  double acc = 0.0;
  for (std::size_t i = 0; i < a->data.size(); ++i) {
    const double d = a->data[i] - b->data[i];
    acc += d * d;
  }
  const double dist = std::sqrt(acc);
  return make_op({1}, {squared ? acc : dist}, {a, b}, [squared, dist](Tensor& t) {
    Tensor& pa = *t.parents[0];
    Tensor& pb = *t.parents[1];
    pa.ensure_grad();
    pb.ensure_grad();
    // d||a-b||/da = (a-b)/||a-b||; 0 at the kink (coincident points).
    const double s = squared ? 2.0 * t.grad[0]
                             : (dist > 1e-300 ? t.grad[0] / dist : 0.0);
    for (std::size_t i = 0; i < pa.data.size(); ++i) {
      const double d = s * (pa.data[i] - pb.data[i]);
      pa.grad[i] += d;
      pb.grad[i] -= d;
    }
  });
}

}  // namespace

TensorPtr l2_distance(const TensorPtr& a, const TensorPtr& b) {
  return l2_kernel(a, b, false, "l2_distance");
}

TensorPtr squared_l2_distance(const TensorPtr& a, const TensorPtr& b) {
  return l2_kernel(a, b, true, "squared_l2_distance");
}

TensorPtr frobenius_distance(const TensorPtr& a, const TensorPtr& b) {
  return l2_kernel(a, b, false, "frobenius_distance");
}

}  // namespace xfer
