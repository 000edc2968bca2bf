#include "xfer/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace xfer {

SymmetricEigen eigen_symmetric(const std::vector<double>& a, int n) {
  if (static_cast<int>(a.size()) != n * n) throw std::invalid_argument("eigen_symmetric: bad size");
  std::vector<double> m = a;
  std::vector<double> v(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i) * n + i] = 1.0;

  auto idx = [n](int r, int c) { return static_cast<std::size_t>(r) * n + c; };

  const int max_sweeps = 64;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) off += m[idx(p, q)] * m[idx(p, q)];
    if (off < 1e-26) break;

    for (int p = 0; p < n - 1; ++p) {
      for (int q = p + 1; q < n; ++q) {
        const double apq = m[idx(p, q)];
        if (std::fabs(apq) < 1e-300) continue;
        const double app = m[idx(p, p)];
        const double aqq = m[idx(q, q)];
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;

        for (int k = 0; k < n; ++k) {
          const double mkp = m[idx(k, p)];
          const double mkq = m[idx(k, q)];
          m[idx(k, p)] = c * mkp - s * mkq;
          m[idx(k, q)] = s * mkp + c * mkq;
        }
        for (int k = 0; k < n; ++k) {
          const double mpk = m[idx(p, k)];
          const double mqk = m[idx(q, k)];
          m[idx(p, k)] = c * mpk - s * mqk;
          m[idx(q, k)] = s * mpk + c * mqk;
        }
        for (int k = 0; k < n; ++k) {
          const double vpk = v[idx(p, k)];
          const double vqk = v[idx(q, k)];
          v[idx(p, k)] = c * vpk - s * vqk;
          v[idx(q, k)] = s * vpk + c * vqk;
        }
      }
    }
  }

  SymmetricEigen out;
  out.values.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out.values[static_cast<std::size_t>(i)] = m[idx(i, i)];

  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int x, int y) {
    return out.values[static_cast<std::size_t>(x)] < out.values[static_cast<std::size_t>(y)];
  });
  SymmetricEigen sorted;
  sorted.values.resize(out.values.size());
  sorted.vectors.resize(static_cast<std::size_t>(n) * n);
  for (int k = 0; k < n; ++k) {
    sorted.values[static_cast<std::size_t>(k)] = out.values[static_cast<std::size_t>(order[k])];
    for (int j = 0; j < n; ++j) {
      sorted.vectors[static_cast<std::size_t>(k) * n + j] = v[idx(order[k], j)];
    }
  }
  return sorted;
}

namespace {

std::vector<double> spd_function(const std::vector<double>& a, int n, double (*f)(double)) {
  const SymmetricEigen eig = eigen_symmetric(a, n);
  for (const double lambda : eig.values) {
    if (lambda <= 0.0) {
      throw std::runtime_error("matrix is not positive definite (add a ridge)");
    }
  }
  std::vector<double> out(static_cast<std::size_t>(n) * n, 0.0);
  for (int k = 0; k < n; ++k) {
    const double fk = f(eig.values[static_cast<std::size_t>(k)]);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        out[static_cast<std::size_t>(i) * n + j] += fk *
            eig.vectors[static_cast<std::size_t>(k) * n + i] *
            eig.vectors[static_cast<std::size_t>(k) * n + j];
      }
    }
  }
  return out;
}

}  // namespace

std::vector<double> spd_sqrt(const std::vector<double>& a, int n) {
  return spd_function(a, n, [](double x) { return std::sqrt(x); });
}

std::vector<double> spd_inv_sqrt(const std::vector<double>& a, int n) {
  return spd_function(a, n, [](double x) { return 1.0 / std::sqrt(x); });
}

std::vector<double> mat_mul_square(const std::vector<double>& a, const std::vector<double>& b,
                                   int n) {
  std::vector<double> out(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < n; ++k) {
      const double av = a[static_cast<std::size_t>(i) * n + k];
      if (av == 0.0) continue;
      for (int j = 0; j < n; ++j) {
        out[static_cast<std::size_t>(i) * n + j] += av * b[static_cast<std::size_t>(k) * n + j];
      }
    }
  }
  return out;
}

}  // namespace xfer
