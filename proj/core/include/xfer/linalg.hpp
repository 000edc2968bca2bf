#pragma once

#include <vector>

namespace xfer {

// Dense symmetric n x n eigendecomposition (cyclic Jacobi). Returns
// eigenvalues ascending; eigenvectors[k*n..k*n+n) is the unit eigenvector for
// eigenvalue k.
struct SymmetricEigen {
  std::vector<double> values;
  std::vector<double> vectors;  // row k = eigenvector k
};

SymmetricEigen eigen_symmetric(const std::vector<double>& a, int n);

// V' diag(f(lambda)) V for a symmetric matrix; throws if any eigenvalue is
// not strictly positive (pass a ridge to regularize beforehand).
std::vector<double> spd_sqrt(const std::vector<double>& a, int n);
std::vector<double> spd_inv_sqrt(const std::vector<double>& a, int n);

// Row-major matrix product of two n x n matrices.
std::vector<double> mat_mul_square(const std::vector<double>& a, const std::vector<double>& b,
                                   int n);

}  // namespace xfer
