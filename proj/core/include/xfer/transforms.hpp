#pragma once

#include <string>
#include <vector>

#include "xfer/tensor.hpp"

namespace xfer {

enum class TransformFamily { euclidean, affine, projective, unrestricted };

std::string family_name(TransformFamily f);
TransformFamily family_from_name(const std::string& name);

// Homogeneous (d+1)x(d+1) transform acting on column vectors (x .. 1)^T.
//
// Family contracts:
//   euclidean  - upper-left d x d block orthonormal with det +1, last row (0..0 1)
//   affine     - last row (0..0 1)
//   projective - invertible; points are renormalized after application
//   unrestricted - arbitrary entries, applied without renormalization
struct TransformMatrix {
  int dim = 2;  // d: spatial / feature dimension
  TransformFamily family = TransformFamily::affine;
  std::vector<double> entries;  // (d+1)^2 row-major

  TransformMatrix() = default;
  TransformMatrix(int d, TransformFamily fam);

  int side() const { return dim + 1; }
  double at(int r, int c) const { return entries[static_cast<std::size_t>(r) * side() + c]; }
  double& at(int r, int c) { return entries[static_cast<std::size_t>(r) * side() + c]; }

  static TransformMatrix identity(int d, TransformFamily fam = TransformFamily::affine);

  TransformMatrix times(const TransformMatrix& rhs) const;
  TransformMatrix inverse() const;  // throws on |det| < 1e-12
  double det() const;

  // Checks the family contract within tol; unrestricted always passes.
  bool family_valid(double tol = 1e-9) const;

  // Homogeneous apply to a geometric point (length d). Projective transforms
  // renormalize and reject |w| < 1e-9.
  std::vector<double> apply_point(const std::vector<double>& p) const;

  // Homogeneous apply to a feature frame (length dim); no renormalization
  // except for the projective family. Returns the first dim coordinates.
  std::vector<double> apply_frame(const std::vector<double>& frame) const;
};

// Planar rigid motion: rotation by angle plus translation (tx, ty).
TransformMatrix make_euclidean(double angle, double tx, double ty);

// (f+1)x(f+1) matrix that sends any frame to the fixed neutral frame: first
// feature to 0.5 and remaining features to 0. For f=1 this maps every
// center-line distance onto the lane middle.
TransformMatrix follow_center_target(int features);

// ---- differentiable pieces --------------------------------------------------

// Bilinear resampling of a [H,W] image under a 3x3 homogeneous transform T.
// The output pixel at normalized grid position g (both axes in [-1,1],
// align-corners) samples the input at T*g; samples outside the image read 0.
// Differentiable w.r.t. both the image and the matrix entries. Source
// coordinates within 1e-7 of a pixel center are snapped to it, which makes
// axis-aligned transforms (identity, 180-degree rotation, whole-pixel
// shifts) exact pixel permutations.
TensorPtr grid_sample(const TensorPtr& image, const TensorPtr& transform);

// Convenience wrapper over plain matrices.
TensorPtr sample_image(const TensorPtr& image, const TransformMatrix& t);

// Assembles the 3x3 euclidean matrix from scalar angle/translation nodes;
// gradients flow back into all three.
TensorPtr assemble_euclidean(const TensorPtr& angle, const TensorPtr& tx, const TensorPtr& ty);

// Applies a (f+1)x(f+1) matrix tensor to a frame (length f), returning the
// full homogeneous output (length f+1, no renormalization).
TensorPtr apply_frame_h(const TensorPtr& transform, const TensorPtr& frame);

}  // namespace xfer
