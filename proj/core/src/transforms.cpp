#include "xfer/transforms.hpp"

#include <cmath>
#include <stdexcept>

namespace xfer {

std::string family_name(TransformFamily f) {
  switch (f) {
    case TransformFamily::euclidean: return "euclidean";
    case TransformFamily::affine: return "affine";
    case TransformFamily::projective: return "projective";
    case TransformFamily::unrestricted: return "unrestricted";
  }
  return "unrestricted";
}

TransformFamily family_from_name(const std::string& name) {
  if (name == "euclidean") return TransformFamily::euclidean;
  if (name == "affine") return TransformFamily::affine;
  if (name == "projective") return TransformFamily::projective;
  if (name == "unrestricted") return TransformFamily::unrestricted;
  throw std::invalid_argument("unknown transform family: " + name);
}

TransformMatrix::TransformMatrix(int d, TransformFamily fam) : dim(d), family(fam) {
  if (d <= 0) throw std::invalid_argument("TransformMatrix: dimension must be positive");
  entries.assign(static_cast<std::size_t>(side()) * side(), 0.0);
}

TransformMatrix TransformMatrix::identity(int d, TransformFamily fam) {
  TransformMatrix t(d, fam);
  for (int i = 0; i < t.side(); ++i) t.at(i, i) = 1.0;
  return t;
}

TransformMatrix TransformMatrix::times(const TransformMatrix& rhs) const {
  if (dim != rhs.dim) throw std::invalid_argument("TransformMatrix: dimension mismatch");
  TransformMatrix out(dim, family);
  const int n = side();
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < n; ++k) {
      const double a = at(i, k);
      if (a == 0.0) continue;
      for (int j = 0; j < n; ++j) out.at(i, j) += a * rhs.at(k, j);
    }
  }
  return out;
}

double TransformMatrix::det() const {
  // Gaussian elimination with partial pivoting on a copy.
  const int n = side();
  std::vector<double> m = entries;
  double d = 1.0;
  for (int col = 0; col < n; ++col) {
    int piv = col;
    for (int r = col + 1; r < n; ++r) {
      if (std::fabs(m[static_cast<std::size_t>(r) * n + col]) >
          std::fabs(m[static_cast<std::size_t>(piv) * n + col])) {
        piv = r;
      }
    }
    if (m[static_cast<std::size_t>(piv) * n + col] == 0.0) return 0.0;
    if (piv != col) {
      for (int j = 0; j < n; ++j) {
        std::swap(m[static_cast<std::size_t>(piv) * n + j],
                  m[static_cast<std::size_t>(col) * n + j]);
      }
      d = -d;
    }
    const double pval = m[static_cast<std::size_t>(col) * n + col];
    d *= pval;
    for (int r = col + 1; r < n; ++r) {
      const double factor = m[static_cast<std::size_t>(r) * n + col] / pval;
      for (int j = col; j < n; ++j) {
        m[static_cast<std::size_t>(r) * n + j] -= factor * m[static_cast<std::size_t>(col) * n + j];
      }
    }
  }
  return d;
}

TransformMatrix TransformMatrix::inverse() const {
  if (std::fabs(det()) < 1e-12) throw std::runtime_error("TransformMatrix: singular matrix");
  const int n = side();
  std::vector<double> a = entries;
  TransformMatrix out = identity(dim, family);
  std::vector<double>& b = out.entries;
  // Gauss-Jordan with partial pivoting.
  for (int col = 0; col < n; ++col) {
    int piv = col;
    for (int r = col + 1; r < n; ++r) {
      if (std::fabs(a[static_cast<std::size_t>(r) * n + col]) >
          std::fabs(a[static_cast<std::size_t>(piv) * n + col])) {
        piv = r;
      }
    }
    for (int j = 0; j < n; ++j) {
      std::swap(a[static_cast<std::size_t>(piv) * n + j], a[static_cast<std::size_t>(col) * n + j]);
      std::swap(b[static_cast<std::size_t>(piv) * n + j], b[static_cast<std::size_t>(col) * n + j]);
    }
    const double pval = a[static_cast<std::size_t>(col) * n + col];
    for (int j = 0; j < n; ++j) {
      a[static_cast<std::size_t>(col) * n + j] /= pval;
      b[static_cast<std::size_t>(col) * n + j] /= pval;
    }
    for (int r = 0; r < n; ++r) {
      if (r == col) continue;
      const double factor = a[static_cast<std::size_t>(r) * n + col];
      if (factor == 0.0) continue;
      for (int j = 0; j < n; ++j) {
        a[static_cast<std::size_t>(r) * n + j] -= factor * a[static_cast<std::size_t>(col) * n + j];
        b[static_cast<std::size_t>(r) * n + j] -= factor * b[static_cast<std::size_t>(col) * n + j];
      }
    }
  }
  return out;
}

bool TransformMatrix::family_valid(double tol) const {
  const int n = side();
  switch (family) {
    case TransformFamily::unrestricted:
      return true;
    case TransformFamily::projective:
      return std::fabs(det()) > 1e-12;
    case TransformFamily::euclidean: {
      // orthonormal upper block with det +1
      for (int i = 0; i < dim; ++i) {
        for (int j = 0; j < dim; ++j) {
          double dot = 0.0;
          for (int k = 0; k < dim; ++k) dot += at(k, i) * at(k, j);
          const double want = i == j ? 1.0 : 0.0;
          if (std::fabs(dot - want) > tol) return false;
        }
      }
      double block_det;
      if (dim == 1) {
        block_det = at(0, 0);
      } else if (dim == 2) {
        block_det = at(0, 0) * at(1, 1) - at(0, 1) * at(1, 0);
      } else {
        TransformMatrix sub(dim - 1, TransformFamily::unrestricted);
        for (int i = 0; i < dim; ++i)
          for (int j = 0; j < dim; ++j) sub.entries[static_cast<std::size_t>(i) * dim + j] = at(i, j);
        block_det = sub.det();
      }
      if (std::fabs(block_det - 1.0) > tol) return false;
      [[fallthrough]];
    }
    case TransformFamily::affine: {
      for (int j = 0; j < n - 1; ++j) {
        if (std::fabs(at(n - 1, j)) > tol) return false;
      }
      return std::fabs(at(n - 1, n - 1) - 1.0) <= tol;
    }
  }
  return true;
}

std::vector<double> TransformMatrix::apply_point(const std::vector<double>& p) const {
  if (static_cast<int>(p.size()) != dim) {
    throw std::invalid_argument("apply_point: point dimension mismatch");
  }
  const int n = side();
  std::vector<double> h(static_cast<std::size_t>(n), 0.0);
  for (int i = 0; i < n; ++i) {
    double acc = at(i, dim);  // homogeneous coordinate is 1
    for (int j = 0; j < dim; ++j) acc += at(i, j) * p[static_cast<std::size_t>(j)];
    h[static_cast<std::size_t>(i)] = acc;
  }
  if (family == TransformFamily::projective) {
    const double w = h[static_cast<std::size_t>(dim)];
    if (std::fabs(w) < 1e-9) throw std::runtime_error("apply_point: degenerate projective denominator");
    for (int i = 0; i < dim; ++i) h[static_cast<std::size_t>(i)] /= w;
  }
  h.resize(static_cast<std::size_t>(dim));
  return h;
}

std::vector<double> TransformMatrix::apply_frame(const std::vector<double>& frame) const {
  return apply_point(frame);  // same arithmetic; families share the renorm rule
}

TransformMatrix make_euclidean(double angle, double tx, double ty) {
  TransformMatrix t(2, TransformFamily::euclidean);
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  t.at(0, 0) = c;
  t.at(0, 1) = -s;
  t.at(0, 2) = tx;
  t.at(1, 0) = s;
  t.at(1, 1) = c;
  t.at(1, 2) = ty;
  t.at(2, 2) = 1.0;
  return t;
}

TransformMatrix follow_center_target(int features) {
  if (features <= 0) throw std::invalid_argument("follow_center_target: features must be positive");
  TransformMatrix t(features, TransformFamily::affine);
  t.at(0, features) = 0.5;
  t.at(features, features) = 1.0;
  return t;
}

// ---- differentiable pieces --------------------------------------------------

namespace {

using detail::make_op;

// Snap source coordinates that are numerically on a pixel center, so that
// aligned transforms reproduce pixels exactly instead of within an ulp.
inline double snap(double x) {
  const double r = std::round(x);
  return std::fabs(x - r) < 1e-7 ? r : x;
}

}  // namespace

TensorPtr grid_sample(const TensorPtr& image, const TensorPtr& transform) {
  if (image->shape.size() != 2) throw std::invalid_argument("grid_sample: image must be [H,W]");
  if (transform->shape != std::vector<int>{3, 3}) {
    throw std::invalid_argument("grid_sample: transform must be [3,3]");
  }
  const int h = image->shape[0], w = image->shape[1];
  if (h < 2 || w < 2) throw std::invalid_argument("grid_sample: image too small");
  const auto& tm = transform->data;
  {
    // reject a non-invertible transform up front
    const double d = tm[0] * (tm[4] * tm[8] - tm[5] * tm[7]) -
                     tm[1] * (tm[3] * tm[8] - tm[5] * tm[6]) +
                     tm[2] * (tm[3] * tm[7] - tm[4] * tm[6]);
    if (std::fabs(d) < 1e-12) throw std::runtime_error("grid_sample: non-invertible transform");
  }

  struct Sample {
    double u = 0, v = 0, w = 1;  // homogeneous source before divide
    double x = 0, y = 0;         // source pixel coordinates
    double gx = 0, gy = 0;       // normalized output grid position
    bool live = false;           // any in-bounds corner
  };
  auto samples = std::make_shared<std::vector<Sample>>(static_cast<std::size_t>(h) * w);
  std::vector<double> out(static_cast<std::size_t>(h) * w, 0.0);

  const double sx = (w - 1) / 2.0;
  const double sy = (h - 1) / 2.0;
  const auto& img = image->data;
  for (int r = 0; r < h; ++r) {
    const double gy = h == 1 ? 0.0 : -1.0 + 2.0 * r / (h - 1);
    for (int c = 0; c < w; ++c) {
      const double gx = w == 1 ? 0.0 : -1.0 + 2.0 * c / (w - 1);
      Sample s;
      s.gx = gx;
      s.gy = gy;
      s.u = tm[0] * gx + tm[1] * gy + tm[2];
      s.v = tm[3] * gx + tm[4] * gy + tm[5];
      s.w = tm[6] * gx + tm[7] * gy + tm[8];
      if (std::fabs(s.w) < 1e-9) {
        throw std::runtime_error("grid_sample: degenerate homogeneous denominator");
      }
      s.x = snap((s.u / s.w + 1.0) * sx);
      s.y = snap((s.v / s.w + 1.0) * sy);
      const int x0 = static_cast<int>(std::floor(s.x));
      const int y0 = static_cast<int>(std::floor(s.y));
      const double fx = s.x - x0;
      const double fy = s.y - y0;
      double acc = 0.0;
      for (int dy = 0; dy < 2; ++dy) {
        for (int dx = 0; dx < 2; ++dx) {
          const int xi = x0 + dx, yi = y0 + dy;
          if (xi < 0 || xi >= w || yi < 0 || yi >= h) continue;
          const double wgt = (dx ? fx : 1.0 - fx) * (dy ? fy : 1.0 - fy);
          if (wgt == 0.0) continue;
          acc += wgt * img[static_cast<std::size_t>(yi) * w + xi];
          s.live = true;
        }
      }
      out[static_cast<std::size_t>(r) * w + c] = acc;
      (*samples)[static_cast<std::size_t>(r) * w + c] = s;
    }
  }

  return make_op({h, w}, std::move(out), {image, transform}, [samples, h, w, sx, sy](Tensor& t) {
    Tensor& pimg = *t.parents[0];
    Tensor& ptm = *t.parents[1];
    pimg.ensure_grad();
    ptm.ensure_grad();
    const auto& img = pimg.data;
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        const std::size_t o = static_cast<std::size_t>(r) * w + c;
        const double g = t.grad[o];
        if (g == 0.0) continue;
        const Sample& s = (*samples)[o];
        const int x0 = static_cast<int>(std::floor(s.x));
        const int y0 = static_cast<int>(std::floor(s.y));
        const double fx = s.x - x0;
        const double fy = s.y - y0;
        // corner values, out-of-bounds read 0 as in the forward pass
        double p[2][2] = {{0, 0}, {0, 0}};
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const int xi = x0 + dx, yi = y0 + dy;
            if (xi < 0 || xi >= w || yi < 0 || yi >= h) continue;
            p[dy][dx] = img[static_cast<std::size_t>(yi) * w + xi];
            const double wgt = (dx ? fx : 1.0 - fx) * (dy ? fy : 1.0 - fy);
            if (wgt != 0.0) pimg.grad[static_cast<std::size_t>(yi) * w + xi] += g * wgt;
          }
        }
        const double dox = ((p[0][1] - p[0][0]) * (1.0 - fy) + (p[1][1] - p[1][0]) * fy) * g;
        const double doy = ((p[1][0] - p[0][0]) * (1.0 - fx) + (p[1][1] - p[0][1]) * fx) * g;
        // x = (u/w + 1) * sx, y = (v/w + 1) * sy
        const double du = dox * sx / s.w;
        const double dv = doy * sy / s.w;
        const double dw = -(dox * sx * s.u + doy * sy * s.v) / (s.w * s.w);
        ptm.grad[0] += du * s.gx;
        ptm.grad[1] += du * s.gy;
        ptm.grad[2] += du;
        ptm.grad[3] += dv * s.gx;
        ptm.grad[4] += dv * s.gy;
        ptm.grad[5] += dv;
        ptm.grad[6] += dw * s.gx;
        ptm.grad[7] += dw * s.gy;
        ptm.grad[8] += dw;
      }
    }
  });
}

TensorPtr sample_image(const TensorPtr& image, const TransformMatrix& t) {
  if (t.dim != 2) throw std::invalid_argument("sample_image: 3x3 transform required");
  return grid_sample(image, Tensor::make({3, 3}, t.entries));
}

TensorPtr assemble_euclidean(const TensorPtr& angle, const TensorPtr& tx, const TensorPtr& ty) {
  if (!angle->is_scalar() || !tx->is_scalar() || !ty->is_scalar()) {
    throw std::invalid_argument("assemble_euclidean: scalar inputs required");
  }
  const TensorPtr c = cos_op(angle);
  const TensorPtr s = sin_op(angle);
  const TensorPtr zero = Tensor::scalar(0.0);
  const TensorPtr one = Tensor::scalar(1.0);
  return stack_scalars({c, neg(s), tx, s, c, ty, zero, zero, one}, {3, 3});
}

TensorPtr apply_frame_h(const TensorPtr& transform, const TensorPtr& frame) {
  if (transform->shape.size() != 2 || transform->rows() != transform->cols()) {
    throw std::invalid_argument("apply_frame_h: square matrix required");
  }
  if (frame->shape.size() != 1 || frame->size() + 1 != transform->rows()) {
    throw std::invalid_argument("apply_frame_h: frame length must be matrix side - 1");
  }
  return matmul(transform, concat_vec(frame, Tensor::scalar(1.0)));
}

}  // namespace xfer
