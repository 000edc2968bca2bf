#include "xfer/nn.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace xfer {

using detail::make_op;

TensorPtr conv2d(const TensorPtr& input, const TensorPtr& weight, const TensorPtr& bias,
                 Padding padding) {
  if (input->shape.size() != 3) throw std::invalid_argument("conv2d: input must be [C,H,W]");
  if (weight->shape.size() != 4) throw std::invalid_argument("conv2d: weight must be [F,C,kh,kw]");
  const int c = input->shape[0], h = input->shape[1], w = input->shape[2];
  const int f = weight->shape[0], kc = weight->shape[1], kh = weight->shape[2],
            kw = weight->shape[3];
  if (kc != c) throw std::invalid_argument("conv2d: channel mismatch");
  if (bias->shape != std::vector<int>{f}) throw std::invalid_argument("conv2d: bias must be [F]");

  const int ph = padding == Padding::same ? (kh - 1) / 2 : 0;
  const int pw = padding == Padding::same ? (kw - 1) / 2 : 0;
  const int oh = padding == Padding::same ? h : h - kh + 1;
  const int ow = padding == Padding::same ? w : w - kw + 1;
  if (oh <= 0 || ow <= 0) throw std::invalid_argument("conv2d: kernel larger than input");

  std::vector<double> out(static_cast<std::size_t>(f) * oh * ow, 0.0);
  const auto& in = input->data;
  const auto& wt = weight->data;
  for (int of = 0; of < f; ++of) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double acc = bias->data[static_cast<std::size_t>(of)];
        for (int ic = 0; ic < c; ++ic) {
          for (int ky = 0; ky < kh; ++ky) {
            const int iy = oy + ky - ph;
            if (iy < 0 || iy >= h) continue;
            const std::size_t in_row = (static_cast<std::size_t>(ic) * h + iy) * w;
            const std::size_t wt_row =
                ((static_cast<std::size_t>(of) * c + ic) * kh + ky) * kw;
            for (int kx = 0; kx < kw; ++kx) {
              const int ix = ox + kx - pw;
              if (ix < 0 || ix >= w) continue;
              acc += in[in_row + ix] * wt[wt_row + kx];
            }
          }
        }
        out[(static_cast<std::size_t>(of) * oh + oy) * ow + ox] = acc;
      }
    }
  }

  return make_op({f, oh, ow}, std::move(out), {input, weight, bias},
                 [c, h, w, f, kh, kw, ph, pw, oh, ow](Tensor& t) {
                   Tensor& pin = *t.parents[0];
                   Tensor& pwt = *t.parents[1];
                   Tensor& pb = *t.parents[2];
                   pin.ensure_grad();
                   pwt.ensure_grad();
                   pb.ensure_grad();
                   for (int of = 0; of < f; ++of) {
                     for (int oy = 0; oy < oh; ++oy) {
                       for (int ox = 0; ox < ow; ++ox) {
                         const double g =
                             t.grad[(static_cast<std::size_t>(of) * oh + oy) * ow + ox];
                         pb.grad[static_cast<std::size_t>(of)] += g;
                         for (int ic = 0; ic < c; ++ic) {
                           for (int ky = 0; ky < kh; ++ky) {
                             const int iy = oy + ky - ph;
                             if (iy < 0 || iy >= h) continue;
                             const std::size_t in_row =
                                 (static_cast<std::size_t>(ic) * h + iy) * w;
                             const std::size_t wt_row =
                                 ((static_cast<std::size_t>(of) * c + ic) * kh + ky) * kw;
                             for (int kx = 0; kx < kw; ++kx) {
                               const int ix = ox + kx - pw;
                               if (ix < 0 || ix >= w) continue;
                               pwt.grad[wt_row + kx] += g * pin.data[in_row + ix];
                               pin.grad[in_row + ix] += g * pwt.data[wt_row + kx];
                             }
                           }
                         }
                       }
                     }
                   }
                 });
}

TensorPtr maxpool2x2(const TensorPtr& input) {
  if (input->shape.size() != 3) throw std::invalid_argument("maxpool2x2: input must be [C,H,W]");
  const int c = input->shape[0], h = input->shape[1], w = input->shape[2];
  const int oh = h / 2, ow = w / 2;
  if (oh == 0 || ow == 0) throw std::invalid_argument("maxpool2x2: input too small");

  std::vector<double> out(static_cast<std::size_t>(c) * oh * ow);
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  for (int ic = 0; ic < c; ++ic) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_idx = 0;
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const std::size_t idx =
                (static_cast<std::size_t>(ic) * h + 2 * oy + dy) * w + 2 * ox + dx;
            if (input->data[idx] > best) {
              best = input->data[idx];
              best_idx = idx;
            }
          }
        }
        const std::size_t o = (static_cast<std::size_t>(ic) * oh + oy) * ow + ox;
        out[o] = best;
        (*argmax)[o] = best_idx;
      }
    }
  }
  return make_op({c, oh, ow}, std::move(out), {input}, [argmax](Tensor& t) {
    Tensor& pin = *t.parents[0];
    pin.ensure_grad();
    for (std::size_t o = 0; o < t.grad.size(); ++o) pin.grad[(*argmax)[o]] += t.grad[o];
  });
}

namespace {

void softmax_row(const double* in, double* out, int n) {
  double mx = in[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, in[i]);
  double z = 0.0;
  for (int i = 0; i < n; ++i) {
    out[i] = std::exp(in[i] - mx);
    z += out[i];
  }
  for (int i = 0; i < n; ++i) out[i] /= z;
}

}  // namespace

TensorPtr softmax_rows(const TensorPtr& a) {
  if (a->shape.size() != 1 && a->shape.size() != 2) {
    throw std::invalid_argument("softmax_rows: 1-D or 2-D tensor required");
  }
  const int n = a->shape.back();
  const int r = a->size() / n;
  std::vector<double> out(a->data.size());
  for (int i = 0; i < r; ++i) {
    softmax_row(a->data.data() + static_cast<std::size_t>(i) * n,
                out.data() + static_cast<std::size_t>(i) * n, n);
  }
  return make_op(a->shape, std::move(out), {a}, [r, n](Tensor& t) {
    Tensor& pa = *t.parents[0];
    pa.ensure_grad();
    // dx_j = y_j * (g_j - sum_k g_k y_k), per row
    for (int i = 0; i < r; ++i) {
      const std::size_t off = static_cast<std::size_t>(i) * n;
      double dot = 0.0;
      for (int j = 0; j < n; ++j) dot += t.grad[off + j] * t.data[off + j];
      for (int j = 0; j < n; ++j) {
        pa.grad[off + j] += t.data[off + j] * (t.grad[off + j] - dot);
      }
    }
  });
}

TensorPtr weighted_cross_entropy(const TensorPtr& logits, const std::vector<int>& labels,
                                 const std::vector<double>& weights) {
  if (logits->shape.size() != 1 && logits->shape.size() != 2) {
    throw std::invalid_argument("weighted_cross_entropy: 1-D or 2-D logits required");
  }
  const int n = logits->shape.back();
  const int r = logits->size() / n;
  if (static_cast<int>(labels.size()) != r || static_cast<int>(weights.size()) != r) {
    throw std::invalid_argument("weighted_cross_entropy: labels/weights must have one entry per row");
  }
  double wsum = 0.0;
  for (const double w : weights) {
    if (w < 0.0) throw std::invalid_argument("weighted_cross_entropy: negative weight");
    wsum += w;
  }
  if (wsum == 0.0) return Tensor::scalar(0.0);

  // log-softmax per contributing row
  auto probs = std::make_shared<std::vector<double>>(logits->data.size(), 0.0);
  double loss = 0.0;
  for (int i = 0; i < r; ++i) {
    if (weights[static_cast<std::size_t>(i)] == 0.0) continue;
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= n) throw std::invalid_argument("weighted_cross_entropy: label out of range");
    const std::size_t off = static_cast<std::size_t>(i) * n;
    softmax_row(logits->data.data() + off, probs->data() + off, n);
    const double p = std::max((*probs)[off + y], 1e-300);
    loss -= weights[static_cast<std::size_t>(i)] * std::log(p);
  }
  loss /= wsum;

  auto labels_copy = std::make_shared<std::vector<int>>(labels);
  auto weights_copy = std::make_shared<std::vector<double>>(weights);
  return make_op({1}, {loss}, {logits},
                 [probs, labels_copy, weights_copy, r, n, wsum](Tensor& t) {
                   Tensor& pl = *t.parents[0];
                   pl.ensure_grad();
                   const double g = t.grad[0] / wsum;
                   for (int i = 0; i < r; ++i) {
                     const double w = (*weights_copy)[static_cast<std::size_t>(i)];
                     if (w == 0.0) continue;
                     const std::size_t off = static_cast<std::size_t>(i) * n;
                     const int y = (*labels_copy)[static_cast<std::size_t>(i)];
                     for (int j = 0; j < n; ++j) {
                       const double ind = j == y ? 1.0 : 0.0;
                       pl.grad[off + j] += g * w * ((*probs)[off + j] - ind);
                     }
                   }
                 });
}

std::pair<TensorPtr, TensorPtr> lstm_cell(const TensorPtr& x, const TensorPtr& h_prev,
                                          const TensorPtr& c_prev, const LstmWeights& w) {
  if (x->shape.size() != 1 || h_prev->shape.size() != 1 || c_prev->shape.size() != 1) {
    throw std::invalid_argument("lstm_cell: x, h, c must be 1-D");
  }
  const int hidden = h_prev->size();
  if (c_prev->size() != hidden) throw std::invalid_argument("lstm_cell: h/c size mismatch");
  if (w.wx->shape != std::vector<int>{4 * hidden, x->size()} ||
      w.wh->shape != std::vector<int>{4 * hidden, hidden} ||
      w.b->shape != std::vector<int>{4 * hidden}) {
    throw std::invalid_argument("lstm_cell: weight shapes inconsistent with hidden size");
  }
  const TensorPtr z = add(add(matmul(w.wx, x), matmul(w.wh, h_prev)), w.b);
  const TensorPtr i_gate = sigmoid(slice_vec(z, 0, hidden));
  const TensorPtr f_gate = sigmoid(slice_vec(z, hidden, hidden));
  const TensorPtr g_cand = tanh_op(slice_vec(z, 2 * hidden, hidden));
  const TensorPtr o_gate = sigmoid(slice_vec(z, 3 * hidden, hidden));
  const TensorPtr c_next = add(mul(f_gate, c_prev), mul(i_gate, g_cand));
  const TensorPtr h_next = mul(o_gate, tanh_op(c_next));
  return {h_next, c_next};
}

}  // namespace xfer
