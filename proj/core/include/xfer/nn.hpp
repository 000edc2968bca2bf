#pragma once

#include <utility>

#include "xfer/tensor.hpp"

namespace xfer {

enum class Padding { valid, same };

// input [C,H,W], weight [F,C,kh,kw], bias [F]; stride 1.
TensorPtr conv2d(const TensorPtr& input, const TensorPtr& weight, const TensorPtr& bias,
                 Padding padding = Padding::same);

// 2x2 max pooling, stride 2; odd trailing rows/columns are dropped.
TensorPtr maxpool2x2(const TensorPtr& input);

// Row-wise softmax over the last dimension of a 1-D or 2-D tensor.
TensorPtr softmax_rows(const TensorPtr& a);

// Mean of -log softmax(logits)[label] over rows, weighted per row. Rows with
// weight 0 are skipped outright, so they contribute neither loss nor
// gradient. Normalizes by the weight sum; a zero weight sum yields a
// constant 0 loss. Accepts [C] with one label or [T,C] with T labels.
TensorPtr weighted_cross_entropy(const TensorPtr& logits, const std::vector<int>& labels,
                                 const std::vector<double>& weights);

struct LstmWeights {
  TensorPtr wx;  // [4H, in]   gate order: input, forget, candidate, output
  TensorPtr wh;  // [4H, H]
  TensorPtr b;   // [4H]
};

// One LSTM step: gates (i,f,o) sigmoid, candidate tanh;
// c' = f*c + i*g, h' = o*tanh(c'). Returns (h', c').
std::pair<TensorPtr, TensorPtr> lstm_cell(const TensorPtr& x, const TensorPtr& h_prev,
                                          const TensorPtr& c_prev, const LstmWeights& w);

}  // namespace xfer
