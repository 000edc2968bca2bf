#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "xfer/data.hpp"
#include "xfer/nn.hpp"
#include "xfer/tensor.hpp"
#include "xfer/transforms.hpp"

namespace xfer {

enum class OutputActivation { linear, softmax };

// Architecture descriptor; round-trips through a compact text form that is
// embedded in checkpoints.
struct ArchSpec {
  std::string kind;  // cnn-classifier | lstm-tagger | cnn-converter |
                     // lstm-converter | direct-lstm-converter | direct-cnn-converter
  int input_h = 28;
  int input_w = 28;
  int features = 1;  // sequence feature count
  int hidden = 64;   // LSTM hidden size
  int classes = 10;
  std::vector<int> channels = {8, 16, 32};  // conv channels per stage
  int kernel = 3;
  TransformFamily family = TransformFamily::unrestricted;
  OutputActivation activation = OutputActivation::linear;

  std::string to_string() const;
  static ArchSpec from_string(const std::string& s);
};

// Named parameters in declaration order (checkpoints rely on the order).
class ParamSet {
 public:
  TensorPtr add(const std::string& name, TensorPtr t);
  const TensorPtr& get(const std::string& name) const;
  bool has(const std::string& name) const;
  const std::vector<std::pair<std::string, TensorPtr>>& items() const { return items_; }
  std::vector<TensorPtr> tensors() const;
  std::int64_t value_count() const;

 private:
  std::vector<std::pair<std::string, TensorPtr>> items_;
};

// Task network. head_names marks the layers retrained during transfer; the
// rest of the parameters stay frozen there.
class Model {
 public:
  ArchSpec spec;
  ParamSet params;
  std::vector<std::string> head_names;

  // images: [H,W] -> logits [classes]
  TensorPtr forward_image(const TensorPtr& image) const;
  // sequences: [l,features] -> per-frame logits [l,classes]
  TensorPtr forward_sequence(const TensorPtr& frames) const;

  std::vector<TensorPtr> head_params() const;
  std::vector<TensorPtr> body_params() const;
  void set_trainable_head_only();
  void set_trainable_all();
};

// Domain converter. In matrix mode it emits one homogeneous transform per
// image (from euclidean angle/shift parameters) or per frame (raw matrix
// entries); in direct mode it emits converted samples of the input's shape.
class Converter {
 public:
  ArchSpec spec;
  ParamSet params;

  bool direct() const { return spec.kind.rfind("direct-", 0) == 0; }
  bool for_images() const;

  // images, matrix mode: [H,W] -> [3,3] transform tensor
  TensorPtr transform_for_image(const TensorPtr& image) const;
  // images, direct mode: [H,W] -> [H,W] converted image
  TensorPtr direct_image(const TensorPtr& image) const;
  // sequences, matrix mode: [l,f] -> [l,(f+1)*(f+1)] per-frame matrix entries
  TensorPtr matrix_entries_for_sequence(const TensorPtr& frames) const;
  // sequences, direct mode: [l,f] -> [l,f] converted frames
  TensorPtr direct_sequence(const TensorPtr& frames) const;

  // Applies the converter to one sample. Images yield the grid-sampled [H,W]
  // image; sequences yield the per-frame homogeneous outputs [l, f+1] (the
  // trailing coordinate is constant 1 for direct and affine converters).
  TensorPtr convert_image(const TensorPtr& image) const;
  TensorPtr convert_sequence(const TensorPtr& frames) const;

  // Plain-matrix view of the converter output, with family checks.
  std::vector<TransformMatrix> matrices_for_sequence(const LabeledSequence& seq) const;
  TransformMatrix matrix_for_image(const std::vector<double>& image, int h, int w) const;

  // Zeroes the output head weights and sets its bias to the identity
  // transform, so every output is exactly the identity.
  void set_head_identity();

  void set_trainable(bool trainable);
};

// Builds the task network: `cnn-classifier` (conv+pool stages and a
// fully-connected softmax head) or `lstm-tagger` (single-layer LSTM with a
// per-frame classification layer; the head is that layer).
Model build_model(const ArchSpec& spec, std::uint64_t seed);

// Builds `cnn-converter` (two conv stages, fully-connected head emitting
// euclidean angle/shift), `lstm-converter` (per-frame matrix entries),
// or the direct variants emitting samples instead of matrices.
Converter build_converter(const ArchSpec& spec, std::uint64_t seed);

// Checkpoint: versioned header, architecture descriptor, then raw
// little-endian 64-bit parameter values in declaration order.
void save_checkpoint(const Model& model, const std::string& path);
void save_checkpoint(const Converter& conv, const std::string& path);
Model load_model_checkpoint(const std::string& path);
Converter load_converter_checkpoint(const std::string& path);

// Tensor helpers shared by trainers.
TensorPtr image_tensor(const std::vector<double>& image, int h, int w);
TensorPtr sequence_tensor(const LabeledSequence& seq);

}  // namespace xfer
