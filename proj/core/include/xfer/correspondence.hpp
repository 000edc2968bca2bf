#pragma once

#include <cstdint>
#include <vector>

#include "xfer/data.hpp"
#include "xfer/tensor.hpp"

namespace xfer {

// Loose cross-domain pairing: each target sample is linked to n source
// samples of matching semantic content.
struct Correspondence {
  int target_index = 0;
  std::vector<int> partner_indices;
};

struct CorrespondenceSet {
  int n = 5;
  std::vector<Correspondence> entries;

  bool empty() const { return entries.empty(); }
};

// Each target image gets n source images of equal class label, drawn
// uniformly without replacement (with replacement when the source has fewer
// than n). Throws if a target label is absent from the source.
CorrespondenceSet pair_by_label(const ImageDataset& target, const ImageDataset& source, int n,
                                std::uint64_t seed);

// Follow-only sequences pair with n follow-only source sequences (uniformly
// at random); lane-change sequences pair with the n source lane changes of
// the same direction whose execution frames are closest (ties by dataset
// index, cycling when fewer than n exist). Throws if no source sequence of
// the required maneuver type exists.
CorrespondenceSet pair_sequences(const SequenceDataset& target, const SequenceDataset& source,
                                 int n, std::uint64_t seed);

// Mean Euclidean distance between the converted sample and its n partners:
// (1/n) * sum_i ||converted - partner_i||_2, optionally with the squared
// norm. Shapes must agree; n must be positive.
TensorPtr correspondence_loss(const TensorPtr& converted, const std::vector<TensorPtr>& partners,
                              bool squared = false);

// Partner frames aligned to a target sequence by shifting so the execution
// frames coincide; frames with no partner data are masked out.
struct AlignedPartner {
  std::vector<double> frames;  // target_length * features
  std::vector<bool> valid;     // per frame
};

AlignedPartner align_partner(const LabeledSequence& target, const LabeledSequence& partner);

// Sequence form of the loss: per-frame homogeneous outputs of the converter
// ([l, f+1]) against the partners' homogeneous frames, summed over frames.
// Masked (padded) partner frames contribute nothing.
TensorPtr sequence_correspondence_loss(const TensorPtr& converted_h,
                                       const LabeledSequence& target,
                                       const std::vector<const LabeledSequence*>& partners,
                                       bool squared = false);

}  // namespace xfer
