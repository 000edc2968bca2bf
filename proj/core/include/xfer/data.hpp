#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xfer/tensor.hpp"

namespace xfer {

// Frame label values used across sequences, metrics and models.
inline constexpr int kLabelFollow = 0;
inline constexpr int kLabelLeft = 1;
inline constexpr int kLabelRight = 2;

struct ImageDataset {
  int height = 28;
  int width = 28;
  std::vector<std::vector<double>> images;  // one [height*width] buffer per sample, in [0,1]
  std::vector<int> labels;
  std::string domain;

  int size() const { return static_cast<int>(images.size()); }
};

struct Maneuver {
  int direction = kLabelLeft;  // kLabelLeft or kLabelRight
  int exec_frame = 0;          // frame where the lane boundary is crossed
};

struct LabeledSequence {
  int features = 1;
  std::vector<double> frames;   // length() * features, row-major
  std::vector<int> labels;      // per frame
  std::vector<double> weights;  // per frame, >= 0; ignore frames carry exactly 0
  std::vector<Maneuver> maneuvers;
  double frame_rate = 10.0;

  int length() const { return features == 0 ? 0 : static_cast<int>(frames.size()) / features; }
  double frame(int t, int k) const {
    return frames[static_cast<std::size_t>(t) * features + static_cast<std::size_t>(k)];
  }
  double& frame(int t, int k) {
    return frames[static_cast<std::size_t>(t) * features + static_cast<std::size_t>(k)];
  }
};

struct SequenceDataset {
  std::vector<LabeledSequence> sequences;
  std::string domain;

  int size() const { return static_cast<int>(sequences.size()); }
  int features() const { return sequences.empty() ? 0 : sequences.front().features; }
};

// ---- IDX binary format -------------------------------------------------------

// Parses an IDX file (big-endian magic, big-endian dimension sizes, unsigned
// byte payload). Image payloads (magic 0x00000803) are rescaled to [0,1];
// label payloads (0x00000801) keep their raw values. Truncated or mistyped
// files throw without producing a partial tensor.
TensorPtr read_idx(const std::string& path);

ImageDataset load_idx_dataset(const std::string& images_path, const std::string& labels_path,
                              std::string domain = "idx");

// ---- image domains -----------------------------------------------------------

// Exact 180-degree rotation of every image (both axes reversed); labels kept.
ImageDataset make_rotated_domain(const ImageDataset& ds);

struct DigitGenConfig {
  int height = 28;
  int width = 28;
  double jitter_px = 2.5;       // random translation amplitude
  double angle_jitter = 0.12;   // radians
  double scale_lo = 0.85;
  double scale_hi = 1.15;
  double thickness_lo = 1.1;
  double thickness_hi = 1.9;
  double pixel_noise = 0.06;
};

// Procedurally drawn digit glyphs (10 classes) with per-sample affine jitter,
// stroke-width variation and pixel noise. Stands in for handwritten digits
// when no IDX files are available.
ImageDataset generate_synthetic_digits(int count, std::uint64_t seed,
                                       const DigitGenConfig& cfg = {});

// ---- toy lane-change sequences -------------------------------------------------

struct ToyGenConfig {
  double frame_rate = 10.0;     // Hz
  double length_s = 15.0;
  double p_lane_change = 0.5;
  double transition_s = 2.0;    // lane-change transition duration
  double sigma_noise = 0.05;    // per-frame Gaussian noise in the noisy domain
  double horizon_s = 3.0;       // label window before execution
  double ignore_s = 0.5;        // zero-weight margin around the label window
  double alpha = 1.0;           // exponential weight emphasis toward execution
  double drift_amplitude = 0.04;  // smooth in-lane wander
};

enum class ToyDomain { clean, noisy };

// Simulated center-line-distance trajectories with optional lane changes.
// m ranges over [0,1] within the current lane; crossing the boundary
// renormalizes into the adjacent lane. Clean and noisy datasets generated
// from the same seed share the underlying trajectories and differ only by
// the additive (clipped) noise. The result is fully labeled and weighted.
SequenceDataset generate_toy_lane_changes(const ToyGenConfig& cfg, ToyDomain domain, int count,
                                          std::uint64_t seed);

// Labels frames inside [exec - horizon, exec) with the maneuver direction,
// zeroes the weight of the ignore_s margins right before that window and
// after the execution, weights classes inversely to their frequency and
// scales maneuver frames by exp(alpha * (1 - t_to_exec/horizon)). Throws if
// two maneuvers sit closer than their windows.
SequenceDataset label_and_weight(SequenceDataset ds, double horizon_s = 3.0,
                                 double ignore_s = 0.5, double alpha = 1.0);

// ---- limiting / splitting ------------------------------------------------------

// First b elements of the seed-determined permutation; prefixes nest across
// b values under the same seed. Throws if b exceeds the dataset size.
ImageDataset limit_dataset(const ImageDataset& ds, int b, std::uint64_t seed);
SequenceDataset limit_dataset(const SequenceDataset& ds, int b, std::uint64_t seed);

template <class Dataset>
struct TrainTestSplit {
  Dataset train;
  Dataset test;
};

// Deterministic 80/20 split by seeded permutation (train side permuted, so a
// later b-limit takes the permutation prefix).
TrainTestSplit<ImageDataset> split_train_test(const ImageDataset& ds, std::uint64_t seed,
                                              double train_fraction = 0.8);
TrainTestSplit<SequenceDataset> split_train_test(const SequenceDataset& ds, std::uint64_t seed,
                                                 double train_fraction = 0.8);

// ---- delimited sequence files ---------------------------------------------------

// One sequence per file: a `frame_rate=<Hz>` header, `# lc,<L|R>,<exec_frame>`
// annotation comments, then one `m[,v...],label,weight` row per frame.
void write_sequence_file(const LabeledSequence& seq, const std::string& path);
LabeledSequence read_sequence_file(const std::string& path);
void write_sequence_dir(const SequenceDataset& ds, const std::string& dir);
SequenceDataset read_sequence_dir(const std::string& dir);

}  // namespace xfer
