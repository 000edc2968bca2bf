#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "xfer/config.hpp"
#include "xfer/correspondence.hpp"
#include "xfer/data.hpp"
#include "xfer/metrics.hpp"
#include "xfer/models.hpp"
#include "xfer/transforms.hpp"

namespace xfer {

// Fine-tuning regimes:
//   mode0         head only, task loss (converter, if any, stays frozen)
//   mode1         head + converter, task loss + lambda * correspondence loss
//   mode2         head + converter, task loss only
//   finetune_only head only, no converter in the loop
//   imp           direct converter trained like mode1
enum class TrainMode { mode0, mode1, mode2, finetune_only, imp };

std::string mode_name(TrainMode m);

struct TrainPlan {
  bool do_pretrain = true;
  bool do_correspondence = true;
  bool do_finetune = true;
  TrainMode mode = TrainMode::mode1;
  std::string pretrain_target = "T2";  // T1 = identity, T2 = domain knowledge
  double lambda_corr = 1.0;
  int n_corr = 5;
  double lr = 1e-3;
  int batch_size = 16;
  int epochs_pretrain = 20;
  int epochs_correspondence = 20;
  int epochs_finetune = 20;
  double clip_norm = 5.0;  // applied to sequence (LSTM) training only
  int patience = 5;
  std::uint64_t seed = 1;

  void validate(bool has_converter) const;
};

// Per-epoch loss trace of one training step.
struct StepCurves {
  std::string step;
  std::vector<double> train_loss;
  std::vector<double> holdout_loss;
};

// Per-frame pretraining target; for images the target is per sample.
using ImageTargetFn = std::function<TransformMatrix(int sample_index)>;
using FrameTargetFn = std::function<TransformMatrix(const LabeledSequence&, int frame)>;

// T1 -> identity; T2 -> the 180-degree rotation guess for images, or the
// per-frame rule "follow frames project onto the lane middle, maneuver
// frames stay identity" for sequences.
ImageTargetFn image_pretrain_target(const std::string& target);
FrameTargetFn frame_pretrain_target(const std::string& target, int features);

// Step 1: regress the converter's matrices onto the target transforms
// (elementwise L2 in matrix space). Runs epochs_pretrain epochs with early
// stopping on a held-out slice; zero epochs leave the converter untouched.
StepCurves pretrain_converter(Converter& conv, const ImageDataset& data, const ImageTargetFn& target,
                              const TrainPlan& plan);
StepCurves pretrain_converter(Converter& conv, const SequenceDataset& data,
                              const FrameTargetFn& target, const TrainPlan& plan);

// Step 2: minimize the mean correspondence loss of converted samples.
StepCurves train_correspondence(Converter& conv, const ImageDataset& target_ds,
                                const ImageDataset& source_ds, const CorrespondenceSet& corr,
                                const TrainPlan& plan);
StepCurves train_correspondence(Converter& conv, const SequenceDataset& target_ds,
                                const SequenceDataset& source_ds, const CorrespondenceSet& corr,
                                const TrainPlan& plan);

// Step 3: fine-tune per plan.mode. The correspondence set and source data
// are required in mode1/imp and ignored otherwise.
StepCurves fine_tune(Model& model, Converter* conv, const ImageDataset& data,
                     const ImageDataset* source_ds, const CorrespondenceSet* corr,
                     const TrainPlan& plan);
StepCurves fine_tune(Model& model, Converter* conv, const SequenceDataset& data,
                     const SequenceDataset* source_ds, const CorrespondenceSet* corr,
                     const TrainPlan& plan);

// Trains a task model from scratch (all parameters).
std::vector<StepCurves> train_from_scratch(Model& model, const ImageDataset& data,
                                           const TrainPlan& plan, int epochs);
std::vector<StepCurves> train_from_scratch(Model& model, const SequenceDataset& data,
                                           const TrainPlan& plan, int epochs);

// ---- CORAL ---------------------------------------------------------------------

// Second-order alignment of standardized features: whitens the target
// features with (C_target + ridge I)^(-1/2) and re-colors them with
// (C_source + ridge I)^(1/2). Sequence datasets treat every frame as one
// observation. Throws when ridge is 0 and a covariance is singular.
ImageDataset coral_align(const ImageDataset& target, const ImageDataset& source, double ridge);
SequenceDataset coral_align(const SequenceDataset& target, const SequenceDataset& source,
                            double ridge);

// Full baseline preprocessing: standardize both domains, align, then map the
// result into the source domain's raw feature frame (pixel values clamped
// back to [0,1] for images).
ImageDataset coral_adapt_to_source(const ImageDataset& target, const ImageDataset& source,
                                   double ridge);
SequenceDataset coral_adapt_to_source(const SequenceDataset& target, const SequenceDataset& source,
                                      double ridge);

// ---- prediction ------------------------------------------------------------------

std::vector<int> predict_images(const Model& model, const Converter* conv,
                                const ImageDataset& ds);
// Per-frame argmax labels. Two-class taggers emit follow/change; their
// change predictions are reported as kLabelLeft and scored directionless.
std::vector<std::vector<int>> predict_sequences(const Model& model, const Converter* conv,
                                                const SequenceDataset& ds);

MetricsReport evaluate_images(const Model& model, const Converter* conv, const ImageDataset& ds);
MetricsReport evaluate_sequences(const Model& model, const Converter* conv,
                                 const SequenceDataset& ds, double horizon_s = 3.0);

// ---- experiment runner --------------------------------------------------------------

struct GridRow {
  std::string method;  // method name or "A on B" / "B on B"
  int b = 0;
  std::uint64_t seed = 0;
  MetricsReport metrics;
  std::optional<double> score;
  std::vector<StepCurves> curves;
};

// Input / converted / first-partner trajectories of a few test sequences,
// for plotting.
struct ConvertedSample {
  std::string method;
  int sequence = 0;
  int features = 1;
  std::vector<double> input;      // length * features
  std::vector<double> converted;  // length * features
  std::vector<double> partner;    // length * features (NaN where unaligned)
};

struct ExperimentReport {
  ExperimentConfig config;
  std::vector<GridRow> rows;
  std::vector<ConvertedSample> converted;
  std::vector<std::string> failures;  // "method/b/seed: what" per failed grid point
};

// Runs the full grid: per seed trains (or loads) the domain-A base model,
// adds the A-on-B / B-on-B reference rows, executes every (method, b) grid
// point on the b-limited domain-B training split and evaluates on the
// held-out test split. Scores are relative to the A-on-B baseline of the
// same seed. Grid points run on `jobs` worker threads; results are ordered
// deterministically regardless of job count.
ExperimentReport run_experiment(const ExperimentConfig& config, int jobs = 1);

}  // namespace xfer
