#include "xfer/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <thread>

#include "xfer/linalg.hpp"
#include "xfer/optimizer.hpp"
#include "xfer/rng.hpp"

namespace xfer {

std::string mode_name(TrainMode m) {
  switch (m) {
    case TrainMode::mode0: return "mode0";
    case TrainMode::mode1: return "mode1";
    case TrainMode::mode2: return "mode2";
    case TrainMode::finetune_only: return "finetune-only";
    case TrainMode::imp: return "imp";
  }
  return "?";
}

void TrainPlan::validate(bool has_converter) const {
  if (mode == TrainMode::imp && do_pretrain) {
    throw std::invalid_argument("plan: direct converters cannot be pretrained to a matrix target");
  }
  if (mode == TrainMode::finetune_only && has_converter) {
    throw std::invalid_argument("plan: finetune-only runs without a converter");
  }
  if ((mode == TrainMode::mode0 || mode == TrainMode::mode1 || mode == TrainMode::mode2 ||
       mode == TrainMode::imp) &&
      !has_converter) {
    throw std::invalid_argument("plan: mode " + mode_name(mode) + " needs a converter");
  }
  if (lr <= 0 || batch_size <= 0 || n_corr <= 0 || patience < 0) {
    throw std::invalid_argument("plan: invalid hyperparameters");
  }
  if (epochs_pretrain < 0 || epochs_correspondence < 0 || epochs_finetune < 0) {
    throw std::invalid_argument("plan: negative epoch count");
  }
}

// ---- pretraining targets ---------------------------------------------------------

ImageTargetFn image_pretrain_target(const std::string& target) {
  if (target == "T1") {
    return [](int) { return TransformMatrix::identity(2, TransformFamily::euclidean); };
  }
  if (target == "T2") {
    return [](int) { return make_euclidean(M_PI, 0.0, 0.0); };
  }
  throw std::invalid_argument("unknown pretrain target " + target);
}

FrameTargetFn frame_pretrain_target(const std::string& target, int features) {
  if (target == "T1") {
    return [features](const LabeledSequence&, int) {
      return TransformMatrix::identity(features, TransformFamily::affine);
    };
  }
  if (target == "T2") {
    // follow frames are projected onto the neutral frame, maneuver frames kept
    return [features](const LabeledSequence& seq, int t) {
      if (seq.labels[static_cast<std::size_t>(t)] == kLabelFollow) {
        return follow_center_target(features);
      }
      return TransformMatrix::identity(features, TransformFamily::affine);
    };
  }
  throw std::invalid_argument("unknown pretrain target " + target);
}

// ---- shared training loop --------------------------------------------------------

namespace {

struct LoopCfg {
  std::string label;
  int epochs = 0;
  int batch_size = 16;
  double lr = 1e-3;
  double clip_norm = 0.0;
  int patience = 5;
  std::uint64_t seed = 1;
};

using LossFn = std::function<TensorPtr(int)>;

std::vector<std::vector<double>> snapshot_params(const std::vector<TensorPtr>& params) {
  std::vector<std::vector<double>> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p->data);
  return out;
}

void restore_params(const std::vector<std::vector<double>>& snap,
                    const std::vector<TensorPtr>& params) {
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->data = snap[i];
}

StepCurves run_loop(const std::vector<TensorPtr>& trainable, int n_samples, const LoopCfg& cfg,
                    const LossFn& loss_fn) {
  StepCurves curves;
  curves.step = cfg.label;
  if (cfg.epochs == 0 || n_samples == 0 || trainable.empty()) return curves;

  Rng holdout_rng(derive_seed(cfg.seed, cfg.label + "-holdout"));
  std::vector<int> order = holdout_rng.permutation(n_samples);
  const int n_hold = n_samples >= 10 ? n_samples / 10 : 0;
  std::vector<int> train_idx(order.begin(), order.end() - n_hold);
  const std::vector<int> hold_idx(order.end() - n_hold, order.end());

  Optimizer opt(trainable, OptimizerOptions{.lr = cfg.lr, .clip_norm = cfg.clip_norm});
  Rng shuffle_rng(derive_seed(cfg.seed, cfg.label + "-shuffle"));

  double best = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> best_snap;
  int stale = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(train_idx);
    double loss_sum = 0.0;
    for (std::size_t begin = 0; begin < train_idx.size();
         begin += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end =
          std::min(train_idx.size(), begin + static_cast<std::size_t>(cfg.batch_size));
      std::vector<TensorPtr> losses;
      losses.reserve(end - begin);
      for (std::size_t k = begin; k < end; ++k) losses.push_back(loss_fn(train_idx[k]));
      const TensorPtr total =
          scale(sum_scalars(losses), 1.0 / static_cast<double>(losses.size()));
      opt.zero_grad();
      backward(total);
      opt.step();
      for (const auto& l : losses) loss_sum += l->value();
    }
    curves.train_loss.push_back(loss_sum / static_cast<double>(train_idx.size()));

    if (!hold_idx.empty()) {
      double hold_sum = 0.0;
      for (const int i : hold_idx) hold_sum += loss_fn(i)->value();
      const double hold = hold_sum / static_cast<double>(hold_idx.size());
      curves.holdout_loss.push_back(hold);
      if (hold < best - 1e-12) {
        best = hold;
        best_snap = snapshot_params(trainable);
        stale = 0;
      } else if (++stale > cfg.patience) {
        break;
      }
    }
  }
  if (!best_snap.empty()) restore_params(best_snap, trainable);
  return curves;
}

TensorPtr target_matrix_tensor(const TransformMatrix& m) {
  const int side = m.side();
  return Tensor::make({side, side}, m.entries);
}

// full per-frame matrix tensors of an lstm-converter (fixed last row appended
// for the affine family)
std::vector<TensorPtr> frame_matrices(const Converter& conv, const TensorPtr& frames) {
  const int side = conv.spec.features + 1;
  const TensorPtr entries = conv.matrix_entries_for_sequence(frames);
  TensorPtr fixed_row;
  if (conv.spec.family == TransformFamily::affine) {
    std::vector<double> fixed(static_cast<std::size_t>(side), 0.0);
    fixed.back() = 1.0;
    fixed_row = Tensor::make({side}, std::move(fixed));
  }
  std::vector<TensorPtr> out;
  out.reserve(static_cast<std::size_t>(entries->rows()));
  for (int t = 0; t < entries->rows(); ++t) {
    TensorPtr e = row(entries, t);
    if (fixed_row) e = concat_vec(e, fixed_row);
    out.push_back(reshape(e, {side, side}));
  }
  return out;
}

// feature part of the converter's homogeneous per-frame outputs
TensorPtr homogeneous_features(const TensorPtr& converted_h, int features) {
  std::vector<TensorPtr> rows;
  rows.reserve(static_cast<std::size_t>(converted_h->rows()));
  for (int t = 0; t < converted_h->rows(); ++t) {
    rows.push_back(slice_vec(row(converted_h, t), 0, features));
  }
  return stack_rows(rows);
}

std::vector<TensorPtr> all_params(Converter& conv) { return conv.params.tensors(); }

}  // namespace

// ---- step 1: pretraining ----------------------------------------------------------

StepCurves pretrain_converter(Converter& conv, const ImageDataset& data,
                              const ImageTargetFn& target, const TrainPlan& plan) {
  if (conv.direct()) throw std::logic_error("pretrain_converter: converter must be in matrix mode");
  conv.set_trainable(true);
  LoopCfg cfg{.label = "pretrain",
              .epochs = plan.epochs_pretrain,
              .batch_size = plan.batch_size,
              .lr = plan.lr,
              .clip_norm = 0.0,
              .patience = plan.patience,
              .seed = plan.seed};
  return run_loop(all_params(conv), data.size(), cfg, [&](int i) {
    const TensorPtr t = conv.transform_for_image(
        image_tensor(data.images[static_cast<std::size_t>(i)], data.height, data.width));
    return frobenius_distance(t, target_matrix_tensor(target(i)));
  });
}

StepCurves pretrain_converter(Converter& conv, const SequenceDataset& data,
                              const FrameTargetFn& target, const TrainPlan& plan) {
  if (conv.direct()) throw std::logic_error("pretrain_converter: converter must be in matrix mode");
  conv.set_trainable(true);
  LoopCfg cfg{.label = "pretrain",
              .epochs = plan.epochs_pretrain,
              .batch_size = plan.batch_size,
              .lr = plan.lr,
              .clip_norm = plan.clip_norm,
              .patience = plan.patience,
              .seed = plan.seed};
  return run_loop(all_params(conv), data.size(), cfg, [&](int i) {
    const LabeledSequence& seq = data.sequences[static_cast<std::size_t>(i)];
    const std::vector<TensorPtr> mats = frame_matrices(conv, sequence_tensor(seq));
    std::vector<TensorPtr> dists;
    dists.reserve(mats.size());
    for (int t = 0; t < static_cast<int>(mats.size()); ++t) {
      dists.push_back(frobenius_distance(mats[static_cast<std::size_t>(t)],
                                         target_matrix_tensor(target(seq, t))));
    }
    return scale(sum_scalars(dists), 1.0 / static_cast<double>(dists.size()));
  });
}

// ---- step 2: correspondence training ------------------------------------------------

StepCurves train_correspondence(Converter& conv, const ImageDataset& target_ds,
                                const ImageDataset& source_ds, const CorrespondenceSet& corr,
                                const TrainPlan& plan) {
  if (corr.empty()) throw std::invalid_argument("train_correspondence: empty correspondence set");
  conv.set_trainable(true);
  LoopCfg cfg{.label = "correspondence",
              .epochs = plan.epochs_correspondence,
              .batch_size = plan.batch_size,
              .lr = plan.lr,
              .clip_norm = 0.0,
              .patience = plan.patience,
              .seed = plan.seed};
  return run_loop(all_params(conv), static_cast<int>(corr.entries.size()), cfg, [&](int e) {
    const Correspondence& entry = corr.entries[static_cast<std::size_t>(e)];
    const TensorPtr converted = conv.convert_image(
        image_tensor(target_ds.images[static_cast<std::size_t>(entry.target_index)],
                     target_ds.height, target_ds.width));
    std::vector<TensorPtr> partners;
    partners.reserve(entry.partner_indices.size());
    for (const int p : entry.partner_indices) {
      partners.push_back(image_tensor(source_ds.images[static_cast<std::size_t>(p)],
                                      source_ds.height, source_ds.width));
    }
    return correspondence_loss(converted, partners);
  });
}

StepCurves train_correspondence(Converter& conv, const SequenceDataset& target_ds,
                                const SequenceDataset& source_ds, const CorrespondenceSet& corr,
                                const TrainPlan& plan) {
  if (corr.empty()) throw std::invalid_argument("train_correspondence: empty correspondence set");
  conv.set_trainable(true);
  LoopCfg cfg{.label = "correspondence",
              .epochs = plan.epochs_correspondence,
              .batch_size = plan.batch_size,
              .lr = plan.lr,
              .clip_norm = plan.clip_norm,
              .patience = plan.patience,
              .seed = plan.seed};
  return run_loop(all_params(conv), static_cast<int>(corr.entries.size()), cfg, [&](int e) {
    const Correspondence& entry = corr.entries[static_cast<std::size_t>(e)];
    const LabeledSequence& target = target_ds.sequences[static_cast<std::size_t>(entry.target_index)];
    const TensorPtr converted_h = conv.convert_sequence(sequence_tensor(target));
    std::vector<const LabeledSequence*> partners;
    partners.reserve(entry.partner_indices.size());
    for (const int p : entry.partner_indices) {
      partners.push_back(&source_ds.sequences[static_cast<std::size_t>(p)]);
    }
    return sequence_correspondence_loss(converted_h, target, partners);
  });
}

// ---- step 3: fine-tuning -------------------------------------------------------------

namespace {

std::vector<TensorPtr> finetune_trainable(Model& model, Converter* conv, const TrainPlan& plan) {
  model.set_trainable_head_only();
  std::vector<TensorPtr> trainable = model.head_params();
  if (conv) {
    const bool conv_trains = plan.mode == TrainMode::mode1 || plan.mode == TrainMode::mode2 ||
                             plan.mode == TrainMode::imp;
    conv->set_trainable(conv_trains);
    if (conv_trains) {
      for (const auto& t : conv->params.tensors()) trainable.push_back(t);
    }
  }
  return trainable;
}

void check_correspondence_inputs(const TrainPlan& plan, const void* source,
                                 const CorrespondenceSet* corr) {
  const bool needs = plan.mode == TrainMode::mode1 || plan.mode == TrainMode::imp;
  if (needs && (source == nullptr || corr == nullptr || corr->empty())) {
    throw std::invalid_argument("fine_tune: mode " + mode_name(plan.mode) +
                                " needs correspondence pairs and source data");
  }
}

// maps dataset frame labels onto tagger classes (two-class taggers collapse
// both directions onto one change class)
int model_class(int label, int classes) {
  if (classes == 2) return label == kLabelFollow ? 0 : 1;
  return label;
}

}  // namespace

StepCurves fine_tune(Model& model, Converter* conv, const ImageDataset& data,
                     const ImageDataset* source_ds, const CorrespondenceSet* corr,
                     const TrainPlan& plan) {
  plan.validate(conv != nullptr);
  check_correspondence_inputs(plan, source_ds, corr);
  const bool with_corr_loss = plan.mode == TrainMode::mode1 || plan.mode == TrainMode::imp;
  const std::vector<TensorPtr> trainable = finetune_trainable(model, conv, plan);

  LoopCfg cfg{.label = "finetune",
              .epochs = plan.epochs_finetune,
              .batch_size = plan.batch_size,
              .lr = plan.lr,
              .clip_norm = 0.0,
              .patience = plan.patience,
              .seed = plan.seed};
  return run_loop(trainable, data.size(), cfg, [&](int i) {
    const TensorPtr x =
        image_tensor(data.images[static_cast<std::size_t>(i)], data.height, data.width);
    const TensorPtr input = conv ? conv->convert_image(x) : x;
    const TensorPtr logits = model.forward_image(input);
    TensorPtr loss = weighted_cross_entropy(logits, {data.labels[static_cast<std::size_t>(i)]},
                                            {1.0});
    if (with_corr_loss) {
      const Correspondence& entry = corr->entries[static_cast<std::size_t>(i)];
      std::vector<TensorPtr> partners;
      partners.reserve(entry.partner_indices.size());
      for (const int p : entry.partner_indices) {
        partners.push_back(image_tensor(source_ds->images[static_cast<std::size_t>(p)],
                                        source_ds->height, source_ds->width));
      }
      loss = add(loss, scale(correspondence_loss(input, partners), plan.lambda_corr));
    }
    return loss;
  });
}

StepCurves fine_tune(Model& model, Converter* conv, const SequenceDataset& data,
                     const SequenceDataset* source_ds, const CorrespondenceSet* corr,
                     const TrainPlan& plan) {
  plan.validate(conv != nullptr);
  check_correspondence_inputs(plan, source_ds, corr);
  const bool with_corr_loss = plan.mode == TrainMode::mode1 || plan.mode == TrainMode::imp;
  const std::vector<TensorPtr> trainable = finetune_trainable(model, conv, plan);
  const int classes = model.spec.classes;

  LoopCfg cfg{.label = "finetune",
              .epochs = plan.epochs_finetune,
              .batch_size = plan.batch_size,
              .lr = plan.lr,
              .clip_norm = plan.clip_norm,
              .patience = plan.patience,
              .seed = plan.seed};
  return run_loop(trainable, data.size(), cfg, [&](int i) {
    const LabeledSequence& seq = data.sequences[static_cast<std::size_t>(i)];
    const TensorPtr frames = sequence_tensor(seq);
    TensorPtr input = frames;
    TensorPtr converted_h;
    if (conv) {
      converted_h = conv->convert_sequence(frames);
      input = homogeneous_features(converted_h, seq.features);
    }
    const TensorPtr logits = model.forward_sequence(input);
    std::vector<int> labels(static_cast<std::size_t>(seq.length()));
    for (int t = 0; t < seq.length(); ++t) {
      labels[static_cast<std::size_t>(t)] = model_class(seq.labels[static_cast<std::size_t>(t)], classes);
    }
    TensorPtr loss = weighted_cross_entropy(logits, labels, seq.weights);
    if (with_corr_loss) {
      const Correspondence& entry = corr->entries[static_cast<std::size_t>(i)];
      std::vector<const LabeledSequence*> partners;
      partners.reserve(entry.partner_indices.size());
      for (const int p : entry.partner_indices) {
        partners.push_back(&source_ds->sequences[static_cast<std::size_t>(p)]);
      }
      loss = add(loss, scale(sequence_correspondence_loss(converted_h, seq, partners),
                             plan.lambda_corr));
    }
    return loss;
  });
}

// ---- full training --------------------------------------------------------------------

std::vector<StepCurves> train_from_scratch(Model& model, const ImageDataset& data,
                                           const TrainPlan& plan, int epochs) {
  model.set_trainable_all();
  LoopCfg cfg{.label = "scratch",
              .epochs = epochs,
              .batch_size = plan.batch_size,
              .lr = plan.lr,
              .clip_norm = 0.0,
              .patience = plan.patience,
              .seed = plan.seed};
  StepCurves c = run_loop(model.params.tensors(), data.size(), cfg, [&](int i) {
    const TensorPtr logits = model.forward_image(
        image_tensor(data.images[static_cast<std::size_t>(i)], data.height, data.width));
    return weighted_cross_entropy(logits, {data.labels[static_cast<std::size_t>(i)]}, {1.0});
  });
  return {c};
}

std::vector<StepCurves> train_from_scratch(Model& model, const SequenceDataset& data,
                                           const TrainPlan& plan, int epochs) {
  model.set_trainable_all();
  const int classes = model.spec.classes;
  LoopCfg cfg{.label = "scratch",
              .epochs = epochs,
              .batch_size = plan.batch_size,
              .lr = plan.lr,
              .clip_norm = plan.clip_norm,
              .patience = plan.patience,
              .seed = plan.seed};
  StepCurves c = run_loop(model.params.tensors(), data.size(), cfg, [&](int i) {
    const LabeledSequence& seq = data.sequences[static_cast<std::size_t>(i)];
    const TensorPtr logits = model.forward_sequence(sequence_tensor(seq));
    std::vector<int> labels(static_cast<std::size_t>(seq.length()));
    for (int t = 0; t < seq.length(); ++t) {
      labels[static_cast<std::size_t>(t)] = model_class(seq.labels[static_cast<std::size_t>(t)], classes);
    }
    return weighted_cross_entropy(logits, labels, seq.weights);
  });
  return {c};
}

// ---- CORAL ------------------------------------------------------------------------------

namespace {

struct ObsView {
  int dim = 0;
  std::vector<const double*> rows;
};

ObsView image_obs(const ImageDataset& ds) {
  ObsView v;
  v.dim = ds.height * ds.width;
  v.rows.reserve(ds.images.size());
  for (const auto& img : ds.images) v.rows.push_back(img.data());
  return v;
}

ObsView sequence_obs(const SequenceDataset& ds) {
  ObsView v;
  v.dim = ds.features();
  for (const auto& seq : ds.sequences) {
    for (int t = 0; t < seq.length(); ++t) {
      v.rows.push_back(seq.frames.data() + static_cast<std::size_t>(t) * seq.features);
    }
  }
  return v;
}

std::vector<double> covariance(const ObsView& v) {
  const int d = v.dim;
  const double n = static_cast<double>(v.rows.size());
  if (v.rows.empty()) throw std::invalid_argument("coral: empty dataset");
  std::vector<double> mean(static_cast<std::size_t>(d), 0.0);
  for (const double* r : v.rows) {
    for (int i = 0; i < d; ++i) mean[static_cast<std::size_t>(i)] += r[i];
  }
  for (double& m : mean) m /= n;
  std::vector<double> cov(static_cast<std::size_t>(d) * d, 0.0);
  for (const double* r : v.rows) {
    for (int i = 0; i < d; ++i) {
      const double di = r[i] - mean[static_cast<std::size_t>(i)];
      for (int j = i; j < d; ++j) {
        cov[static_cast<std::size_t>(i) * d + j] += di * (r[j] - mean[static_cast<std::size_t>(j)]);
      }
    }
  }
  for (int i = 0; i < d; ++i) {
    for (int j = i; j < d; ++j) {
      const double c = cov[static_cast<std::size_t>(i) * d + j] / n;
      cov[static_cast<std::size_t>(i) * d + j] = c;
      cov[static_cast<std::size_t>(j) * d + i] = c;
    }
  }
  return cov;
}

// recolor * whiten, the per-observation linear map
std::vector<double> coral_map(const ObsView& target, const ObsView& source, double ridge) {
  if (target.dim != source.dim) throw std::invalid_argument("coral: feature dimensions differ");
  if (ridge < 0) throw std::invalid_argument("coral: ridge must be nonnegative");
  const int d = target.dim;
  std::vector<double> ct = covariance(target);
  std::vector<double> cs = covariance(source);
  for (int i = 0; i < d; ++i) {
    ct[static_cast<std::size_t>(i) * d + i] += ridge;
    cs[static_cast<std::size_t>(i) * d + i] += ridge;
  }
  return mat_mul_square(spd_sqrt(cs, d), spd_inv_sqrt(ct, d), d);
}

void apply_map_inplace(double* row, const std::vector<double>& map, int d,
                       std::vector<double>& scratch) {
  scratch.assign(static_cast<std::size_t>(d), 0.0);
  for (int i = 0; i < d; ++i) {
    double acc = 0.0;
    for (int j = 0; j < d; ++j) acc += map[static_cast<std::size_t>(i) * d + j] * row[j];
    scratch[static_cast<std::size_t>(i)] = acc;
  }
  for (int i = 0; i < d; ++i) row[i] = scratch[static_cast<std::size_t>(i)];
}

struct FeatureStats {
  std::vector<double> mean, stddev;
};

FeatureStats stats_of(const ObsView& v) {
  const int d = v.dim;
  FeatureStats s;
  s.mean.assign(static_cast<std::size_t>(d), 0.0);
  s.stddev.assign(static_cast<std::size_t>(d), 0.0);
  const double n = static_cast<double>(v.rows.size());
  for (const double* r : v.rows) {
    for (int i = 0; i < d; ++i) s.mean[static_cast<std::size_t>(i)] += r[i];
  }
  for (double& m : s.mean) m /= n;
  for (const double* r : v.rows) {
    for (int i = 0; i < d; ++i) {
      const double diff = r[i] - s.mean[static_cast<std::size_t>(i)];
      s.stddev[static_cast<std::size_t>(i)] += diff * diff;
    }
  }
  for (double& v2 : s.stddev) v2 = std::max(std::sqrt(v2 / n), 1e-8);
  return s;
}

}  // namespace

ImageDataset coral_align(const ImageDataset& target, const ImageDataset& source, double ridge) {
  const std::vector<double> map = coral_map(image_obs(target), image_obs(source), ridge);
  ImageDataset out = target;
  const int d = target.height * target.width;
  std::vector<double> scratch;
  for (auto& img : out.images) apply_map_inplace(img.data(), map, d, scratch);
  return out;
}

SequenceDataset coral_align(const SequenceDataset& target, const SequenceDataset& source,
                            double ridge) {
  const std::vector<double> map = coral_map(sequence_obs(target), sequence_obs(source), ridge);
  SequenceDataset out = target;
  const int d = out.features();
  std::vector<double> scratch;
  for (auto& seq : out.sequences) {
    for (int t = 0; t < seq.length(); ++t) {
      apply_map_inplace(seq.frames.data() + static_cast<std::size_t>(t) * d, map, d, scratch);
    }
  }
  return out;
}

namespace {

template <class Dataset, class Obs>
Dataset coral_full(const Dataset& target, const Dataset& source, double ridge, Obs obs,
                   bool clamp01) {
  const FeatureStats ts = stats_of(obs(target));
  const FeatureStats ss = stats_of(obs(source));
  Dataset std_target = target;
  {
    ObsView v = obs(std_target);
    for (const double* cr : v.rows) {
      double* r = const_cast<double*>(cr);
      for (int i = 0; i < v.dim; ++i) {
        r[i] = (r[i] - ts.mean[static_cast<std::size_t>(i)]) / ts.stddev[static_cast<std::size_t>(i)];
      }
    }
  }
  Dataset std_source = source;
  {
    ObsView v = obs(std_source);
    for (const double* cr : v.rows) {
      double* r = const_cast<double*>(cr);
      for (int i = 0; i < v.dim; ++i) {
        r[i] = (r[i] - ss.mean[static_cast<std::size_t>(i)]) / ss.stddev[static_cast<std::size_t>(i)];
      }
    }
  }
  Dataset aligned = coral_align(std_target, std_source, ridge);
  ObsView v = obs(aligned);
  for (const double* cr : v.rows) {
    double* r = const_cast<double*>(cr);
    for (int i = 0; i < v.dim; ++i) {
      r[i] = r[i] * ss.stddev[static_cast<std::size_t>(i)] + ss.mean[static_cast<std::size_t>(i)];
      if (clamp01) r[i] = std::clamp(r[i], 0.0, 1.0);
    }
  }
  return aligned;
}

}  // namespace

ImageDataset coral_adapt_to_source(const ImageDataset& target, const ImageDataset& source,
                                   double ridge) {
  return coral_full(target, source, ridge,
                    [](const ImageDataset& d) { return image_obs(d); }, true);
}

SequenceDataset coral_adapt_to_source(const SequenceDataset& target, const SequenceDataset& source,
                                      double ridge) {
  return coral_full(target, source, ridge,
                    [](const SequenceDataset& d) { return sequence_obs(d); }, false);
}

// ---- prediction ----------------------------------------------------------------------

namespace {

int argmax_row(const TensorPtr& t, int r) {
  const int n = t->cols();
  int best = 0;
  for (int j = 1; j < n; ++j) {
    if (t->at(r, j) > t->at(r, best)) best = j;
  }
  return best;
}

int argmax_vec(const TensorPtr& t) {
  int best = 0;
  for (int j = 1; j < t->size(); ++j) {
    if (t->at(j) > t->at(best)) best = j;
  }
  return best;
}

}  // namespace

std::vector<int> predict_images(const Model& model, const Converter* conv,
                                const ImageDataset& ds) {
  std::vector<int> out;
  out.reserve(ds.images.size());
  for (int i = 0; i < ds.size(); ++i) {
    const TensorPtr x = image_tensor(ds.images[static_cast<std::size_t>(i)], ds.height, ds.width);
    const TensorPtr input = conv ? conv->convert_image(x) : x;
    out.push_back(argmax_vec(model.forward_image(input)));
  }
  return out;
}

std::vector<std::vector<int>> predict_sequences(const Model& model, const Converter* conv,
                                                const SequenceDataset& ds) {
  std::vector<std::vector<int>> out;
  out.reserve(ds.sequences.size());
  const bool binary = model.spec.classes == 2;
  for (const auto& seq : ds.sequences) {
    const TensorPtr frames = sequence_tensor(seq);
    TensorPtr input = frames;
    if (conv) input = homogeneous_features(conv->convert_sequence(frames), seq.features);
    const TensorPtr logits = model.forward_sequence(input);
    std::vector<int> pred(static_cast<std::size_t>(seq.length()));
    for (int t = 0; t < seq.length(); ++t) {
      const int cls = argmax_row(logits, t);
      pred[static_cast<std::size_t>(t)] =
          binary ? (cls == 0 ? kLabelFollow : kLabelLeft) : cls;
    }
    out.push_back(std::move(pred));
  }
  return out;
}

MetricsReport evaluate_images(const Model& model, const Converter* conv, const ImageDataset& ds) {
  MetricsReport rep;
  rep.accuracy = evaluate_classification(predict_images(model, conv, ds), ds.labels);
  return rep;
}

MetricsReport evaluate_sequences(const Model& model, const Converter* conv,
                                 const SequenceDataset& ds, double horizon_s) {
  const bool directional = model.spec.classes >= 3;
  return evaluate_lane_change(predict_sequences(model, conv, ds), ds, directional, horizon_s);
}

// ---- experiment runner ------------------------------------------------------------------

namespace {

struct MethodPlan {
  std::string name;
  std::string base;
  std::string target = "T2";
  bool coral = false;
  bool uses_converter = false;
  bool direct = false;
  bool pretrain = false;
  bool correspondence = false;
  TrainMode mode = TrainMode::finetune_only;
};

MethodPlan resolve_method(const std::string& name, const ExperimentConfig& cfg) {
  MethodPlan mp;
  mp.name = name;
  mp.base = name;
  mp.target = cfg.pretrain_target;
  if (name.size() > 3 && name.rfind("-T") == name.size() - 3) {
    mp.target = name.substr(name.size() - 2);
    mp.base = name.substr(0, name.size() - 3);
  }
  if (mp.base == "finetune") {
    mp.mode = TrainMode::finetune_only;
  } else if (mp.base == "coral") {
    mp.coral = true;
    mp.mode = TrainMode::finetune_only;
  } else if (mp.base == "imp") {
    mp.uses_converter = true;
    mp.direct = true;
    mp.correspondence = true;
    mp.mode = TrainMode::imp;
  } else if (mp.base == "ours") {
    mp.uses_converter = true;
    mp.pretrain = true;
    mp.correspondence = true;
    if (cfg.mode == 0) {
      mp.mode = TrainMode::mode0;
    } else if (cfg.mode == 2) {
      mp.mode = TrainMode::mode2;
    } else if (cfg.mode == 1) {
      mp.mode = TrainMode::mode1;
    } else {
      // the converter stays frozen during step 3 except on the two-feature
      // task, where joint head+converter training keeps paying off
      mp.mode = cfg.task == "lane-change" ? TrainMode::mode1 : TrainMode::mode0;
    }
  } else if (mp.base == "mode0") {
    mp.uses_converter = true;
    mp.pretrain = true;
    mp.mode = TrainMode::mode0;
  } else if (mp.base == "mode2") {
    mp.uses_converter = true;
    mp.pretrain = true;
    mp.mode = TrainMode::mode2;
  } else {
    throw std::invalid_argument("unknown method '" + name + "'");
  }
  return mp;
}

TrainPlan make_plan(const ExperimentConfig& cfg, const MethodPlan& mp, std::uint64_t seed) {
  TrainPlan plan;
  plan.do_pretrain = mp.pretrain;
  plan.do_correspondence = mp.correspondence;
  plan.mode = mp.mode;
  plan.pretrain_target = mp.target;
  plan.lambda_corr = cfg.lambda_corr;
  plan.n_corr = cfg.n_corr;
  plan.lr = cfg.lr;
  plan.batch_size = cfg.batch_size;
  plan.epochs_pretrain = cfg.epochs_pretrain;
  plan.epochs_correspondence = cfg.epochs_correspondence;
  plan.epochs_finetune = cfg.epochs_finetune;
  plan.clip_norm = cfg.clip_norm;
  plan.patience = cfg.patience;
  plan.seed = seed;
  return plan;
}

Model clone_model(const Model& m) {
  Model out = build_model(m.spec, 0);
  for (const auto& [name, t] : m.params.items()) out.params.get(name)->data = t->data;
  out.head_names = m.head_names;
  return out;
}

Converter clone_converter(const Converter& c) {
  Converter out = build_converter(c.spec, 0);
  for (const auto& [name, t] : c.params.items()) out.params.get(name)->data = t->data;
  return out;
}

ArchSpec model_arch(const ExperimentConfig& cfg) {
  ArchSpec a;
  if (cfg.task == "rotated-images") {
    a.kind = "cnn-classifier";
    a.channels = {8, 16, 32};
    a.classes = 10;
  } else if (cfg.task == "toy-sequences") {
    a.kind = "lstm-tagger";
    a.features = 1;
    a.hidden = 32;
    a.classes = 2;
  } else {
    a.kind = "lstm-tagger";
    a.features = 2;
    a.hidden = 64;
    a.classes = 3;
  }
  return a;
}

ArchSpec converter_arch(const ExperimentConfig& cfg, bool direct) {
  ArchSpec a;
  if (cfg.task == "rotated-images") {
    a.kind = direct ? "direct-cnn-converter" : "cnn-converter";
    a.channels = {8, 16};
    a.family = TransformFamily::euclidean;
  } else if (cfg.task == "toy-sequences") {
    a.kind = direct ? "direct-lstm-converter" : "lstm-converter";
    a.features = 1;
    a.hidden = 16;
    a.family = TransformFamily::unrestricted;
  } else {
    a.kind = direct ? "direct-lstm-converter" : "lstm-converter";
    a.features = 2;
    a.hidden = 32;
    a.family = TransformFamily::unrestricted;
  }
  return a;
}

struct ImageTask {
  ImageDataset a_train, a_test, b_train, b_test;
  Model base;
};

struct SequenceTask {
  SequenceDataset a_train, a_test, b_train, b_test;
  Model base;
};

ImageTask build_image_task(const ExperimentConfig& cfg, std::uint64_t seed) {
  ImageTask task;
  ImageDataset a_full, b_raw;
  if (cfg.images_source == "idx") {
    const std::string dir = cfg.idx_dir.empty() ? cfg.data_dir : cfg.idx_dir;
    a_full = load_idx_dataset(dir + "/train-images-idx3-ubyte", dir + "/train-labels-idx1-ubyte",
                              "idx-train");
    b_raw = a_full;  // the rotated domain mirrors the source images
  } else {
    a_full = generate_synthetic_digits(cfg.a_count, derive_seed(seed, "domain-a"));
    b_raw = generate_synthetic_digits(cfg.b_count, derive_seed(seed, "domain-b"));
  }
  auto a_split = split_train_test(a_full, derive_seed(seed, "split-a"));
  task.a_train = std::move(a_split.train);
  task.a_test = std::move(a_split.test);
  auto b_split = split_train_test(make_rotated_domain(b_raw), derive_seed(seed, "split-b"));
  task.b_train = std::move(b_split.train);
  task.b_test = std::move(b_split.test);

  if (!cfg.base_model.empty()) {
    task.base = load_model_checkpoint(cfg.base_model);
  } else {
    task.base = build_model(model_arch(cfg), derive_seed(seed, "base-init"));
    TrainPlan plan;
    plan.lr = cfg.lr;
    plan.batch_size = cfg.batch_size;
    plan.patience = cfg.patience;
    plan.seed = derive_seed(seed, "base-train");
    train_from_scratch(task.base, task.a_train, plan, cfg.base_epochs);
  }
  return task;
}

SequenceTask build_sequence_task(const ExperimentConfig& cfg, std::uint64_t seed) {
  SequenceTask task;
  SequenceDataset a_full, b_full;
  if (cfg.task == "toy-sequences") {
    a_full = generate_toy_lane_changes(cfg.generator, ToyDomain::clean, cfg.a_count,
                                       derive_seed(seed, "domain-a"));
    b_full = generate_toy_lane_changes(cfg.generator, ToyDomain::noisy, cfg.b_count,
                                       derive_seed(seed, "domain-b"));
  } else {
    a_full = read_sequence_dir(cfg.data_dir + "/domain_a");
    b_full = read_sequence_dir(cfg.data_dir + "/domain_b");
  }
  auto a_split = split_train_test(a_full, derive_seed(seed, "split-a"));
  task.a_train = std::move(a_split.train);
  task.a_test = std::move(a_split.test);
  auto b_split = split_train_test(b_full, derive_seed(seed, "split-b"));
  task.b_train = std::move(b_split.train);
  task.b_test = std::move(b_split.test);

  if (!cfg.base_model.empty()) {
    task.base = load_model_checkpoint(cfg.base_model);
  } else {
    task.base = build_model(model_arch(cfg), derive_seed(seed, "base-init"));
    TrainPlan plan;
    plan.lr = cfg.lr;
    plan.batch_size = cfg.batch_size;
    plan.clip_norm = cfg.clip_norm;
    plan.patience = cfg.patience;
    plan.seed = derive_seed(seed, "base-train");
    train_from_scratch(task.base, task.a_train, plan, cfg.base_epochs);
  }
  return task;
}

GridRow run_image_method(const ImageTask& task, const ExperimentConfig& cfg,
                         const std::string& method, int b, std::uint64_t seed) {
  GridRow rowr;
  rowr.method = method;
  rowr.b = b;
  rowr.seed = seed;
  const MethodPlan mp = resolve_method(method, cfg);
  const TrainPlan plan =
      make_plan(cfg, mp, derive_seed(seed, "method:" + method + "/b:" + std::to_string(b)));

  ImageDataset limited = limit_dataset(task.b_train, b, seed);
  Model model = clone_model(task.base);

  if (mp.coral) {
    limited = coral_adapt_to_source(limited, task.a_train, cfg.coral_ridge);
    rowr.curves.push_back(fine_tune(model, nullptr, limited, nullptr, nullptr, plan));
    rowr.metrics = evaluate_images(model, nullptr,
                                   coral_adapt_to_source(task.b_test, task.a_train, cfg.coral_ridge));
    return rowr;
  }

  if (!mp.uses_converter) {
    rowr.curves.push_back(fine_tune(model, nullptr, limited, nullptr, nullptr, plan));
    rowr.metrics = evaluate_images(model, nullptr, task.b_test);
    return rowr;
  }

  Converter conv = build_converter(converter_arch(cfg, mp.direct), plan.seed);
  if (mp.pretrain && plan.epochs_pretrain > 0) {
    rowr.curves.push_back(
        pretrain_converter(conv, limited, image_pretrain_target(mp.target), plan));
  }
  CorrespondenceSet corr;
  if (mp.correspondence || plan.mode == TrainMode::mode1 || plan.mode == TrainMode::imp) {
    corr = pair_by_label(limited, task.a_train, cfg.n_corr, plan.seed);
  }
  if (mp.correspondence && plan.epochs_correspondence > 0) {
    rowr.curves.push_back(train_correspondence(conv, limited, task.a_train, corr, plan));
  }
  const bool needs_corr = plan.mode == TrainMode::mode1 || plan.mode == TrainMode::imp;
  rowr.curves.push_back(fine_tune(model, &conv, limited, needs_corr ? &task.a_train : nullptr,
                                  needs_corr ? &corr : nullptr, plan));
  rowr.metrics = evaluate_images(model, &conv, task.b_test);
  return rowr;
}

void collect_converted(const Converter& conv, const SequenceDataset& test,
                       const SequenceDataset& source, const ExperimentConfig& cfg,
                       const std::string& method, std::uint64_t seed,
                       std::vector<ConvertedSample>& out) {
  int taken = 0;
  for (int i = 0; i < test.size() && taken < 3; ++i) {
    const LabeledSequence& seq = test.sequences[static_cast<std::size_t>(i)];
    if (seq.maneuvers.empty()) continue;
    ConvertedSample cs;
    cs.method = method;
    cs.sequence = i;
    cs.features = seq.features;
    cs.input = seq.frames;
    const TensorPtr h = conv.convert_sequence(sequence_tensor(seq));
    cs.converted.resize(static_cast<std::size_t>(seq.length()) * seq.features);
    for (int t = 0; t < seq.length(); ++t) {
      for (int k = 0; k < seq.features; ++k) {
        cs.converted[static_cast<std::size_t>(t) * seq.features + k] = h->at(t, k);
      }
    }
    const CorrespondenceSet one = pair_sequences(
        SequenceDataset{{seq}, test.domain}, source, 1, derive_seed(seed, "plot-partner"));
    const LabeledSequence& partner =
        source.sequences[static_cast<std::size_t>(one.entries.front().partner_indices.front())];
    const AlignedPartner ap = align_partner(seq, partner);
    cs.partner.assign(static_cast<std::size_t>(seq.length()) * seq.features,
                      std::numeric_limits<double>::quiet_NaN());
    for (int t = 0; t < seq.length(); ++t) {
      if (!ap.valid[static_cast<std::size_t>(t)]) continue;
      for (int k = 0; k < seq.features; ++k) {
        cs.partner[static_cast<std::size_t>(t) * seq.features + k] =
            ap.frames[static_cast<std::size_t>(t) * seq.features + k];
      }
    }
    out.push_back(std::move(cs));
    ++taken;
  }
}

GridRow run_sequence_method(const SequenceTask& task, const ExperimentConfig& cfg,
                            const std::string& method, int b, std::uint64_t seed,
                            std::vector<ConvertedSample>* converted_out) {
  GridRow rowr;
  rowr.method = method;
  rowr.b = b;
  rowr.seed = seed;
  const MethodPlan mp = resolve_method(method, cfg);
  const TrainPlan plan =
      make_plan(cfg, mp, derive_seed(seed, "method:" + method + "/b:" + std::to_string(b)));

  SequenceDataset limited = limit_dataset(task.b_train, b, seed);
  Model model = clone_model(task.base);

  if (mp.coral) {
    limited = coral_adapt_to_source(limited, task.a_train, cfg.coral_ridge);
    rowr.curves.push_back(fine_tune(model, nullptr, limited, nullptr, nullptr, plan));
    rowr.metrics = evaluate_sequences(
        model, nullptr, coral_adapt_to_source(task.b_test, task.a_train, cfg.coral_ridge),
        cfg.generator.horizon_s);
    return rowr;
  }

  if (!mp.uses_converter) {
    rowr.curves.push_back(fine_tune(model, nullptr, limited, nullptr, nullptr, plan));
    rowr.metrics = evaluate_sequences(model, nullptr, task.b_test, cfg.generator.horizon_s);
    return rowr;
  }

  Converter conv = build_converter(converter_arch(cfg, mp.direct), plan.seed);
  if (mp.pretrain && plan.epochs_pretrain > 0) {
    rowr.curves.push_back(pretrain_converter(
        conv, limited, frame_pretrain_target(mp.target, limited.features()), plan));
  }
  CorrespondenceSet corr;
  if (mp.correspondence || plan.mode == TrainMode::mode1 || plan.mode == TrainMode::imp) {
    corr = pair_sequences(limited, task.a_train, cfg.n_corr, plan.seed);
  }
  if (mp.correspondence && plan.epochs_correspondence > 0) {
    rowr.curves.push_back(train_correspondence(conv, limited, task.a_train, corr, plan));
  }
  const bool needs_corr = plan.mode == TrainMode::mode1 || plan.mode == TrainMode::imp;
  rowr.curves.push_back(fine_tune(model, &conv, limited, needs_corr ? &task.a_train : nullptr,
                                  needs_corr ? &corr : nullptr, plan));
  rowr.metrics = evaluate_sequences(model, &conv, task.b_test, cfg.generator.horizon_s);

  if (converted_out && !mp.direct) {
    collect_converted(conv, task.b_test, task.a_train, cfg, method, seed, *converted_out);
  }
  return rowr;
}

}  // namespace

ExperimentReport run_experiment(const ExperimentConfig& cfg, int jobs) {
  cfg.validate();
  const bool image_task = cfg.task == "rotated-images";
  for (const auto& m : cfg.methods) resolve_method(m, cfg);  // fail fast

  ExperimentReport report;
  report.config = cfg;

  struct Job {
    std::string method;  // "" marks the B-on-B reference
    int b = 0;
    std::uint64_t seed = 0;
    std::size_t task_index = 0;
  };

  // per-seed task data (datasets + base model) built up front
  std::vector<ImageTask> image_tasks;
  std::vector<SequenceTask> sequence_tasks;
  std::vector<GridRow> reference_rows;  // A-on-B rows, one per seed
  std::vector<Job> jobs_list;
  for (std::size_t si = 0; si < cfg.seeds.size(); ++si) {
    const std::uint64_t seed = cfg.seeds[si];
    if (image_task) {
      image_tasks.push_back(build_image_task(cfg, seed));
      const ImageTask& t = image_tasks.back();
      GridRow aonb;
      aonb.method = "A on B";
      aonb.b = t.b_train.size();
      aonb.seed = seed;
      aonb.metrics = evaluate_images(t.base, nullptr, t.b_test);
      reference_rows.push_back(std::move(aonb));
    } else {
      sequence_tasks.push_back(build_sequence_task(cfg, seed));
      const SequenceTask& t = sequence_tasks.back();
      GridRow aonb;
      aonb.method = "A on B";
      aonb.b = t.b_train.size();
      aonb.seed = seed;
      aonb.metrics = evaluate_sequences(t.base, nullptr, t.b_test, cfg.generator.horizon_s);
      reference_rows.push_back(std::move(aonb));
    }
    for (const auto& method : cfg.methods) {
      for (const int b : cfg.b_values) jobs_list.push_back({method, b, seed, si});
    }
    jobs_list.push_back({"", 0, seed, si});  // B on B
  }

  std::vector<GridRow> results(jobs_list.size());
  std::vector<std::string> errors(jobs_list.size());
  std::vector<std::vector<ConvertedSample>> converted(jobs_list.size());
  std::atomic<std::size_t> next{0};

  auto worker = [&]() {
    while (true) {
      const std::size_t j = next.fetch_add(1);
      if (j >= jobs_list.size()) return;
      const Job& job = jobs_list[j];
      try {
        if (job.method.empty()) {
          // B-on-B upper reference: full model trained on the whole B pool
          GridRow rowr;
          rowr.method = "B on B";
          rowr.seed = job.seed;
          TrainPlan plan;
          plan.lr = cfg.lr;
          plan.batch_size = cfg.batch_size;
          plan.clip_norm = cfg.clip_norm;
          plan.patience = cfg.patience;
          plan.seed = derive_seed(job.seed, "b-on-b");
          if (image_task) {
            const ImageTask& t = image_tasks[job.task_index];
            rowr.b = t.b_train.size();
            Model model = build_model(model_arch(cfg), derive_seed(job.seed, "b-on-b-init"));
            rowr.curves = train_from_scratch(model, t.b_train, plan, cfg.base_epochs);
            rowr.metrics = evaluate_images(model, nullptr, t.b_test);
          } else {
            const SequenceTask& t = sequence_tasks[job.task_index];
            rowr.b = t.b_train.size();
            Model model = build_model(model_arch(cfg), derive_seed(job.seed, "b-on-b-init"));
            rowr.curves = train_from_scratch(model, t.b_train, plan, cfg.base_epochs);
            rowr.metrics = evaluate_sequences(model, nullptr, t.b_test, cfg.generator.horizon_s);
          }
          results[j] = std::move(rowr);
        } else if (image_task) {
          results[j] = run_image_method(image_tasks[job.task_index], cfg, job.method, job.b,
                                        job.seed);
        } else {
          const bool dump = job.b == cfg.b_values.back();
          results[j] = run_sequence_method(sequence_tasks[job.task_index], cfg, job.method, job.b,
                                           job.seed, dump ? &converted[j] : nullptr);
        }
      } catch (const std::exception& e) {
        errors[j] = e.what();
      }
    }
  };

  const int nworkers = std::max(1, std::min<int>(jobs, static_cast<int>(jobs_list.size())));
  if (nworkers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(nworkers));
    for (int i = 0; i < nworkers; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  // deterministic row order: per seed, methods in config order, b ascending,
  // then the reference rows
  for (std::size_t si = 0; si < cfg.seeds.size(); ++si) {
    for (std::size_t j = 0; j < jobs_list.size(); ++j) {
      const Job& job = jobs_list[j];
      if (job.task_index != si || job.method.empty()) continue;
      if (!errors[j].empty()) {
        report.failures.push_back(job.method + "/b=" + std::to_string(job.b) +
                                  "/seed=" + std::to_string(job.seed) + ": " + errors[j]);
        continue;
      }
      report.rows.push_back(std::move(results[j]));
      for (auto& cs : converted[j]) report.converted.push_back(std::move(cs));
    }
    report.rows.push_back(reference_rows[si]);
    for (std::size_t j = 0; j < jobs_list.size(); ++j) {
      const Job& job = jobs_list[j];
      if (job.task_index != si || !job.method.empty()) continue;
      if (!errors[j].empty()) {
        report.failures.push_back("B on B/seed=" + std::to_string(job.seed) + ": " + errors[j]);
      } else {
        report.rows.push_back(std::move(results[j]));
      }
    }
  }

  // scores relative to the A-on-B baseline of the same seed (sequence tasks)
  if (!image_task) {
    for (auto& rowr : report.rows) {
      if (rowr.method == "A on B" || rowr.method == "B on B") continue;
      const auto base = std::find_if(reference_rows.begin(), reference_rows.end(),
                                     [&](const GridRow& r) { return r.seed == rowr.seed; });
      if (base == reference_rows.end()) continue;
      try {
        rowr.score = aggregate_score(rowr.metrics, base->metrics);
      } catch (const std::exception&) {
        rowr.score.reset();  // degenerate baseline metric
      }
    }
  }
  return report;
}

}  // namespace xfer
