#include <doctest.h>

#include <cmath>

#include "xfer/linalg.hpp"
#include "xfer/pipeline.hpp"
#include "xfer/rng.hpp"

using namespace xfer;

namespace {

ToyGenConfig short_toy() {
  ToyGenConfig cfg;
  cfg.length_s = 8.0;  // 80 frames keeps the tests quick
  return cfg;
}

ArchSpec toy_tagger() {
  ArchSpec s;
  s.kind = "lstm-tagger";
  s.features = 1;
  s.hidden = 16;
  s.classes = 2;
  return s;
}

ArchSpec toy_converter() {
  ArchSpec s;
  s.kind = "lstm-converter";
  s.features = 1;
  s.hidden = 8;
  return s;
}

TrainPlan quick_plan(std::uint64_t seed) {
  TrainPlan p;
  p.epochs_pretrain = 8;
  p.epochs_correspondence = 6;
  p.epochs_finetune = 4;
  p.batch_size = 8;
  p.seed = seed;
  return p;
}

SequenceDataset gaussian_frames(int n, int features, const std::vector<double>& chol_rows,
                                std::uint64_t seed) {
  // one long sequence of iid Gaussian frames with covariance L L^T
  Rng rng(seed);
  LabeledSequence seq;
  seq.features = features;
  seq.frames.resize(static_cast<std::size_t>(n) * features);
  seq.labels.assign(static_cast<std::size_t>(n), kLabelFollow);
  seq.weights.assign(static_cast<std::size_t>(n), 1.0);
  for (int t = 0; t < n; ++t) {
    std::vector<double> z(static_cast<std::size_t>(features));
    for (double& v : z) v = rng.normal(0.0, 1.0);
    for (int i = 0; i < features; ++i) {
      double acc = 0.0;
      for (int j = 0; j <= i; ++j) {
        acc += chol_rows[static_cast<std::size_t>(i) * features + j] * z[static_cast<std::size_t>(j)];
      }
      seq.frames[static_cast<std::size_t>(t) * features + i] = acc;
    }
  }
  SequenceDataset ds;
  ds.sequences = {std::move(seq)};
  return ds;
}

std::vector<double> frame_covariance(const SequenceDataset& ds) {
  const int d = ds.features();
  std::vector<double> mean(static_cast<std::size_t>(d), 0.0);
  double n = 0;
  for (const auto& s : ds.sequences) {
    for (int t = 0; t < s.length(); ++t) {
      for (int i = 0; i < d; ++i) mean[static_cast<std::size_t>(i)] += s.frame(t, i);
      n += 1;
    }
  }
  for (double& m : mean) m /= n;
  std::vector<double> cov(static_cast<std::size_t>(d) * d, 0.0);
  for (const auto& s : ds.sequences) {
    for (int t = 0; t < s.length(); ++t) {
      for (int i = 0; i < d; ++i) {
        for (int j = 0; j < d; ++j) {
          cov[static_cast<std::size_t>(i) * d + j] +=
              (s.frame(t, i) - mean[static_cast<std::size_t>(i)]) *
              (s.frame(t, j) - mean[static_cast<std::size_t>(j)]);
        }
      }
    }
  }
  for (double& c : cov) c /= n;
  return cov;
}

double frobenius(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("coral is a no-op when source and target statistics coincide") {
  const SequenceDataset ds = gaussian_frames(3000, 2, {1.0, 0.0, 0.4, 0.8}, 5);
  const SequenceDataset out = coral_align(ds, ds, 1e-8);
  for (int t = 0; t < 200; ++t) {
    CHECK(std::fabs(out.sequences[0].frame(t, 0) - ds.sequences[0].frame(t, 0)) < 1e-8);
    CHECK(std::fabs(out.sequences[0].frame(t, 1) - ds.sequences[0].frame(t, 1)) < 1e-8);
  }
}

TEST_CASE("coral closes at least 90 percent of the covariance gap") {
  const SequenceDataset target = gaussian_frames(10000, 2, {2.0, 0.0, -0.9, 0.6}, 7);
  const SequenceDataset source = gaussian_frames(10000, 2, {0.7, 0.0, 0.3, 1.4}, 8);
  const auto cov_s = frame_covariance(source);
  const double before = frobenius(frame_covariance(target), cov_s);
  const SequenceDataset aligned = coral_align(target, source, 0.0);
  const double after = frobenius(frame_covariance(aligned), cov_s);
  CHECK(after < 0.1 * before);
  CHECK(after < 1e-6);  // exact up to rounding when ridge is 0
}

TEST_CASE("one-dimensional coral scales by the standard-deviation ratio") {
  const SequenceDataset target = gaussian_frames(5000, 1, {2.0}, 9);   // variance 4
  const SequenceDataset source = gaussian_frames(5000, 1, {1.0}, 10);  // variance 1
  const SequenceDataset out = coral_align(target, source, 0.0);
  const auto var_t = frame_covariance(target)[0];
  const auto var_s = frame_covariance(source)[0];
  const double want_scale = std::sqrt(var_s / var_t);
  for (int t = 0; t < 100; ++t) {
    const double got = out.sequences[0].frame(t, 0);
    const double centered = target.sequences[0].frame(t, 0);
    CHECK(got == doctest::Approx(centered * want_scale).epsilon(1e-9));
  }
  CHECK(want_scale == doctest::Approx(0.5).epsilon(0.05));
}

TEST_CASE("coral with ridge 0 rejects singular covariance") {
  SequenceDataset flat = gaussian_frames(500, 2, {1.0, 0.0, 1.0, 0.0}, 11);  // rank 1
  const SequenceDataset source = gaussian_frames(500, 2, {1.0, 0.0, 0.0, 1.0}, 12);
  CHECK_THROWS_AS((void)coral_align(flat, source, 0.0), std::runtime_error);
  CHECK_NOTHROW((void)coral_align(flat, source, 1e-3));
}

TEST_CASE("pretraining to the identity converges on held-out samples") {
  const SequenceDataset data = generate_toy_lane_changes(short_toy(), ToyDomain::noisy, 40, 21);
  Converter conv = build_converter(toy_converter(), 22);
  TrainPlan plan = quick_plan(23);
  plan.epochs_pretrain = 12;
  const StepCurves curves =
      pretrain_converter(conv, data, frame_pretrain_target("T1", 1), plan);
  CHECK_FALSE(curves.train_loss.empty());

  const SequenceDataset held = generate_toy_lane_changes(short_toy(), ToyDomain::noisy, 10, 99);
  const TransformMatrix eye = TransformMatrix::identity(1);
  double err = 0.0;
  int count = 0;
  for (const auto& seq : held.sequences) {
    for (const auto& m : conv.matrices_for_sequence(seq)) {
      err += frobenius(m.entries, eye.entries);
      ++count;
    }
  }
  CHECK(err / count < 0.05);
}

TEST_CASE("zero pretraining epochs leave the converter untouched") {
  const SequenceDataset data = generate_toy_lane_changes(short_toy(), ToyDomain::noisy, 10, 31);
  Converter conv = build_converter(toy_converter(), 32);
  const std::vector<double> before = conv.params.get("head.w")->data;
  TrainPlan plan = quick_plan(33);
  plan.epochs_pretrain = 0;
  (void)pretrain_converter(conv, data, frame_pretrain_target("T1", 1), plan);
  CHECK(conv.params.get("head.w")->data == before);
}

TEST_CASE("correspondence training is stable at the optimum and descends otherwise") {
  const SequenceDataset clean = generate_toy_lane_changes(short_toy(), ToyDomain::clean, 24, 41);
  SUBCASE("identity converter with self-partners stays put") {
    Converter conv = build_converter(toy_converter(), 42);
    conv.set_head_identity();
    const std::vector<double> before_w = conv.params.get("head.w")->data;
    CorrespondenceSet self;
    self.n = 1;
    for (int i = 0; i < clean.size(); ++i) self.entries.push_back({i, {i}});
    TrainPlan plan = quick_plan(43);
    plan.epochs_correspondence = 3;
    const StepCurves curves = train_correspondence(conv, clean, clean, self, plan);
    for (const double l : curves.train_loss) CHECK(l < 1e-9);
    const std::vector<double>& after_w = conv.params.get("head.w")->data;
    for (std::size_t i = 0; i < after_w.size(); ++i) {
      CHECK(std::fabs(after_w[i] - before_w[i]) < 1e-6);
    }
  }
  SUBCASE("noisy-to-clean correspondence strictly reduces the loss") {
    const SequenceDataset noisy = generate_toy_lane_changes(short_toy(), ToyDomain::noisy, 24, 41);
    Converter conv = build_converter(toy_converter(), 44);
    const CorrespondenceSet corr = pair_sequences(noisy, clean, 5, 45);
    TrainPlan plan = quick_plan(46);
    plan.epochs_correspondence = 6;
    const StepCurves curves = train_correspondence(conv, noisy, clean, corr, plan);
    REQUIRE(curves.train_loss.size() >= 2);
    CHECK(curves.train_loss.back() < curves.train_loss.front());
  }
  SUBCASE("an empty correspondence set is rejected") {
    Converter conv = build_converter(toy_converter(), 47);
    CHECK_THROWS_AS(
        (void)train_correspondence(conv, clean, clean, CorrespondenceSet{}, quick_plan(48)),
        std::invalid_argument);
  }
}

TEST_CASE("mode 0 fine-tuning freezes the converter and the model body") {
  const SequenceDataset data = generate_toy_lane_changes(short_toy(), ToyDomain::noisy, 20, 51);
  Model model = build_model(toy_tagger(), 52);
  Converter conv = build_converter(toy_converter(), 53);
  const std::vector<double> conv_before = conv.params.get("head.w")->data;
  const std::vector<double> body_before = model.params.get("lstm.wx")->data;
  TrainPlan plan = quick_plan(54);
  plan.mode = TrainMode::mode0;
  plan.do_pretrain = false;
  plan.do_correspondence = false;
  (void)fine_tune(model, &conv, data, nullptr, nullptr, plan);
  CHECK(conv.params.get("head.w")->data == conv_before);   // bit-identical
  CHECK(model.params.get("lstm.wx")->data == body_before);
}

TEST_CASE("mode 1 with zero correspondence weight reproduces mode 2 bit-exactly") {
  const SequenceDataset clean = generate_toy_lane_changes(short_toy(), ToyDomain::clean, 16, 61);
  const SequenceDataset noisy = generate_toy_lane_changes(short_toy(), ToyDomain::noisy, 16, 61);
  const CorrespondenceSet corr = pair_sequences(noisy, clean, 3, 62);

  const auto run = [&](TrainMode mode) {
    Model model = build_model(toy_tagger(), 63);
    Converter conv = build_converter(toy_converter(), 64);
    TrainPlan plan = quick_plan(65);
    plan.mode = mode;
    plan.lambda_corr = 0.0;
    plan.do_pretrain = false;
    plan.do_correspondence = false;
    plan.epochs_finetune = 3;
    (void)fine_tune(model, &conv, noisy, mode == TrainMode::mode1 ? &clean : nullptr,
                    mode == TrainMode::mode1 ? &corr : nullptr, plan);
    std::vector<double> all;
    for (const auto& [n, t] : model.params.items()) all.insert(all.end(), t->data.begin(), t->data.end());
    for (const auto& [n, t] : conv.params.items()) all.insert(all.end(), t->data.begin(), t->data.end());
    return all;
  };
  CHECK(run(TrainMode::mode1) == run(TrainMode::mode2));
}

TEST_CASE("a frozen identity converter reproduces plain fine-tuning exactly") {
  const SequenceDataset noisy = generate_toy_lane_changes(short_toy(), ToyDomain::noisy, 16, 71);
  const SequenceDataset test = generate_toy_lane_changes(short_toy(), ToyDomain::noisy, 8, 72);

  Model plain = build_model(toy_tagger(), 73);
  TrainPlan plan = quick_plan(74);
  plan.mode = TrainMode::finetune_only;
  plan.do_pretrain = false;
  plan.do_correspondence = false;
  (void)fine_tune(plain, nullptr, noisy, nullptr, nullptr, plan);

  Model with_conv = build_model(toy_tagger(), 73);
  Converter conv = build_converter(toy_converter(), 75);
  conv.set_head_identity();
  TrainPlan plan2 = plan;
  plan2.mode = TrainMode::mode0;
  (void)fine_tune(with_conv, &conv, noisy, nullptr, nullptr, plan2);

  const auto pred_a = predict_sequences(plain, nullptr, test);
  const auto pred_b = predict_sequences(with_conv, &conv, test);
  CHECK(pred_a == pred_b);
  CHECK(plain.params.get("fc.w")->data == with_conv.params.get("fc.w")->data);
}

TEST_CASE("plan validation rejects inconsistent setups") {
  TrainPlan plan = quick_plan(81);
  plan.mode = TrainMode::imp;
  plan.do_pretrain = true;
  CHECK_THROWS_AS(plan.validate(true), std::invalid_argument);
  plan.do_pretrain = false;
  CHECK_NOTHROW(plan.validate(true));
  plan.mode = TrainMode::finetune_only;
  CHECK_THROWS_AS(plan.validate(true), std::invalid_argument);
  plan.mode = TrainMode::mode1;
  CHECK_THROWS_AS(plan.validate(false), std::invalid_argument);

  const SequenceDataset data = generate_toy_lane_changes(short_toy(), ToyDomain::noisy, 8, 82);
  Model model = build_model(toy_tagger(), 83);
  Converter conv = build_converter(toy_converter(), 84);
  TrainPlan p2 = quick_plan(85);
  p2.mode = TrainMode::mode1;
  CHECK_THROWS_AS((void)fine_tune(model, &conv, data, nullptr, nullptr, p2),
                  std::invalid_argument);  // mode 1 without pairs
}

TEST_CASE("tiny experiment grid: row layout and bitwise rerun determinism") {
  ExperimentConfig cfg;
  cfg.task = "toy-sequences";
  cfg.methods = {"finetune", "ours-T2"};
  cfg.b_values = {6, 10};
  cfg.seeds = {5};
  cfg.a_count = 24;
  cfg.b_count = 20;
  cfg.base_epochs = 2;
  cfg.epochs_pretrain = 2;
  cfg.epochs_correspondence = 2;
  cfg.epochs_finetune = 2;
  cfg.batch_size = 6;
  cfg.generator = short_toy();

  const ExperimentReport a = run_experiment(cfg, 1);
  const ExperimentReport b = run_experiment(cfg, 2);  // job count must not matter

  CHECK(a.failures.empty());
  // 2 methods x 2 b + A-on-B + B-on-B
  REQUIRE(a.rows.size() == 6);
  CHECK(a.rows[0].method == "finetune");
  CHECK(a.rows[0].b == 6);
  CHECK(a.rows[1].b == 10);
  CHECK(a.rows[2].method == "ours-T2");
  CHECK(a.rows[4].method == "A on B");
  CHECK(a.rows[5].method == "B on B");

  REQUIRE(b.rows.size() == a.rows.size());
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    CHECK(a.rows[i].method == b.rows[i].method);
    CHECK(*a.rows[i].metrics.frequency == *b.rows[i].metrics.frequency);  // bitwise
    CHECK(*a.rows[i].metrics.delay_s == *b.rows[i].metrics.delay_s);
    CHECK(*a.rows[i].metrics.miss == *b.rows[i].metrics.miss);
  }
}

TEST_CASE("invalid method names fail fast") {
  ExperimentConfig cfg;
  cfg.task = "toy-sequences";
  cfg.methods = {"gradient-boost"};
  cfg.b_values = {4};
  CHECK_THROWS_AS((void)run_experiment(cfg, 1), std::invalid_argument);
}
