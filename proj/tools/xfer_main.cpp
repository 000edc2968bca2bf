#include <cstdint>
#include <cstdio>
#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "xfer/config.hpp"
#include "xfer/data.hpp"
#include "xfer/models.hpp"
#include "xfer/pipeline.hpp"
#include "xfer/report.hpp"
#include "xfer/rng.hpp"

namespace {

using namespace xfer;

void print_metrics(const MetricsReport& m) {
  if (m.accuracy) std::printf("accuracy   %.4f\n", *m.accuracy);
  if (m.frequency) std::printf("frequency  %.4f\n", *m.frequency);
  if (m.delay_s) std::printf("delay_s    %.4f\n", *m.delay_s);
  if (m.miss) std::printf("miss       %.4f\n", *m.miss);
  std::printf("events %ld detected %ld false_episodes %ld frames F/LC %ld/%ld\n", m.events,
              m.detected, m.false_episodes, m.frames_follow, m.frames_change);
}

int cmd_gen_toy(const std::string& out_dir, int count, std::uint64_t seed,
                const std::string& domain, const ToyGenConfig& gen) {
  const ToyDomain dom = domain == "clean" ? ToyDomain::clean : ToyDomain::noisy;
  const SequenceDataset ds = generate_toy_lane_changes(gen, dom, count, seed);
  write_sequence_dir(ds, out_dir);
  int changes = 0;
  for (const auto& s : ds.sequences) changes += static_cast<int>(s.maneuvers.size());
  std::printf("wrote %d sequences (%d lane changes) to %s\n", ds.size(), changes,
              out_dir.c_str());
  return 0;
}

int cmd_train_base(const std::string& config_path, const std::string& out_path,
                   std::uint64_t seed_override, bool has_seed) {
  ExperimentConfig cfg = parse_config(config_path);
  if (has_seed) cfg.seeds = {seed_override};
  const std::uint64_t seed = cfg.seeds.front();

  TrainPlan plan;
  plan.lr = cfg.lr;
  plan.batch_size = cfg.batch_size;
  plan.clip_norm = cfg.clip_norm;
  plan.patience = cfg.patience;
  plan.seed = derive_seed(seed, "base-train");

  if (cfg.task == "rotated-images") {
    ImageDataset a_full = cfg.images_source == "idx"
                              ? load_idx_dataset(cfg.idx_dir + "/train-images-idx3-ubyte",
                                                 cfg.idx_dir + "/train-labels-idx1-ubyte")
                              : generate_synthetic_digits(cfg.a_count, derive_seed(seed, "domain-a"));
    const auto split = split_train_test(a_full, derive_seed(seed, "split-a"));
    ArchSpec arch;
    arch.kind = "cnn-classifier";
    arch.channels = {8, 16, 32};
    Model model = build_model(arch, derive_seed(seed, "base-init"));
    train_from_scratch(model, split.train, plan, cfg.base_epochs);
    save_checkpoint(model, out_path);
    std::printf("saved %s\n", out_path.c_str());
    print_metrics(evaluate_images(model, nullptr, split.test));
    return 0;
  }

  SequenceDataset a_full;
  ArchSpec arch;
  arch.kind = "lstm-tagger";
  if (cfg.task == "toy-sequences") {
    a_full = generate_toy_lane_changes(cfg.generator, ToyDomain::clean, cfg.a_count,
                                       derive_seed(seed, "domain-a"));
    arch.features = 1;
    arch.hidden = 32;
    arch.classes = 2;
  } else {
    a_full = read_sequence_dir(cfg.data_dir + "/domain_a");
    arch.features = 2;
    arch.hidden = 64;
    arch.classes = 3;
  }
  const auto split = split_train_test(a_full, derive_seed(seed, "split-a"));
  Model model = build_model(arch, derive_seed(seed, "base-init"));
  train_from_scratch(model, split.train, plan, cfg.base_epochs);
  save_checkpoint(model, out_path);
  std::printf("saved %s\n", out_path.c_str());
  print_metrics(evaluate_sequences(model, nullptr, split.test, cfg.generator.horizon_s));
  return 0;
}

int cmd_transfer(const std::string& config_path, std::uint64_t seed_override, bool has_seed,
                 int jobs, const std::string& out_override, const std::string& data_override) {
  ExperimentConfig cfg = parse_config(config_path);
  if (has_seed) cfg.seeds = {seed_override};
  if (!out_override.empty()) cfg.out_dir = out_override;
  if (!data_override.empty()) cfg.data_dir = data_override;

  const ExperimentReport report = run_experiment(cfg, jobs);
  emit_report(report, cfg.out_dir);
  std::printf("wrote %s/results.csv (%zu rows)\n", cfg.out_dir.c_str(), report.rows.size());
  if (!report.failures.empty()) {
    for (const auto& f : report.failures) std::cerr << "failed grid point: " << f << "\n";
    return 1;
  }
  return 0;
}

int cmd_eval(const std::string& model_path, const std::string& converter_path,
             const std::string& data_dir, const std::string& domain, int count,
             std::uint64_t seed) {
  const Model model = load_model_checkpoint(model_path);
  Converter conv;
  const bool has_conv = !converter_path.empty();
  if (has_conv) conv = load_converter_checkpoint(converter_path);

  if (model.spec.kind == "cnn-classifier") {
    ImageDataset ds;
    if (!data_dir.empty()) {
      ds = load_idx_dataset(data_dir + "/t10k-images-idx3-ubyte",
                            data_dir + "/t10k-labels-idx1-ubyte");
    } else {
      ds = generate_synthetic_digits(count, derive_seed(seed, "domain-b"));
    }
    if (domain == "rotated") ds = make_rotated_domain(ds);
    print_metrics(evaluate_images(model, has_conv ? &conv : nullptr, ds));
    return 0;
  }

  SequenceDataset ds;
  if (!data_dir.empty()) {
    ds = read_sequence_dir(data_dir);
  } else {
    ds = generate_toy_lane_changes(ToyGenConfig{}, domain == "clean" ? ToyDomain::clean
                                                                     : ToyDomain::noisy,
                                   count, seed);
  }
  print_metrics(evaluate_sequences(model, has_conv ? &conv : nullptr, ds));
  return 0;
}

int cmd_report(const std::string& in_path, const std::string& out_dir) {
  const ExperimentReport report = load_report(in_path);
  emit_report(report, out_dir);
  std::printf("wrote %s/results.csv (%zu rows)\n", out_dir.c_str(), report.rows.size());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"xfer: explicit-transform domain transfer experiments"};
  app.require_subcommand(1);
  app.footer(xfer::config_defaults_help());

  // gen-toy
  auto* gen = app.add_subcommand("gen-toy", "Generate simulated lane-change sequences");
  std::string gen_out = "toy-data";
  int gen_count = 1000;
  std::uint64_t gen_seed = 1;
  std::string gen_domain = "clean";
  xfer::ToyGenConfig gen_cfg;
  gen->add_option("--out", gen_out, "output directory for .seq files");
  gen->add_option("--count", gen_count, "number of sequences");
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--domain", gen_domain, "clean | noisy")
      ->check(CLI::IsMember({"clean", "noisy"}));
  gen->add_option("--frame-rate", gen_cfg.frame_rate, "frames per second");
  gen->add_option("--length-s", gen_cfg.length_s, "sequence length in seconds");
  gen->add_option("--p-lane-change", gen_cfg.p_lane_change, "lane-change probability");
  gen->add_option("--transition-s", gen_cfg.transition_s, "transition duration");
  gen->add_option("--sigma-noise", gen_cfg.sigma_noise, "noisy-domain noise level");
  gen->add_option("--ignore-s", gen_cfg.ignore_s, "zero-weight margin seconds");
  gen->add_option("--alpha", gen_cfg.alpha, "exponential weight emphasis");

  // train-base
  auto* tb = app.add_subcommand("train-base", "Train the source-domain base model once");
  std::string tb_config, tb_out = "base-model.bin";
  std::uint64_t tb_seed = 0;
  tb->add_option("--config", tb_config, "experiment config file")->required();
  tb->add_option("--out", tb_out, "checkpoint output path");
  auto* tb_seed_opt = tb->add_option("--seed", tb_seed, "override the config seed");

  // transfer
  auto* tr = app.add_subcommand("transfer", "Run the transfer experiment grid");
  std::string tr_config, tr_out, tr_data;
  std::uint64_t tr_seed = 0;
  int tr_jobs = 1;
  tr->add_option("--config", tr_config, "experiment config file")->required();
  auto* tr_seed_opt = tr->add_option("--seed", tr_seed, "override the config seeds");
  tr->add_option("--jobs", tr_jobs, "grid points to run in parallel")->check(CLI::PositiveNumber);
  tr->add_option("--out", tr_out, "override the report directory");
  tr->add_option("--data", tr_data, "override the dataset directory");

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  std::string ev_model, ev_converter, ev_data, ev_domain = "noisy";
  int ev_count = 500;
  std::uint64_t ev_seed = 1;
  ev->add_option("--model", ev_model, "model checkpoint")->required();
  ev->add_option("--converter", ev_converter, "optional converter checkpoint");
  ev->add_option("--data", ev_data, "dataset directory (.seq files or IDX files)");
  ev->add_option("--domain", ev_domain, "generated data domain: clean | noisy | rotated");
  ev->add_option("--count", ev_count, "generated sample count when --data is absent");
  ev->add_option("--seed", ev_seed, "generated data seed");

  // report
  auto* rp = app.add_subcommand("report", "Regenerate CSV views from report.json");
  std::string rp_in, rp_out = "out";
  rp->add_option("--in", rp_in, "path to report.json")->required();
  rp->add_option("--out", rp_out, "output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_toy(gen_out, gen_count, gen_seed, gen_domain, gen_cfg);
    if (tb->parsed()) return cmd_train_base(tb_config, tb_out, tb_seed, tb_seed_opt->count() > 0);
    if (tr->parsed()) {
      return cmd_transfer(tr_config, tr_seed, tr_seed_opt->count() > 0, tr_jobs, tr_out, tr_data);
    }
    if (ev->parsed()) return cmd_eval(ev_model, ev_converter, ev_data, ev_domain, ev_count, ev_seed);
    if (rp->parsed()) return cmd_report(rp_in, rp_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
