#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xfer/data.hpp"

namespace xfer {

// Experiment description, parsed from a line-oriented `key = value` file
// with `[section]` headers. Unknown keys and malformed values are errors.
struct ExperimentConfig {
  // [experiment]
  std::string task = "toy-sequences";  // rotated-images | toy-sequences | lane-change
  std::vector<std::string> methods;
  std::vector<int> b_values;
  std::vector<std::uint64_t> seeds = {1};
  int n_corr = 5;
  int mode = -1;                       // fine-tune regime for `ours`; -1 = task default
  std::string pretrain_target = "T2";  // default target when a method has no -T1/-T2 suffix

  // [data]
  int a_count = 4000;  // generated domain-A sample count
  int b_count = 2500;  // generated domain-B pool (before split and b-limiting)
  std::string images_source = "synthetic";  // synthetic | idx
  std::string idx_dir;

  // [train]
  double lr = 1e-3;
  int batch_size = 16;
  int epochs_pretrain = 20;
  int epochs_correspondence = 20;
  int epochs_finetune = 20;
  int base_epochs = 8;
  double lambda_corr = 1.0;
  double clip_norm = 5.0;
  int patience = 5;
  double coral_ridge = 1e-5;

  // [generator]
  ToyGenConfig generator;

  // [paths]
  std::string data_dir;
  std::string out_dir = "out";
  std::string base_model;  // optional checkpoint; trained in-process when empty

  void validate() const;
  std::string to_text() const;  // canonical config echo
};

ExperimentConfig parse_config(const std::string& path);
ExperimentConfig parse_config_text(const std::string& text, const std::string& origin = "<text>");

// Key-by-key default documentation for --help output.
std::string config_defaults_help();

}  // namespace xfer
