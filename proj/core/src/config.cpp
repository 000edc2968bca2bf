#include "xfer/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace xfer {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

[[noreturn]] void fail(const std::string& origin, int line, const std::string& msg) {
  throw std::runtime_error(origin + ":" + std::to_string(line) + ": " + msg);
}

double to_double(const std::string& v, const std::string& origin, int line, const std::string& key) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return d;
  } catch (...) {
    fail(origin, line, "value for '" + key + "' is not a number: " + v);
  }
}

int to_int(const std::string& v, const std::string& origin, int line, const std::string& key) {
  try {
    std::size_t pos = 0;
    const int i = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return i;
  } catch (...) {
    fail(origin, line, "value for '" + key + "' is not an integer: " + v);
  }
}

}  // namespace

void ExperimentConfig::validate() const {
  if (task != "rotated-images" && task != "toy-sequences" && task != "lane-change") {
    throw std::runtime_error("config: unknown task '" + task + "'");
  }
  if (methods.empty()) throw std::runtime_error("config: methods must not be empty");
  if (b_values.empty()) throw std::runtime_error("config: b_values must not be empty");
  for (std::size_t i = 0; i < b_values.size(); ++i) {
    if (b_values[i] <= 0) throw std::runtime_error("config: b_values must be positive");
    if (i > 0 && b_values[i] <= b_values[i - 1]) {
      throw std::runtime_error("config: b_values must be strictly ascending");
    }
  }
  if (seeds.empty()) throw std::runtime_error("config: seeds must not be empty");
  if (n_corr <= 0) throw std::runtime_error("config: n_corr must be positive");
  if (mode < -1 || mode > 2) throw std::runtime_error("config: mode must be 0, 1 or 2");
  if (pretrain_target != "T1" && pretrain_target != "T2") {
    throw std::runtime_error("config: pretrain_target must be T1 or T2");
  }
  if (images_source != "synthetic" && images_source != "idx") {
    throw std::runtime_error("config: images_source must be synthetic or idx");
  }
  if (task == "lane-change" && data_dir.empty()) {
    throw std::runtime_error("config: lane-change task needs paths.data with .seq files");
  }
}

ExperimentConfig parse_config_text(const std::string& text, const std::string& origin) {
  ExperimentConfig cfg;
  std::stringstream in(text);
  std::string line;
  std::string section = "experiment";
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    if (t.front() == '[') {
      if (t.back() != ']') fail(origin, lineno, "malformed section header");
      section = trim(t.substr(1, t.size() - 2));
      if (section != "experiment" && section != "data" && section != "train" &&
          section != "generator" && section != "paths") {
        fail(origin, lineno, "unknown section [" + section + "]");
      }
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) fail(origin, lineno, "expected key = value");
    const std::string key = trim(t.substr(0, eq));
    const std::string val = trim(t.substr(eq + 1));

    if (section == "experiment") {
      if (key == "task") {
        cfg.task = val;
      } else if (key == "methods") {
        cfg.methods = split_list(val);
      } else if (key == "b_values") {
        cfg.b_values.clear();
        for (const auto& v : split_list(val)) cfg.b_values.push_back(to_int(v, origin, lineno, key));
      } else if (key == "seeds") {
        cfg.seeds.clear();
        for (const auto& v : split_list(val)) {
          cfg.seeds.push_back(static_cast<std::uint64_t>(std::stoull(v)));
        }
      } else if (key == "n_corr") {
        cfg.n_corr = to_int(val, origin, lineno, key);
      } else if (key == "mode") {
        cfg.mode = val == "default" ? -1 : to_int(val, origin, lineno, key);
      } else if (key == "pretrain_target") {
        cfg.pretrain_target = val;
      } else {
        fail(origin, lineno, "unknown key '" + key + "' in [experiment]");
      }
    } else if (section == "data") {
      if (key == "a_count") {
        cfg.a_count = to_int(val, origin, lineno, key);
      } else if (key == "b_count") {
        cfg.b_count = to_int(val, origin, lineno, key);
      } else if (key == "images_source") {
        cfg.images_source = val;
      } else if (key == "idx_dir") {
        cfg.idx_dir = val;
      } else {
        fail(origin, lineno, "unknown key '" + key + "' in [data]");
      }
    } else if (section == "train") {
      if (key == "lr") {
        cfg.lr = to_double(val, origin, lineno, key);
      } else if (key == "batch_size") {
        cfg.batch_size = to_int(val, origin, lineno, key);
      } else if (key == "epochs_pretrain") {
        cfg.epochs_pretrain = to_int(val, origin, lineno, key);
      } else if (key == "epochs_correspondence") {
        cfg.epochs_correspondence = to_int(val, origin, lineno, key);
      } else if (key == "epochs_finetune") {
        cfg.epochs_finetune = to_int(val, origin, lineno, key);
      } else if (key == "base_epochs") {
        cfg.base_epochs = to_int(val, origin, lineno, key);
      } else if (key == "lambda_corr") {
        cfg.lambda_corr = to_double(val, origin, lineno, key);
      } else if (key == "clip_norm") {
        cfg.clip_norm = to_double(val, origin, lineno, key);
      } else if (key == "patience") {
        cfg.patience = to_int(val, origin, lineno, key);
      } else if (key == "coral_ridge") {
        cfg.coral_ridge = to_double(val, origin, lineno, key);
      } else {
        fail(origin, lineno, "unknown key '" + key + "' in [train]");
      }
    } else if (section == "generator") {
      if (key == "frame_rate") {
        cfg.generator.frame_rate = to_double(val, origin, lineno, key);
      } else if (key == "length_s") {
        cfg.generator.length_s = to_double(val, origin, lineno, key);
      } else if (key == "p_lane_change") {
        cfg.generator.p_lane_change = to_double(val, origin, lineno, key);
      } else if (key == "transition_s") {
        cfg.generator.transition_s = to_double(val, origin, lineno, key);
      } else if (key == "sigma_noise") {
        cfg.generator.sigma_noise = to_double(val, origin, lineno, key);
      } else if (key == "horizon_s") {
        cfg.generator.horizon_s = to_double(val, origin, lineno, key);
      } else if (key == "ignore_s") {
        cfg.generator.ignore_s = to_double(val, origin, lineno, key);
      } else if (key == "alpha") {
        cfg.generator.alpha = to_double(val, origin, lineno, key);
      } else if (key == "drift_amplitude") {
        cfg.generator.drift_amplitude = to_double(val, origin, lineno, key);
      } else {
        fail(origin, lineno, "unknown key '" + key + "' in [generator]");
      }
    } else if (section == "paths") {
      if (key == "data") {
        cfg.data_dir = val;
      } else if (key == "output") {
        cfg.out_dir = val;
      } else if (key == "base_model") {
        cfg.base_model = val;
      } else {
        fail(origin, lineno, "unknown key '" + key + "' in [paths]");
      }
    }
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str(), path);
}

std::string ExperimentConfig::to_text() const {
  std::ostringstream os;
  os << "[experiment]\n";
  os << "task = " << task << "\n";
  os << "methods = ";
  for (std::size_t i = 0; i < methods.size(); ++i) os << (i ? ", " : "") << methods[i];
  os << "\nb_values = ";
  for (std::size_t i = 0; i < b_values.size(); ++i) os << (i ? ", " : "") << b_values[i];
  os << "\nseeds = ";
  for (std::size_t i = 0; i < seeds.size(); ++i) os << (i ? ", " : "") << seeds[i];
  os << "\nn_corr = " << n_corr << "\n";
  os << "mode = " << (mode < 0 ? std::string("default") : std::to_string(mode)) << "\n";
  os << "pretrain_target = " << pretrain_target << "\n";
  os << "[data]\n";
  os << "a_count = " << a_count << "\n";
  os << "b_count = " << b_count << "\n";
  os << "images_source = " << images_source << "\n";
  if (!idx_dir.empty()) os << "idx_dir = " << idx_dir << "\n";
  os << "[train]\n";
  os << "lr = " << lr << "\n";
  os << "batch_size = " << batch_size << "\n";
  os << "epochs_pretrain = " << epochs_pretrain << "\n";
  os << "epochs_correspondence = " << epochs_correspondence << "\n";
  os << "epochs_finetune = " << epochs_finetune << "\n";
  os << "base_epochs = " << base_epochs << "\n";
  os << "lambda_corr = " << lambda_corr << "\n";
  os << "clip_norm = " << clip_norm << "\n";
  os << "patience = " << patience << "\n";
  os << "coral_ridge = " << coral_ridge << "\n";
  os << "[generator]\n";
  os << "frame_rate = " << generator.frame_rate << "\n";
  os << "length_s = " << generator.length_s << "\n";
  os << "p_lane_change = " << generator.p_lane_change << "\n";
  os << "transition_s = " << generator.transition_s << "\n";
  os << "sigma_noise = " << generator.sigma_noise << "\n";
  os << "horizon_s = " << generator.horizon_s << "\n";
  os << "ignore_s = " << generator.ignore_s << "\n";
  os << "alpha = " << generator.alpha << "\n";
  os << "drift_amplitude = " << generator.drift_amplitude << "\n";
  os << "[paths]\n";
  if (!data_dir.empty()) os << "data = " << data_dir << "\n";
  os << "output = " << out_dir << "\n";
  if (!base_model.empty()) os << "base_model = " << base_model << "\n";
  return os.str();
}

std::string config_defaults_help() {
  const ExperimentConfig d;
  std::ostringstream os;
  os << "Config file keys (line-oriented `key = value` under [section] headers).\n"
     << "Unknown keys are errors. Defaults:\n\n"
     << "[experiment]\n"
     << "  task            rotated-images | toy-sequences | lane-change (default "
     << d.task << ")\n"
     << "  methods         comma list: finetune, coral, imp, ours[-T1|-T2],\n"
     << "                  mode0[-T1|-T2], mode2[-T1|-T2]   (required)\n"
     << "  b_values        ascending positive ints          (required)\n"
     << "  seeds           comma list of seeds (default 1)\n"
     << "  n_corr          partners per correspondence entry (default " << d.n_corr << ")\n"
     << "  mode            fine-tune regime for `ours`: 0, 1, 2 or default\n"
     << "                  (default mode: images 0, sequences 1)\n"
     << "  pretrain_target T1 (identity) or T2 (domain knowledge); used when a\n"
     << "                  method has no -T1/-T2 suffix (default " << d.pretrain_target << ")\n"
     << "[data]\n"
     << "  a_count         generated domain-A samples (default " << d.a_count << ")\n"
     << "  b_count         generated domain-B pool (default " << d.b_count << ")\n"
     << "  images_source   synthetic | idx (default " << d.images_source << ")\n"
     << "  idx_dir         directory with IDX image/label files\n"
     << "[train]\n"
     << "  lr              learning rate (default " << d.lr << ")\n"
     << "  batch_size      (default " << d.batch_size << ")\n"
     << "  epochs_pretrain / epochs_correspondence / epochs_finetune (default "
     << d.epochs_pretrain << ")\n"
     << "  base_epochs     epochs for the domain-A base model (default " << d.base_epochs << ")\n"
     << "  lambda_corr     correspondence-loss weight in mode 1 (default " << d.lambda_corr << ")\n"
     << "  clip_norm       global-norm gradient clip for sequence training (default "
     << d.clip_norm << ")\n"
     << "  patience        early-stopping patience in epochs (default " << d.patience << ")\n"
     << "  coral_ridge     covariance ridge for coral (default " << d.coral_ridge << ")\n"
     << "[generator]      toy-sequence simulator\n"
     << "  frame_rate (" << d.generator.frame_rate << ") length_s (" << d.generator.length_s
     << ") p_lane_change (" << d.generator.p_lane_change << ") transition_s ("
     << d.generator.transition_s << ")\n"
     << "  sigma_noise (" << d.generator.sigma_noise << ") horizon_s (" << d.generator.horizon_s
     << ") ignore_s (" << d.generator.ignore_s << ") alpha (" << d.generator.alpha << ")\n"
     << "  drift_amplitude (" << d.generator.drift_amplitude << ")\n"
     << "[paths]\n"
     << "  data            dataset directory (.seq files or IDX files)\n"
     << "  output          report directory (default " << d.out_dir << ")\n"
     << "  base_model      checkpoint to reuse instead of training the base model\n";
  return os.str();
}

}  // namespace xfer
