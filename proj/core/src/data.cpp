#include "xfer/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "xfer/rng.hpp"

namespace xfer {

// ---- IDX binary format -------------------------------------------------------

namespace {

std::uint32_t read_be32(std::istream& in, const char* what) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw std::runtime_error(std::string("idx: truncated ") + what);
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
         std::uint32_t(b[3]);
}

}  // namespace

TensorPtr read_idx(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("idx: cannot open " + path);
  const std::uint32_t magic = read_be32(in, "magic");
  if (magic != 0x00000801u && magic != 0x00000803u) {
    throw std::runtime_error("idx: bad magic in " + path);
  }
  const int ndims = static_cast<int>(magic & 0xffu);
  std::vector<int> shape;
  std::size_t total = 1;
  for (int i = 0; i < ndims; ++i) {
    const std::uint32_t d = read_be32(in, "dimension");
    if (d == 0) throw std::runtime_error("idx: zero dimension in " + path);
    shape.push_back(static_cast<int>(d));
    total *= d;
  }
  std::vector<unsigned char> payload(total);
  in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(total));
  if (static_cast<std::size_t>(in.gcount()) != total) {
    throw std::runtime_error("idx: truncated payload in " + path);
  }
  const bool images = magic == 0x00000803u;
  std::vector<double> values(total);
  for (std::size_t i = 0; i < total; ++i) {
    values[i] = images ? payload[i] / 255.0 : static_cast<double>(payload[i]);
  }
  return Tensor::make(std::move(shape), std::move(values));
}

ImageDataset load_idx_dataset(const std::string& images_path, const std::string& labels_path,
                              std::string domain) {
  const TensorPtr imgs = read_idx(images_path);
  const TensorPtr labs = read_idx(labels_path);
  if (imgs->shape.size() != 3) throw std::runtime_error("idx: image file must be 3-D");
  if (labs->shape.size() != 1) throw std::runtime_error("idx: label file must be 1-D");
  if (imgs->shape[0] != labs->shape[0]) {
    throw std::runtime_error("idx: image/label counts differ");
  }
  ImageDataset ds;
  ds.domain = std::move(domain);
  ds.height = imgs->shape[1];
  ds.width = imgs->shape[2];
  const std::size_t px = static_cast<std::size_t>(ds.height) * ds.width;
  ds.images.reserve(static_cast<std::size_t>(imgs->shape[0]));
  for (int i = 0; i < imgs->shape[0]; ++i) {
    ds.images.emplace_back(imgs->data.begin() + static_cast<std::size_t>(i) * px,
                           imgs->data.begin() + static_cast<std::size_t>(i + 1) * px);
    ds.labels.push_back(static_cast<int>(labs->data[static_cast<std::size_t>(i)]));
  }
  return ds;
}

// ---- image domains -----------------------------------------------------------

ImageDataset make_rotated_domain(const ImageDataset& ds) {
  ImageDataset out = ds;
  out.domain = ds.domain + "-rot180";
  for (auto& img : out.images) {
    std::reverse(img.begin(), img.end());  // reversing the flat buffer flips both axes
  }
  return out;
}

// ---- synthetic digits ----------------------------------------------------------

namespace {

using Polyline = std::vector<std::pair<double, double>>;

std::vector<Polyline> circle(double cx, double cy, double rx, double ry, int segs = 12) {
  Polyline p;
  for (int i = 0; i <= segs; ++i) {
    const double a = 2.0 * M_PI * i / segs;
    p.emplace_back(cx + rx * std::sin(a), cy - ry * std::cos(a));
  }
  return {p};
}

// Stroke templates in a unit box, x right, y down. Shapes are deliberately
// not symmetric under 180-degree rotation (egg-shaped 0, serif 1, unequal
// 8 loops), apart from the classic 6/9 pairing.
std::vector<Polyline> digit_strokes(int digit) {
  switch (digit) {
    case 0: {  // egg: narrow top, wide bottom
      Polyline p;
      const int segs = 14;
      for (int i = 0; i <= segs; ++i) {
        const double a = 2.0 * M_PI * i / segs;
        const double y = 0.5 - 0.38 * std::cos(a);
        const double widen = 0.18 + 0.14 * (y - 0.12) / 0.76;  // wider toward the bottom
        p.emplace_back(0.5 + widen * std::sin(a), y);
      }
      return {p};
    }
    case 1:
      return {{{0.40, 0.30}, {0.62, 0.12}, {0.62, 0.90}}, {{0.38, 0.90}, {0.84, 0.90}}};
    case 2:
      return {{{0.30, 0.24},
               {0.38, 0.12},
               {0.56, 0.10},
               {0.68, 0.20},
               {0.64, 0.34},
               {0.32, 0.68},
               {0.24, 0.88},
               {0.80, 0.88}}};
    case 3:
      return {{{0.28, 0.16},
               {0.52, 0.10},
               {0.70, 0.22},
               {0.62, 0.40},
               {0.46, 0.48},
               {0.64, 0.54},
               {0.74, 0.70},
               {0.60, 0.88},
               {0.30, 0.86}}};
    case 4:
      return {{{0.64, 0.90}, {0.64, 0.10}, {0.26, 0.60}, {0.80, 0.60}}};
    case 5:
      return {{{0.74, 0.10},
               {0.28, 0.10},
               {0.26, 0.42},
               {0.48, 0.38},
               {0.62, 0.50},
               {0.58, 0.70},
               {0.40, 0.78},
               {0.26, 0.70}}};
    case 6:
      return {{{0.66, 0.12},
               {0.44, 0.28},
               {0.32, 0.52},
               {0.33, 0.76},
               {0.50, 0.90},
               {0.68, 0.78},
               {0.67, 0.58},
               {0.50, 0.50},
               {0.34, 0.60}}};
    case 7:
      return {{{0.25, 0.10}, {0.75, 0.10}, {0.44, 0.90}}};
    case 8: {  // small loop on top of a larger one
      auto top = circle(0.50, 0.28, 0.15, 0.16, 10);
      auto bot = circle(0.50, 0.67, 0.23, 0.22, 12);
      top.push_back(bot[0]);
      return top;
    }
    case 9:
      return {{{0.34, 0.88},
               {0.56, 0.72},
               {0.68, 0.48},
               {0.67, 0.24},
               {0.50, 0.10},
               {0.32, 0.22},
               {0.33, 0.42},
               {0.50, 0.50},
               {0.66, 0.40}}};
    default:
      throw std::invalid_argument("digit_strokes: digit out of range");
  }
}

void render_segment(std::vector<double>& img, int h, int w, double x0, double y0, double x1,
                    double y1, double sigma) {
  const double pad = 3.0 * sigma;
  const int ylo = std::max(0, static_cast<int>(std::floor(std::min(y0, y1) - pad)));
  const int yhi = std::min(h - 1, static_cast<int>(std::ceil(std::max(y0, y1) + pad)));
  const int xlo = std::max(0, static_cast<int>(std::floor(std::min(x0, x1) - pad)));
  const int xhi = std::min(w - 1, static_cast<int>(std::ceil(std::max(x0, x1) + pad)));
  const double dx = x1 - x0, dy = y1 - y0;
  const double len2 = dx * dx + dy * dy;
  for (int y = ylo; y <= yhi; ++y) {
    for (int x = xlo; x <= xhi; ++x) {
      double t = len2 > 0 ? ((x - x0) * dx + (y - y0) * dy) / len2 : 0.0;
      t = std::clamp(t, 0.0, 1.0);
      const double px = x0 + t * dx, py = y0 + t * dy;
      const double d2 = (x - px) * (x - px) + (y - py) * (y - py);
      const double v = std::exp(-d2 / (2.0 * sigma * sigma));
      double& cell = img[static_cast<std::size_t>(y) * w + x];
      cell = std::max(cell, v);
    }
  }
}

}  // namespace

ImageDataset generate_synthetic_digits(int count, std::uint64_t seed, const DigitGenConfig& cfg) {
  if (count <= 0) throw std::invalid_argument("generate_synthetic_digits: count must be positive");
  ImageDataset ds;
  ds.domain = "digits";
  ds.height = cfg.height;
  ds.width = cfg.width;
  Rng rng(derive_seed(seed, "digits"));
  const double cx = (cfg.width - 1) / 2.0, cy = (cfg.height - 1) / 2.0;
  const double span = 0.82 * std::min(cfg.width, cfg.height);
  for (int i = 0; i < count; ++i) {
    const int digit = static_cast<int>(rng.uniform_int(0, 9));
    const double ang = rng.uniform(-cfg.angle_jitter, cfg.angle_jitter);
    const double sc = rng.uniform(cfg.scale_lo, cfg.scale_hi);
    const double tx = rng.uniform(-cfg.jitter_px, cfg.jitter_px);
    const double ty = rng.uniform(-cfg.jitter_px, cfg.jitter_px);
    const double sigma = rng.uniform(cfg.thickness_lo, cfg.thickness_hi) / 2.0;
    const double ca = std::cos(ang), sa = std::sin(ang);

    std::vector<double> img(static_cast<std::size_t>(cfg.height) * cfg.width, 0.0);
    for (const Polyline& line : digit_strokes(digit)) {
      std::vector<std::pair<double, double>> pts;
      pts.reserve(line.size());
      for (const auto& [ux, uy] : line) {
        const double lx = (ux - 0.5) * span * sc;
        const double ly = (uy - 0.5) * span * sc;
        pts.emplace_back(cx + tx + ca * lx - sa * ly, cy + ty + sa * lx + ca * ly);
      }
      for (std::size_t k = 0; k + 1 < pts.size(); ++k) {
        render_segment(img, cfg.height, cfg.width, pts[k].first, pts[k].second, pts[k + 1].first,
                       pts[k + 1].second, sigma);
      }
    }
    for (double& v : img) {
      v = std::clamp(v + rng.normal(0.0, cfg.pixel_noise), 0.0, 1.0);
    }
    ds.images.push_back(std::move(img));
    ds.labels.push_back(digit);
  }
  return ds;
}

// ---- toy lane-change sequences -------------------------------------------------

namespace {

struct ToyDraws {
  double m0, m1;
  double drift_a1, drift_f1, drift_p1;
  double drift_a2, drift_f2, drift_p2;
  bool lane_change;
  int direction;
  double t_center;
};

ToyDraws draw_toy(Rng& rng, const ToyGenConfig& cfg) {
  ToyDraws d;
  d.m0 = rng.uniform(0.35, 0.65);
  d.m1 = rng.uniform(0.35, 0.65);
  d.drift_a1 = rng.uniform(0.3, 1.0) * cfg.drift_amplitude;
  d.drift_f1 = rng.uniform(0.05, 0.20);
  d.drift_p1 = rng.uniform(0.0, 2.0 * M_PI);
  d.drift_a2 = rng.uniform(0.3, 1.0) * cfg.drift_amplitude * 0.5;
  d.drift_f2 = rng.uniform(0.20, 0.50);
  d.drift_p2 = rng.uniform(0.0, 2.0 * M_PI);
  d.lane_change = rng.uniform(0.0, 1.0) < cfg.p_lane_change;
  d.direction = rng.uniform(0.0, 1.0) < 0.5 ? kLabelLeft : kLabelRight;
  const double lo = cfg.horizon_s + cfg.ignore_s + 0.3;
  const double hi = cfg.length_s - cfg.transition_s / 2.0 - cfg.ignore_s - 0.3;
  d.t_center = rng.uniform(lo, hi);
  return d;
}

}  // namespace

SequenceDataset generate_toy_lane_changes(const ToyGenConfig& cfg, ToyDomain domain, int count,
                                          std::uint64_t seed) {
  if (count <= 0) throw std::invalid_argument("generate_toy_lane_changes: count must be positive");
  if (cfg.sigma_noise < 0) throw std::invalid_argument("generate_toy_lane_changes: sigma < 0");
  if (cfg.transition_s <= 0 || cfg.length_s <= 0 || cfg.frame_rate <= 0) {
    throw std::invalid_argument("generate_toy_lane_changes: durations must be positive");
  }
  const int frames = static_cast<int>(std::lround(cfg.length_s * cfg.frame_rate));
  if (frames < static_cast<int>(std::lround((cfg.horizon_s + 2 * cfg.ignore_s + 2) * cfg.frame_rate))) {
    throw std::invalid_argument("generate_toy_lane_changes: sequence too short for label window");
  }
  const double dt = 1.0 / cfg.frame_rate;
  // logistic slope so the 10%-90% swing spans transition_s
  const double k = 2.0 * std::log(9.0) / cfg.transition_s;

  SequenceDataset ds;
  ds.domain = domain == ToyDomain::clean ? "toy-clean" : "toy-noisy";
  ds.sequences.reserve(static_cast<std::size_t>(count));

  for (int i = 0; i < count; ++i) {
    // trajectory and noise use separate streams so clean/noisy pairs share paths
    Rng traj_rng(derive_seed(seed, "toy-traj", static_cast<std::uint64_t>(i)));
    Rng noise_rng(derive_seed(seed, "toy-noise", static_cast<std::uint64_t>(i)));

    LabeledSequence seq;
    seq.features = 1;
    seq.frame_rate = cfg.frame_rate;
    seq.frames.resize(static_cast<std::size_t>(frames));
    seq.labels.assign(static_cast<std::size_t>(frames), kLabelFollow);
    seq.weights.assign(static_cast<std::size_t>(frames), 1.0);

    const int min_exec = static_cast<int>(std::lround((cfg.horizon_s + cfg.ignore_s) * cfg.frame_rate)) + 1;
    const int max_exec = frames - static_cast<int>(std::lround(cfg.ignore_s * cfg.frame_rate)) - 2;

    for (int attempt = 0;; ++attempt) {
      const ToyDraws d = draw_toy(traj_rng, cfg);
      // road coordinate over two lanes: lane 0 -> r in [0,1), lane 1 -> [1,2)
      const int lane0 = !d.lane_change ? 0 : (d.direction == kLabelRight ? 0 : 1);
      const int lane1 = d.lane_change ? 1 - lane0 : lane0;
      int exec_frame = -1;
      int lane_prev = lane0;
      for (int t = 0; t < frames; ++t) {
        const double time = t * dt;
        const double drift = d.drift_a1 * std::sin(2 * M_PI * d.drift_f1 * time + d.drift_p1) +
                             d.drift_a2 * std::sin(2 * M_PI * d.drift_f2 * time + d.drift_p2);
        double r = lane0 + d.m0 + drift;
        if (d.lane_change) {
          const double blend = 1.0 / (1.0 + std::exp(-k * (time - d.t_center)));
          r += blend * ((lane1 + d.m1) - (lane0 + d.m0));
        }
        const int lane = r < 1.0 ? 0 : 1;
        if (d.lane_change && exec_frame < 0 && lane != lane_prev && t > 0) exec_frame = t;
        lane_prev = lane;
        seq.frames[static_cast<std::size_t>(t)] = std::clamp(r - lane, 0.0, 1.0);
      }
      if (!d.lane_change) {
        seq.maneuvers.clear();
        break;
      }
      if (exec_frame >= min_exec && exec_frame <= max_exec) {
        seq.maneuvers = {Maneuver{d.direction, exec_frame}};
        break;
      }
      if (attempt > 200) {
        throw std::runtime_error("generate_toy_lane_changes: could not place a lane change");
      }
    }

    if (domain == ToyDomain::noisy && cfg.sigma_noise > 0.0) {
      for (double& m : seq.frames) {
        m = std::clamp(m + noise_rng.normal(0.0, cfg.sigma_noise), 0.0, 1.0);
      }
    }
    ds.sequences.push_back(std::move(seq));
  }
  return label_and_weight(std::move(ds), cfg.horizon_s, cfg.ignore_s, cfg.alpha);
}

SequenceDataset label_and_weight(SequenceDataset ds, double horizon_s, double ignore_s,
                                 double alpha) {
  for (auto& seq : ds.sequences) {
    const int frames = seq.length();
    const int horizon = static_cast<int>(std::lround(horizon_s * seq.frame_rate));
    const int margin = static_cast<int>(std::lround(ignore_s * seq.frame_rate));
    seq.labels.assign(static_cast<std::size_t>(frames), kLabelFollow);
    seq.weights.assign(static_cast<std::size_t>(frames), 1.0);

    std::vector<Maneuver> sorted = seq.maneuvers;
    std::sort(sorted.begin(), sorted.end(),
              [](const Maneuver& a, const Maneuver& b) { return a.exec_frame < b.exec_frame; });
    for (std::size_t i = 0; i + 1 < sorted.size(); ++i) {
      if (sorted[i].exec_frame + margin > sorted[i + 1].exec_frame - horizon - margin) {
        throw std::runtime_error("label_and_weight: overlapping maneuver windows");
      }
    }
    for (const Maneuver& mv : sorted) {
      const int wstart = mv.exec_frame - horizon;
      for (int t = std::max(0, wstart - margin); t < wstart; ++t) {
        seq.weights[static_cast<std::size_t>(t)] = 0.0;
      }
      for (int t = std::max(0, wstart); t < std::min(frames, mv.exec_frame); ++t) {
        seq.labels[static_cast<std::size_t>(t)] = mv.direction;
      }
      for (int t = mv.exec_frame; t < std::min(frames, mv.exec_frame + margin); ++t) {
        seq.weights[static_cast<std::size_t>(t)] = 0.0;
      }
    }
  }

  // inverse-frequency class weights over all contributing frames
  std::vector<double> counts(3, 0.0);
  double total = 0.0;
  for (const auto& seq : ds.sequences) {
    for (int t = 0; t < seq.length(); ++t) {
      if (seq.weights[static_cast<std::size_t>(t)] == 0.0) continue;
      counts[static_cast<std::size_t>(seq.labels[static_cast<std::size_t>(t)])] += 1.0;
      total += 1.0;
    }
  }
  for (auto& seq : ds.sequences) {
    const int horizon = static_cast<int>(std::lround(horizon_s * seq.frame_rate));
    std::vector<int> to_exec(static_cast<std::size_t>(seq.length()), -1);
    for (const Maneuver& mv : seq.maneuvers) {
      for (int t = std::max(0, mv.exec_frame - horizon); t < std::min(seq.length(), mv.exec_frame);
           ++t) {
        to_exec[static_cast<std::size_t>(t)] = mv.exec_frame - t;
      }
    }
    for (int t = 0; t < seq.length(); ++t) {
      double& w = seq.weights[static_cast<std::size_t>(t)];
      if (w == 0.0) continue;
      const int label = seq.labels[static_cast<std::size_t>(t)];
      const double cnt = counts[static_cast<std::size_t>(label)];
      w = cnt > 0.0 ? 1.0 / (cnt / total) : 1.0;  // inverse class frequency
      if (label != kLabelFollow && to_exec[static_cast<std::size_t>(t)] >= 0 && horizon > 0) {
        const double progress = 1.0 - static_cast<double>(to_exec[static_cast<std::size_t>(t)]) /
                                          static_cast<double>(horizon);
        w *= std::exp(alpha * progress);
      }
    }
  }
  return ds;
}

// ---- limiting / splitting ------------------------------------------------------

namespace {

template <class Dataset, class Take>
Dataset take_indices(const Dataset& ds, const std::vector<int>& idx, Take take) {
  Dataset out;
  out.domain = ds.domain;
  for (const int i : idx) take(out, i);
  return out;
}

}  // namespace

ImageDataset limit_dataset(const ImageDataset& ds, int b, std::uint64_t seed) {
  if (b > ds.size() || b < 0) throw std::invalid_argument("limit_dataset: b exceeds dataset size");
  Rng rng(derive_seed(seed, "limit"));
  std::vector<int> perm = rng.permutation(ds.size());
  perm.resize(static_cast<std::size_t>(b));
  ImageDataset out = take_indices(ds, perm, [&](ImageDataset& o, int i) {
    o.images.push_back(ds.images[static_cast<std::size_t>(i)]);
    o.labels.push_back(ds.labels[static_cast<std::size_t>(i)]);
  });
  out.height = ds.height;
  out.width = ds.width;
  return out;
}

SequenceDataset limit_dataset(const SequenceDataset& ds, int b, std::uint64_t seed) {
  if (b > ds.size() || b < 0) throw std::invalid_argument("limit_dataset: b exceeds dataset size");
  Rng rng(derive_seed(seed, "limit"));
  std::vector<int> perm = rng.permutation(ds.size());
  perm.resize(static_cast<std::size_t>(b));
  return take_indices(ds, perm, [&](SequenceDataset& o, int i) {
    o.sequences.push_back(ds.sequences[static_cast<std::size_t>(i)]);
  });
}

TrainTestSplit<ImageDataset> split_train_test(const ImageDataset& ds, std::uint64_t seed,
                                              double train_fraction) {
  Rng rng(derive_seed(seed, "split"));
  const std::vector<int> perm = rng.permutation(ds.size());
  const int ntrain = static_cast<int>(std::lround(train_fraction * ds.size()));
  TrainTestSplit<ImageDataset> out;
  out.train.height = out.test.height = ds.height;
  out.train.width = out.test.width = ds.width;
  out.train.domain = out.test.domain = ds.domain;
  for (int i = 0; i < ds.size(); ++i) {
    ImageDataset& dst = i < ntrain ? out.train : out.test;
    dst.images.push_back(ds.images[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])]);
    dst.labels.push_back(ds.labels[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])]);
  }
  return out;
}

TrainTestSplit<SequenceDataset> split_train_test(const SequenceDataset& ds, std::uint64_t seed,
                                                 double train_fraction) {
  Rng rng(derive_seed(seed, "split"));
  const std::vector<int> perm = rng.permutation(ds.size());
  const int ntrain = static_cast<int>(std::lround(train_fraction * ds.size()));
  TrainTestSplit<SequenceDataset> out;
  out.train.domain = out.test.domain = ds.domain;
  for (int i = 0; i < ds.size(); ++i) {
    SequenceDataset& dst = i < ntrain ? out.train : out.test;
    dst.sequences.push_back(ds.sequences[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])]);
  }
  return out;
}

// ---- delimited sequence files ---------------------------------------------------

void write_sequence_file(const LabeledSequence& seq, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  char buf[128];
  std::snprintf(buf, sizeof buf, "frame_rate=%.17g\n", seq.frame_rate);
  out << buf;
  for (const Maneuver& mv : seq.maneuvers) {
    out << "# lc," << (mv.direction == kLabelLeft ? 'L' : 'R') << ',' << mv.exec_frame << '\n';
  }
  for (int t = 0; t < seq.length(); ++t) {
    for (int k = 0; k < seq.features; ++k) {
      std::snprintf(buf, sizeof buf, "%.17g,", seq.frame(t, k));
      out << buf;
    }
    const int label = seq.labels[static_cast<std::size_t>(t)];
    out << (label == kLabelFollow ? 'F' : label == kLabelLeft ? 'L' : 'R') << ',';
    std::snprintf(buf, sizeof buf, "%.17g\n", seq.weights[static_cast<std::size_t>(t)]);
    out << buf;
  }
  if (!out) throw std::runtime_error("write failed for " + path);
}

LabeledSequence read_sequence_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  LabeledSequence seq;
  std::string line;
  if (!std::getline(in, line) || line.rfind("frame_rate=", 0) != 0) {
    throw std::runtime_error(path + ": missing frame_rate header");
  }
  seq.frame_rate = std::stod(line.substr(11));
  if (seq.frame_rate <= 0) throw std::runtime_error(path + ": frame_rate must be positive");

  int features = -1;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::stringstream ss(line.substr(1));
      std::string tag, dir, exec;
      if (!std::getline(ss, tag, ',') || !std::getline(ss, dir, ',') || !std::getline(ss, exec)) {
        throw std::runtime_error(path + ": malformed annotation at line " + std::to_string(lineno));
      }
      tag.erase(0, tag.find_first_not_of(" \t"));
      if (tag != "lc") continue;  // unknown annotations are skipped
      dir.erase(0, dir.find_first_not_of(" \t"));
      Maneuver mv;
      mv.direction = dir == "L" ? kLabelLeft : kLabelRight;
      if (dir != "L" && dir != "R") {
        throw std::runtime_error(path + ": bad direction at line " + std::to_string(lineno));
      }
      mv.exec_frame = std::stoi(exec);
      seq.maneuvers.push_back(mv);
      continue;
    }
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() < 3) {
      throw std::runtime_error(path + ": expected feature,label,weight columns at line " +
                               std::to_string(lineno));
    }
    const int f = static_cast<int>(cells.size()) - 2;
    if (features < 0) {
      features = f;
      seq.features = f;
    } else if (f != features) {
      throw std::runtime_error(path + ": inconsistent column count at line " + std::to_string(lineno));
    }
    for (int k = 0; k < f; ++k) seq.frames.push_back(std::stod(cells[static_cast<std::size_t>(k)]));
    const std::string& lab = cells[static_cast<std::size_t>(f)];
    if (lab == "F") {
      seq.labels.push_back(kLabelFollow);
    } else if (lab == "L") {
      seq.labels.push_back(kLabelLeft);
    } else if (lab == "R") {
      seq.labels.push_back(kLabelRight);
    } else {
      throw std::runtime_error(path + ": bad label '" + lab + "' at line " + std::to_string(lineno));
    }
    seq.weights.push_back(std::stod(cells.back()));
  }
  if (seq.features <= 0 || seq.length() == 0) throw std::runtime_error(path + ": no frames");
  return seq;
}

void write_sequence_dir(const SequenceDataset& ds, const std::string& dir) {
  std::filesystem::create_directories(dir);
  char name[64];
  for (int i = 0; i < ds.size(); ++i) {
    std::snprintf(name, sizeof name, "seq_%06d.seq", i);
    write_sequence_file(ds.sequences[static_cast<std::size_t>(i)],
                        (std::filesystem::path(dir) / name).string());
  }
}

SequenceDataset read_sequence_dir(const std::string& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.path().extension() == ".seq") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw std::runtime_error("no .seq files in " + dir);
  SequenceDataset ds;
  ds.domain = dir;
  for (const auto& f : files) ds.sequences.push_back(read_sequence_file(f.string()));
  return ds;
}

}  // namespace xfer
