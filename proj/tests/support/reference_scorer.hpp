#pragma once

// Brute-force reference implementation of the lane-change metrics, written
// independently of the library's scorer: it materializes the weight-filtered
// streams and enumerates runs by explicit index walking. Used to cross-check
// evaluate_lane_change.

#include <cmath>
#include <vector>

#include "xfer/data.hpp"
#include "xfer/metrics.hpp"
#include "xfer/rng.hpp"

namespace xfer::testing {

// Randomized prediction/label streams for cross-checking the scorer: valid
// labeled sequences (windows, margins, inverse-frequency weights) with extra
// zero-weight frames and noisy predictions biased to hit some windows.
struct MetricStream {
  SequenceDataset ds;
  std::vector<std::vector<int>> preds;
};

inline MetricStream random_metric_stream(Rng& rng, bool directional) {
  MetricStream out;
  const int nseq = static_cast<int>(rng.uniform_int(1, 4));
  for (int q = 0; q < nseq; ++q) {
    const int len = static_cast<int>(rng.uniform_int(80, 160));
    LabeledSequence raw;
    raw.features = 1;
    raw.frame_rate = 10.0;
    raw.frames.assign(static_cast<std::size_t>(len), 0.5);
    const int n_mv = static_cast<int>(rng.uniform_int(0, 2));
    int next_free = 36;
    for (int m = 0; m < n_mv; ++m) {
      if (next_free > len - 10) break;
      const int exec = static_cast<int>(rng.uniform_int(next_free, len - 10));
      raw.maneuvers.push_back(
          {rng.uniform(0, 1) < 0.5 ? kLabelLeft : kLabelRight, exec});
      next_free = exec + 41;
    }
    SequenceDataset tmp;
    tmp.sequences = {raw};
    LabeledSequence seq = label_and_weight(std::move(tmp), 3.0, 0.5, 1.0).sequences[0];
    for (int t = 0; t < len; t += 17) {
      if (seq.labels[static_cast<std::size_t>(t)] == kLabelFollow) {
        seq.weights[static_cast<std::size_t>(t)] = 0.0;
      }
    }
    std::vector<int> pred(static_cast<std::size_t>(len), kLabelFollow);
    for (int t = 0; t < len; ++t) {
      const double r = rng.uniform(0, 1);
      if (r < 0.25) {
        pred[static_cast<std::size_t>(t)] =
            directional ? (rng.uniform(0, 1) < 0.5 ? kLabelLeft : kLabelRight) : kLabelLeft;
      } else if (r < 0.45 && seq.labels[static_cast<std::size_t>(t)] != kLabelFollow) {
        pred[static_cast<std::size_t>(t)] = seq.labels[static_cast<std::size_t>(t)];
      }
    }
    out.ds.sequences.push_back(std::move(seq));
    out.preds.push_back(std::move(pred));
  }
  return out;
}

inline MetricsReport reference_lane_change_metrics(
    const std::vector<std::vector<int>>& predictions, const SequenceDataset& ds,
    bool directional, double horizon_s = 3.0) {
  MetricsReport rep;
  double delay_total = 0.0;

  for (std::size_t s = 0; s < ds.sequences.size(); ++s) {
    const LabeledSequence& seq = ds.sequences[s];
    const std::vector<int>& pred = predictions[s];

    std::vector<int> flabels, fpreds;
    for (int t = 0; t < seq.length(); ++t) {
      if (seq.weights[static_cast<std::size_t>(t)] > 0.0) {
        flabels.push_back(seq.labels[static_cast<std::size_t>(t)]);
        fpreds.push_back(pred[static_cast<std::size_t>(t)]);
        if (seq.labels[static_cast<std::size_t>(t)] == kLabelFollow) {
          ++rep.frames_follow;
        } else {
          ++rep.frames_change;
        }
      }
    }

    std::size_t i = 0;
    while (i < fpreds.size()) {
      if (fpreds[i] == kLabelFollow) {
        ++i;
        continue;
      }
      std::size_t j = i;
      while (j < fpreds.size() && fpreds[j] != kLabelFollow) ++j;
      bool pure_follow_region = true;
      for (std::size_t k = i; k < j; ++k) {
        if (flabels[k] != kLabelFollow) pure_follow_region = false;
      }
      if (pure_follow_region) ++rep.false_episodes;
      i = j;
    }

    const int horizon = static_cast<int>(std::lround(horizon_s * seq.frame_rate));
    for (const Maneuver& mv : seq.maneuvers) {
      ++rep.events;
      const int onset = mv.exec_frame - horizon < 0 ? 0 : mv.exec_frame - horizon;
      const int stop = mv.exec_frame < seq.length() ? mv.exec_frame : seq.length();
      int hit = -1;
      for (int t = onset; t < stop && hit < 0; ++t) {
        const int p = pred[static_cast<std::size_t>(t)];
        if (directional ? (p == mv.direction) : (p != kLabelFollow)) hit = t;
      }
      if (hit >= 0) {
        ++rep.detected;
        delay_total += (hit - onset) / seq.frame_rate;
      }
    }
  }

  rep.frequency = static_cast<double>(rep.false_episodes) / static_cast<double>(rep.events);
  rep.miss = static_cast<double>(rep.events - rep.detected) / static_cast<double>(rep.events);
  rep.delay_s = rep.detected > 0 ? delay_total / static_cast<double>(rep.detected) : 0.0;
  return rep;
}

}  // namespace xfer::testing
