#include "xfer/metrics.hpp"

#include <cmath>
#include <stdexcept>

namespace xfer {

MetricsReport evaluate_lane_change(const std::vector<std::vector<int>>& predictions,
                                   const SequenceDataset& ds, bool directional,
                                   double horizon_s) {
  if (predictions.size() != ds.sequences.size()) {
    throw std::invalid_argument("evaluate_lane_change: one prediction stream per sequence required");
  }

  MetricsReport rep;
  double delay_sum = 0.0;

  for (std::size_t s = 0; s < ds.sequences.size(); ++s) {
    const LabeledSequence& seq = ds.sequences[s];
    const std::vector<int>& pred = predictions[s];
    if (static_cast<int>(pred.size()) != seq.length()) {
      throw std::invalid_argument("evaluate_lane_change: prediction length mismatch");
    }

    // episodes over the weight-filtered stream
    bool in_episode = false;
    bool episode_all_follow = true;
    for (int t = 0; t < seq.length(); ++t) {
      if (seq.weights[static_cast<std::size_t>(t)] == 0.0) continue;
      const bool change_pred = pred[static_cast<std::size_t>(t)] != kLabelFollow;
      if (change_pred) {
        if (!in_episode) {
          in_episode = true;
          episode_all_follow = true;
        }
        episode_all_follow =
            episode_all_follow && seq.labels[static_cast<std::size_t>(t)] == kLabelFollow;
      } else if (in_episode) {
        if (episode_all_follow) ++rep.false_episodes;
        in_episode = false;
      }
      if (seq.labels[static_cast<std::size_t>(t)] == kLabelFollow) {
        ++rep.frames_follow;
      } else {
        ++rep.frames_change;
      }
    }
    if (in_episode && episode_all_follow) ++rep.false_episodes;

    // detection and delay per ground-truth lane change
    const int horizon = static_cast<int>(std::lround(horizon_s * seq.frame_rate));
    for (const Maneuver& mv : seq.maneuvers) {
      ++rep.events;
      const int onset = std::max(0, mv.exec_frame - horizon);
      int first_hit = -1;
      for (int t = onset; t < std::min(seq.length(), mv.exec_frame); ++t) {
        const int p = pred[static_cast<std::size_t>(t)];
        const bool hit = directional ? p == mv.direction : p != kLabelFollow;
        if (hit) {
          first_hit = t;
          break;
        }
      }
      if (first_hit >= 0) {
        ++rep.detected;
        delay_sum += (first_hit - onset) / seq.frame_rate;
      }
    }
  }

  if (rep.events == 0) {
    throw std::runtime_error("evaluate_lane_change: no ground-truth lane changes");
  }
  rep.frequency = static_cast<double>(rep.false_episodes) / static_cast<double>(rep.events);
  rep.miss = static_cast<double>(rep.events - rep.detected) / static_cast<double>(rep.events);
  rep.delay_s = rep.detected > 0 ? delay_sum / static_cast<double>(rep.detected) : 0.0;
  return rep;
}

double aggregate_score_weighted(double freq, double delay, double miss, double base_freq,
                                double base_delay, double base_miss, double s_follow,
                                double s_change) {
  if (base_freq == 0.0 || base_delay == 0.0 || base_miss == 0.0) {
    throw std::runtime_error("aggregate_score: baseline metric is 0");
  }
  return s_follow * (base_freq - freq) / base_freq +
         s_change * (base_delay - delay) / base_delay +
         s_change * (base_miss - miss) / base_miss;
}

double aggregate_score(const MetricsReport& report, const MetricsReport& baseline) {
  if (!report.frequency || !baseline.frequency) {
    throw std::invalid_argument("aggregate_score: sequence metrics missing");
  }
  const double total = static_cast<double>(baseline.frames_follow + baseline.frames_change);
  if (total <= 0.0) throw std::invalid_argument("aggregate_score: baseline has no frames");
  const double s_follow = static_cast<double>(baseline.frames_follow) / total;
  const double s_change = static_cast<double>(baseline.frames_change) / total;
  return aggregate_score_weighted(*report.frequency, *report.delay_s, *report.miss,
                                  *baseline.frequency, *baseline.delay_s, *baseline.miss,
                                  s_follow, s_change);
}

double evaluate_classification(const std::vector<int>& predictions,
                               const std::vector<int>& labels) {
  if (predictions.size() != labels.size()) {
    throw std::invalid_argument("evaluate_classification: length mismatch");
  }
  if (predictions.empty()) throw std::invalid_argument("evaluate_classification: empty input");
  long correct = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (predictions[i] == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(predictions.size());
}

}  // namespace xfer
