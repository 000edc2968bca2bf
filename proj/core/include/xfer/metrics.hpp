#pragma once

#include <optional>
#include <vector>

#include "xfer/data.hpp"

namespace xfer {

struct MetricsReport {
  std::optional<double> frequency;  // false-positive episodes per ground-truth event
  std::optional<double> delay_s;    // mean prediction delay, detected changes only
  std::optional<double> miss;       // fraction of lane changes never predicted
  std::optional<double> accuracy;   // classification tasks

  // counts backing the metrics and the score weighting
  long events = 0;          // ground-truth lane changes
  long detected = 0;
  long false_episodes = 0;
  long frames_follow = 0;   // nonzero-weight follow frames
  long frames_change = 0;   // nonzero-weight maneuver frames
};

// Scores per-frame predictions against a labeled sequence dataset.
//
// Only frames with nonzero weight take part. Within each sequence, a
// maximal run of consecutive non-follow predictions over those frames is an
// episode; an episode whose frames are all labeled follow counts as one
// false positive. Frequency = false positives / ground-truth lane changes
// (throws when there are no lane changes). A change is detected when the
// correct direction is predicted inside its label window; Delay is the mean
// over detected changes of the seconds from window onset to the first such
// frame, and Miss the fraction never detected. With directional=false (the
// one-feature task, where models only predict follow/change) any non-follow
// prediction counts as the correct direction.
MetricsReport evaluate_lane_change(const std::vector<std::vector<int>>& predictions,
                                   const SequenceDataset& ds, bool directional = true,
                                   double horizon_s = 3.0);

// Weighted sum of relative improvements over a baseline measured on the same
// test set: follow-frame share weighs Frequency, maneuver-frame share weighs
// Delay and Miss. Positive means better than the baseline. Throws when a
// baseline metric is 0.
double aggregate_score(const MetricsReport& report, const MetricsReport& baseline);

// Raw arithmetic with explicit weights (s_follow for Frequency, s_change for
// Delay and Miss).
double aggregate_score_weighted(double freq, double delay, double miss, double base_freq,
                                double base_delay, double base_miss, double s_follow,
                                double s_change);

// Fraction of matching entries; throws on empty input.
double evaluate_classification(const std::vector<int>& predictions,
                               const std::vector<int>& labels);

}  // namespace xfer
