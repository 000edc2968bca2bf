#include "xfer/correspondence.hpp"

#include <algorithm>
#include <cstdlib>
#include <map>
#include <stdexcept>

#include "xfer/rng.hpp"

namespace xfer {

namespace {

// n draws without replacement via partial Fisher-Yates; falls back to
// with-replacement when the pool is smaller than n.
std::vector<int> draw_partners(const std::vector<int>& pool, int n, Rng& rng) {
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(n));
  if (static_cast<int>(pool.size()) >= n) {
    std::vector<int> copy = pool;
    for (int k = 0; k < n; ++k) {
      const auto j = static_cast<std::size_t>(
          rng.uniform_int(k, static_cast<std::int64_t>(copy.size()) - 1));
      std::swap(copy[static_cast<std::size_t>(k)], copy[j]);
      out.push_back(copy[static_cast<std::size_t>(k)]);
    }
  } else {
    for (int k = 0; k < n; ++k) {
      out.push_back(pool[static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<std::int64_t>(pool.size()) - 1))]);
    }
  }
  return out;
}

bool has_lane_change(const LabeledSequence& s) { return !s.maneuvers.empty(); }

// pairing key: first maneuver decides direction and execution frame
const Maneuver& primary_maneuver(const LabeledSequence& s) { return s.maneuvers.front(); }

}  // namespace

CorrespondenceSet pair_by_label(const ImageDataset& target, const ImageDataset& source, int n,
                                std::uint64_t seed) {
  if (n <= 0) throw std::invalid_argument("pair_by_label: n must be positive");
  std::map<int, std::vector<int>> by_label;
  for (int i = 0; i < source.size(); ++i) by_label[source.labels[static_cast<std::size_t>(i)]].push_back(i);

  Rng rng(derive_seed(seed, "pair-by-label"));
  CorrespondenceSet set;
  set.n = n;
  set.entries.reserve(static_cast<std::size_t>(target.size()));
  for (int i = 0; i < target.size(); ++i) {
    const int label = target.labels[static_cast<std::size_t>(i)];
    const auto it = by_label.find(label);
    if (it == by_label.end() || it->second.empty()) {
      throw std::runtime_error("pair_by_label: label " + std::to_string(label) +
                               " missing from source domain");
    }
    set.entries.push_back({i, draw_partners(it->second, n, rng)});
  }
  return set;
}

CorrespondenceSet pair_sequences(const SequenceDataset& target, const SequenceDataset& source,
                                 int n, std::uint64_t seed) {
  if (n <= 0) throw std::invalid_argument("pair_sequences: n must be positive");
  std::vector<int> follow_pool;
  std::map<int, std::vector<int>> change_pool;  // direction -> indices
  for (int i = 0; i < source.size(); ++i) {
    const LabeledSequence& s = source.sequences[static_cast<std::size_t>(i)];
    if (has_lane_change(s)) {
      change_pool[primary_maneuver(s).direction].push_back(i);
    } else {
      follow_pool.push_back(i);
    }
  }

  Rng rng(derive_seed(seed, "pair-sequences"));
  CorrespondenceSet set;
  set.n = n;
  set.entries.reserve(static_cast<std::size_t>(target.size()));
  for (int i = 0; i < target.size(); ++i) {
    const LabeledSequence& t = target.sequences[static_cast<std::size_t>(i)];
    if (!has_lane_change(t)) {
      if (follow_pool.empty()) {
        throw std::runtime_error("pair_sequences: no follow-only source sequences");
      }
      set.entries.push_back({i, draw_partners(follow_pool, n, rng)});
      continue;
    }
    const Maneuver& mv = primary_maneuver(t);
    const auto it = change_pool.find(mv.direction);
    if (it == change_pool.end() || it->second.empty()) {
      throw std::runtime_error("pair_sequences: no source lane change with matching direction");
    }
    // rank by |exec - exec'|, ties by dataset index
    std::vector<int> ranked = it->second;
    std::stable_sort(ranked.begin(), ranked.end(), [&](int a, int b) {
      const int da = std::abs(primary_maneuver(source.sequences[static_cast<std::size_t>(a)]).exec_frame -
                              mv.exec_frame);
      const int db = std::abs(primary_maneuver(source.sequences[static_cast<std::size_t>(b)]).exec_frame -
                              mv.exec_frame);
      if (da != db) return da < db;
      return a < b;
    });
    std::vector<int> partners;
    partners.reserve(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) {
      partners.push_back(ranked[static_cast<std::size_t>(k) % ranked.size()]);
    }
    set.entries.push_back({i, std::move(partners)});
  }
  return set;
}

TensorPtr correspondence_loss(const TensorPtr& converted, const std::vector<TensorPtr>& partners,
                              bool squared) {
  if (partners.empty()) throw std::invalid_argument("correspondence_loss: n = 0");
  std::vector<TensorPtr> dists;
  dists.reserve(partners.size());
  for (const auto& p : partners) {
    dists.push_back(squared ? squared_l2_distance(converted, p) : l2_distance(converted, p));
  }
  return scale(sum_scalars(dists), 1.0 / static_cast<double>(partners.size()));
}

AlignedPartner align_partner(const LabeledSequence& target, const LabeledSequence& partner) {
  const int len = target.length();
  const int f = target.features;
  if (partner.features != f) {
    throw std::invalid_argument("align_partner: feature dimensionality differs");
  }
  // shift so execution frames coincide; follow-only pairs align at frame 0
  int shift = 0;
  if (!target.maneuvers.empty() && !partner.maneuvers.empty()) {
    shift = partner.maneuvers.front().exec_frame - target.maneuvers.front().exec_frame;
  }
  AlignedPartner out;
  out.frames.assign(static_cast<std::size_t>(len) * f, 0.0);
  out.valid.assign(static_cast<std::size_t>(len), false);
  for (int t = 0; t < len; ++t) {
    const int src = t + shift;
    if (src < 0 || src >= partner.length()) continue;
    out.valid[static_cast<std::size_t>(t)] = true;
    for (int k = 0; k < f; ++k) {
      out.frames[static_cast<std::size_t>(t) * f + k] = partner.frame(src, k);
    }
  }
  return out;
}

TensorPtr sequence_correspondence_loss(const TensorPtr& converted_h,
                                       const LabeledSequence& target,
                                       const std::vector<const LabeledSequence*>& partners,
                                       bool squared) {
  if (partners.empty()) throw std::invalid_argument("sequence_correspondence_loss: n = 0");
  const int len = target.length();
  const int f = target.features;
  if (converted_h->shape != std::vector<int>{len, f + 1}) {
    throw std::invalid_argument("sequence_correspondence_loss: converted shape mismatch");
  }
  std::vector<AlignedPartner> aligned;
  aligned.reserve(partners.size());
  for (const auto* p : partners) aligned.push_back(align_partner(target, *p));

  const double inv_n = 1.0 / static_cast<double>(partners.size());
  std::vector<TensorPtr> terms;
  for (int t = 0; t < len; ++t) {
    const TensorPtr out_t = row(converted_h, t);
    for (const AlignedPartner& ap : aligned) {
      if (!ap.valid[static_cast<std::size_t>(t)]) continue;  // padding carries no loss
      std::vector<double> ph(static_cast<std::size_t>(f) + 1, 1.0);
      for (int k = 0; k < f; ++k) ph[static_cast<std::size_t>(k)] = ap.frames[static_cast<std::size_t>(t) * f + k];
      const TensorPtr partner_h = Tensor::make({f + 1}, std::move(ph));
      terms.push_back(squared ? squared_l2_distance(out_t, partner_h)
                              : l2_distance(out_t, partner_h));
    }
  }
  if (terms.empty()) return Tensor::scalar(0.0);
  return scale(sum_scalars(terms), inv_n);
}

}  // namespace xfer
