#pragma once

// Greedy confidence-ordered center matching shared by the label-quality and
// detection-style metrics.

#include <algorithm>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "owf/types.hpp"

namespace owf {

inline constexpr double kDefaultMatchDist = 2.0;

struct CenterItem {
  SampleKey key;
  ClassId class_id = 0;
  Vec2 xy = Vec2::Zero();
  double confidence = 1.0;
  std::string tie_break;  // secondary sort key for equal confidences
};

/// Items processed in descending confidence (ties by `tie_break`, then input
/// index); each claims the nearest unclaimed same-class ground truth of the
/// same sample strictly within `match_dist`. Returns the claimed ground-truth
/// index per item.
inline std::vector<std::optional<std::size_t>> greedy_match(const std::vector<CenterItem>& items,
                                                            const std::vector<CenterItem>& gt, double match_dist) {
  std::map<SampleKey, std::vector<std::size_t>> gt_by_key;
  for (std::size_t g = 0; g < gt.size(); ++g) gt_by_key[gt[g].key].push_back(g);

  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (items[a].confidence != items[b].confidence) return items[a].confidence > items[b].confidence;
    return items[a].tie_break < items[b].tie_break;
  });

  std::vector<bool> claimed(gt.size(), false);
  std::vector<std::optional<std::size_t>> out(items.size());
  for (std::size_t i : order) {
    auto it = gt_by_key.find(items[i].key);
    if (it == gt_by_key.end()) continue;
    double best = std::numeric_limits<double>::infinity();
    std::optional<std::size_t> best_g;
    for (std::size_t g : it->second) {
      if (claimed[g] || gt[g].class_id != items[i].class_id) continue;
      const double d = (gt[g].xy - items[i].xy).norm();
      if (d < match_dist && d < best) {
        best = d;
        best_g = g;
      }
    }
    if (best_g) {
      claimed[*best_g] = true;
      out[i] = best_g;
    }
  }
  return out;
}

}  // namespace owf
