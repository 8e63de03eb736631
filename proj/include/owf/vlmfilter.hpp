#pragma once

// False-positive filter for pseudo-label proposals using 2D instance masks.
//
// A proposal survives when a strict majority of its projected box keypoints
// falls inside one not-yet-used mask of its class in at least one view.
// Proposals are visited in descending confidence and every mask they match
// is used up, so a mask can confirm at most one object.

#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "owf/geometry.hpp"
#include "owf/matching.hpp"
#include "owf/pseudolabel.hpp"
#include "owf/types.hpp"

namespace owf {

inline bool point_in_mask(const InstanceMask& mask, const Pixel& px) {
  if (!std::isfinite(px.u) || !std::isfinite(px.v)) return false;
  const double fu = std::floor(px.u), fv = std::floor(px.v);
  // Guard the int conversion; such pixels are far outside any image.
  if (std::abs(fu) > 1e9 || std::abs(fv) > 1e9) return false;
  const int u = static_cast<int>(fu), v = static_cast<int>(fv);
  if (const auto* bm = std::get_if<MaskBitmap>(&mask.region)) {
    if (u < 0 || v < 0 || u >= bm->width || v >= bm->height) return false;
    return bm->at(u, v);
  }
  if (u < 0 || v < 0) return false;
  return std::get<PixelRect>(mask.region).contains(u, v);
}

/// Masks of one sample with a consumed flag each. Index order is creation
/// order and breaks ties between equally good matches.
class MaskPool {
 public:
  MaskPool() = default;
  explicit MaskPool(std::vector<InstanceMask> masks) : masks_(std::move(masks)), consumed_(masks_.size(), false) {}

  std::size_t size() const { return masks_.size(); }
  const InstanceMask& mask(std::size_t i) const { return masks_[i]; }
  bool consumed(std::size_t i) const { return consumed_[i]; }
  void consume(std::size_t i) { consumed_[i] = true; }
  std::size_t remaining() const { return static_cast<std::size_t>(std::count(consumed_.begin(), consumed_.end(), false)); }

 private:
  std::vector<InstanceMask> masks_;
  std::vector<bool> consumed_;
};

struct FilterResult {
  std::vector<PseudoLabel> accepted;
  std::vector<PseudoLabel> unmatched;
};

struct MaskMatch {
  std::size_t mask_index = 0;
  int inside = 0;
};

/// Best unconsumed same-class mask in `view` that holds a strict majority of
/// the projected keypoints; most points inside wins, then lowest index.
inline std::optional<MaskMatch> best_mask_in_view(const MaskPool& pool, const CameraModel& cam, ClassId cls,
                                                  const std::vector<Vec3>& keypoints) {
  std::vector<std::optional<Pixel>> pixels;
  pixels.reserve(keypoints.size());
  for (const auto& k : keypoints) pixels.push_back(project(cam, k));
  const int n = static_cast<int>(keypoints.size());
  std::optional<MaskMatch> best;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const auto& m = pool.mask(i);
    if (pool.consumed(i) || m.view_id != cam.view_id || m.class_id != cls) continue;
    int inside = 0;
    for (const auto& px : pixels)
      if (px && point_in_mask(m, *px)) ++inside;
    if (2 * inside <= n) continue;
    if (!best || inside > best->inside) best = MaskMatch{i, inside};
  }
  return best;
}

/// Splits proposals (confidence-descending) into accepted and unmatched,
/// consuming matched masks from `pool`. Accepted labels get loss weight 1,
/// unmatched ones 0.
inline FilterResult filter_proposals(const std::vector<PseudoLabel>& proposals, MaskPool& pool,
                                     const std::vector<CameraModel>& cameras,
                                     KeypointScheme scheme = KeypointScheme::kCenterCornersSides13) {
  for (std::size_t i = 1; i < proposals.size(); ++i)
    if (proposals[i].confidence > proposals[i - 1].confidence)
      throw ValidationError("proposals must be sorted by descending confidence");

  FilterResult out;
  for (const auto& p : proposals) {
    const auto keypoints = box_keypoints(p.box, scheme);
    std::vector<std::optional<MaskMatch>> per_view;
    per_view.reserve(cameras.size());
    std::optional<std::size_t> best_view;
    for (std::size_t v = 0; v < cameras.size(); ++v) {
      per_view.push_back(best_mask_in_view(pool, cameras[v], p.class_id, keypoints));
      const auto& m = per_view.back();
      if (!m) continue;
      if (!best_view) {
        best_view = v;
        continue;
      }
      const auto& b = *per_view[*best_view];
      if (m->inside > b.inside || (m->inside == b.inside && m->mask_index < b.mask_index)) best_view = v;
    }
    PseudoLabel label = p;
    if (!best_view) {
      label.loss_weight = 0;
      out.unmatched.push_back(std::move(label));
      continue;
    }
    // The object counts as perceived in every view that passes the test.
    for (const auto& m : per_view)
      if (m) pool.consume(m->mask_index);
    label.loss_weight = 1;
    out.accepted.push_back(std::move(label));
  }
  return out;
}

struct FilterMetrics {
  double precision = 1.0;
  double recall = 0.0;
  std::size_t tp_accepted = 0;
  std::size_t fp_accepted = 0;
  std::size_t fp_removed = 0;
  std::size_t tp_removed = 0;
  std::size_t accepted = 0;
  std::size_t proposals = 0;
};

inline CenterItem center_item(const PseudoLabel& p) {
  return {{p.sequence_id, p.frame}, p.class_id, Vec2(p.box.x, p.box.y), p.confidence, p.source_track_id};
}

inline CenterItem center_item(const SampleKey& key, const Annotation& a) {
  return {key, a.class_id, Vec2(a.box.x, a.box.y), 1.0, a.instance_id};
}

/// Flags each label as true positive by greedy center matching against
/// `gt` (one ground truth per label).
inline std::vector<bool> true_positive_flags(const std::vector<PseudoLabel>& labels, const std::vector<CenterItem>& gt,
                                             double match_dist) {
  std::vector<CenterItem> items;
  items.reserve(labels.size());
  for (const auto& l : labels) items.push_back(center_item(l));
  const auto m = greedy_match(items, gt, match_dist);
  std::vector<bool> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) out[i] = m[i].has_value();
  return out;
}

/// Precision over the accepted set and recall over the true-positive
/// proposals. An empty accepted set reports precision 1.
inline FilterMetrics filter_metrics(const std::vector<PseudoLabel>& accepted, const std::vector<PseudoLabel>& unmatched,
                                    const std::vector<CenterItem>& gt, double match_dist = kDefaultMatchDist) {
  std::vector<PseudoLabel> all = accepted;
  all.insert(all.end(), unmatched.begin(), unmatched.end());
  const auto tp = true_positive_flags(all, gt, match_dist);
  FilterMetrics m;
  m.accepted = accepted.size();
  m.proposals = all.size();
  for (std::size_t i = 0; i < all.size(); ++i) {
    const bool is_accepted = i < accepted.size();
    if (is_accepted) (tp[i] ? m.tp_accepted : m.fp_accepted)++;
    else (tp[i] ? m.tp_removed : m.fp_removed)++;
  }
  if (m.accepted > 0) m.precision = static_cast<double>(m.tp_accepted) / static_cast<double>(m.accepted);
  const std::size_t tp_total = m.tp_accepted + m.tp_removed;
  m.recall = tp_total == 0 ? 0.0 : static_cast<double>(m.tp_accepted) / static_cast<double>(tp_total);
  return m;
}

}  // namespace owf
