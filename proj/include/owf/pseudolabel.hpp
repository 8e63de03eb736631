#pragma once

// Detection and forecasting pseudo-labels for previously learned classes.

#include <algorithm>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "owf/error.hpp"
#include "owf/geometry.hpp"
#include "owf/simulator.hpp"
#include "owf/types.hpp"

namespace owf {

inline constexpr double kDefaultTheta = 0.3;

enum class PseudoStrategy { kFromPredictions, kFromFutureDetections };

inline std::string to_string(PseudoStrategy s) {
  return s == PseudoStrategy::kFromPredictions ? "from_predictions" : "from_future_detections";
}

inline PseudoStrategy pseudo_strategy_from_string(const std::string& s) {
  if (s == "from_predictions") return PseudoStrategy::kFromPredictions;
  if (s == "from_future_detections") return PseudoStrategy::kFromFutureDetections;
  throw ValidationError("unknown pseudo-label strategy '" + s + "'");
}

struct PseudoLabel {
  std::string sequence_id;
  int frame = 0;
  std::string source_track_id;
  ClassId class_id = 0;
  Box3D box;
  TrajectoryLabel future;
  double confidence = 0.0;
  int loss_weight = 1;
  PseudoStrategy provenance = PseudoStrategy::kFromFutureDetections;
};

/// Highest confidence seen so far per track.
class ConfidenceHistory {
 public:
  double peak(const std::string& track_id) const {
    auto it = peak_.find(track_id);
    return it == peak_.end() ? 0.0 : it->second;
  }
  void observe(const std::vector<Detection>& detections) {
    for (const auto& d : detections) peak_[d.track_id] = std::max(peak(d.track_id), d.confidence);
  }
  const std::map<std::string, double>& peaks() const { return peak_; }

 private:
  std::map<std::string, double> peak_;
};

inline bool proposal_order(const Detection& a, const Detection& b) {
  if (a.confidence != b.confidence) return a.confidence > b.confidence;
  return a.track_id < b.track_id;
}

/// Keeps a detection when its confidence reaches `theta` or its track already
/// did in an earlier frame. Output is confidence-descending, ties by track id.
inline std::vector<Detection> threshold_proposals(const std::vector<Detection>& detections, double theta,
                                                  const ConfidenceHistory& history) {
  if (!(theta > 0.0 && theta < 1.0)) throw ValidationError("threshold must lie in (0, 1)");
  std::vector<Detection> out;
  for (const auto& d : detections)
    if (d.confidence >= theta || history.peak(d.track_id) >= theta) out.push_back(d);
  std::sort(out.begin(), out.end(), proposal_order);
  return out;
}

/// Per-frame detections of one track.
using TrackObservations = std::map<int, Box3D>;

inline const EgoPose& pose_for_frame(std::span<const EgoPose> poses, int frame) {
  if (poses.empty()) throw ValidationError("no ego poses");
  const int offset = frame - poses.front().frame_index;
  if (offset < 0 || offset >= static_cast<int>(poses.size()) || poses[offset].frame_index != frame)
    throw ValidationError("no ego pose for frame " + std::to_string(frame));
  return poses[static_cast<std::size_t>(offset)];
}

/// Future waypoints built from the track's own future detections, each
/// mapped from its frame's ego coordinates into the ego frame at `t`. Steps
/// without a detection are flagged invalid.
inline TrajectoryLabel forecast_from_future_detections(const TrackObservations& track,
                                                       std::span<const EgoPose> poses, int t,
                                                       std::size_t horizon) {
  if (!track.count(t)) throw ValidationError("track has no detection at frame " + std::to_string(t));
  const EgoPose& now = pose_for_frame(poses, t);
  TrajectoryLabel out;
  out.waypoints.reserve(horizon);
  for (int tau = 1; tau <= static_cast<int>(horizon); ++tau) {
    auto it = track.find(t + tau);
    const int last = poses.back().frame_index;
    if (it == track.end() || t + tau > last) {
      out.waypoints.push_back(Waypoint::invalid());
      continue;
    }
    const Vec3 p = relative_transform(pose_for_frame(poses, t + tau), now).apply(it->second.center());
    out.waypoints.push_back(Waypoint::at(p.x(), p.y()));
  }
  return out;
}

/// Copies the highest-scoring mode (first on ties).
inline TrajectoryLabel forecast_from_predictions(const std::vector<ForecastMode>& modes,
                                                 const std::string& track_id) {
  if (modes.empty()) throw ValidationError("no prediction for track " + track_id);
  const ForecastMode* best = &modes.front();
  for (const auto& m : modes)
    if (m.score > best->score) best = &m;
  if (best->trajectory.waypoints.empty()) throw ValidationError("empty prediction for track " + track_id);
  TrajectoryLabel out = best->trajectory;
  for (auto& w : out.waypoints) w.valid = true;
  return out;
}

enum class LabelSource { kGroundTruth, kPseudo };

struct TrainingLabel {
  LabelSource source = LabelSource::kGroundTruth;
  std::string id;  // instance id or source track id
  ClassId class_id = 0;
  Box3D box;
  TrajectoryLabel future;
  double confidence = 1.0;
  int loss_weight = 1;
  std::optional<PseudoStrategy> provenance;
};

/// Union of step ground truth, accepted and unmatched pseudo-labels. The
/// pseudo-label classes must not overlap `gt_classes` (defaults to the
/// classes present in `gt`).
inline std::vector<TrainingLabel> merge_labels(const std::vector<Annotation>& gt,
                                               const std::vector<PseudoLabel>& accepted,
                                               const std::vector<PseudoLabel>& unmatched,
                                               std::set<ClassId> gt_classes = {}) {
  if (gt_classes.empty())
    for (const auto& a : gt) gt_classes.insert(a.class_id);
  std::vector<TrainingLabel> out;
  out.reserve(gt.size() + accepted.size() + unmatched.size());
  for (const auto& a : gt) out.push_back({LabelSource::kGroundTruth, a.instance_id, a.class_id, a.box, a.future, 1.0, 1, {}});
  auto add = [&](const std::vector<PseudoLabel>& labels, int weight) {
    for (const auto& p : labels) {
      if (gt_classes.count(p.class_id))
        throw ValidationError("pseudo-label for track " + p.source_track_id + " has class " +
                              std::to_string(p.class_id) + ", which is annotated in this step");
      out.push_back({LabelSource::kPseudo, p.source_track_id, p.class_id, p.box, p.future, p.confidence, weight,
                     p.provenance});
    }
  };
  add(accepted, 1);
  add(unmatched, 0);
  return out;
}

/// Pseudo-label proposals of every frame of a sequence, using the detections
/// already stored on its samples. Returned per frame, in proposal order.
inline std::vector<std::vector<PseudoLabel>> generate_pseudo_labels(const Sequence& seq, PseudoStrategy strategy,
                                                                    double theta, std::size_t horizon, double dt) {
  std::vector<EgoPose> poses;
  std::map<std::string, TrackObservations> tracks;
  for (const auto& s : seq.samples) {
    poses.push_back(s.ego_pose);
    for (const auto& d : s.detections) tracks[d.track_id][s.frame_index] = d.box;
  }
  ConfidenceHistory history;
  std::vector<std::vector<PseudoLabel>> out;
  for (const auto& s : seq.samples) {
    std::vector<PseudoLabel> frame_labels;
    for (const auto& d : threshold_proposals(s.detections, theta, history)) {
      PseudoLabel p;
      p.sequence_id = seq.sequence_id;
      p.frame = s.frame_index;
      p.source_track_id = d.track_id;
      p.class_id = d.class_id;
      p.box = d.box;
      p.confidence = d.confidence;
      p.provenance = strategy;
      p.future = strategy == PseudoStrategy::kFromFutureDetections
                     ? forecast_from_future_detections(tracks[d.track_id], poses, s.frame_index, horizon)
                     : forecast_from_predictions(predict_modes(d, horizon, dt), d.track_id);
      frame_labels.push_back(std::move(p));
    }
    history.observe(s.detections);
    out.push_back(std::move(frame_labels));
  }
  return out;
}

}  // namespace owf
