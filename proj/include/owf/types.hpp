#pragma once

// Dataset representation: sequences of samples carrying ground truth,
// detector output, instance masks and latent motion queries.

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "owf/error.hpp"
#include "owf/geometry.hpp"

namespace owf {

using ClassId = int;

struct Waypoint {
  double x = 0.0;
  double y = 0.0;
  bool valid = false;

  static Waypoint at(double x, double y) { return {x, y, true}; }
  static Waypoint invalid() { return {}; }
  Vec2 xy() const { return {x, y}; }
};

struct TrajectoryLabel {
  std::vector<Waypoint> waypoints;

  std::size_t horizon() const { return waypoints.size(); }
  std::size_t valid_count() const {
    return static_cast<std::size_t>(
        std::count_if(waypoints.begin(), waypoints.end(), [](const Waypoint& w) { return w.valid; }));
  }
};

struct ForecastMode {
  TrajectoryLabel trajectory;
  double score = 1.0;
};

struct Annotation {
  std::string instance_id;
  ClassId class_id = 0;
  Box3D box;
  TrajectoryLabel future;
};

struct Detection {
  std::string track_id;
  ClassId class_id = 0;
  Box3D box;
  double confidence = 0.0;
};

// Inclusive integer pixel rectangle.
struct PixelRect {
  int u0 = 0, v0 = 0, u1 = -1, v1 = -1;

  bool empty() const { return u1 < u0 || v1 < v0; }
  bool contains(int u, int v) const { return u >= u0 && u <= u1 && v >= v0 && v <= v1; }
  friend bool operator==(const PixelRect&, const PixelRect&) = default;
};

struct MaskBitmap {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits;  // row-major, 0/1

  bool at(int u, int v) const { return bits[static_cast<std::size_t>(v) * width + u] != 0; }
  friend bool operator==(const MaskBitmap&, const MaskBitmap&) = default;
};

struct InstanceMask {
  std::string view_id;
  ClassId class_id = 0;
  std::variant<PixelRect, MaskBitmap> region;
  PixelRect bbox2d;

  static InstanceMask from_rect(std::string view, ClassId cls, PixelRect r) {
    return {std::move(view), cls, r, r};
  }
  static InstanceMask from_bitmap(std::string view, ClassId cls, MaskBitmap bm);
};

/// Tight bounds of the set pixels; empty rect for an all-zero bitmap.
inline PixelRect bitmap_bounds(const MaskBitmap& bm) {
  PixelRect r{bm.width, bm.height, -1, -1};
  for (int v = 0; v < bm.height; ++v)
    for (int u = 0; u < bm.width; ++u)
      if (bm.at(u, v)) {
        r.u0 = std::min(r.u0, u);
        r.v0 = std::min(r.v0, v);
        r.u1 = std::max(r.u1, u);
        r.v1 = std::max(r.v1, v);
      }
  if (r.u1 < 0) return PixelRect{};
  return r;
}

inline InstanceMask InstanceMask::from_bitmap(std::string view, ClassId cls, MaskBitmap bm) {
  const PixelRect b = bitmap_bounds(bm);
  return {std::move(view), cls, std::move(bm), b};
}

struct QueryOwner {
  std::string sequence_id;
  int frame = 0;
  std::string track_id;
  friend bool operator==(const QueryOwner&, const QueryOwner&) = default;
};

struct MotionQuery {
  std::vector<double> vector;
  QueryOwner owner;
  ClassId class_id = 0;
};

/// Identifies a sample across a dataset.
struct SampleKey {
  std::string sequence_id;
  int frame = 0;
  friend auto operator<=>(const SampleKey&, const SampleKey&) = default;
};

struct Sample {
  int frame_index = 0;
  EgoPose ego_pose;
  std::vector<CameraModel> cameras;
  std::vector<Annotation> annotations;
  std::vector<Detection> detections;
  std::vector<InstanceMask> masks;
  std::vector<MotionQuery> queries;

  const CameraModel* camera(const std::string& view_id) const {
    for (const auto& c : cameras)
      if (c.view_id == view_id) return &c;
    return nullptr;
  }
};

struct Sequence {
  std::string sequence_id;
  std::vector<Sample> samples;

  std::set<ClassId> classes_present() const {
    std::set<ClassId> out;
    for (const auto& s : samples)
      for (const auto& a : s.annotations) out.insert(a.class_id);
    return out;
  }
};

enum class SplitScheme { kPerClass, kGroup, kOverlapping };

inline std::string to_string(SplitScheme s) {
  switch (s) {
    case SplitScheme::kPerClass: return "per_class";
    case SplitScheme::kGroup: return "group";
    case SplitScheme::kOverlapping: return "overlapping";
  }
  return "?";
}

inline SplitScheme split_scheme_from_string(const std::string& s) {
  if (s == "per_class") return SplitScheme::kPerClass;
  if (s == "group") return SplitScheme::kGroup;
  if (s == "overlapping") return SplitScheme::kOverlapping;
  throw ValidationError("unknown split scheme '" + s + "'");
}

struct SplitStep {
  std::vector<ClassId> classes;
  std::vector<std::string> sequence_ids;
};

struct IncrementalSplit {
  SplitScheme scheme = SplitScheme::kPerClass;
  std::vector<SplitStep> steps;

  /// Union of the class sets of steps [0, step).
  std::set<ClassId> learned_before(std::size_t step) const {
    std::set<ClassId> out;
    for (std::size_t i = 0; i < step && i < steps.size(); ++i)
      out.insert(steps[i].classes.begin(), steps[i].classes.end());
    return out;
  }
};

/// Class names for reports. Defaults to the seven movable nuScenes classes in
/// label-count order.
struct Taxonomy {
  std::map<ClassId, std::string> names;

  static Taxonomy nuscenes_movable() {
    return {{{0, "car"}, {1, "pedestrian"}, {2, "truck"}, {3, "trailer"},
             {4, "motorcycle"}, {5, "bicycle"}, {6, "bus"}}};
  }
  std::string name(ClassId c) const {
    auto it = names.find(c);
    return it == names.end() ? std::to_string(c) : it->second;
  }
  bool contains(ClassId c) const { return names.count(c) != 0; }
  ClassId id_of(const std::string& name) const {
    for (const auto& [id, n] : names)
      if (n == name) return id;
    throw ValidationError("unknown class name '" + name + "'");
  }
};

// Validation of the type invariants. Each throws ValidationError naming the
// offending record.

inline void validate(const Detection& d) {
  if (!(d.confidence >= 0.0 && d.confidence <= 1.0))
    throw ValidationError("detection " + d.track_id + ": confidence " + std::to_string(d.confidence) +
                          " outside [0, 1]");
  d.box.validate();
}

inline void validate(const InstanceMask& m, const CameraModel* cam) {
  if (const auto* bm = std::get_if<MaskBitmap>(&m.region)) {
    if (static_cast<std::size_t>(bm->width) * bm->height != bm->bits.size())
      throw ValidationError("mask in view " + m.view_id + ": bitmap size mismatch");
    if (cam && (bm->width != cam->width || bm->height != cam->height))
      throw ValidationError("mask in view " + m.view_id + ": bitmap not image-sized");
    const PixelRect b = bitmap_bounds(*bm);
    if (!b.empty() && !(m.bbox2d.u0 <= b.u0 && m.bbox2d.v0 <= b.v0 && m.bbox2d.u1 >= b.u1 &&
                        m.bbox2d.v1 >= b.v1))
      throw ValidationError("mask in view " + m.view_id + ": bbox2d does not contain the region");
  } else {
    const auto& r = std::get<PixelRect>(m.region);
    if (r.empty()) throw ValidationError("mask in view " + m.view_id + ": empty box region");
    if (cam && (r.u0 < 0 || r.v0 < 0 || r.u1 >= cam->width || r.v1 >= cam->height))
      throw ValidationError("mask in view " + m.view_id + ": region outside image bounds");
    if (!(m.bbox2d.u0 <= r.u0 && m.bbox2d.v0 <= r.v0 && m.bbox2d.u1 >= r.u1 && m.bbox2d.v1 >= r.v1))
      throw ValidationError("mask in view " + m.view_id + ": bbox2d does not contain the region");
  }
  if (cam == nullptr) throw ValidationError("mask references unknown view " + m.view_id);
}

inline void validate(const Sample& s, std::size_t horizon = 0) {
  if (s.frame_index < 0) throw ValidationError("negative frame index");
  if (!s.ego_pose.world_from_ego.is_valid()) throw ValidationError("ego pose rotation not orthonormal");
  std::set<std::string> views;
  for (const auto& c : s.cameras) {
    c.validate();
    if (!views.insert(c.view_id).second) throw ValidationError("duplicate camera view_id " + c.view_id);
  }
  std::set<std::string> ids;
  for (const auto& a : s.annotations) {
    a.box.validate();
    if (!ids.insert(a.instance_id).second)
      throw ValidationError("duplicate instance_id " + a.instance_id + " in frame " +
                            std::to_string(s.frame_index));
    if (horizon != 0 && a.future.horizon() != horizon)
      throw ValidationError("annotation " + a.instance_id + ": future length " +
                            std::to_string(a.future.horizon()) + " != horizon " + std::to_string(horizon));
  }
  for (const auto& d : s.detections) validate(d);
  for (const auto& m : s.masks) validate(m, s.camera(m.view_id));
  if (!s.queries.empty()) {
    const std::size_t dim = s.queries.front().vector.size();
    for (const auto& q : s.queries)
      if (q.vector.size() != dim) throw ValidationError("motion queries of differing dimension");
  }
}

inline void validate(const Sequence& seq, std::size_t horizon = 0) {
  for (std::size_t i = 0; i < seq.samples.size(); ++i) {
    const auto& s = seq.samples[i];
    if (i > 0 && s.frame_index != seq.samples[i - 1].frame_index + 1)
      throw ValidationError("sequence " + seq.sequence_id + ": frame indices not consecutive");
    if (s.ego_pose.frame_index != s.frame_index)
      throw ValidationError("sequence " + seq.sequence_id + ": ego pose frame mismatch");
    try {
      validate(s, horizon);
    } catch (const ParseError&) {
      throw;
    } catch (const ValidationError& e) {
      throw ValidationError("sequence " + seq.sequence_id + ", frame " + std::to_string(s.frame_index) +
                            ": " + e.what());
    }
  }
}

}  // namespace owf
