#pragma once

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "owf/owf.hpp"

namespace owf::testing {

inline SE3Transform random_transform(std::mt19937_64& rng, double max_t = 50.0) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(-max_t, max_t);
  return SE3Transform::from_quaternion({n(rng), n(rng), n(rng), n(rng)}, Vec3(u(rng), u(rng), u(rng)));
}

inline Box3D make_box(double x, double y, double yaw = 0.0, double l = 4.0, double w = 2.0, double h = 1.5) {
  Box3D b;
  b.x = x;
  b.y = y;
  b.z = h / 2;
  b.l = l;
  b.w = w;
  b.h = h;
  b.yaw = yaw;
  return b;
}

/// Camera looking along ego +x, mounted at the ego origin.
inline CameraModel forward_camera(const std::string& id = "CAM_F", int width = 1600, int height = 900, double f = 800) {
  CameraRigSpec spec;
  spec.n_views = 1;
  spec.width = width;
  spec.height = height;
  spec.mount_height = 0.0;
  spec.hfov_deg = 2.0 * std::atan(width / 2.0 / f) * 180.0 / std::numbers::pi;
  CameraModel c = make_camera_rig(spec).front();
  c.view_id = id;
  return c;
}

inline TrajectoryLabel line_trajectory(double x0, double y0, double dx, double dy, std::size_t n) {
  TrajectoryLabel t;
  for (std::size_t k = 1; k <= n; ++k) t.waypoints.push_back(Waypoint::at(x0 + dx * k, y0 + dy * k));
  return t;
}

inline bool near(double a, double b, double tol) { return std::abs(a - b) <= tol; }

inline bool same_box(const Box3D& a, const Box3D& b, double tol) {
  return near(a.x, b.x, tol) && near(a.y, b.y, tol) && near(a.z, b.z, tol) && near(a.w, b.w, tol) &&
         near(a.l, b.l, tol) && near(a.h, b.h, tol) && near(a.yaw, b.yaw, tol) && near(a.vx, b.vx, tol) &&
         near(a.vy, b.vy, tol) && near(a.vz, b.vz, tol);
}

inline bool same_trajectory(const TrajectoryLabel& a, const TrajectoryLabel& b, double tol) {
  if (a.horizon() != b.horizon()) return false;
  for (std::size_t k = 0; k < a.horizon(); ++k) {
    const auto &p = a.waypoints[k], &q = b.waypoints[k];
    if (p.valid != q.valid) return false;
    if (p.valid && !(near(p.x, q.x, tol) && near(p.y, q.y, tol))) return false;
  }
  return true;
}

inline bool same_region(const InstanceMask& a, const InstanceMask& b) {
  if (a.region.index() != b.region.index()) return false;
  if (const auto* ra = std::get_if<PixelRect>(&a.region)) {
    const auto& rb = std::get<PixelRect>(b.region);
    return ra->u0 == rb.u0 && ra->v0 == rb.v0 && ra->u1 == rb.u1 && ra->v1 == rb.v1;
  }
  const auto& ba = std::get<MaskBitmap>(a.region);
  const auto& bb = std::get<MaskBitmap>(b.region);
  return ba.width == bb.width && ba.height == bb.height && ba.bits == bb.bits;
}

/// Structural equality with a relative float tolerance that covers the
/// nine-significant-digit file format.
inline bool same_sequence(const Sequence& a, const Sequence& b, double tol = 1e-6) {
  if (a.sequence_id != b.sequence_id || a.samples.size() != b.samples.size()) return false;
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    const Sample &s = a.samples[i], &t = b.samples[i];
    if (s.frame_index != t.frame_index) return false;
    if (!s.ego_pose.world_from_ego.approx_equal(t.ego_pose.world_from_ego, tol)) return false;
    if (s.cameras.size() != t.cameras.size() || s.annotations.size() != t.annotations.size() ||
        s.detections.size() != t.detections.size() || s.masks.size() != t.masks.size() ||
        s.queries.size() != t.queries.size())
      return false;
    for (std::size_t k = 0; k < s.cameras.size(); ++k) {
      const auto &c = s.cameras[k], &d = t.cameras[k];
      if (c.view_id != d.view_id || c.width != d.width || c.height != d.height ||
          !c.camera_from_ego.approx_equal(d.camera_from_ego, tol) || !near(c.fx, d.fx, tol * c.fx) ||
          !near(c.cx, d.cx, tol * c.cx))
        return false;
    }
    for (std::size_t k = 0; k < s.annotations.size(); ++k) {
      const auto &x = s.annotations[k], &y = t.annotations[k];
      if (x.instance_id != y.instance_id || x.class_id != y.class_id || !same_box(x.box, y.box, tol) ||
          !same_trajectory(x.future, y.future, tol))
        return false;
    }
    for (std::size_t k = 0; k < s.detections.size(); ++k) {
      const auto &x = s.detections[k], &y = t.detections[k];
      if (x.track_id != y.track_id || x.class_id != y.class_id || !same_box(x.box, y.box, tol) ||
          !near(x.confidence, y.confidence, tol))
        return false;
    }
    for (std::size_t k = 0; k < s.masks.size(); ++k) {
      const auto &x = s.masks[k], &y = t.masks[k];
      if (x.view_id != y.view_id || x.class_id != y.class_id || !same_region(x, y)) return false;
    }
    for (std::size_t k = 0; k < s.queries.size(); ++k) {
      const auto &x = s.queries[k], &y = t.queries[k];
      if (x.class_id != y.class_id || x.owner.track_id != y.owner.track_id || x.owner.frame != y.owner.frame ||
          x.vector.size() != y.vector.size())
        return false;
      for (std::size_t d = 0; d < x.vector.size(); ++d)
        if (!near(x.vector[d], y.vector[d], tol * std::max(1.0, std::abs(x.vector[d])))) return false;
    }
  }
  return true;
}

/// A fresh, empty scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("owf_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline WorldConfig small_world(std::size_t n_sequences = 6, std::size_t frames = 12) {
  WorldConfig w;
  w.n_sequences = n_sequences;
  w.frames_per_sequence = frames;
  w.classes = {default_class_specs()[0], default_class_specs()[1], default_class_specs()[2]};
  return w;
}

}  // namespace owf::testing
