#pragma once

// Rigid transforms, ego poses, pinhole cameras and 3D boxes.
//
// Frames follow the usual driving-stack conventions: ego frame x forward,
// y left, z up with the origin on the ground; camera frame z along the
// optical axis, x right, y down.

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "owf/error.hpp"

namespace owf {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr double kOrthonormalTol = 1e-9;
inline constexpr double kMinProjectionDepth = 1e-6;

/// Wraps an angle into (-pi, pi].
inline double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  a = std::fmod(a, two_pi);
  if (a <= -std::numbers::pi) a += two_pi;
  if (a > std::numbers::pi) a -= two_pi;
  return a;
}

inline Mat3 rot_z(double angle) {
  return Eigen::AngleAxisd(angle, Vec3::UnitZ()).toRotationMatrix();
}

class SE3Transform {
 public:
  SE3Transform() : rotation_(Mat3::Identity()), translation_(Vec3::Zero()) {}
  SE3Transform(const Mat3& rotation, const Vec3& translation)
      : rotation_(rotation), translation_(translation) {}

  static SE3Transform identity() { return {}; }
  static SE3Transform from_yaw(double yaw, const Vec3& translation = Vec3::Zero()) {
    return {rot_z(yaw), translation};
  }
  // Quaternion in (w, x, y, z) order; normalized before conversion.
  static SE3Transform from_quaternion(const std::array<double, 4>& wxyz, const Vec3& translation) {
    Eigen::Quaterniond q(wxyz[0], wxyz[1], wxyz[2], wxyz[3]);
    if (!(q.norm() > 1e-12)) throw ValidationError("quaternion has zero norm");
    q.normalize();
    return {q.toRotationMatrix(), translation};
  }

  const Mat3& rotation() const { return rotation_; }
  const Vec3& translation() const { return translation_; }

  std::array<double, 4> quaternion() const {
    Eigen::Quaterniond q(rotation_);
    q.normalize();
    // Canonical sign: w >= 0 so that serialization is stable.
    if (q.w() < 0) q.coeffs() *= -1.0;
    return {q.w(), q.x(), q.y(), q.z()};
  }

  Vec3 apply(const Vec3& p) const { return rotation_ * p + translation_; }

  bool is_valid(double tol = kOrthonormalTol) const {
    const Mat3 gram = rotation_.transpose() * rotation_;
    if ((gram - Mat3::Identity()).cwiseAbs().maxCoeff() > tol) return false;
    if (std::abs(rotation_.determinant() - 1.0) > tol) return false;
    return translation_.allFinite();
  }

  bool approx_equal(const SE3Transform& o, double tol) const {
    return (rotation_ - o.rotation_).cwiseAbs().maxCoeff() <= tol &&
           (translation_ - o.translation_).cwiseAbs().maxCoeff() <= tol;
  }

 private:
  Mat3 rotation_;
  Vec3 translation_;
};

/// Applies b first, then a.
inline SE3Transform compose(const SE3Transform& a, const SE3Transform& b) {
  return {a.rotation() * b.rotation(), a.rotation() * b.translation() + a.translation()};
}

inline SE3Transform invert(const SE3Transform& t) {
  const Mat3 rt = t.rotation().transpose();
  return {rt, -rt * t.translation()};
}

inline Vec3 transform_point(const SE3Transform& t, const Vec3& p) { return t.apply(p); }

struct EgoPose {
  int frame_index = 0;
  SE3Transform world_from_ego;
};

/// Maps coordinates expressed in the ego frame at `pose_at_tau` into the ego
/// frame at `pose_at_t`.
inline SE3Transform relative_transform(const EgoPose& pose_at_tau, const EgoPose& pose_at_t) {
  return compose(invert(pose_at_t.world_from_ego), pose_at_tau.world_from_ego);
}

struct Pixel {
  double u = 0.0;
  double v = 0.0;
};

struct CameraModel {
  std::string view_id;
  SE3Transform camera_from_ego;
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.5;
  double cy = 0.5;
  int width = 1;
  int height = 1;

  void validate() const {
    if (!(fx > 0 && fy > 0)) throw ValidationError("camera " + view_id + ": focal lengths must be positive");
    if (!(cx > 0 && cx < width)) throw ValidationError("camera " + view_id + ": cx outside (0, width)");
    if (!(cy > 0 && cy < height)) throw ValidationError("camera " + view_id + ": cy outside (0, height)");
    if (!camera_from_ego.is_valid()) throw ValidationError("camera " + view_id + ": rotation not orthonormal");
  }

  bool contains(const Pixel& px) const {
    return px.u >= 0.0 && px.u < width && px.v >= 0.0 && px.v < height;
  }
};

/// Pinhole projection without the image-bounds check. Absent only when the
/// point is not in front of the camera.
inline std::optional<Pixel> project_unbounded(const CameraModel& cam, const Vec3& point_ego) {
  const Vec3 pc = cam.camera_from_ego.apply(point_ego);
  if (!(pc.z() > kMinProjectionDepth)) return std::nullopt;
  return Pixel{cam.cx + cam.fx * pc.x() / pc.z(), cam.cy + cam.fy * pc.y() / pc.z()};
}

inline std::optional<Pixel> project(const CameraModel& cam, const Vec3& point_ego) {
  auto px = project_unbounded(cam, point_ego);
  if (!px || !cam.contains(*px)) return std::nullopt;
  return px;
}

/// Back-projects a pixel at the given camera-frame depth into the ego frame.
inline Vec3 unproject(const CameraModel& cam, const Pixel& px, double depth) {
  const Vec3 pc((px.u - cam.cx) / cam.fx * depth, (px.v - cam.cy) / cam.fy * depth, depth);
  return invert(cam.camera_from_ego).apply(pc);
}

struct Box3D {
  double x = 0, y = 0, z = 0;
  double w = 1, l = 1, h = 1;
  double yaw = 0;
  double vx = 0, vy = 0, vz = 0;

  Vec3 center() const { return {x, y, z}; }
  Vec3 velocity() const { return {vx, vy, vz}; }

  void validate() const {
    if (!(w > 0 && l > 0 && h > 0)) throw ValidationError("box extents must be positive");
    if (!(yaw > -std::numbers::pi && yaw <= std::numbers::pi))
      throw ValidationError("box yaw outside (-pi, pi]");
  }
};

/// Keypoint layouts. The value is the number of points N_K.
enum class KeypointScheme : int {
  kCorners8 = 8,
  kCenterCorners9 = 9,
  kCornersSides12 = 12,
  kCenterCornersSides13 = 13,
};

inline KeypointScheme keypoint_scheme_from_count(int n) {
  switch (n) {
    case 8: return KeypointScheme::kCorners8;
    case 9: return KeypointScheme::kCenterCorners9;
    case 12: return KeypointScheme::kCornersSides12;
    case 13: return KeypointScheme::kCenterCornersSides13;
    default: throw ValidationError("unsupported keypoint count " + std::to_string(n));
  }
}

/// Box-local offsets (x along length, y along width) before rotation.
inline std::vector<Vec3> box_local_keypoints(const Box3D& box, KeypointScheme scheme) {
  const double hl = box.l / 2, hw = box.w / 2, hh = box.h / 2;
  const bool with_center = scheme == KeypointScheme::kCenterCorners9 ||
                           scheme == KeypointScheme::kCenterCornersSides13;
  const bool with_sides = scheme == KeypointScheme::kCornersSides12 ||
                          scheme == KeypointScheme::kCenterCornersSides13;
  std::vector<Vec3> pts;
  pts.reserve(static_cast<std::size_t>(scheme));
  if (with_center) pts.emplace_back(0, 0, 0);
  for (double sx : {-1.0, 1.0})
    for (double sy : {-1.0, 1.0})
      for (double sz : {-1.0, 1.0}) pts.emplace_back(sx * hl, sy * hw, sz * hh);
  if (with_sides) {
    pts.emplace_back(hl, 0, 0);
    pts.emplace_back(-hl, 0, 0);
    pts.emplace_back(0, hw, 0);
    pts.emplace_back(0, -hw, 0);
  }
  return pts;
}

inline std::vector<Vec3> box_keypoints(const Box3D& box,
                                       KeypointScheme scheme = KeypointScheme::kCenterCornersSides13) {
  const SE3Transform pose = SE3Transform::from_yaw(box.yaw, box.center());
  auto pts = box_local_keypoints(box, scheme);
  for (auto& p : pts) p = pose.apply(p);
  return pts;
}

inline std::array<Vec3, 8> box_corners(const Box3D& box) {
  auto pts = box_keypoints(box, KeypointScheme::kCorners8);
  std::array<Vec3, 8> out;
  std::copy(pts.begin(), pts.end(), out.begin());
  return out;
}

}  // namespace owf
