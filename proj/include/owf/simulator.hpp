#pragma once

// Deterministic synthetic driving worlds.
//
// Agents move on closed-form paths (static, straight, constant-curvature
// arc) around an ego vehicle that does the same. Ground truth is exact, masks
// are rendered analytically from the camera rig, and a noisy detector plays
// the role of the previous-step model.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <numbers>
#include <set>
#include <string>
#include <vector>

#include "owf/error.hpp"
#include "owf/geometry.hpp"
#include "owf/random.hpp"
#include "owf/types.hpp"

namespace owf {

enum class MotionType { kStatic, kLinear, kTurning };

struct ClassSpec {
  ClassId id = 0;
  std::string name;
  double length = 4.5;
  double width = 1.9;
  double height = 1.6;
  int max_agents = 3;      // per sequence
  double presence = 0.8;   // probability that a sequence contains the class
  double speed_min = 2.0;  // m/s, moving agents only
  double speed_max = 10.0;
};

inline std::vector<ClassSpec> default_class_specs() {
  return {
      {0, "car", 4.6, 1.9, 1.7, 4, 0.9, 3.0, 10.0},
      {1, "pedestrian", 0.7, 0.7, 1.8, 4, 0.6, 0.8, 1.8},
      {2, "truck", 7.0, 2.5, 3.0, 2, 0.5, 2.0, 8.0},
      {3, "trailer", 9.0, 2.5, 3.5, 1, 0.3, 2.0, 6.0},
      {4, "motorcycle", 2.1, 0.8, 1.5, 2, 0.3, 3.0, 9.0},
      {5, "bicycle", 1.8, 0.6, 1.4, 2, 0.3, 2.0, 5.0},
      {6, "bus", 11.0, 2.9, 3.5, 1, 0.3, 2.0, 8.0},
  };
}

struct MotionMix {
  double static_fraction = 0.4;
  double linear_fraction = 0.35;
  double turning_fraction = 0.25;
};

struct CameraRigSpec {
  int n_views = 6;
  int width = 1600;
  int height = 900;
  double hfov_deg = 100.0;
  double mount_height = 1.5;
};

struct WorldConfig {
  std::size_t n_sequences = 10;
  std::size_t frames_per_sequence = 20;
  std::size_t horizon = 6;
  double sample_rate_hz = 2.0;
  std::vector<ClassSpec> classes = default_class_specs();
  MotionMix motion_mix;
  double turn_rate_min = 0.2;  // rad/s
  double turn_rate_max = 0.5;
  double ego_speed_min = 0.0;
  double ego_speed_max = 5.0;
  double ego_yaw_rate_max = 0.05;
  double spawn_radius_min = 10.0;
  double spawn_radius_max = 40.0;
  double min_separation = 4.0;
  double ego_clearance = 5.0;  // agents never come closer to the ego
  CameraRigSpec rig;
  double mask_miss_rate = 0.0;
  std::size_t query_dim = 32;
  double query_noise = 0.0;
  std::size_t query_window = 4;
  std::uint64_t seed = 0;

  double dt() const { return 1.0 / sample_rate_hz; }

  const ClassSpec& class_spec(ClassId id) const {
    for (const auto& c : classes)
      if (c.id == id) return c;
    throw ValidationError("class " + std::to_string(id) + " not in world taxonomy");
  }

  Taxonomy taxonomy() const {
    Taxonomy t;
    for (const auto& c : classes) t.names[c.id] = c.name;
    return t;
  }

  void validate() const {
    const double sum = motion_mix.static_fraction + motion_mix.linear_fraction + motion_mix.turning_fraction;
    if (std::abs(sum - 1.0) > 1e-9) throw ValidationError("motion mix fractions must sum to 1");
    if (motion_mix.static_fraction < 0 || motion_mix.linear_fraction < 0 || motion_mix.turning_fraction < 0)
      throw ValidationError("motion mix fractions must be non-negative");
    if (horizon == 0) throw ValidationError("horizon must be positive");
    if (frames_per_sequence < horizon + 1) throw ValidationError("frames_per_sequence must be >= horizon + 1");
    if (!(sample_rate_hz > 0)) throw ValidationError("sample_rate_hz must be positive");
    if (classes.empty()) throw ValidationError("class taxonomy is empty");
    std::set<ClassId> ids;
    for (const auto& c : classes) {
      if (!ids.insert(c.id).second) throw ValidationError("duplicate class id " + std::to_string(c.id));
      if (!(c.length > 0 && c.width > 0 && c.height > 0)) throw ValidationError("class " + c.name + ": bad extents");
      if (c.max_agents < 0 || c.presence < 0 || c.presence > 1) throw ValidationError("class " + c.name + ": bad counts");
      if (c.speed_min < 0 || c.speed_max < c.speed_min) throw ValidationError("class " + c.name + ": bad speed range");
    }
    if (turn_rate_min < 0 || turn_rate_max < turn_rate_min) throw ValidationError("bad turn-rate range");
    if (ego_speed_min < 0 || ego_speed_max < ego_speed_min) throw ValidationError("bad ego speed range");
    if (!(spawn_radius_min > 0 && spawn_radius_max >= spawn_radius_min)) throw ValidationError("bad spawn radius range");
    if (!(ego_clearance >= 0 && min_separation >= 0)) throw ValidationError("clearances must be non-negative");
    if (rig.n_views < 1 || rig.width < 2 || rig.height < 2 || !(rig.hfov_deg > 0 && rig.hfov_deg < 180))
      throw ValidationError("bad camera rig");
    if (mask_miss_rate < 0 || mask_miss_rate > 1) throw ValidationError("mask_miss_rate outside [0, 1]");
    if (query_dim == 0) throw ValidationError("query_dim must be positive");
    if (query_noise < 0) throw ValidationError("query_noise must be non-negative");
  }
};

struct DetectorProfile {
  double sigma_xy = 0.1;
  double sigma_z = 0.05;
  double sigma_yaw = 0.02;
  double sigma_velocity = 0.1;
  double miss_rate = 0.05;
  double fp_rate_per_frame = 0.2;
  double confidence_mean_tp = 0.7;
  double confidence_mean_fp = 0.35;
  double confidence_sigma = 0.1;
  double confidence_inflation_per_step = 0.0;
  double track_break_rate = 0.0;
  // False positives are placed uniformly in this ego-frame annulus, at least
  // fp_clearance away from every ground-truth agent.
  double fp_range_min = 5.0;
  double fp_range_max = 40.0;
  double fp_clearance = 4.0;
  std::uint64_t seed = 0;

  double tp_confidence_mean(int step_index) const {
    return confidence_mean_tp + step_index * confidence_inflation_per_step;
  }
  double fp_confidence_mean(int step_index) const {
    return confidence_mean_fp + step_index * confidence_inflation_per_step;
  }

  void validate() const {
    if (sigma_xy < 0 || sigma_z < 0 || sigma_yaw < 0 || sigma_velocity < 0 || confidence_sigma < 0)
      throw ValidationError("detector noise must be non-negative");
    if (miss_rate < 0 || miss_rate > 1) throw ValidationError("miss_rate outside [0, 1]");
    if (fp_rate_per_frame < 0) throw ValidationError("fp_rate_per_frame must be non-negative");
    if (!(confidence_mean_tp > 0 && confidence_mean_tp < 1)) throw ValidationError("confidence_mean_tp outside (0, 1)");
    if (!(confidence_mean_fp > 0 && confidence_mean_fp < 1)) throw ValidationError("confidence_mean_fp outside (0, 1)");
    if (confidence_inflation_per_step < 0) throw ValidationError("confidence inflation must be non-negative");
    if (track_break_rate < 0 || track_break_rate > 1) throw ValidationError("track_break_rate outside [0, 1]");
    if (!(fp_range_min >= 0 && fp_range_max > fp_range_min)) throw ValidationError("bad FP range");
  }
};

// ---------------------------------------------------------------------------
// Kinematics

/// Planar rigid-body path: static, straight line, or constant-curvature arc.
struct PlanarPath {
  double x0 = 0, y0 = 0, heading0 = 0;
  double speed = 0;
  double yaw_rate = 0;

  double heading(double t) const { return heading0 + yaw_rate * t; }

  Vec2 position(double t) const {
    if (std::abs(yaw_rate) < 1e-12)
      return {x0 + speed * t * std::cos(heading0), y0 + speed * t * std::sin(heading0)};
    const double r = speed / yaw_rate;
    const double h = heading(t);
    return {x0 + r * (std::sin(h) - std::sin(heading0)), y0 - r * (std::cos(h) - std::cos(heading0))};
  }

  Vec2 velocity(double t) const {
    const double h = heading(t);
    return {speed * std::cos(h), speed * std::sin(h)};
  }
};

struct Agent {
  std::string instance_id;
  ClassId class_id = 0;
  double length = 1, width = 1, height = 1;
  MotionType motion = MotionType::kStatic;
  PlanarPath path;

  Vec3 world_center(double t) const {
    const Vec2 p = path.position(t);
    return {p.x(), p.y(), height / 2};
  }
};

inline double yaw_of(const SE3Transform& t) { return std::atan2(t.rotation()(1, 0), t.rotation()(0, 0)); }

/// Pixel-frame rig: view k looks along ego yaw 2*pi*k/n.
inline std::vector<CameraModel> make_camera_rig(const CameraRigSpec& spec) {
  std::vector<CameraModel> cams;
  const double fx = (spec.width / 2.0) / std::tan(spec.hfov_deg * std::numbers::pi / 360.0);
  for (int k = 0; k < spec.n_views; ++k) {
    const double yaw = 2.0 * std::numbers::pi * k / spec.n_views;
    Mat3 ego_from_cam;
    ego_from_cam.col(0) = Vec3(std::sin(yaw), -std::cos(yaw), 0);  // image right
    ego_from_cam.col(1) = Vec3(0, 0, -1);                          // image down
    ego_from_cam.col(2) = Vec3(std::cos(yaw), std::sin(yaw), 0);   // optical axis
    const Vec3 mount(0, 0, spec.mount_height);
    CameraModel cam;
    cam.view_id = "CAM_" + std::to_string(k);
    cam.camera_from_ego = invert(SE3Transform(ego_from_cam, mount));
    cam.fx = fx;
    cam.fy = fx;
    cam.cx = spec.width / 2.0;
    cam.cy = spec.height / 2.0;
    cam.width = spec.width;
    cam.height = spec.height;
    cams.push_back(cam);
  }
  return cams;
}

/// Agents and ego path of one sequence, kept around so tests can compare
/// stored labels with world-frame truth.
struct SequenceTruth {
  std::string sequence_id;
  PlanarPath ego;
  std::vector<Agent> agents;
};

inline std::string sequence_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "seq_%04zu", index);
  return buf;
}

inline SequenceTruth sample_sequence_truth(const WorldConfig& cfg, std::size_t index) {
  Rng rng(derive_seed(cfg.seed, 0x3011D, index));
  SequenceTruth truth;
  truth.sequence_id = sequence_name(index);

  truth.ego.speed = rng.uniform(cfg.ego_speed_min, cfg.ego_speed_max);
  truth.ego.yaw_rate = rng.uniform(-cfg.ego_yaw_rate_max, cfg.ego_yaw_rate_max);
  // Agents are spawned around the ego position at mid-sequence.
  const double t_mid = 0.5 * (cfg.frames_per_sequence - 1) * cfg.dt();
  const Vec2 anchor = truth.ego.position(t_mid);

  int counter = 0;
  for (const auto& spec : cfg.classes) {
    if (!rng.bernoulli(spec.presence) || spec.max_agents == 0) continue;
    const int n = rng.uniform_int(1, spec.max_agents);
    for (int k = 0; k < n; ++k) {
      Agent a;
      char id[32];
      std::snprintf(id, sizeof id, "a%03d", counter++);
      a.instance_id = id;
      a.class_id = spec.id;
      a.length = spec.length;
      a.width = spec.width;
      a.height = spec.height;

      const double u = rng.uniform();
      if (u < cfg.motion_mix.static_fraction)
        a.motion = MotionType::kStatic;
      else if (u < cfg.motion_mix.static_fraction + cfg.motion_mix.linear_fraction)
        a.motion = MotionType::kLinear;
      else
        a.motion = MotionType::kTurning;
      // A degenerate mix can still route draws at the boundary; fall back to
      // the only non-zero bucket.
      if (a.motion == MotionType::kTurning && cfg.motion_mix.turning_fraction == 0)
        a.motion = cfg.motion_mix.linear_fraction > 0 ? MotionType::kLinear : MotionType::kStatic;

      a.path.heading0 = rng.uniform(-std::numbers::pi, std::numbers::pi);
      const double speed = rng.uniform(spec.speed_min, spec.speed_max);
      const double turn = rng.uniform(cfg.turn_rate_min, cfg.turn_rate_max) * (rng.bernoulli(0.5) ? 1.0 : -1.0);
      if (a.motion != MotionType::kStatic) a.path.speed = speed;
      if (a.motion == MotionType::kTurning) a.path.yaw_rate = turn;

      // Rejection sampling of the mid-sequence position. The last attempt is
      // kept even when it violates a clearance.
      for (int attempt = 0; attempt < 64; ++attempt) {
        const double r = std::sqrt(rng.uniform(cfg.spawn_radius_min * cfg.spawn_radius_min,
                                               cfg.spawn_radius_max * cfg.spawn_radius_max));
        const double phi = rng.uniform(-std::numbers::pi, std::numbers::pi);
        const Vec2 pos = anchor + Vec2(r * std::cos(phi), r * std::sin(phi));
        a.path.x0 = pos.x();
        a.path.y0 = pos.y();
        const Vec2 shift = a.path.position(t_mid) - pos;
        a.path.x0 -= shift.x();
        a.path.y0 -= shift.y();
        bool clear = true;
        for (const auto& other : truth.agents)
          if ((other.path.position(t_mid) - pos).norm() < cfg.min_separation) clear = false;
        for (std::size_t f = 0; clear && f < cfg.frames_per_sequence; ++f) {
          const double t = static_cast<double>(f) * cfg.dt();
          if ((a.path.position(t) - truth.ego.position(t)).norm() < cfg.ego_clearance) clear = false;
        }
        if (clear) break;
      }
      truth.agents.push_back(a);
    }
  }
  return truth;
}

inline EgoPose ego_pose_at(const PlanarPath& ego, int frame, double dt) {
  const double t = frame * dt;
  const Vec2 p = ego.position(t);
  return {frame, SE3Transform::from_yaw(wrap_angle(ego.heading(t)), Vec3(p.x(), p.y(), 0))};
}

/// Builds samples (poses, cameras, annotations with futures) for one
/// sequence. Masks, detections and queries are left empty.
inline Sequence build_sequence(const WorldConfig& cfg, const SequenceTruth& truth) {
  const double dt = cfg.dt();
  const int n_frames = static_cast<int>(cfg.frames_per_sequence);
  const auto cams = make_camera_rig(cfg.rig);

  std::vector<EgoPose> poses;
  for (int f = 0; f < n_frames; ++f) poses.push_back(ego_pose_at(truth.ego, f, dt));

  // Agent centers in each frame's ego coordinates.
  std::vector<std::vector<Vec3>> ego_centers(truth.agents.size(), std::vector<Vec3>(n_frames));
  for (std::size_t a = 0; a < truth.agents.size(); ++a)
    for (int f = 0; f < n_frames; ++f)
      ego_centers[a][f] = invert(poses[f].world_from_ego).apply(truth.agents[a].world_center(f * dt));

  Sequence seq{truth.sequence_id, {}};
  for (int f = 0; f < n_frames; ++f) {
    Sample s;
    s.frame_index = f;
    s.ego_pose = poses[f];
    s.cameras = cams;
    const double ego_yaw = yaw_of(poses[f].world_from_ego);
    const Mat3 ego_from_world_rot = poses[f].world_from_ego.rotation().transpose();
    for (std::size_t a = 0; a < truth.agents.size(); ++a) {
      const Agent& ag = truth.agents[a];
      Annotation ann;
      ann.instance_id = ag.instance_id;
      ann.class_id = ag.class_id;
      const Vec3& c = ego_centers[a][f];
      const Vec2 vw = ag.path.velocity(f * dt);
      const Vec3 v = ego_from_world_rot * Vec3(vw.x(), vw.y(), 0);
      ann.box = Box3D{c.x(), c.y(), c.z(), ag.width, ag.length, ag.height,
                      wrap_angle(ag.path.heading(f * dt) - ego_yaw), v.x(), v.y(), 0.0};
      ann.future.waypoints.reserve(cfg.horizon);
      for (int tau = 1; tau <= static_cast<int>(cfg.horizon); ++tau) {
        if (f + tau >= n_frames) {
          ann.future.waypoints.push_back(Waypoint::invalid());
          continue;
        }
        const Vec3 p = relative_transform(poses[f + tau], poses[f]).apply(ego_centers[a][f + tau]);
        ann.future.waypoints.push_back(Waypoint::at(p.x(), p.y()));
      }
      s.annotations.push_back(std::move(ann));
    }
    seq.samples.push_back(std::move(s));
  }
  return seq;
}

inline std::vector<Sequence> generate_world(const WorldConfig& cfg) {
  cfg.validate();
  std::vector<Sequence> out;
  out.reserve(cfg.n_sequences);
  for (std::size_t i = 0; i < cfg.n_sequences; ++i) out.push_back(build_sequence(cfg, sample_sequence_truth(cfg, i)));
  return out;
}

// ---------------------------------------------------------------------------
// Masks

inline constexpr double kMaskNearPlane = 0.1;

/// Axis-aligned bounds of the box's image-plane footprint, with the box
/// clipped at a near plane and the result clipped to the image. Absent when
/// no corner projects inside the image.
inline std::optional<PixelRect> box_footprint(const CameraModel& cam, const Box3D& box) {
  const auto corners = box_corners(box);
  bool any_visible = false;
  for (const auto& c : corners)
    if (project(cam, c)) any_visible = true;
  if (!any_visible) return std::nullopt;

  std::array<Vec3, 8> pc;
  for (std::size_t i = 0; i < 8; ++i) pc[i] = cam.camera_from_ego.apply(corners[i]);
  std::vector<Vec3> front;
  for (const auto& p : pc)
    if (p.z() >= kMaskNearPlane) front.push_back(p);
  // Corners differ in exactly one bit along each box edge.
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t bit : {1u, 2u, 4u}) {
      const std::size_t j = i ^ bit;
      if (j < i) continue;
      const Vec3 &a = pc[i], &b = pc[j];
      if ((a.z() < kMaskNearPlane) != (b.z() < kMaskNearPlane)) {
        const double s = (kMaskNearPlane - a.z()) / (b.z() - a.z());
        front.push_back(a + s * (b - a));
      }
    }
  double umin = 1e300, vmin = 1e300, umax = -1e300, vmax = -1e300;
  for (const auto& p : front) {
    const double u = cam.cx + cam.fx * p.x() / p.z();
    const double v = cam.cy + cam.fy * p.y() / p.z();
    umin = std::min(umin, u), umax = std::max(umax, u);
    vmin = std::min(vmin, v), vmax = std::max(vmax, v);
  }
  auto clamp_floor = [](double x, int hi) {
    return static_cast<int>(std::clamp(std::floor(x), 0.0, static_cast<double>(hi)));
  };
  PixelRect r{clamp_floor(umin, cam.width - 1), clamp_floor(vmin, cam.height - 1),
              clamp_floor(umax, cam.width - 1), clamp_floor(vmax, cam.height - 1)};
  if (r.empty()) return std::nullopt;
  return r;
}

/// One box-region mask per (annotation, camera) where the annotation is
/// visible. `classes` empty means all classes. Each mask is dropped with
/// probability `mask_miss_rate`. Within a view masks are emitted farthest
/// first, so equal-count ties in the filter go to the tighter mask.
inline std::vector<InstanceMask> render_masks(const Sample& sample, double mask_miss_rate, std::uint64_t seed,
                                              const std::set<ClassId>& classes = {}) {
  Rng rng(seed);
  std::vector<const Annotation*> order;
  for (const auto& ann : sample.annotations) order.push_back(&ann);
  std::stable_sort(order.begin(), order.end(), [](const Annotation* a, const Annotation* b) {
    return std::hypot(a->box.x, a->box.y) > std::hypot(b->box.x, b->box.y);
  });
  std::vector<InstanceMask> out;
  for (const auto& cam : sample.cameras)
    for (const Annotation* a : order) {
      const auto& ann = *a;
      if (!classes.empty() && !classes.count(ann.class_id)) continue;
      auto rect = box_footprint(cam, ann.box);
      if (!rect) continue;
      if (mask_miss_rate > 0 && rng.bernoulli(mask_miss_rate)) continue;
      out.push_back(InstanceMask::from_rect(cam.view_id, ann.class_id, *rect));
    }
  return out;
}

inline void render_sequence_masks(Sequence& seq, double mask_miss_rate, std::uint64_t seed,
                                  const std::set<ClassId>& classes = {}) {
  for (auto& s : seq.samples)
    s.masks = render_masks(s, mask_miss_rate,
                           derive_seed(seed, hash_string(seq.sequence_id), static_cast<std::uint64_t>(s.frame_index)),
                           classes);
}

// ---------------------------------------------------------------------------
// Detector oracle

inline double clip01(double x) { return std::clamp(x, 0.0, 1.0); }

/// Replaces the detections of every sample with a noisy rendition of the
/// ground truth. Only classes in `classes` are detected (empty: all).
/// `class_specs` supplies extents for false positives.
inline void simulate_detector(Sequence& seq, const DetectorProfile& profile, int step_index,
                              const std::vector<ClassSpec>& class_specs, const std::set<ClassId>& classes = {}) {
  profile.validate();
  Rng rng(derive_seed(profile.seed, hash_string(seq.sequence_id), static_cast<std::uint64_t>(step_index)));
  std::vector<const ClassSpec*> fp_classes;
  for (const auto& c : class_specs)
    if (classes.empty() || classes.count(c.id)) fp_classes.push_back(&c);

  std::map<std::string, int> breaks;
  int fp_counter = 0;
  const double tp_mean = profile.tp_confidence_mean(step_index);
  const double fp_mean = profile.fp_confidence_mean(step_index);

  for (auto& s : seq.samples) {
    s.detections.clear();
    for (const auto& ann : s.annotations) {
      if (!classes.empty() && !classes.count(ann.class_id)) continue;
      if (profile.track_break_rate > 0 && rng.bernoulli(profile.track_break_rate)) ++breaks[ann.instance_id];
      if (rng.bernoulli(profile.miss_rate)) continue;
      Detection d;
      const int b = breaks[ann.instance_id];
      d.track_id = b == 0 ? ann.instance_id : ann.instance_id + "#" + std::to_string(b);
      d.class_id = ann.class_id;
      d.box = ann.box;
      d.box.x += rng.normal(0, profile.sigma_xy);
      d.box.y += rng.normal(0, profile.sigma_xy);
      d.box.z += rng.normal(0, profile.sigma_z);
      d.box.yaw = wrap_angle(d.box.yaw + rng.normal(0, profile.sigma_yaw));
      d.box.vx += rng.normal(0, profile.sigma_velocity);
      d.box.vy += rng.normal(0, profile.sigma_velocity);
      d.confidence = clip01(rng.normal(tp_mean, profile.confidence_sigma));
      s.detections.push_back(d);
    }
    if (fp_classes.empty()) continue;
    const int n_fp = rng.poisson(profile.fp_rate_per_frame);
    for (int k = 0; k < n_fp; ++k) {
      const ClassSpec& spec = *fp_classes[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(fp_classes.size()) - 1))];
      std::optional<Vec2> pos;
      for (int attempt = 0; attempt < 100 && !pos; ++attempt) {
        const double r = std::sqrt(rng.uniform(profile.fp_range_min * profile.fp_range_min,
                                               profile.fp_range_max * profile.fp_range_max));
        const double phi = rng.uniform(-std::numbers::pi, std::numbers::pi);
        const Vec2 p(r * std::cos(phi), r * std::sin(phi));
        bool clear = true;
        for (const auto& ann : s.annotations)
          if ((Vec2(ann.box.x, ann.box.y) - p).norm() < profile.fp_clearance) clear = false;
        if (clear) pos = p;
      }
      const double yaw = rng.uniform(-std::numbers::pi, std::numbers::pi);
      const double conf = clip01(rng.normal(fp_mean, profile.confidence_sigma));
      if (!pos) continue;
      Detection d;
      d.track_id = "fp_" + std::to_string(step_index) + "_" + std::to_string(fp_counter++);
      d.class_id = spec.id;
      d.box = Box3D{pos->x(), pos->y(), spec.height / 2, spec.width, spec.length, spec.height,
                    wrap_angle(yaw), rng.normal(0, profile.sigma_velocity), rng.normal(0, profile.sigma_velocity), 0.0};
      d.confidence = conf;
      s.detections.push_back(d);
    }
  }
}

// ---------------------------------------------------------------------------
// Motion queries

/// Per-track motion statistics over a trailing window, in world frame:
/// speed, turn rate, curvature, displacement.
struct MotionStats {
  double speed = 0;
  double turn_rate = 0;
  double curvature = 0;
  double displacement = 0;
};

inline std::vector<double> embed_motion(const MotionStats& m, std::size_t dim) {
  const std::array<double, 4> feat{m.speed, 20.0 * m.turn_rate, 10.0 * m.curvature, 0.5 * m.displacement};
  std::vector<double> q(dim);
  for (std::size_t d = 0; d < dim; ++d) q[d] = feat[d % 4];
  return q;
}

/// Attaches one query per detection, computed from the detection's own track
/// history. Replaces existing queries.
inline void simulate_queries(Sequence& seq, std::size_t dim, double noise, std::size_t window, double dt,
                             std::uint64_t seed) {
  Rng rng(derive_seed(seed, hash_string(seq.sequence_id), 0x9E7));
  struct Obs {
    int frame;
    Vec2 world_xy;
    double world_yaw;
  };
  std::map<std::string, std::vector<Obs>> history;
  for (auto& s : seq.samples) {
    s.queries.clear();
    const double ego_yaw = yaw_of(s.ego_pose.world_from_ego);
    for (const auto& d : s.detections) {
      const Vec3 w = s.ego_pose.world_from_ego.apply(d.box.center());
      auto& h = history[d.track_id];
      h.push_back({s.frame_index, Vec2(w.x(), w.y()), d.box.yaw + ego_yaw});

      MotionStats m;
      const Obs& cur = h.back();
      const Obs* past = nullptr;
      for (auto it = h.rbegin() + 1; it != h.rend(); ++it) {
        if (cur.frame - it->frame > static_cast<int>(window)) break;
        past = &*it;
      }
      if (past) {
        const double span = (cur.frame - past->frame) * dt;
        m.displacement = (cur.world_xy - past->world_xy).norm();
        m.speed = m.displacement / span;
        m.turn_rate = std::abs(wrap_angle(cur.world_yaw - past->world_yaw)) / span;
      } else {
        m.speed = std::hypot(d.box.vx, d.box.vy);
      }
      m.curvature = m.turn_rate / std::max(m.speed, 0.5);

      MotionQuery q;
      q.vector = embed_motion(m, dim);
      for (double& x : q.vector) x += rng.normal(0, noise);
      q.owner = {seq.sequence_id, s.frame_index, d.track_id};
      q.class_id = d.class_id;
      s.queries.push_back(std::move(q));
    }
  }
}

// ---------------------------------------------------------------------------
// Forecasts of the previous-step model

struct PredictorProfile {
  double turn_mode_rate = 0.2;  // rad/s for the two alternative modes
  double primary_score = 0.6;
};

/// Multi-mode forecasts for one detection: constant velocity (highest score)
/// plus a left and a right constant-turn mode, in the current ego frame.
inline std::vector<ForecastMode> predict_modes(const Detection& d, std::size_t horizon, double dt,
                                               const PredictorProfile& p = {}) {
  const double speed = std::hypot(d.box.vx, d.box.vy);
  const double heading = std::atan2(d.box.vy, d.box.vx);
  std::vector<ForecastMode> modes;
  const double side = (1.0 - p.primary_score) / 2.0;
  for (auto [rate, score] : {std::pair{0.0, p.primary_score}, std::pair{p.turn_mode_rate, side},
                             std::pair{-p.turn_mode_rate, side}}) {
    PlanarPath path{d.box.x, d.box.y, heading, speed, rate};
    ForecastMode m;
    m.score = score;
    for (std::size_t k = 1; k <= horizon; ++k) {
      const Vec2 xy = path.position(k * dt);
      m.trajectory.waypoints.push_back(Waypoint::at(xy.x(), xy.y()));
    }
    modes.push_back(std::move(m));
  }
  return modes;
}

}  // namespace owf
