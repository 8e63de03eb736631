#pragma once

// Forecasting and planning evaluation.
//
// Ground-truth futures are bucketed into static / linear / non-linear.
// Forecasting AP counts a detection as a hit only if it matches a ground
// truth of that bucket and its best mode ends within fde_threshold; mAP_f
// averages buckets within a class, then classes. EPA subtracts a weighted
// count of confident false positives and normalizes by ground truth.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "owf/error.hpp"
#include "owf/geometry.hpp"
#include "owf/matching.hpp"
#include "owf/types.hpp"

namespace owf {

struct EvalConfig {
  double match_dist = 2.0;
  double fde_threshold = 2.0;
  std::size_t horizon = 6;
  double static_eps = 1.0;
  double linear_eps = 0.5;
  double epa_alpha = 0.5;
  double epa_conf_threshold = 0.5;
  double sample_rate_hz = 2.0;
  double ego_length = 4.0;
  double ego_width = 1.8;

  void validate() const {
    if (!(match_dist > 0 && fde_threshold > 0 && horizon > 0 && static_eps > 0 && linear_eps > 0 && epa_alpha > 0 &&
          epa_conf_threshold > 0 && sample_rate_hz > 0 && ego_length > 0 && ego_width > 0))
      throw ValidationError("evaluation parameters must be positive");
  }
};

enum class TrajectoryCategory { kStatic = 0, kLinear = 1, kNonlinear = 2 };

inline constexpr std::array<TrajectoryCategory, 3> kAllCategories{
    TrajectoryCategory::kStatic, TrajectoryCategory::kLinear, TrajectoryCategory::kNonlinear};

inline std::string to_string(TrajectoryCategory c) {
  switch (c) {
    case TrajectoryCategory::kStatic: return "static";
    case TrajectoryCategory::kLinear: return "linear";
    case TrajectoryCategory::kNonlinear: return "nonlinear";
  }
  return "?";
}

/// Largest point distance from the least-squares constant-velocity fit
/// p(k) = a + b k through the valid waypoints (k = step number).
inline double constant_velocity_residual(const TrajectoryLabel& traj) {
  std::vector<std::pair<double, Vec2>> pts;
  for (std::size_t k = 0; k < traj.waypoints.size(); ++k)
    if (traj.waypoints[k].valid) pts.emplace_back(static_cast<double>(k + 1), traj.waypoints[k].xy());
  if (pts.size() < 3) return 0.0;
  double mk = 0;
  Vec2 mp = Vec2::Zero();
  for (const auto& [k, p] : pts) mk += k, mp += p;
  mk /= pts.size();
  mp /= static_cast<double>(pts.size());
  double skk = 0;
  Vec2 skp = Vec2::Zero();
  for (const auto& [k, p] : pts) {
    skk += (k - mk) * (k - mk);
    skp += (k - mk) * (p - mp);
  }
  const Vec2 b = skp / skk;
  const Vec2 a = mp - b * mk;
  double worst = 0;
  for (const auto& [k, p] : pts) worst = std::max(worst, (a + b * k - p).norm());
  return worst;
}

/// `start` is the object's position at the current frame.
inline TrajectoryCategory classify_trajectory(const TrajectoryLabel& traj, const EvalConfig& cfg,
                                              const Vec2& start = Vec2::Zero()) {
  if (traj.valid_count() < 2) return TrajectoryCategory::kStatic;
  const Waypoint* last = nullptr;
  for (const auto& w : traj.waypoints)
    if (w.valid) last = &w;
  if ((last->xy() - start).norm() < cfg.static_eps) return TrajectoryCategory::kStatic;
  return constant_velocity_residual(traj) < cfg.linear_eps ? TrajectoryCategory::kLinear
                                                           : TrajectoryCategory::kNonlinear;
}

struct DisplacementError {
  double ade = 0;
  double fde = 0;
  std::size_t steps = 0;
};

/// ADE over the jointly valid steps; FDE at the last of them.
inline DisplacementError ade_fde(const TrajectoryLabel& pred, const TrajectoryLabel& gt) {
  if (pred.horizon() != gt.horizon())
    throw ValidationError("trajectory horizons differ: " + std::to_string(pred.horizon()) + " vs " +
                          std::to_string(gt.horizon()));
  DisplacementError e;
  double sum = 0;
  for (std::size_t k = 0; k < gt.horizon(); ++k) {
    if (!pred.waypoints[k].valid || !gt.waypoints[k].valid) continue;
    const double d = (pred.waypoints[k].xy() - gt.waypoints[k].xy()).norm();
    sum += d;
    e.fde = d;
    ++e.steps;
  }
  if (e.steps == 0) throw ValidationError("no jointly valid trajectory step");
  e.ade = sum / static_cast<double>(e.steps);
  return e;
}

// ---------------------------------------------------------------------------
// Detection-style forecasting metrics

struct ForecastPrediction {
  SampleKey key;
  ClassId class_id = 0;
  Box3D box;
  double confidence = 0;
  std::vector<ForecastMode> modes;
};

struct KeyedAnnotation {
  SampleKey key;
  Annotation ann;
};

/// Ground truth without any valid future step cannot be scored for
/// forecasting; predictions matched to it are dropped rather than counted.
inline bool is_scorable(const Annotation& a) { return a.future.valid_count() > 0; }

inline double min_fde(const ForecastPrediction& p, const TrajectoryLabel& gt) {
  if (p.modes.empty()) throw ValidationError("prediction without modes");
  // A mode sharing no valid step with the ground truth is a miss.
  double best = std::numeric_limits<double>::infinity();
  for (const auto& m : p.modes) {
    if (m.trajectory.horizon() != gt.horizon()) throw ValidationError("mode horizon differs from ground truth");
    bool joint = false;
    for (std::size_t k = 0; k < gt.horizon(); ++k) joint = joint || (m.trajectory.waypoints[k].valid && gt.waypoints[k].valid);
    if (joint) best = std::min(best, ade_fde(m.trajectory, gt).fde);
  }
  return best;
}

inline const ForecastMode& top_mode(const ForecastPrediction& p) {
  if (p.modes.empty()) throw ValidationError("prediction without modes");
  const ForecastMode* best = &p.modes.front();
  for (const auto& m : p.modes)
    if (m.score > best->score) best = &m;
  return *best;
}

/// Confidence-greedy one-to-one matching of predictions to ground truth.
inline std::vector<std::optional<std::size_t>> match_predictions(const std::vector<KeyedAnnotation>& gt,
                                                                 const std::vector<ForecastPrediction>& preds,
                                                                 double match_dist) {
  std::vector<CenterItem> g, p;
  g.reserve(gt.size());
  p.reserve(preds.size());
  for (const auto& a : gt) g.push_back({a.key, a.ann.class_id, Vec2(a.ann.box.x, a.ann.box.y), 1.0, ""});
  for (const auto& x : preds) p.push_back({x.key, x.class_id, Vec2(x.box.x, x.box.y), x.confidence, ""});
  return greedy_match(p, g, match_dist);
}

/// A ranked list of hit flags and the number of ground-truth positives.
struct RankedHits {
  std::vector<double> confidence;  // descending
  std::vector<bool> hit;
  std::size_t n_gt = 0;
};

/// 101-point interpolated average precision. Precision-recall points are
/// only emitted at the end of each group of equal confidences so that the
/// result does not depend on the order of ties.
inline double average_precision(const RankedHits& r) {
  if (r.n_gt == 0) throw ValidationError("average precision needs at least one positive");
  std::vector<std::pair<double, double>> pr;  // (recall, precision)
  std::size_t tp = 0;
  for (std::size_t i = 0; i < r.hit.size(); ++i) {
    if (r.hit[i]) ++tp;
    const bool group_end = i + 1 == r.hit.size() || r.confidence[i + 1] != r.confidence[i];
    if (group_end)
      pr.emplace_back(static_cast<double>(tp) / static_cast<double>(r.n_gt),
                      static_cast<double>(tp) / static_cast<double>(i + 1));
  }
  // Suffix max of precision over recall.
  double sum = 0;
  for (int k = 0; k <= 100; ++k) {
    const double thr = k / 100.0;
    double best = 0;
    for (const auto& [rec, prec] : pr)
      if (rec >= thr) best = std::max(best, prec);
    sum += best;
  }
  return sum / 101.0;
}

inline TrajectoryCategory category_of(const Annotation& a, const EvalConfig& cfg) {
  return classify_trajectory(a.future, cfg, Vec2(a.box.x, a.box.y));
}

inline TrajectoryCategory category_of(const ForecastPrediction& p, const EvalConfig& cfg) {
  return classify_trajectory(top_mode(p).trajectory, cfg, Vec2(p.box.x, p.box.y));
}

/// Hit list for one trajectory category. Matched predictions inherit the
/// category of their ground truth; unmatched ones are bucketed by their own
/// top-scoring mode.
inline RankedHits forecast_hits(const std::vector<KeyedAnnotation>& gt, const std::vector<ForecastPrediction>& preds,
                                TrajectoryCategory category, const EvalConfig& cfg) {
  const auto match = match_predictions(gt, preds, cfg.match_dist);
  RankedHits r;
  for (const auto& a : gt)
    if (is_scorable(a.ann) && category_of(a.ann, cfg) == category) ++r.n_gt;

  std::vector<std::size_t> order(preds.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return preds[a].confidence > preds[b].confidence; });
  for (std::size_t i : order) {
    const auto& p = preds[i];
    bool hit = false;
    if (match[i]) {
      const Annotation& g = gt[*match[i]].ann;
      if (!is_scorable(g)) continue;
      if (category_of(g, cfg) != category) continue;
      hit = min_fde(p, g.future) < cfg.fde_threshold;
    } else if (category_of(p, cfg) != category) {
      continue;
    }
    r.confidence.push_back(p.confidence);
    r.hit.push_back(hit);
  }
  return r;
}

/// Forecasting AP for one category; absent when that category has no
/// ground truth.
inline std::optional<double> ap_f(const std::vector<KeyedAnnotation>& gt, const std::vector<ForecastPrediction>& preds,
                                  TrajectoryCategory category, const EvalConfig& cfg) {
  const RankedHits r = forecast_hits(gt, preds, category, cfg);
  if (r.n_gt == 0) return std::nullopt;
  return average_precision(r);
}

struct MapResult {
  double map_f = 0;
  std::map<ClassId, std::map<TrajectoryCategory, double>> ap;  // present categories only
  std::map<ClassId, double> class_map;
  // Category-wise mean over classes where the category is present.
  std::map<TrajectoryCategory, double> category_mean;
};

inline MapResult map_f(const std::vector<KeyedAnnotation>& gt, const std::vector<ForecastPrediction>& preds,
                       const EvalConfig& cfg) {
  std::set<ClassId> classes;
  for (const auto& a : gt)
    if (is_scorable(a.ann)) classes.insert(a.ann.class_id);
  if (classes.empty()) throw ValidationError("no ground truth to evaluate");

  MapResult out;
  double total = 0;
  std::map<TrajectoryCategory, std::pair<double, int>> cat_acc;
  for (ClassId c : classes) {
    std::vector<KeyedAnnotation> g;
    std::vector<ForecastPrediction> p;
    for (const auto& a : gt)
      if (a.ann.class_id == c) g.push_back(a);
    for (const auto& x : preds)
      if (x.class_id == c) p.push_back(x);
    double sum = 0;
    int n = 0;
    for (auto cat : kAllCategories) {
      auto ap = ap_f(g, p, cat, cfg);
      if (!ap) continue;
      out.ap[c][cat] = *ap;
      cat_acc[cat].first += *ap;
      cat_acc[cat].second += 1;
      sum += *ap;
      ++n;
    }
    out.class_map[c] = sum / n;
    total += out.class_map[c];
  }
  for (const auto& [cat, acc] : cat_acc) out.category_mean[cat] = acc.first / acc.second;
  out.map_f = total / static_cast<double>(classes.size());
  return out;
}

struct EpaResult {
  double epa = 0;
  std::size_t hits = 0;
  std::size_t false_positives = 0;
  std::size_t n_gt = 0;
};

/// Only predictions at or above epa_conf_threshold are considered; each is
/// greedily matched by confidence. Unmatched considered predictions are
/// false positives.
inline EpaResult epa(const std::vector<KeyedAnnotation>& gt, const std::vector<ForecastPrediction>& preds,
                     const EvalConfig& cfg) {
  EpaResult r;
  for (const auto& a : gt)
    if (is_scorable(a.ann)) ++r.n_gt;
  if (r.n_gt == 0) throw ValidationError("EPA needs at least one ground-truth instance");
  std::vector<ForecastPrediction> considered;
  for (const auto& p : preds)
    if (p.confidence >= cfg.epa_conf_threshold) considered.push_back(p);
  const auto match = match_predictions(gt, considered, cfg.match_dist);
  for (std::size_t i = 0; i < considered.size(); ++i) {
    if (!match[i]) {
      ++r.false_positives;
      continue;
    }
    const Annotation& g = gt[*match[i]].ann;
    if (is_scorable(g) && min_fde(considered[i], g.future) < cfg.fde_threshold) ++r.hits;
  }
  r.epa = (static_cast<double>(r.hits) - cfg.epa_alpha * static_cast<double>(r.false_positives)) /
          static_cast<double>(r.n_gt);
  return r;
}

// ---------------------------------------------------------------------------
// Pseudo-label quality

struct LabelQuality {
  double precision = 1.0;
  double recall = 0.0;
  double mean_ade = 0.0;  // pooled over jointly valid waypoints of true positives
  std::size_t n_labels = 0;
  std::size_t n_gt = 0;
  std::size_t true_positives = 0;
  std::size_t waypoints = 0;
};

struct QualityItem {
  SampleKey key;
  ClassId class_id = 0;
  Box3D box;
  TrajectoryLabel future;
  double confidence = 1.0;
  std::string id;
};

inline LabelQuality pseudo_label_quality(const std::vector<QualityItem>& labels, const std::vector<KeyedAnnotation>& gt,
                                         double match_dist = kDefaultMatchDist) {
  std::vector<CenterItem> g, l;
  for (const auto& a : gt) g.push_back({a.key, a.ann.class_id, Vec2(a.ann.box.x, a.ann.box.y), 1.0, a.ann.instance_id});
  for (const auto& x : labels) l.push_back({x.key, x.class_id, Vec2(x.box.x, x.box.y), x.confidence, x.id});
  const auto match = greedy_match(l, g, match_dist);

  LabelQuality q;
  q.n_labels = labels.size();
  q.n_gt = gt.size();
  double err = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!match[i]) continue;
    ++q.true_positives;
    const auto& gf = gt[*match[i]].ann.future;
    const auto& lf = labels[i].future;
    if (gf.horizon() != lf.horizon()) throw ValidationError("label and ground-truth horizons differ");
    for (std::size_t k = 0; k < gf.horizon(); ++k)
      if (gf.waypoints[k].valid && lf.waypoints[k].valid) {
        err += (gf.waypoints[k].xy() - lf.waypoints[k].xy()).norm();
        ++q.waypoints;
      }
  }
  if (q.n_labels > 0) q.precision = static_cast<double>(q.true_positives) / static_cast<double>(q.n_labels);
  if (q.n_gt > 0) q.recall = static_cast<double>(q.true_positives) / static_cast<double>(q.n_gt);
  if (q.waypoints > 0) q.mean_ade = err / static_cast<double>(q.waypoints);
  return q;
}

// ---------------------------------------------------------------------------
// Open-loop planning

struct PlanningSample {
  std::vector<Vec2> ego_pred;  // step k at index k-1, current ego frame
  std::vector<Vec2> ego_gt;
  std::vector<std::vector<Box3D>> agents;  // ground-truth boxes per future step
};

struct HorizonMetric {
  std::vector<double> per_horizon;
  double average = 0;
};

inline std::size_t horizon_step(double seconds, double rate_hz) {
  const double steps = seconds * rate_hz;
  const auto k = static_cast<std::size_t>(std::llround(steps));
  if (k == 0 || std::abs(steps - static_cast<double>(k)) > 1e-9)
    throw ValidationError("horizon " + std::to_string(seconds) + " s is not on the sampling grid");
  return k;
}

inline HorizonMetric planning_l2(const std::vector<PlanningSample>& samples, const std::vector<double>& horizons_s,
                                 double rate_hz = 2.0) {
  if (samples.empty()) throw ValidationError("no planning samples");
  HorizonMetric out;
  for (double h : horizons_s) {
    const std::size_t k = horizon_step(h, rate_hz);
    double sum = 0;
    for (const auto& s : samples) {
      if (k > s.ego_pred.size() || k > s.ego_gt.size())
        throw ValidationError("horizon " + std::to_string(h) + " s beyond trajectory length");
      sum += (s.ego_pred[k - 1] - s.ego_gt[k - 1]).norm();
    }
    out.per_horizon.push_back(sum / static_cast<double>(samples.size()));
  }
  out.average = std::accumulate(out.per_horizon.begin(), out.per_horizon.end(), 0.0) /
                static_cast<double>(out.per_horizon.size());
  return out;
}

struct OrientedRect {
  Vec2 center;
  double heading = 0;
  double length = 1;  // along heading
  double width = 1;

  std::array<Vec2, 4> corners() const {
    const Vec2 f(std::cos(heading), std::sin(heading)), s(-std::sin(heading), std::cos(heading));
    const Vec2 hf = f * (length / 2), hs = s * (width / 2);
    return {center + hf + hs, center + hf - hs, center - hf - hs, center - hf + hs};
  }
};

/// Separating-axis overlap test; touching edges count as overlap.
inline bool rects_intersect(const OrientedRect& a, const OrientedRect& b) {
  const auto ca = a.corners(), cb = b.corners();
  for (double h : {a.heading, a.heading + std::numbers::pi / 2, b.heading, b.heading + std::numbers::pi / 2}) {
    const Vec2 axis(std::cos(h), std::sin(h));
    double amin = 1e300, amax = -1e300, bmin = 1e300, bmax = -1e300;
    for (const auto& p : ca) amin = std::min(amin, p.dot(axis)), amax = std::max(amax, p.dot(axis));
    for (const auto& p : cb) bmin = std::min(bmin, p.dot(axis)), bmax = std::max(bmax, p.dot(axis));
    if (amax < bmin || bmax < amin) return false;
  }
  return true;
}

/// First step index (1-based) at which the ego box collides, if any.
inline std::optional<std::size_t> first_collision(const PlanningSample& s, double ego_length, double ego_width) {
  double heading = 0;
  Vec2 prev = Vec2::Zero();
  for (std::size_t k = 1; k <= s.ego_pred.size(); ++k) {
    const Vec2 cur = s.ego_pred[k - 1];
    if ((cur - prev).norm() > 1e-9) heading = std::atan2(cur.y() - prev.y(), cur.x() - prev.x());
    prev = cur;
    if (k > s.agents.size()) break;
    const OrientedRect ego{cur, heading, ego_length, ego_width};
    for (const auto& b : s.agents[k - 1])
      if (rects_intersect(ego, OrientedRect{Vec2(b.x, b.y), b.yaw, b.l, b.w})) return k;
  }
  return std::nullopt;
}

/// Fraction of samples whose ego box hits an agent box at or before each
/// horizon.
inline HorizonMetric collision_rate(const std::vector<PlanningSample>& samples, const std::vector<double>& horizons_s,
                                    const EvalConfig& cfg) {
  if (samples.empty()) throw ValidationError("no planning samples");
  HorizonMetric out;
  for (double h : horizons_s) {
    const std::size_t k = horizon_step(h, cfg.sample_rate_hz);
    std::size_t hits = 0;
    for (const auto& s : samples) {
      if (k > s.ego_pred.size()) throw ValidationError("horizon " + std::to_string(h) + " s beyond trajectory length");
      const auto c = first_collision(s, cfg.ego_length, cfg.ego_width);
      if (c && *c <= k) ++hits;
    }
    out.per_horizon.push_back(static_cast<double>(hits) / static_cast<double>(samples.size()));
  }
  out.average = std::accumulate(out.per_horizon.begin(), out.per_horizon.end(), 0.0) /
                static_cast<double>(out.per_horizon.size());
  return out;
}

}  // namespace owf
