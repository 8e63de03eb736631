#pragma once

// JSON experiment configuration. Every section is optional and falls back
// to the struct defaults; unknown keys are rejected so typos surface early.

#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "owf/error.hpp"
#include "owf/geometry.hpp"
#include "owf/metrics.hpp"
#include "owf/pseudolabel.hpp"
#include "owf/replay.hpp"
#include "owf/serialization.hpp"
#include "owf/simulator.hpp"
#include "owf/split.hpp"

namespace owf {

/// Reads keys out of one JSON object and remembers which were seen.
class ConfigSection {
 public:
  ConfigSection(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ValidationError(where() + "expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  const Json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  ConfigSection section(const std::string& key) {
    return ConfigSection(raw(key), path_.empty() ? key : path_ + "." + key);
  }

  template <typename T>
  void read(const std::string& key, T& out) {
    if (!has(key)) return;
    const Json& v = raw(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ValidationError("expected a boolean");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw ValidationError("expected an integer");
        if (std::is_unsigned_v<T> && v.get<long long>() < 0 && !v.is_number_unsigned())
          throw ValidationError("expected a non-negative integer");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw ValidationError("expected a number");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ValidationError("expected a string");
      }
      out = v.get<T>();
    } catch (const ValidationError& e) {
      throw ValidationError(where(key) + e.what());
    } catch (const Json::exception& e) {
      throw ValidationError(where(key) + e.what());
    }
  }

  void read_range(const std::string& key, double& lo, double& hi) {
    if (!has(key)) return;
    const Json& v = raw(key);
    if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
      throw ValidationError(where(key) + "expected [min, max]");
    lo = v[0].get<double>();
    hi = v[1].get<double>();
  }

  /// Rejects keys that were never read.
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ValidationError(where(it.key()) + "unknown key");
  }

  std::string where(const std::string& key = "") const {
    std::string p = path_;
    if (!key.empty()) p = p.empty() ? key : p + "." + key;
    return p.empty() ? "config: " : "config '" + p + "': ";
  }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline ClassSpec parse_class_spec(ConfigSection s, const ClassSpec& base) {
  ClassSpec c = base;
  s.read("id", c.id);
  s.read("name", c.name);
  s.read("length", c.length);
  s.read("width", c.width);
  s.read("height", c.height);
  s.read("max_agents", c.max_agents);
  s.read("presence", c.presence);
  s.read_range("speed", c.speed_min, c.speed_max);
  s.finish();
  return c;
}

/// "classes" entries may be a class id or name (default spec) or an object
/// overriding fields of a default spec.
inline std::vector<ClassSpec> parse_class_specs(ConfigSection& parent) {
  const auto defaults = default_class_specs();
  auto lookup = [&](const Json& key) -> ClassSpec {
    for (const auto& d : defaults)
      if ((key.is_number_integer() && d.id == key.get<int>()) || (key.is_string() && d.name == key.get<std::string>()))
        return d;
    return ClassSpec{};
  };
  const Json& arr = parent.raw("classes");
  if (!arr.is_array()) throw ValidationError(parent.where("classes") + "expected an array");
  std::vector<ClassSpec> out;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const Json& e = arr[i];
    const std::string path = parent.where("classes[" + std::to_string(i) + "]");
    if (e.is_number_integer() || e.is_string()) {
      ClassSpec c = lookup(e);
      if (c.name.empty()) throw ValidationError(path + "unknown class " + e.dump());
      out.push_back(c);
    } else if (e.is_object()) {
      ClassSpec base;
      if (e.contains("id")) base = lookup(e["id"]);
      else if (e.contains("name")) base = lookup(e["name"]);
      ConfigSection s(e, "classes[" + std::to_string(i) + "]");
      out.push_back(parse_class_spec(std::move(s), base));
    } else {
      throw ValidationError(path + "expected a class id, name or object");
    }
  }
  return out;
}

inline WorldConfig parse_world_config(ConfigSection s) {
  WorldConfig w;
  s.read("n_sequences", w.n_sequences);
  s.read("frames_per_sequence", w.frames_per_sequence);
  s.read("horizon", w.horizon);
  s.read("sample_rate_hz", w.sample_rate_hz);
  if (s.has("classes")) w.classes = parse_class_specs(s);
  if (s.has("motion_mix")) {
    auto m = s.section("motion_mix");
    m.read("static", w.motion_mix.static_fraction);
    m.read("linear", w.motion_mix.linear_fraction);
    m.read("turning", w.motion_mix.turning_fraction);
    m.finish();
  }
  s.read_range("turn_rate", w.turn_rate_min, w.turn_rate_max);
  s.read_range("ego_speed", w.ego_speed_min, w.ego_speed_max);
  s.read("ego_yaw_rate_max", w.ego_yaw_rate_max);
  s.read_range("spawn_radius", w.spawn_radius_min, w.spawn_radius_max);
  s.read("min_separation", w.min_separation);
  s.read("ego_clearance", w.ego_clearance);
  if (s.has("rig")) {
    auto r = s.section("rig");
    r.read("n_views", w.rig.n_views);
    r.read("width", w.rig.width);
    r.read("height", w.rig.height);
    r.read("hfov_deg", w.rig.hfov_deg);
    r.read("mount_height", w.rig.mount_height);
    r.finish();
  }
  s.read("mask_miss_rate", w.mask_miss_rate);
  s.read("query_dim", w.query_dim);
  s.read("query_noise", w.query_noise);
  s.read("query_window", w.query_window);
  s.read("seed", w.seed);
  s.finish();
  w.validate();
  return w;
}

inline DetectorProfile parse_detector_profile(ConfigSection s) {
  DetectorProfile d;
  s.read("sigma_xy", d.sigma_xy);
  s.read("sigma_z", d.sigma_z);
  s.read("sigma_yaw", d.sigma_yaw);
  s.read("sigma_velocity", d.sigma_velocity);
  s.read("miss_rate", d.miss_rate);
  s.read("fp_rate_per_frame", d.fp_rate_per_frame);
  s.read("confidence_mean_tp", d.confidence_mean_tp);
  s.read("confidence_mean_fp", d.confidence_mean_fp);
  s.read("confidence_sigma", d.confidence_sigma);
  s.read("confidence_inflation_per_step", d.confidence_inflation_per_step);
  s.read("track_break_rate", d.track_break_rate);
  s.read_range("fp_range", d.fp_range_min, d.fp_range_max);
  s.read("fp_clearance", d.fp_clearance);
  s.read("seed", d.seed);
  s.finish();
  d.validate();
  return d;
}

inline EvalConfig parse_eval_config(ConfigSection s) {
  EvalConfig e;
  s.read("match_dist", e.match_dist);
  s.read("fde_threshold", e.fde_threshold);
  s.read("horizon", e.horizon);
  s.read("static_eps", e.static_eps);
  s.read("linear_eps", e.linear_eps);
  s.read("epa_alpha", e.epa_alpha);
  s.read("epa_conf_threshold", e.epa_conf_threshold);
  s.read("sample_rate_hz", e.sample_rate_hz);
  s.read("ego_length", e.ego_length);
  s.read("ego_width", e.ego_width);
  s.finish();
  e.validate();
  return e;
}

struct ExperimentConfig {
  WorldConfig world;
  DetectorProfile detector;
  EvalConfig eval;
  SplitScheme scheme = SplitScheme::kPerClass;
  // One class group per step, in step order.
  std::vector<std::vector<ClassId>> class_order = {{0}, {1}, {2}, {3}, {4}, {5}, {6}};
  SplitParams split;
  double theta = kDefaultTheta;
  std::size_t n_replay = kDefaultReplayCapacity;
  ReplayStrategy replay = ReplayStrategy::kVariance;
  bool filter = true;
  PseudoStrategy pseudo = PseudoStrategy::kFromFutureDetections;
  KeypointScheme keypoints = KeypointScheme::kCenterCornersSides13;
  std::string output_dir = "out";
  std::uint64_t seed = 0;

  void validate() const {
    world.validate();
    detector.validate();
    eval.validate();
    if (!(theta > 0 && theta < 1)) throw ValidationError("theta must lie in (0, 1)");
    if (eval.horizon != world.horizon) throw ValidationError("eval.horizon must equal world.horizon");
    if (std::abs(eval.sample_rate_hz - world.sample_rate_hz) > 1e-12)
      throw ValidationError("eval.sample_rate_hz must equal world.sample_rate_hz");
    if (class_order.empty()) throw ValidationError("class_order is empty");
    const auto tax = world.taxonomy();
    std::set<ClassId> seen;
    for (const auto& g : class_order) {
      if (g.empty()) throw ValidationError("class_order has an empty group");
      for (ClassId c : g) {
        if (!tax.contains(c)) throw ValidationError("class_order references class " + std::to_string(c) + " not in world");
        if (!seen.insert(c).second) throw ValidationError("class " + std::to_string(c) + " listed twice in class_order");
      }
    }
    if (scheme == SplitScheme::kPerClass)
      for (const auto& g : class_order)
        if (g.size() != 1) throw ValidationError("per_class scheme needs one class per step");
    if (scheme == SplitScheme::kGroup && split.group_sizes.size() != class_order.size())
      throw ValidationError("group scheme needs one group size per class group");
    if (replay == ReplayStrategy::kVariance && class_order.size() > 1) {
      const std::size_t learned = seen.size() - class_order.back().size();
      if (n_replay < learned)
        throw ValidationError("n_replay " + std::to_string(n_replay) + " is smaller than the " +
                              std::to_string(learned) + " classes that need replay slots");
    }
  }
};

inline ClassId parse_class_ref(const Json& j, const Taxonomy& tax, const std::string& where) {
  if (j.is_number_integer()) {
    const ClassId c = j.get<int>();
    if (!tax.contains(c)) throw ValidationError(where + "unknown class id " + std::to_string(c));
    return c;
  }
  if (j.is_string()) {
    try {
      return tax.id_of(j.get<std::string>());
    } catch (const ValidationError& e) {
      throw ValidationError(where + e.what());
    }
  }
  throw ValidationError(where + "expected a class id or name");
}

inline ExperimentConfig parse_experiment_config(const Json& j) {
  ConfigSection s(j, "");
  ExperimentConfig c;
  if (s.has("world")) c.world = parse_world_config(s.section("world"));
  if (s.has("detector")) c.detector = parse_detector_profile(s.section("detector"));
  if (s.has("eval")) c.eval = parse_eval_config(s.section("eval"));
  else {
    c.eval.horizon = c.world.horizon;
    c.eval.sample_rate_hz = c.world.sample_rate_hz;
  }
  if (s.has("split")) {
    auto sp = s.section("split");
    std::string scheme = to_string(c.scheme);
    sp.read("scheme", scheme);
    c.scheme = split_scheme_from_string(scheme);
    if (sp.has("class_order")) {
      const Json& order = sp.raw("class_order");
      const std::string where = sp.where("class_order");
      if (!order.is_array()) throw ValidationError(where + "expected an array");
      const auto tax = c.world.taxonomy();
      c.class_order.clear();
      for (const auto& g : order) {
        std::vector<ClassId> group;
        if (g.is_array())
          for (const auto& e : g) group.push_back(parse_class_ref(e, tax, where));
        else
          group.push_back(parse_class_ref(g, tax, where));
        c.class_order.push_back(std::move(group));
      }
    } else {
      // Default order restricted to the world's classes.
      const auto tax = c.world.taxonomy();
      std::erase_if(c.class_order, [&](const auto& g) { return !tax.contains(g.front()); });
    }
    sp.read("max_sequences", c.split.max_sequences);
    sp.read("group_sizes", c.split.group_sizes);
    sp.read("allow_sequence_reuse", c.split.allow_sequence_reuse);
    sp.finish();
  } else {
    const auto tax = c.world.taxonomy();
    std::erase_if(c.class_order, [&](const auto& g) { return !tax.contains(g.front()); });
  }
  s.read("theta", c.theta);
  s.read("n_replay", c.n_replay);
  std::string replay = to_string(c.replay), pseudo = to_string(c.pseudo);
  s.read("replay_strategy", replay);
  s.read("pseudo_strategy", pseudo);
  c.replay = replay_strategy_from_string(replay);
  c.pseudo = pseudo_strategy_from_string(pseudo);
  s.read("filter", c.filter);
  if (s.has("keypoints")) {
    int n = 0;
    s.read("keypoints", n);
    c.keypoints = keypoint_scheme_from_count(n);
  }
  s.read("output_dir", c.output_dir);
  s.read("seed", c.seed);
  s.finish();
  c.validate();
  return c;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config " + path);
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ValidationError("config " + path + ": malformed JSON: " + e.what());
  }
  return parse_experiment_config(j);
}

inline Json to_json(const ExperimentConfig& c) {
  Json classes = Json::array();
  for (const auto& k : c.world.classes)
    classes.push_back({{"id", k.id}, {"name", k.name}, {"length", num(k.length)}, {"width", num(k.width)},
                       {"height", num(k.height)}, {"max_agents", k.max_agents}, {"presence", num(k.presence)},
                       {"speed", {num(k.speed_min), num(k.speed_max)}}});
  const auto& w = c.world;
  const auto& d = c.detector;
  const auto& e = c.eval;
  Json j;
  j["world"] = {{"n_sequences", w.n_sequences},
                {"frames_per_sequence", w.frames_per_sequence},
                {"horizon", w.horizon},
                {"sample_rate_hz", num(w.sample_rate_hz)},
                {"classes", classes},
                {"motion_mix",
                 {{"static", num(w.motion_mix.static_fraction)},
                  {"linear", num(w.motion_mix.linear_fraction)},
                  {"turning", num(w.motion_mix.turning_fraction)}}},
                {"turn_rate", {num(w.turn_rate_min), num(w.turn_rate_max)}},
                {"ego_speed", {num(w.ego_speed_min), num(w.ego_speed_max)}},
                {"ego_yaw_rate_max", num(w.ego_yaw_rate_max)},
                {"spawn_radius", {num(w.spawn_radius_min), num(w.spawn_radius_max)}},
                {"min_separation", num(w.min_separation)},
                {"ego_clearance", num(w.ego_clearance)},
                {"rig",
                 {{"n_views", w.rig.n_views},
                  {"width", w.rig.width},
                  {"height", w.rig.height},
                  {"hfov_deg", num(w.rig.hfov_deg)},
                  {"mount_height", num(w.rig.mount_height)}}},
                {"mask_miss_rate", num(w.mask_miss_rate)},
                {"query_dim", w.query_dim},
                {"query_noise", num(w.query_noise)},
                {"query_window", w.query_window},
                {"seed", w.seed}};
  j["detector"] = {{"sigma_xy", num(d.sigma_xy)},
                   {"sigma_z", num(d.sigma_z)},
                   {"sigma_yaw", num(d.sigma_yaw)},
                   {"sigma_velocity", num(d.sigma_velocity)},
                   {"miss_rate", num(d.miss_rate)},
                   {"fp_rate_per_frame", num(d.fp_rate_per_frame)},
                   {"confidence_mean_tp", num(d.confidence_mean_tp)},
                   {"confidence_mean_fp", num(d.confidence_mean_fp)},
                   {"confidence_sigma", num(d.confidence_sigma)},
                   {"confidence_inflation_per_step", num(d.confidence_inflation_per_step)},
                   {"track_break_rate", num(d.track_break_rate)},
                   {"fp_range", {num(d.fp_range_min), num(d.fp_range_max)}},
                   {"fp_clearance", num(d.fp_clearance)},
                   {"seed", d.seed}};
  j["eval"] = {{"match_dist", num(e.match_dist)},
               {"fde_threshold", num(e.fde_threshold)},
               {"horizon", e.horizon},
               {"static_eps", num(e.static_eps)},
               {"linear_eps", num(e.linear_eps)},
               {"epa_alpha", num(e.epa_alpha)},
               {"epa_conf_threshold", num(e.epa_conf_threshold)},
               {"sample_rate_hz", num(e.sample_rate_hz)},
               {"ego_length", num(e.ego_length)},
               {"ego_width", num(e.ego_width)}};
  j["split"] = {{"scheme", to_string(c.scheme)},
                {"class_order", c.class_order},
                {"max_sequences", c.split.max_sequences},
                {"group_sizes", c.split.group_sizes},
                {"allow_sequence_reuse", c.split.allow_sequence_reuse}};
  j["theta"] = num(c.theta);
  j["n_replay"] = c.n_replay;
  j["replay_strategy"] = to_string(c.replay);
  j["pseudo_strategy"] = to_string(c.pseudo);
  j["filter"] = c.filter;
  j["keypoints"] = static_cast<int>(c.keypoints);
  j["output_dir"] = c.output_dir;
  j["seed"] = c.seed;
  return j;
}

}  // namespace owf
