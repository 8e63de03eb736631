#pragma once

// JSON records for pipeline artifacts other than datasets: splits, replay
// buffers, pseudo-labels, merged training labels and forecast predictions.

#include <fstream>
#include <string>
#include <vector>

#include "owf/metrics.hpp"
#include "owf/pseudolabel.hpp"
#include "owf/replay.hpp"
#include "owf/serialization.hpp"

namespace owf {

inline Json encode(const IncrementalSplit& split) {
  Json steps = Json::array();
  for (const auto& s : split.steps) steps.push_back({{"classes", s.classes}, {"sequence_ids", s.sequence_ids}});
  return {{"scheme", to_string(split.scheme)}, {"steps", steps}};
}

inline IncrementalSplit decode_split(const Json& j) {
  const JsonReader r(1);
  IncrementalSplit split;
  try {
    split.scheme = split_scheme_from_string(r.string_at(j, "scheme"));
  } catch (const ParseError&) {
    throw;
  } catch (const ValidationError& e) {
    r.at("scheme").fail(e.what());
  }
  split.steps = decode_list<SplitStep>(r, j, "steps", [](const JsonReader& rs, const Json& js) {
    SplitStep st;
    st.classes = decode_list<ClassId>(rs, js, "classes", [](const JsonReader& rc, const Json& c) { return rc.integer(c); });
    st.sequence_ids =
        decode_list<std::string>(rs, js, "sequence_ids", [](const JsonReader& rc, const Json& c) { return rc.string(c); });
    return st;
  });
  return split;
}

inline Json encode(const ReplayBuffer& b) {
  Json entries = Json::array();
  for (const auto& e : b.entries) {
    Json cls = e.class_id ? Json(*e.class_id) : Json(nullptr);
    entries.push_back({{"sequence_id", e.sequence_id}, {"class", cls}, {"score", num(e.score)}});
  }
  return {{"capacity", b.capacity}, {"entries", entries}};
}

inline ReplayBuffer decode_buffer(const Json& j) {
  const JsonReader r(1);
  ReplayBuffer b;
  b.capacity = static_cast<std::size_t>(r.integer_at(j, "capacity"));
  b.entries = decode_list<ReplayEntry>(r, j, "entries", [](const JsonReader& re, const Json& je) {
    ReplayEntry e;
    e.sequence_id = re.string_at(je, "sequence_id");
    const Json& c = re.field(je, "class");
    if (!c.is_null()) e.class_id = re.at("class").integer(c);
    e.score = re.number_at(je, "score");
    return e;
  });
  b.underfilled = b.entries.size() < b.capacity;
  return b;
}

inline Json encode(const PseudoLabel& p) {
  return {{"sequence_id", p.sequence_id}, {"frame", p.frame},           {"track_id", p.source_track_id},
          {"class", p.class_id},          {"box", encode(p.box)},       {"future", encode(p.future)},
          {"confidence", num(p.confidence)}, {"loss_weight", p.loss_weight}, {"provenance", to_string(p.provenance)}};
}

inline PseudoLabel decode_pseudo_label(const JsonReader& r, const Json& j) {
  PseudoLabel p;
  p.sequence_id = r.string_at(j, "sequence_id");
  p.frame = r.integer_at(j, "frame");
  p.source_track_id = r.string_at(j, "track_id");
  p.class_id = r.integer_at(j, "class");
  p.box = decode_box(r.at("box"), r.field(j, "box"));
  p.future = decode_trajectory(r.at("future"), r.field(j, "future"));
  p.confidence = r.number_at(j, "confidence");
  if (!(p.confidence >= 0 && p.confidence <= 1)) r.at("confidence").fail("confidence outside [0, 1]");
  if (j.contains("loss_weight")) {
    p.loss_weight = r.integer_at(j, "loss_weight");
    if (p.loss_weight != 0 && p.loss_weight != 1) r.at("loss_weight").fail("loss weight must be 0 or 1");
  }
  if (j.contains("provenance")) {
    try {
      p.provenance = pseudo_strategy_from_string(r.string_at(j, "provenance"));
    } catch (const ParseError&) {
      throw;
    } catch (const ValidationError& e) {
      r.at("provenance").fail(e.what());
    }
  }
  return p;
}

/// A merged training label tied to its sample.
struct KeyedLabel {
  SampleKey key;
  TrainingLabel label;
};

inline Json encode(const KeyedLabel& k) {
  const auto& l = k.label;
  Json j = {{"sequence_id", k.key.sequence_id},
            {"frame", k.key.frame},
            {"source", l.source == LabelSource::kGroundTruth ? "gt" : "pseudo"},
            {"id", l.id},
            {"class", l.class_id},
            {"box", encode(l.box)},
            {"future", encode(l.future)},
            {"confidence", num(l.confidence)},
            {"loss_weight", l.loss_weight}};
  if (l.provenance) j["provenance"] = to_string(*l.provenance);
  return j;
}

/// Reads a forecast record. Either "modes" ([{score, trajectory}]) or a
/// single "future" trajectory must be present.
inline ForecastPrediction decode_prediction(const JsonReader& r, const Json& j) {
  ForecastPrediction p;
  p.key.sequence_id = r.string_at(j, "sequence_id");
  p.key.frame = r.integer_at(j, "frame");
  p.class_id = r.integer_at(j, "class");
  p.box = decode_box(r.at("box"), r.field(j, "box"));
  p.confidence = r.number_at(j, "confidence");
  if (!(p.confidence >= 0 && p.confidence <= 1)) r.at("confidence").fail("confidence outside [0, 1]");
  if (j.contains("modes")) {
    p.modes = decode_list<ForecastMode>(r, j, "modes", [](const JsonReader& rm, const Json& jm) {
      ForecastMode m;
      m.score = rm.number_at(jm, "score");
      m.trajectory = decode_trajectory(rm.at("trajectory"), rm.field(jm, "trajectory"));
      return m;
    });
    if (p.modes.empty()) r.at("modes").fail("at least one mode required");
  } else {
    p.modes.push_back({decode_trajectory(r.at("future"), r.field(j, "future")), 1.0});
  }
  return p;
}

template <typename T, typename F>
std::vector<T> read_jsonl(const std::string& path, F&& decode_one) {
  std::ifstream in(path);
  if (!in) throw RuntimeError("cannot open " + path);
  std::vector<T> out;
  std::string line;
  std::size_t record = 0;
  while (std::getline(in, line)) {
    ++record;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Json j;
    try {
      j = Json::parse(line);
    } catch (const Json::parse_error& e) {
      throw ParseError(record, "", std::string("malformed JSON: ") + e.what());
    }
    out.push_back(decode_one(JsonReader(record), j));
  }
  return out;
}

template <typename T>
void write_jsonl(const std::string& path, const std::vector<T>& items) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeError("cannot write " + path);
  for (const auto& x : items) out << encode(x).dump() << '\n';
}

inline void write_json(const std::string& path, const Json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeError("cannot write " + path);
  out << j.dump(2) << '\n';
}

inline Json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw RuntimeError("cannot open " + path);
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ValidationError(path + ": malformed JSON: " + e.what());
  }
}

}  // namespace owf
