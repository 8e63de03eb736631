#pragma once

// JSONL encoding of sequences. One sequence per line; rotations are stored as
// unit quaternions (w, x, y, z), floats with 9 significant digits, bitmap
// masks run-length encoded as [value, count, ...] in row-major order.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "owf/error.hpp"
#include "owf/types.hpp"

namespace owf {

using Json = nlohmann::json;

/// Rounds to 9 significant digits so the emitted JSON number is short and
/// re-serializes to the same bytes.
inline double round_sig9(double x) {
  if (!std::isfinite(x) || x == 0.0) return x == 0.0 ? 0.0 : x;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", x);
  return std::strtod(buf, nullptr);
}

inline Json num(double x) { return round_sig9(x); }

inline Json vec_json(const Vec3& v) { return Json::array({num(v.x()), num(v.y()), num(v.z())}); }

// ---------------------------------------------------------------------------
// Encoding

inline Json encode_pose(const SE3Transform& t) {
  const auto q = t.quaternion();
  return {{"q", Json::array({num(q[0]), num(q[1]), num(q[2]), num(q[3])})},
          {"t", vec_json(t.translation())}};
}

inline Json encode(const Box3D& b) {
  return {{"center", Json::array({num(b.x), num(b.y), num(b.z)})},
          {"size", Json::array({num(b.w), num(b.l), num(b.h)})},
          {"yaw", num(b.yaw)},
          {"velocity", Json::array({num(b.vx), num(b.vy), num(b.vz)})}};
}

inline Json encode(const TrajectoryLabel& t) {
  Json arr = Json::array();
  for (const auto& w : t.waypoints)
    arr.push_back(w.valid ? Json::array({num(w.x), num(w.y)}) : Json(nullptr));
  return arr;
}

inline Json encode(const CameraModel& c) {
  Json j = encode_pose(c.camera_from_ego);
  j["view_id"] = c.view_id;
  j["fx"] = num(c.fx);
  j["fy"] = num(c.fy);
  j["cx"] = num(c.cx);
  j["cy"] = num(c.cy);
  j["width"] = c.width;
  j["height"] = c.height;
  return j;
}

inline Json encode(const Annotation& a) {
  return {{"instance_id", a.instance_id}, {"class", a.class_id}, {"box", encode(a.box)}, {"future", encode(a.future)}};
}

inline Json encode(const Detection& d) {
  return {{"track_id", d.track_id}, {"class", d.class_id}, {"box", encode(d.box)}, {"confidence", num(d.confidence)}};
}

inline Json rect_json(const PixelRect& r) { return Json::array({r.u0, r.v0, r.u1, r.v1}); }

inline std::vector<long long> rle_encode(const std::vector<std::uint8_t>& bits) {
  std::vector<long long> out;
  for (std::size_t i = 0; i < bits.size();) {
    std::size_t j = i;
    while (j < bits.size() && bits[j] == bits[i]) ++j;
    out.push_back(bits[i] ? 1 : 0);
    out.push_back(static_cast<long long>(j - i));
    i = j;
  }
  return out;
}

inline Json encode(const InstanceMask& m) {
  Json j{{"view_id", m.view_id}, {"class", m.class_id}, {"bbox", rect_json(m.bbox2d)}};
  if (const auto* bm = std::get_if<MaskBitmap>(&m.region)) {
    j["width"] = bm->width;
    j["height"] = bm->height;
    j["rle"] = rle_encode(bm->bits);
  } else {
    j["box"] = rect_json(std::get<PixelRect>(m.region));
  }
  return j;
}

inline Json encode(const MotionQuery& q) {
  Json v = Json::array();
  for (double x : q.vector) v.push_back(num(x));
  return {{"owner", {{"sequence_id", q.owner.sequence_id}, {"frame", q.owner.frame}, {"track_id", q.owner.track_id}}},
          {"class", q.class_id},
          {"vector", std::move(v)}};
}

inline Json encode(const Sample& s) {
  Json j{{"frame", s.frame_index}, {"ego_pose", encode_pose(s.ego_pose.world_from_ego)}};
  auto list = [](const auto& items) {
    Json arr = Json::array();
    for (const auto& it : items) arr.push_back(encode(it));
    return arr;
  };
  j["cameras"] = list(s.cameras);
  j["annotations"] = list(s.annotations);
  j["detections"] = list(s.detections);
  j["masks"] = list(s.masks);
  j["queries"] = list(s.queries);
  return j;
}

inline Json encode(const Sequence& seq) {
  Json samples = Json::array();
  for (const auto& s : seq.samples) samples.push_back(encode(s));
  return {{"sequence_id", seq.sequence_id}, {"samples", std::move(samples)}};
}

// ---------------------------------------------------------------------------
// Decoding

// Tracks the record number and a field path for error messages.
class JsonReader {
 public:
  JsonReader(std::size_t record, std::string path = "") : record_(record), path_(std::move(path)) {}

  JsonReader at(const std::string& key) const { return {record_, path_.empty() ? key : path_ + "." + key}; }
  JsonReader at(std::size_t idx) const { return {record_, path_ + "[" + std::to_string(idx) + "]"}; }

  [[noreturn]] void fail(const std::string& what) const { throw ParseError(record_, path_, what); }

  const Json& field(const Json& obj, const std::string& key) const {
    if (!obj.is_object()) fail("expected an object");
    auto it = obj.find(key);
    if (it == obj.end()) at(key).fail("missing field");
    return *it;
  }

  double number(const Json& j) const {
    if (!j.is_number()) fail("expected a number");
    return j.get<double>();
  }
  int integer(const Json& j) const {
    if (!j.is_number_integer()) fail("expected an integer");
    return j.get<int>();
  }
  std::string string(const Json& j) const {
    if (!j.is_string()) fail("expected a string");
    return j.get<std::string>();
  }
  const Json& array(const Json& j, std::size_t expected_size = 0) const {
    if (!j.is_array()) fail("expected an array");
    if (expected_size != 0 && j.size() != expected_size)
      fail("expected " + std::to_string(expected_size) + " elements");
    return j;
  }

  double number_at(const Json& obj, const std::string& key) const { return at(key).number(field(obj, key)); }
  int integer_at(const Json& obj, const std::string& key) const { return at(key).integer(field(obj, key)); }
  std::string string_at(const Json& obj, const std::string& key) const { return at(key).string(field(obj, key)); }

  template <std::size_t N>
  std::array<double, N> numbers_at(const Json& obj, const std::string& key) const {
    const JsonReader r = at(key);
    const Json& arr = r.array(field(obj, key), N);
    std::array<double, N> out{};
    for (std::size_t i = 0; i < N; ++i) out[i] = r.at(i).number(arr[i]);
    return out;
  }

  std::size_t record() const { return record_; }
  const std::string& path() const { return path_; }

 private:
  std::size_t record_;
  std::string path_;
};

inline SE3Transform decode_pose(const JsonReader& r, const Json& j) {
  const auto q = r.numbers_at<4>(j, "q");
  const auto t = r.numbers_at<3>(j, "t");
  try {
    return SE3Transform::from_quaternion(q, Vec3(t[0], t[1], t[2]));
  } catch (const ValidationError& e) {
    r.at("q").fail(e.what());
  }
}

inline Box3D decode_box(const JsonReader& r, const Json& j) {
  const auto c = r.numbers_at<3>(j, "center");
  const auto s = r.numbers_at<3>(j, "size");
  const auto v = r.numbers_at<3>(j, "velocity");
  Box3D b;
  b.x = c[0], b.y = c[1], b.z = c[2];
  b.w = s[0], b.l = s[1], b.h = s[2];
  b.yaw = r.number_at(j, "yaw");
  b.vx = v[0], b.vy = v[1], b.vz = v[2];
  return b;
}

inline TrajectoryLabel decode_trajectory(const JsonReader& r, const Json& j) {
  TrajectoryLabel t;
  r.array(j);
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (j[i].is_null()) {
      t.waypoints.push_back(Waypoint::invalid());
      continue;
    }
    const JsonReader ri = r.at(i);
    const Json& p = ri.array(j[i], 2);
    t.waypoints.push_back(Waypoint::at(ri.at(0).number(p[0]), ri.at(1).number(p[1])));
  }
  return t;
}

inline CameraModel decode_camera(const JsonReader& r, const Json& j) {
  CameraModel c;
  c.view_id = r.string_at(j, "view_id");
  c.camera_from_ego = decode_pose(r, j);
  c.fx = r.number_at(j, "fx");
  c.fy = r.number_at(j, "fy");
  c.cx = r.number_at(j, "cx");
  c.cy = r.number_at(j, "cy");
  c.width = r.integer_at(j, "width");
  c.height = r.integer_at(j, "height");
  return c;
}

inline Annotation decode_annotation(const JsonReader& r, const Json& j) {
  Annotation a;
  a.instance_id = r.string_at(j, "instance_id");
  a.class_id = r.integer_at(j, "class");
  a.box = decode_box(r.at("box"), r.field(j, "box"));
  a.future = decode_trajectory(r.at("future"), r.field(j, "future"));
  return a;
}

inline Detection decode_detection(const JsonReader& r, const Json& j) {
  Detection d;
  d.track_id = r.string_at(j, "track_id");
  d.class_id = r.integer_at(j, "class");
  d.box = decode_box(r.at("box"), r.field(j, "box"));
  d.confidence = r.number_at(j, "confidence");
  return d;
}

inline PixelRect decode_rect(const JsonReader& r, const Json& j) {
  r.array(j, 4);
  return {r.at(0).integer(j[0]), r.at(1).integer(j[1]), r.at(2).integer(j[2]), r.at(3).integer(j[3])};
}

inline InstanceMask decode_mask(const JsonReader& r, const Json& j) {
  InstanceMask m;
  m.view_id = r.string_at(j, "view_id");
  m.class_id = r.integer_at(j, "class");
  m.bbox2d = decode_rect(r.at("bbox"), r.field(j, "bbox"));
  if (j.contains("rle")) {
    MaskBitmap bm;
    bm.width = r.integer_at(j, "width");
    bm.height = r.integer_at(j, "height");
    if (bm.width < 0 || bm.height < 0) r.at("width").fail("negative bitmap size");
    const JsonReader rr = r.at("rle");
    const Json& rle = rr.array(r.field(j, "rle"));
    if (rle.size() % 2 != 0) rr.fail("run-length list must have even length");
    const std::size_t total = static_cast<std::size_t>(bm.width) * static_cast<std::size_t>(bm.height);
    bm.bits.reserve(total);
    for (std::size_t i = 0; i < rle.size(); i += 2) {
      const int value = rr.at(i).integer(rle[i]);
      const int count = rr.at(i + 1).integer(rle[i + 1]);
      if ((value != 0 && value != 1) || count < 0) rr.at(i).fail("invalid run");
      if (bm.bits.size() + static_cast<std::size_t>(count) > total) rr.fail("runs exceed bitmap size");
      bm.bits.insert(bm.bits.end(), static_cast<std::size_t>(count), static_cast<std::uint8_t>(value));
    }
    if (bm.bits.size() != total) rr.fail("runs do not cover the bitmap");
    m.region = std::move(bm);
  } else {
    m.region = decode_rect(r.at("box"), r.field(j, "box"));
  }
  return m;
}

inline MotionQuery decode_query(const JsonReader& r, const Json& j) {
  MotionQuery q;
  const JsonReader ro = r.at("owner");
  const Json& owner = r.field(j, "owner");
  q.owner.sequence_id = ro.string_at(owner, "sequence_id");
  q.owner.frame = ro.integer_at(owner, "frame");
  q.owner.track_id = ro.string_at(owner, "track_id");
  q.class_id = r.integer_at(j, "class");
  const JsonReader rv = r.at("vector");
  const Json& v = rv.array(r.field(j, "vector"));
  for (std::size_t i = 0; i < v.size(); ++i) q.vector.push_back(rv.at(i).number(v[i]));
  return q;
}

template <typename T, typename F>
std::vector<T> decode_list(const JsonReader& r, const Json& obj, const std::string& key, F&& decode_one) {
  const JsonReader rl = r.at(key);
  const Json& arr = rl.array(r.field(obj, key));
  std::vector<T> out;
  out.reserve(arr.size());
  for (std::size_t i = 0; i < arr.size(); ++i) out.push_back(decode_one(rl.at(i), arr[i]));
  return out;
}

inline Sample decode_sample(const JsonReader& r, const Json& j) {
  Sample s;
  s.frame_index = r.integer_at(j, "frame");
  s.ego_pose.frame_index = s.frame_index;
  s.ego_pose.world_from_ego = decode_pose(r.at("ego_pose"), r.field(j, "ego_pose"));
  s.cameras = decode_list<CameraModel>(r, j, "cameras", decode_camera);
  s.annotations = decode_list<Annotation>(r, j, "annotations", decode_annotation);
  s.detections = decode_list<Detection>(r, j, "detections", decode_detection);
  s.masks = decode_list<InstanceMask>(r, j, "masks", decode_mask);
  s.queries = decode_list<MotionQuery>(r, j, "queries", decode_query);
  return s;
}

inline Sequence decode_sequence(const JsonReader& r, const Json& j) {
  Sequence seq;
  seq.sequence_id = r.string_at(j, "sequence_id");
  seq.samples = decode_list<Sample>(r, j, "samples", decode_sample);
  return seq;
}

// ---------------------------------------------------------------------------
// Files

inline std::string to_jsonl_line(const Sequence& seq) { return encode(seq).dump(); }

/// Parses a JSONL stream. `horizon` > 0 additionally checks every future
/// trajectory length.
inline std::vector<Sequence> read_sequences(std::istream& in, std::size_t horizon = 0) {
  std::vector<Sequence> out;
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
    Sequence seq = decode_sequence(JsonReader(record), j);
    try {
      validate(seq, horizon);
    } catch (const ParseError&) {
      throw;
    } catch (const ValidationError& e) {
      throw ValidationError("record " + std::to_string(record) + ": " + e.what());
    }
    out.push_back(std::move(seq));
  }
  return out;
}

inline void write_sequences(std::ostream& out, const std::vector<Sequence>& sequences) {
  for (const auto& seq : sequences) out << to_jsonl_line(seq) << '\n';
}

inline std::vector<Sequence> load_sequences(const std::string& path, std::size_t horizon = 0) {
  std::ifstream in(path);
  if (!in) throw RuntimeError("cannot open " + path);
  return read_sequences(in, horizon);
}

inline void save_sequences(const std::vector<Sequence>& sequences, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeError("cannot write " + path);
  write_sequences(out, sequences);
}

}  // namespace owf
