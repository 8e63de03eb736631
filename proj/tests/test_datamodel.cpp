#include <gtest/gtest.h>

#include <fstream>
#include <functional>
#include <sstream>

#include "fixtures.hpp"

using namespace owf;
using namespace owf::testing;

namespace {

std::vector<Sequence> rich_world() {
  WorldConfig w = small_world(4, 10);
  w.seed = 11;
  auto seqs = generate_world(w);
  DetectorProfile d;
  d.fp_rate_per_frame = 0.5;
  for (auto& s : seqs) {
    render_sequence_masks(s, 0.1, 3);
    simulate_detector(s, d, 1, w.classes);
    simulate_queries(s, w.query_dim, 0.05, w.query_window, w.dt(), 4);
  }
  // One externally supplied bitmap mask.
  const auto& cam = seqs[0].samples[0].cameras[0];
  MaskBitmap bm{cam.width, cam.height, std::vector<std::uint8_t>(static_cast<std::size_t>(cam.width) * cam.height, 0)};
  for (int v = 100; v < 140; ++v)
    for (int u = 200; u < 260; ++u) bm.bits[static_cast<std::size_t>(v) * cam.width + u] = (u + v) % 3 != 0;
  seqs[0].samples[0].masks.push_back(InstanceMask::from_bitmap(cam.view_id, 1, bm));
  return seqs;
}

std::string dump(const std::vector<Sequence>& seqs) {
  std::ostringstream out;
  write_sequences(out, seqs);
  return out.str();
}

std::vector<Sequence> parse(const std::string& text) {
  std::istringstream in(text);
  return read_sequences(in);
}

Json first_record(const std::vector<Sequence>& seqs) { return encode(seqs.front()); }

}  // namespace

TEST(Serialization, RoundTripIsStructurallyEqual) {
  const auto seqs = rich_world();
  const auto path = scratch_dir("roundtrip") / "world.jsonl";
  save_sequences(seqs, path.string());
  const auto back = load_sequences(path.string(), 6);
  ASSERT_EQ(back.size(), seqs.size());
  for (std::size_t i = 0; i < seqs.size(); ++i) EXPECT_TRUE(same_sequence(seqs[i], back[i])) << i;
  EXPECT_TRUE(std::holds_alternative<MaskBitmap>(back[0].samples[0].masks.back().region));
}

TEST(Serialization, SecondSaveIsByteIdentical) {
  const auto text = dump(rich_world());
  EXPECT_EQ(dump(parse(text)), text);
}

TEST(Serialization, QuaternionFormatAndRle) {
  const auto seqs = rich_world();
  const Json j = first_record(seqs);
  const Json& pose = j["samples"][0]["ego_pose"];
  ASSERT_EQ(pose["q"].size(), 4u);
  EXPECT_GE(pose["q"][0].get<double>(), 0.0);
  const Json& mask = j["samples"][0]["masks"].back();
  ASSERT_TRUE(mask.contains("rle"));
  long long total = 0;
  for (std::size_t i = 1; i < mask["rle"].size(); i += 2) total += mask["rle"][i].get<long long>();
  EXPECT_EQ(total, mask["width"].get<long long>() * mask["height"].get<long long>());
}

TEST(Serialization, NineSignificantDigits) {
  EXPECT_EQ(Json(round_sig9(1.0 / 3.0)).dump(), "0.333333333");
  EXPECT_EQ(Json(round_sig9(123456.7891234)).dump(), "123456.789");
  EXPECT_EQ(round_sig9(0.0), 0.0);
}

TEST(Serialization, EmptyFileGivesNoSequences) {
  EXPECT_TRUE(parse("").empty());
  EXPECT_TRUE(parse("\n  \n").empty());
}

TEST(Serialization, ConfidenceAboveOneIsRejected) {
  auto seqs = rich_world();
  seqs.resize(1);
  ASSERT_FALSE(seqs[0].samples[2].detections.empty());
  seqs[0].samples[2].detections[0].confidence = 1.3;
  try {
    parse(dump(seqs));
    FAIL() << "expected a validation error";
  } catch (const ParseError&) {
    FAIL() << "should be an invariant error, not a schema error";
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("record 1"), std::string::npos) << msg;
    EXPECT_NE(msg.find("detection"), std::string::npos) << msg;
    EXPECT_NE(msg.find("confidence"), std::string::npos) << msg;
  }
}

TEST(Serialization, MissingFieldNamesRecordAndPath) {
  auto seqs = rich_world();
  std::string text = dump(seqs);
  // Second record: drop the yaw of the first annotation of the first sample.
  Json j = encode(seqs[1]);
  j["samples"][0]["annotations"][0]["box"].erase("yaw");
  std::istringstream lines(text);
  std::string first;
  std::getline(lines, first);
  try {
    parse(first + "\n" + j.dump() + "\n");
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.record(), 2u);
    EXPECT_EQ(e.field(), "samples[0].annotations[0].box.yaw");
  }
}

TEST(Serialization, WrongTypeNamesField) {
  auto seqs = rich_world();
  Json j = encode(seqs[0]);
  j["samples"][1]["detections"][0]["confidence"] = "high";
  try {
    parse(j.dump());
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.record(), 1u);
    EXPECT_EQ(e.field(), "samples[1].detections[0].confidence");
  }
}

TEST(Serialization, MalformedJsonAndBadRle) {
  EXPECT_THROW(parse("{\"sequence_id\": \n"), ParseError);
  auto seqs = rich_world();
  Json j = encode(seqs[0]);
  j["samples"][0]["masks"].back()["rle"] = Json::array({0, 5});
  try {
    parse(j.dump());
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("rle"), std::string::npos);
  }
}

TEST(Serialization, InvariantBreachesAreRejected) {
  auto base = rich_world();
  base.resize(1);
  {
    auto s = base;
    s[0].samples[1].frame_index = 5;
    s[0].samples[1].ego_pose.frame_index = 5;
    EXPECT_THROW(parse(dump(s)), ValidationError);
  }
  {
    auto s = base;
    s[0].samples[0].annotations.push_back(s[0].samples[0].annotations.front());
    EXPECT_THROW(parse(dump(s)), ValidationError);
  }
  {
    auto s = base;
    s[0].samples[0].cameras.push_back(s[0].samples[0].cameras.front());
    EXPECT_THROW(parse(dump(s)), ValidationError);
  }
  {
    auto s = base;
    s[0].samples[0].masks.push_back(InstanceMask::from_rect("CAM_0", 0, PixelRect{0, 0, 5000, 10}));
    EXPECT_THROW(parse(dump(s)), ValidationError);
  }
  {
    auto s = base;
    s[0].samples[0].annotations[0].box.w = -1;
    EXPECT_THROW(parse(dump(s)), ValidationError);
  }
  {
    std::istringstream in(dump(base));
    EXPECT_THROW(read_sequences(in, 5), ValidationError);
  }
}

// ---------------------------------------------------------------------------
// Splits

namespace {

Sequence tagged_sequence(const std::string& id, std::vector<ClassId> classes) {
  Sample s;
  s.ego_pose.frame_index = 0;
  int k = 0;
  for (ClassId c : classes) {
    Annotation a;
    a.instance_id = "i" + std::to_string(k++);
    a.class_id = c;
    a.box = make_box(k * 5.0, 0);
    s.annotations.push_back(a);
  }
  return {id, {s}};
}

std::vector<Sequence> tagged_world(std::size_t n, const std::function<std::vector<ClassId>(std::size_t)>& classes_of) {
  std::vector<Sequence> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(tagged_sequence(sequence_name(i), classes_of(i)));
  return out;
}

bool disjoint(const IncrementalSplit& s) {
  std::set<std::string> seen;
  for (const auto& st : s.steps)
    for (const auto& id : st.sequence_ids)
      if (!seen.insert(id).second) return false;
  return true;
}

}  // namespace

TEST(Split, PerClassFollowsClassOrder) {
  const Taxonomy tax = Taxonomy::nuscenes_movable();
  std::vector<std::vector<ClassId>> order;
  for (const char* name : {"car", "pedestrian", "truck", "trailer", "motorcycle", "bicycle", "bus"})
    order.push_back({tax.id_of(name)});
  const auto world = tagged_world(70, [](std::size_t i) { return std::vector<ClassId>{static_cast<ClassId>(i % 7), 0}; });
  SplitParams p;
  p.max_sequences = 5;
  const auto split = build_split(world, SplitScheme::kPerClass, order, p, 1);
  ASSERT_EQ(split.steps.size(), 7u);
  const std::vector<std::string> names{"car", "pedestrian", "truck", "trailer", "motorcycle", "bicycle", "bus"};
  for (std::size_t i = 0; i < 7; ++i) {
    ASSERT_EQ(split.steps[i].classes.size(), 1u);
    EXPECT_EQ(tax.name(split.steps[i].classes[0]), names[i]);
    EXPECT_FALSE(split.steps[i].sequence_ids.empty());
  }
  EXPECT_TRUE(disjoint(split));
}

TEST(Split, PerClassCapsAndReuse) {
  const auto world = tagged_world(400, [](std::size_t) { return std::vector<ClassId>{0, 1}; });
  SplitParams p;
  const auto a = build_split(world, SplitScheme::kPerClass, {{0}, {1}}, p, 5);
  EXPECT_EQ(a.steps[0].sequence_ids.size(), 300u);
  EXPECT_EQ(a.steps[1].sequence_ids.size(), 100u);
  EXPECT_TRUE(disjoint(a));
  p.allow_sequence_reuse = true;
  const auto b = build_split(world, SplitScheme::kPerClass, {{0}, {1}}, p, 5);
  EXPECT_EQ(b.steps[1].sequence_ids.size(), 300u);
  EXPECT_TRUE(std::is_sorted(b.steps[1].sequence_ids.begin(), b.steps[1].sequence_ids.end()));
}

TEST(Split, PerClassOnlyDrawsContainingSequences) {
  const auto world = tagged_world(50, [](std::size_t i) { return std::vector<ClassId>{static_cast<ClassId>(i % 3)}; });
  const auto split = build_split(world, SplitScheme::kPerClass, {{0}, {1}, {2}}, {}, 9);
  std::map<std::string, std::set<ClassId>> present;
  for (const auto& s : world) present[s.sequence_id] = s.classes_present();
  for (const auto& st : split.steps)
    for (const auto& id : st.sequence_ids) EXPECT_TRUE(present[id].count(st.classes[0])) << id;
}

TEST(Split, GroupSizesSevenClasses) {
  const Taxonomy tax = Taxonomy::nuscenes_movable();
  const std::vector<std::vector<ClassId>> groups{
      {tax.id_of("car"), tax.id_of("truck"), tax.id_of("bus"), tax.id_of("trailer")},
      {tax.id_of("pedestrian")},
      {tax.id_of("bicycle"), tax.id_of("motorcycle")}};
  const auto world = tagged_world(760, [](std::size_t i) { return std::vector<ClassId>{static_cast<ClassId>(i % 7)}; });
  SplitParams p;
  p.group_sizes = {234, 233, 233};
  const auto split = build_split(world, SplitScheme::kGroup, groups, p, 2);
  ASSERT_EQ(split.steps.size(), 3u);
  EXPECT_EQ(split.steps[0].sequence_ids.size(), 234u);
  EXPECT_EQ(split.steps[1].sequence_ids.size(), 233u);
  EXPECT_EQ(split.steps[2].sequence_ids.size(), 233u);
  EXPECT_EQ(split.steps[0].classes, groups[0]);
  EXPECT_TRUE(disjoint(split));

  p.group_sizes = {500, 300, 1};
  EXPECT_THROW(build_split(world, SplitScheme::kGroup, groups, p, 2), ValidationError);
  p.group_sizes = {1, 1};
  EXPECT_THROW(build_split(world, SplitScheme::kGroup, groups, p, 2), ValidationError);
}

TEST(Split, OverlappingKeepsEverySequence) {
  const auto world = tagged_world(12, [](std::size_t i) { return std::vector<ClassId>{0, static_cast<ClassId>(1 + i % 2)}; });
  const auto split = build_split(world, SplitScheme::kOverlapping, {{0}, {1}, {2}}, {}, 0);
  for (const auto& st : split.steps) EXPECT_EQ(st.sequence_ids.size(), 12u);
  const auto step0 = materialize_step(world, split, 0);
  for (const auto& s : step0)
    for (const auto& a : s.samples[0].annotations) EXPECT_EQ(a.class_id, 0);
}

TEST(Split, ClassWithoutSequencesIsNamed) {
  const auto world = tagged_world(5, [](std::size_t) { return std::vector<ClassId>{0}; });
  try {
    build_split(world, SplitScheme::kPerClass, {{0}, {4}}, {}, 0);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("class 4"), std::string::npos) << e.what();
  }
}

TEST(Split, SingleSequenceSingleClass) {
  const auto world = tagged_world(1, [](std::size_t) { return std::vector<ClassId>{3}; });
  const auto split = build_split(world, SplitScheme::kPerClass, {{3}}, {}, 0);
  ASSERT_EQ(split.steps.size(), 1u);
  EXPECT_EQ(split.steps[0].sequence_ids, std::vector<std::string>{"seq_0000"});
}

TEST(Split, BadClassOrders) {
  const auto world = tagged_world(5, [](std::size_t) { return std::vector<ClassId>{0, 1}; });
  EXPECT_THROW(build_split(world, SplitScheme::kPerClass, {}, {}, 0), ValidationError);
  EXPECT_THROW(build_split(world, SplitScheme::kPerClass, {{0, 1}}, {}, 0), ValidationError);
  EXPECT_THROW(build_split(world, SplitScheme::kOverlapping, {{0}, {0}}, {}, 0), ValidationError);
}

TEST(Split, DeterministicAndInputOrderFree) {
  const auto world = tagged_world(80, [](std::size_t i) { return std::vector<ClassId>{static_cast<ClassId>(i % 3), 0}; });
  SplitParams p;
  p.max_sequences = 10;
  const auto a = build_split(world, SplitScheme::kPerClass, {{0}, {1}, {2}}, p, 42);
  auto reversed = world;
  std::reverse(reversed.begin(), reversed.end());
  const auto b = build_split(reversed, SplitScheme::kPerClass, {{0}, {1}, {2}}, p, 42);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(a.steps[i].sequence_ids, b.steps[i].sequence_ids);
  const auto c = build_split(world, SplitScheme::kPerClass, {{0}, {1}, {2}}, p, 43);
  EXPECT_NE(a.steps[0].sequence_ids, c.steps[0].sequence_ids);
}

TEST(Split, PropertyDisjointAndBounded) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    WorldConfig w = small_world(30, 7);
    w.seed = seed;
    const auto world = generate_world(w);
    std::set<ClassId> present;
    for (const auto& s : world) for (ClassId c : s.classes_present()) present.insert(c);
    std::vector<std::vector<ClassId>> order;
    for (ClassId c : present) order.push_back({c});
    SplitParams p;
    p.max_sequences = 8;
    IncrementalSplit split;
    try {
      split = build_split(world, SplitScheme::kPerClass, order, p, seed);
    } catch (const ValidationError&) {
      continue;  // a class ran out of unassigned sequences
    }
    std::size_t total = 0;
    for (const auto& st : split.steps) total += st.sequence_ids.size();
    EXPECT_LE(total, world.size());
    EXPECT_TRUE(disjoint(split));
  }
}

TEST(Split, RecordRoundTrip) {
  const auto world = tagged_world(20, [](std::size_t i) { return std::vector<ClassId>{static_cast<ClassId>(i % 2)}; });
  const auto split = build_split(world, SplitScheme::kPerClass, {{1}, {0}}, {}, 3);
  const auto back = decode_split(encode(split));
  EXPECT_EQ(back.scheme, split.scheme);
  ASSERT_EQ(back.steps.size(), 2u);
  EXPECT_EQ(back.steps[1].sequence_ids, split.steps[1].sequence_ids);
  EXPECT_EQ(back.steps[0].classes, std::vector<ClassId>{1});
}

// ---------------------------------------------------------------------------
// Stripping

TEST(Strip, CountsAndUntouchedFields) {
  Sequence seq = tagged_sequence("s", {0, 0, 0, 1, 1});
  seq.samples[0].detections.push_back({"t", 1, make_box(1, 1), 0.5});
  seq.samples[0].masks.push_back(InstanceMask::from_rect("CAM_0", 1, {0, 0, 3, 3}));
  const Sample out = strip_annotations(seq.samples[0], {0});
  EXPECT_EQ(out.annotations.size(), 3u);
  EXPECT_EQ(out.detections.size(), 1u);
  EXPECT_EQ(out.masks.size(), 1u);
  EXPECT_TRUE(strip_annotations(seq.samples[0], {}).annotations.empty());
  EXPECT_EQ(strip_annotations(seq.samples[0], {0, 1, 2, 3, 4, 5, 6}).annotations.size(), 5u);
}

TEST(Strip, Idempotent) {
  auto world = generate_world(small_world(5, 8));
  for (const auto& s : world) {
    const auto once = strip_annotations(s, {1, 2});
    const auto twice = strip_annotations(once, {1, 2});
    EXPECT_TRUE(same_sequence(once, twice, 0));
    for (const auto& sm : once.samples)
      for (const auto& a : sm.annotations) EXPECT_TRUE(a.class_id == 1 || a.class_id == 2);
  }
}

// ---------------------------------------------------------------------------
// Experiment config

TEST(Config, DefaultsAndRoundTrip) {
  const auto c = parse_experiment_config(Json::object());
  EXPECT_DOUBLE_EQ(c.theta, 0.3);
  EXPECT_EQ(c.n_replay, 30u);
  EXPECT_EQ(c.class_order.size(), 7u);
  EXPECT_EQ(static_cast<int>(c.keypoints), 13);
  const auto again = parse_experiment_config(to_json(c));
  EXPECT_EQ(to_json(again).dump(), to_json(c).dump());
}

TEST(Config, NamesAndGroupsInClassOrder) {
  const Json j = Json::parse(R"({"split": {"scheme": "group", "class_order": [["car", "truck"], "pedestrian", [5, 4]],
                                          "group_sizes": [3, 2, 2]}, "n_replay": 6})");
  const auto c = parse_experiment_config(j);
  ASSERT_EQ(c.class_order.size(), 3u);
  EXPECT_EQ(c.class_order[0], (std::vector<ClassId>{0, 2}));
  EXPECT_EQ(c.class_order[1], (std::vector<ClassId>{1}));
  EXPECT_EQ(c.scheme, SplitScheme::kGroup);
}

TEST(Config, ErrorsNameTheKey) {
  auto message = [](const char* text) -> std::string {
    try {
      parse_experiment_config(Json::parse(text));
    } catch (const ValidationError& e) {
      return e.what();
    }
    return "";
  };
  EXPECT_NE(message(R"({"thetaa": 0.3})").find("thetaa"), std::string::npos);
  EXPECT_NE(message(R"({"world": {"n_sequence": 3}})").find("world.n_sequence"), std::string::npos);
  EXPECT_NE(message(R"({"theta": "high"})").find("theta"), std::string::npos);
  EXPECT_NE(message(R"({"theta": 1.5})").find("theta"), std::string::npos);
  EXPECT_NE(message(R"({"split": {"class_order": ["car", "zebra"]}})").find("zebra"), std::string::npos);
  EXPECT_NE(message(R"({"replay_strategy": "best"})").find("best"), std::string::npos);
  EXPECT_FALSE(message(R"({"world": {"motion_mix": {"static": 0.5, "linear": 0.1, "turning": 0.1}}})").empty());
  EXPECT_FALSE(message(R"({"split": {"class_order": ["car", "car"]}})").empty());
  EXPECT_FALSE(message(R"({"n_replay": 2})").empty());
  EXPECT_THROW(load_experiment_config("/nonexistent/owf.json"), ValidationError);
}
