#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sys/wait.h>

#include "owf/owf.hpp"

using namespace owf;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("owf_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(OWF_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Json small_config() {
  return Json{{"world",
               {{"n_sequences", 16},
                {"frames_per_sequence", 14},
                {"classes", {0, 1, 2}}}},
              {"split", {{"class_order", {0, 1, 2}}, {"max_sequences", 6}}},
              {"n_replay", 3}};
}

fs::path write_config(const fs::path& dir, const Json& j) {
  const auto p = dir / "config.json";
  std::ofstream(p) << j.dump(2);
  return p;
}

std::map<std::string, std::string> tree(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) out[e.path().filename().string()] = read_file(e.path());
  return out;
}

}  // namespace

TEST(Cli, RunIsDeterministic) {
  const auto dir = scratch("run");
  const auto cfg = write_config(dir, small_config());
  ASSERT_EQ(run_cli("run --config " + cfg.string() + " --seed 7 --out " + (dir / "a").string()), 0);
  ASSERT_EQ(run_cli("run --config " + cfg.string() + " --seed 7 --out " + (dir / "b").string()), 0);
  const auto a = tree(dir / "a");
  EXPECT_TRUE(a.count("manifest.json"));
  EXPECT_TRUE(a.count("report.csv"));
  EXPECT_EQ(a, tree(dir / "b"));
}

TEST(Cli, EvaluatePerfectPredictions) {
  const auto dir = scratch("evaluate");
  const auto cfg = write_config(dir, small_config());
  ASSERT_EQ(run_cli("simulate --config " + cfg.string() + " --seed 3 --out " + dir.string()), 0);
  const auto world = load_sequences((dir / "world.jsonl").string());
  const std::size_t horizon = parse_experiment_config(small_config()).eval.horizon;
  std::ofstream preds(dir / "preds.jsonl");
  std::size_t n = 0;
  for (const auto& seq : world)
    for (const auto& s : seq.samples) {
      if (!full_horizon(seq, s, horizon)) continue;
      for (const auto& a : s.annotations) {
        const Json line = {{"sequence_id", seq.sequence_id}, {"frame", s.frame_index}, {"class", a.class_id},
                           {"box", encode(a.box)}, {"future", encode(a.future)}, {"confidence", 0.9}};
        preds << line.dump() << '\n';
        ++n;
      }
    }
  preds.close();
  ASSERT_GT(n, 0u);
  ASSERT_EQ(run_cli("evaluate --config " + cfg.string() + " --input " + (dir / "world.jsonl").string() +
                    " --predictions " + (dir / "preds.jsonl").string() + " --out " + dir.string()),
            0);
  const Json r = Json::parse(read_file(dir / "report.json"));
  EXPECT_DOUBLE_EQ(r.at("map_f").get<double>(), 1.0);
  EXPECT_DOUBLE_EQ(r.at("epa").get<double>(), 1.0);
}

TEST(Cli, VarianceReplayMatchesOracle) {
  const auto dir = scratch("replay");
  const auto cfg_json = small_config();
  const auto cfg = write_config(dir, cfg_json);
  const auto ec = parse_experiment_config(cfg_json);
  WorldConfig wc = ec.world;
  wc.seed = 5;
  auto world = generate_world(wc);
  DetectorProfile d = ec.detector;
  d.seed = 9;
  for (auto& seq : world) {
    simulate_detector(seq, d, 1, wc.classes);
    simulate_queries(seq, wc.query_dim, wc.query_noise, wc.query_window, wc.dt(), 13);
  }
  save_sequences(world, (dir / "world.jsonl").string());
  ASSERT_EQ(run_cli("select-replay --config " + cfg.string() + " --input " + (dir / "world.jsonl").string() +
                    " --strategy variance --classes 0 --capacity 4 --out " + dir.string()),
            0);

  // One class: the buffer is the top four sequences by summed squared
  // distance of their class-0 queries to the class-0 mean.
  std::vector<Sequence> loaded;
  for (const auto& s : load_sequences((dir / "world.jsonl").string())) loaded.push_back(strip_annotations(s, {0}));
  const auto matched = collect_matched_queries(loaded, {0}).queries;
  ASSERT_FALSE(matched.empty());
  std::vector<double> mean(matched.front().vector.size(), 0.0);
  for (const auto& q : matched)
    for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += q.vector[k] / static_cast<double>(matched.size());
  std::map<std::string, double> score;
  for (const auto& q : matched) {
    double s = 0;
    for (std::size_t k = 0; k < mean.size(); ++k) s += (q.vector[k] - mean[k]) * (q.vector[k] - mean[k]);
    score[q.sequence_id] += s;
  }
  std::vector<std::pair<std::string, double>> ranked(score.begin(), score.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  ASSERT_GE(ranked.size(), 4u);

  const Json buf = Json::parse(read_file(dir / "buffer.json"));
  ASSERT_EQ(buf.at("entries").size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(buf["entries"][i].at("sequence_id").get<std::string>(), ranked[i].first) << i;
    EXPECT_NEAR(buf["entries"][i].at("score").get<double>(), ranked[i].second, 1e-6 * (1 + ranked[i].second));
  }
}

TEST(Cli, ExitCodes) {
  const auto dir = scratch("codes");
  const auto cfg = write_config(dir, small_config());
  EXPECT_EQ(run_cli("run --config " + cfg.string() + " --bogus"), 2);
  EXPECT_EQ(run_cli("run --config " + (dir / "missing.json").string()), 2);
  EXPECT_EQ(run_cli(""), 2);
  auto bad = small_config();
  bad["world"]["n_sequencez"] = 3;
  EXPECT_EQ(run_cli("run --config " + write_config(dir, bad).string() + " --out " + dir.string()), 2);
  bad = small_config();
  bad["theta"] = 2.0;
  EXPECT_EQ(run_cli("run --config " + write_config(dir, bad).string() + " --out " + dir.string()), 2);
  EXPECT_EQ(run_cli("--help"), 0);
}
