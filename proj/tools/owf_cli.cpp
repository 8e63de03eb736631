// Command line front end. Exit codes: 0 success, 2 usage or validation
// error, 1 runtime error.

#include <filesystem>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "owf/owf.hpp"

namespace fs = std::filesystem;
using namespace owf;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "experiment config (JSON)")->check(CLI::ExistingFile);
  app->add_option("--seed", c.seed, "master seed, overrides the config");
  app->add_option("--out", c.out, "output directory (default: config output_dir)");
}

ExperimentConfig load_config(const Common& c) {
  ExperimentConfig cfg = c.config.empty() ? parse_experiment_config(Json::object()) : load_experiment_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  return cfg;
}

fs::path out_dir(const Common& c, const ExperimentConfig& cfg) {
  fs::path p = c.out.empty() ? fs::path(cfg.output_dir) : fs::path(c.out);
  fs::create_directories(p);
  return p;
}

std::set<ClassId> parse_classes(const std::string& text, const Taxonomy& tax) {
  std::set<ClassId> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const bool numeric = item.find_first_not_of("0123456789") == std::string::npos;
    out.insert(numeric ? std::stoi(item) : tax.id_of(item));
  }
  return out;
}

std::set<ClassId> classes_in(const std::vector<Sequence>& seqs) {
  std::set<ClassId> out;
  for (const auto& s : seqs) {
    const auto p = s.classes_present();
    out.insert(p.begin(), p.end());
  }
  return out;
}

bool has_detections(const std::vector<Sequence>& seqs) {
  for (const auto& seq : seqs)
    for (const auto& s : seq.samples)
      if (!s.detections.empty()) return true;
  return false;
}

DetectorProfile seeded_detector(const ExperimentConfig& cfg) {
  DetectorProfile d = cfg.detector;
  d.seed = derive_seed(cfg.seed, 2, cfg.detector.seed);
  return d;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"open-world motion forecasting pipeline tools"};
  app.require_subcommand(1);

  Common simulate_opts, split_opts, pseudo_opts, filter_opts, replay_opts, eval_opts, run_opts;
  std::string input, labels_path, predictions_path, classes_text, strategy_text;
  int step_index = 1;
  std::optional<std::size_t> capacity;

  auto* simulate = app.add_subcommand("simulate", "generate a synthetic world as JSONL");
  add_common(simulate, simulate_opts);

  auto* split = app.add_subcommand("split", "build an incremental split of a dataset");
  add_common(split, split_opts);
  split->add_option("--input", input, "dataset JSONL")->required()->check(CLI::ExistingFile);

  auto* pseudo = app.add_subcommand("pseudo-label", "pseudo-label proposals from detections");
  add_common(pseudo, pseudo_opts);
  pseudo->add_option("--input", input, "dataset JSONL")->required()->check(CLI::ExistingFile);
  pseudo->add_option("--classes", classes_text, "previously learned classes (ids or names, comma separated)");
  pseudo->add_option("--step", step_index, "step index for confidence inflation")->check(CLI::NonNegativeNumber);

  auto* filter = app.add_subcommand("filter", "mask-based filtering of pseudo-labels");
  add_common(filter, filter_opts);
  filter->add_option("--input", input, "dataset JSONL with cameras and masks")->required()->check(CLI::ExistingFile);
  filter->add_option("--labels", labels_path, "pseudo-label JSONL")->required()->check(CLI::ExistingFile);

  auto* replay = app.add_subcommand("select-replay", "select a replay buffer");
  add_common(replay, replay_opts);
  replay->add_option("--input", input, "dataset JSONL")->required()->check(CLI::ExistingFile);
  replay->add_option("--strategy", strategy_text, "variance, random, feature_similarity, distribution or none");
  replay->add_option("--classes", classes_text, "classes to allocate slots to (default: all present)");
  replay->add_option("--capacity", capacity, "buffer capacity (default: config n_replay)");

  auto* evaluate = app.add_subcommand("evaluate", "forecasting metrics of predictions against ground truth");
  add_common(evaluate, eval_opts);
  evaluate->add_option("--input", input, "ground-truth dataset JSONL")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--predictions", predictions_path, "prediction or label JSONL")
      ->required()
      ->check(CLI::ExistingFile);

  auto* run = app.add_subcommand("run", "full incremental experiment");
  add_common(run, run_opts);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*simulate) {
      const auto cfg = load_config(simulate_opts);
      const auto dir = out_dir(simulate_opts, cfg);
      WorldConfig wc = cfg.world;
      wc.seed = derive_seed(cfg.seed, 1, cfg.world.seed);
      auto world = generate_world(wc);
      for (auto& s : world) render_sequence_masks(s, wc.mask_miss_rate, derive_seed(cfg.seed, 4));
      save_sequences(world, (dir / "world.jsonl").string());
      std::cout << "wrote " << world.size() << " sequences to " << (dir / "world.jsonl").string() << '\n';
    } else if (*split) {
      const auto cfg = load_config(split_opts);
      const auto dir = out_dir(split_opts, cfg);
      const auto seqs = load_sequences(input, cfg.world.horizon);
      const auto s = build_split(seqs, cfg.scheme, cfg.class_order, cfg.split, derive_seed(cfg.seed, 3));
      write_json((dir / "split.json").string(), encode(s));
      std::cout << "wrote " << s.steps.size() << " steps to " << (dir / "split.json").string() << '\n';
    } else if (*pseudo) {
      const auto cfg = load_config(pseudo_opts);
      const auto dir = out_dir(pseudo_opts, cfg);
      auto seqs = load_sequences(input, cfg.world.horizon);
      const auto classes = classes_text.empty() ? classes_in(seqs) : parse_classes(classes_text, cfg.world.taxonomy());
      const bool simulate_detections = !has_detections(seqs);
      const auto profile = seeded_detector(cfg);
      std::vector<PseudoLabel> out;
      for (auto& seq : seqs) {
        if (simulate_detections) simulate_detector(seq, profile, step_index, cfg.world.classes, classes);
        for (const auto& frame : pseudo_label_sequence(seq, cfg.pseudo, cfg.theta, cfg.world.horizon, cfg.world.dt(),
                                                       false, cfg.keypoints))
          out.insert(out.end(), frame.accepted.begin(), frame.accepted.end());
      }
      write_jsonl((dir / "pseudo_labels.jsonl").string(), out);
      std::cout << "wrote " << out.size() << " pseudo-labels\n";
    } else if (*filter) {
      const auto cfg = load_config(filter_opts);
      const auto dir = out_dir(filter_opts, cfg);
      const auto seqs = load_sequences(input, cfg.world.horizon);
      auto labels = read_jsonl<PseudoLabel>(labels_path, decode_pseudo_label);
      std::map<SampleKey, std::vector<PseudoLabel>> by_sample;
      for (auto& l : labels) by_sample[{l.sequence_id, l.frame}].push_back(std::move(l));
      std::map<SampleKey, const Sample*> samples;
      for (const auto& seq : seqs)
        for (const auto& s : seq.samples) samples[{seq.sequence_id, s.frame_index}] = &s;
      std::vector<PseudoLabel> accepted, unmatched;
      std::set<ClassId> label_classes;
      for (auto& [key, group] : by_sample) {
        auto it = samples.find(key);
        if (it == samples.end())
          throw ValidationError("label for unknown sample " + key.sequence_id + " frame " + std::to_string(key.frame));
        std::stable_sort(group.begin(), group.end(), [](const PseudoLabel& a, const PseudoLabel& b) {
          if (a.confidence != b.confidence) return a.confidence > b.confidence;
          return a.source_track_id < b.source_track_id;
        });
        for (const auto& l : group) label_classes.insert(l.class_id);
        MaskPool pool(it->second->masks);
        auto r = filter_proposals(group, pool, it->second->cameras, cfg.keypoints);
        accepted.insert(accepted.end(), r.accepted.begin(), r.accepted.end());
        unmatched.insert(unmatched.end(), r.unmatched.begin(), r.unmatched.end());
      }
      write_jsonl((dir / "accepted.jsonl").string(), accepted);
      write_jsonl((dir / "unmatched.jsonl").string(), unmatched);
      std::vector<CenterItem> gt;
      for (const auto& seq : seqs)
        for (const auto& s : seq.samples)
          for (const auto& a : s.annotations)
            if (label_classes.count(a.class_id)) gt.push_back(center_item({seq.sequence_id, s.frame_index}, a));
      write_json((dir / "filter_metrics.json").string(), encode(filter_metrics(accepted, unmatched, gt, cfg.eval.match_dist)));
      std::cout << "accepted " << accepted.size() << ", unmatched " << unmatched.size() << '\n';
    } else if (*replay) {
      const auto cfg = load_config(replay_opts);
      const auto dir = out_dir(replay_opts, cfg);
      auto seqs = load_sequences(input, cfg.world.horizon);
      const auto strategy = strategy_text.empty() ? cfg.replay : replay_strategy_from_string(strategy_text);
      const auto class_set = classes_text.empty() ? classes_in(seqs) : parse_classes(classes_text, cfg.world.taxonomy());
      const std::vector<ClassId> classes(class_set.begin(), class_set.end());
      std::map<std::string, int> sources;
      for (auto& seq : seqs) {
        seq = strip_annotations(seq, class_set);
        sources[seq.sequence_id] = 0;
        if (strategy == ReplayStrategy::kVariance) {
          bool has_queries = false;
          for (const auto& s : seq.samples) has_queries = has_queries || !s.queries.empty();
          if (!has_queries) {
            if (!has_detections({seq})) simulate_detector(seq, seeded_detector(cfg), 1, cfg.world.classes, class_set);
            simulate_queries(seq, cfg.world.query_dim, cfg.world.query_noise, cfg.world.query_window, cfg.world.dt(),
                             derive_seed(cfg.seed, 6, 1));
          }
        }
      }
      const auto buf = select_replay(strategy, seqs, sources, classes, capacity.value_or(cfg.n_replay), 0,
                                     derive_seed(cfg.seed, 5, 1));
      write_json((dir / "buffer.json").string(), encode(buf));
      std::cout << "selected " << buf.entries.size() << " of " << buf.capacity << " sequences"
                << (buf.underfilled ? " (underfilled)" : "") << '\n';
    } else if (*evaluate) {
      const auto cfg = load_config(eval_opts);
      const auto dir = out_dir(eval_opts, cfg);
      const auto seqs = load_sequences(input, cfg.eval.horizon);
      const auto preds = read_jsonl<ForecastPrediction>(predictions_path, decode_prediction);
      std::vector<const Sequence*> ptrs;
      for (const auto& s : seqs) ptrs.push_back(&s);
      const auto gt = keyed_ground_truth(ptrs, cfg.eval.horizon);
      std::set<SampleKey> all_keys;
      for (const auto& seq : seqs)
        for (const auto& s : seq.samples)
          if (full_horizon(seq, s, cfg.eval.horizon)) all_keys.insert({seq.sequence_id, s.frame_index});
      std::vector<ForecastPrediction> kept;
      for (const auto& p : preds)
        if (all_keys.count(p.key)) kept.push_back(p);
      const auto result = evaluate_forecasts(gt, kept, cfg.eval);
      Json j = encode(result, cfg.world.taxonomy());
      write_json((dir / "report.json").string(), j);
      std::cout << "mAP_f " << j["map_f"].dump() << ", EPA " << j["epa"].dump() << '\n';
    } else if (*run) {
      const auto cfg = load_config(run_opts);
      const auto dir = out_dir(run_opts, cfg);
      const auto report = run_incremental(cfg, dir.string());
      std::cout << "completed " << report.steps.size() << " steps in " << dir.string() << '\n';
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
