#pragma once

// Full class-incremental experiment: world, split, and per step the
// pseudo-labels of the previous model, the mask filter, label merging,
// replay selection and evaluation against complete ground truth.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include "owf/config.hpp"
#include "owf/metrics.hpp"
#include "owf/pseudolabel.hpp"
#include "owf/records.hpp"
#include "owf/replay.hpp"
#include "owf/simulator.hpp"
#include "owf/split.hpp"
#include "owf/vlmfilter.hpp"

namespace owf {

/// Re-throws `fn`'s errors with `context` prepended, keeping the category.
template <typename F>
auto with_context(const std::string& context, F&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const ValidationError& e) {
    throw ValidationError(context + ": " + e.what());
  } catch (const RuntimeError& e) {
    throw RuntimeError(context + ": " + e.what());
  }
}

/// Frames whose ground-truth future covers the whole horizon.
inline bool full_horizon(const Sequence& seq, const Sample& s, std::size_t horizon) {
  return !seq.samples.empty() && s.frame_index + static_cast<int>(horizon) <= seq.samples.back().frame_index;
}

// ---------------------------------------------------------------------------
// Building blocks shared with the command line tools

/// Proposals of every frame of `seq` (detections already attached), split by
/// the mask filter when `use_filter` is set. Without the filter every
/// proposal is accepted.
inline std::vector<FilterResult> pseudo_label_sequence(const Sequence& seq, PseudoStrategy strategy, double theta,
                                                       std::size_t horizon, double dt, bool use_filter,
                                                       KeypointScheme scheme) {
  const auto proposals = generate_pseudo_labels(seq, strategy, theta, horizon, dt);
  std::vector<FilterResult> out(seq.samples.size());
  for (std::size_t f = 0; f < seq.samples.size(); ++f) {
    if (use_filter) {
      MaskPool pool(seq.samples[f].masks);
      out[f] = filter_proposals(proposals[f], pool, seq.samples[f].cameras, scheme);
    } else {
      out[f].accepted = proposals[f];
      for (auto& p : out[f].accepted) p.loss_weight = 1;
    }
  }
  return out;
}

/// Replay selection over `candidates`, whose annotations must already be
/// restricted to `classes`. The variance strategy also needs detections and
/// queries on the candidates.
inline ReplayBuffer select_replay(ReplayStrategy strategy, const std::vector<Sequence>& candidates,
                                  const std::map<std::string, int>& source_steps, const std::vector<ClassId>& classes,
                                  std::size_t capacity, int latest_step, std::uint64_t seed) {
  const std::set<ClassId> class_set(classes.begin(), classes.end());
  switch (strategy) {
    case ReplayStrategy::kNone: {
      ReplayBuffer b;
      b.capacity = capacity;
      return b;
    }
    case ReplayStrategy::kRandom: {
      std::vector<std::string> ids;
      for (const auto& s : candidates) ids.push_back(s.sequence_id);
      return select_random(ids, capacity, seed);
    }
    case ReplayStrategy::kFeatureSimilarity: {
      std::map<std::string, FeatureStack> stacks;
      for (const auto& s : candidates) stacks[s.sequence_id] = sequence_features(s, classes);
      return select_feature_similarity(stacks, capacity);
    }
    case ReplayStrategy::kDistribution: {
      std::map<std::string, ClassHistogram> hists;
      ClassHistogram total;
      for (const auto& s : candidates) {
        hists[s.sequence_id] = class_histogram(s, class_set);
        for (const auto& [c, v] : hists[s.sequence_id]) total[c] += v;
      }
      return select_distribution(hists, total, capacity);
    }
    case ReplayStrategy::kVariance: {
      const auto matched = collect_matched_queries(candidates, class_set);
      std::map<std::string, int> steps;
      for (const auto& s : candidates) {
        auto it = source_steps.find(s.sequence_id);
        steps[s.sequence_id] = it == source_steps.end() ? latest_step : it->second;
      }
      const auto scores = score_sequences(matched.queries, steps, classes);
      std::map<ClassId, double> freq;
      for (const auto& s : candidates)
        for (const auto& [c, v] : class_histogram(s, class_set)) freq[c] += v;
      return select_variance(scores, capacity, classes, freq, latest_step);
    }
  }
  throw ValidationError("unknown replay strategy");
}

struct ForecastEvaluation {
  std::optional<MapResult> map;
  std::optional<EpaResult> epa;
  std::size_t n_gt = 0;
  std::size_t n_predictions = 0;
};

/// Forecasting metrics restricted to `classes` (empty: all). Ground truth
/// without a scorable future is ignored; with none left both metrics are
/// absent.
inline ForecastEvaluation evaluate_forecasts(const std::vector<KeyedAnnotation>& gt,
                                             const std::vector<ForecastPrediction>& preds, const EvalConfig& cfg,
                                             const std::set<ClassId>& classes = {}) {
  ForecastEvaluation out;
  std::vector<KeyedAnnotation> g;
  std::vector<ForecastPrediction> p;
  for (const auto& a : gt)
    if (classes.empty() || classes.count(a.ann.class_id)) g.push_back(a);
  for (const auto& x : preds)
    if (classes.empty() || classes.count(x.class_id)) p.push_back(x);
  for (const auto& a : g) out.n_gt += is_scorable(a.ann) ? 1 : 0;
  out.n_predictions = p.size();
  if (out.n_gt == 0) return out;
  out.map = map_f(g, p, cfg);
  out.epa = epa(g, p, cfg);
  return out;
}

/// Ground truth of the full-horizon frames of `sequences`.
inline std::vector<KeyedAnnotation> keyed_ground_truth(const std::vector<const Sequence*>& sequences,
                                                       std::size_t horizon, const std::set<ClassId>& classes = {}) {
  std::vector<KeyedAnnotation> out;
  for (const auto* seq : sequences)
    for (const auto& s : seq->samples) {
      if (!full_horizon(*seq, s, horizon)) continue;
      for (const auto& a : s.annotations)
        if (classes.empty() || classes.count(a.class_id)) out.push_back({{seq->sequence_id, s.frame_index}, a});
    }
  return out;
}

inline ForecastPrediction as_prediction(const KeyedLabel& k) {
  return {k.key, k.label.class_id, k.label.box, k.label.confidence, {{k.label.future, 1.0}}};
}

// ---------------------------------------------------------------------------
// Reports

struct GroupMetrics {
  std::size_t group = 0;
  std::vector<ClassId> classes;
  ForecastEvaluation eval;
};

struct StepReport {
  std::size_t step = 0;
  std::vector<ClassId> classes;
  std::vector<ClassId> learned;
  std::size_t n_sequences = 0;
  std::size_t n_gt = 0;
  std::size_t n_accepted = 0;
  std::size_t n_unmatched = 0;
  std::optional<LabelQuality> pseudo_quality;  // accepted pseudo-labels vs ground truth of learned classes
  std::optional<FilterMetrics> filter;
  std::vector<GroupMetrics> groups;
  ForecastEvaluation all;
  std::optional<ReplayBuffer> buffer;
};

struct ExperimentReport {
  Json config;
  std::vector<StepReport> steps;
};

inline Json optional_number(const std::optional<double>& x) { return x ? num(*x) : Json(nullptr); }

inline Json encode(const ForecastEvaluation& e, const Taxonomy& tax) {
  Json j;
  j["map_f"] = e.map ? num(e.map->map_f) : Json(nullptr);
  j["epa"] = e.epa ? num(e.epa->epa) : Json(nullptr);
  j["n_gt"] = e.n_gt;
  j["n_predictions"] = e.n_predictions;
  Json ap = Json::object();
  if (e.map)
    for (const auto& [c, cats] : e.map->ap) {
      Json per = Json::object();
      for (const auto& [cat, v] : cats) per[to_string(cat)] = num(v);
      ap[tax.name(c)] = {{"map_f", num(e.map->class_map.at(c))}, {"ap_f", per}};
    }
  j["classes"] = ap;
  if (e.epa) j["epa_counts"] = {{"hits", e.epa->hits}, {"false_positives", e.epa->false_positives}, {"n_gt", e.epa->n_gt}};
  return j;
}

inline Json encode(const LabelQuality& q) {
  return {{"precision", num(q.precision)}, {"recall", num(q.recall)},       {"mean_ade", num(q.mean_ade)},
          {"n_labels", q.n_labels},        {"n_gt", q.n_gt},                {"true_positives", q.true_positives},
          {"waypoints", q.waypoints}};
}

inline Json encode(const FilterMetrics& m) {
  return {{"precision", num(m.precision)}, {"recall", num(m.recall)},         {"proposals", m.proposals},
          {"accepted", m.accepted},        {"tp_accepted", m.tp_accepted},    {"fp_accepted", m.fp_accepted},
          {"tp_removed", m.tp_removed},    {"fp_removed", m.fp_removed}};
}

inline Json encode(const StepReport& r, const Taxonomy& tax) {
  Json j;
  j["step"] = r.step;
  j["classes"] = r.classes;
  j["learned_classes"] = r.learned;
  j["n_sequences"] = r.n_sequences;
  j["labels"] = {{"gt", r.n_gt},
                 {"accepted", r.n_accepted},
                 {"unmatched", r.n_unmatched},
                 {"total", r.n_gt + r.n_accepted + r.n_unmatched}};
  j["pseudo_label_quality"] = r.pseudo_quality ? encode(*r.pseudo_quality) : Json(nullptr);
  j["filter"] = r.filter ? encode(*r.filter) : Json(nullptr);
  Json groups = Json::array();
  for (const auto& g : r.groups) {
    Json gj = encode(g.eval, tax);
    gj["group"] = g.group;
    gj["group_classes"] = g.classes;
    groups.push_back(gj);
  }
  j["forecasting"] = {{"groups", groups}, {"all", encode(r.all, tax)}};
  if (r.buffer)
    j["replay"] = {{"capacity", r.buffer->capacity},
                   {"size", r.buffer->entries.size()},
                   {"underfilled", r.buffer->underfilled}};
  else
    j["replay"] = nullptr;
  return j;
}

inline Json encode(const ExperimentReport& r, const Taxonomy& tax) {
  Json steps = Json::array();
  for (const auto& s : r.steps) steps.push_back(encode(s, tax));
  return {{"config", r.config}, {"steps", steps}};
}

inline std::string format_value(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

/// Flat rows: step, metric, class, category, value.
inline std::string report_csv(const ExperimentReport& r, const Taxonomy& tax) {
  std::ostringstream out;
  out << "step,metric,class,category,value\n";
  auto row = [&](std::size_t step, const std::string& metric, const std::string& cls, const std::string& cat,
                 double v) { out << step << ',' << metric << ',' << cls << ',' << cat << ',' << format_value(v) << '\n'; };
  auto forecasting = [&](std::size_t step, const std::string& scope, const ForecastEvaluation& e) {
    if (!e.map) return;
    for (const auto& [c, cats] : e.map->ap)
      for (const auto& [cat, v] : cats) row(step, "ap_f@" + scope, tax.name(c), to_string(cat), v);
    row(step, "map_f", scope, "all", e.map->map_f);
    row(step, "epa", scope, "all", e.epa->epa);
  };
  for (const auto& s : r.steps) {
    row(s.step, "labels_gt", "all", "all", static_cast<double>(s.n_gt));
    row(s.step, "labels_accepted", "all", "all", static_cast<double>(s.n_accepted));
    row(s.step, "labels_unmatched", "all", "all", static_cast<double>(s.n_unmatched));
    if (s.pseudo_quality) {
      row(s.step, "pseudo_precision", "all", "all", s.pseudo_quality->precision);
      row(s.step, "pseudo_recall", "all", "all", s.pseudo_quality->recall);
      row(s.step, "pseudo_ade", "all", "all", s.pseudo_quality->mean_ade);
    }
    if (s.filter) {
      row(s.step, "filter_precision", "all", "all", s.filter->precision);
      row(s.step, "filter_recall", "all", "all", s.filter->recall);
      row(s.step, "filter_fp_removed", "all", "all", static_cast<double>(s.filter->fp_removed));
      row(s.step, "filter_tp_removed", "all", "all", static_cast<double>(s.filter->tp_removed));
    }
    for (const auto& g : s.groups) forecasting(s.step, "group_" + std::to_string(g.group), g.eval);
    forecasting(s.step, "all", s.all);
    if (s.buffer) row(s.step, "replay_size", "all", "all", static_cast<double>(s.buffer->entries.size()));
  }
  return out.str();
}

inline std::string sha256_hex(const std::string& data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw RuntimeError("SHA-256 digest failed");
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", md[i]);
    hex += buf;
  }
  return hex;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw RuntimeError("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw RuntimeError("cannot write " + p.string());
  out << text;
}

/// Lists every regular file under `dir` (except the manifest) with its size
/// and SHA-256.
inline Json write_manifest(const std::filesystem::path& dir) {
  std::vector<std::string> names;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().filename() != "manifest.json") names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  Json files = Json::array();
  for (const auto& n : names) {
    const std::string data = read_file(dir / n);
    files.push_back({{"path", n}, {"bytes", data.size()}, {"sha256", sha256_hex(data)}});
  }
  Json m = {{"files", files}};
  write_json((dir / "manifest.json").string(), m);
  return m;
}

// ---------------------------------------------------------------------------
// Experiment

/// Runs every step of the configured split. When `out_dir` is non-empty the
/// report is rewritten after each step, and labels, buffers and a manifest
/// are written alongside.
inline ExperimentReport run_incremental(const ExperimentConfig& config, const std::string& out_dir = "") {
  config.validate();
  namespace fs = std::filesystem;
  const bool write = !out_dir.empty();
  const fs::path out(out_dir);
  if (write) fs::create_directories(out);

  WorldConfig wc = config.world;
  wc.seed = derive_seed(config.seed, 1, config.world.seed);
  DetectorProfile dp = config.detector;
  dp.seed = derive_seed(config.seed, 2, config.detector.seed);
  const Taxonomy tax = wc.taxonomy();
  const std::size_t horizon = wc.horizon;

  auto world = generate_world(wc);
  for (auto& s : world) render_sequence_masks(s, wc.mask_miss_rate, derive_seed(config.seed, 4));
  std::map<std::string, const Sequence*> by_id;
  for (const auto& s : world) by_id[s.sequence_id] = &s;

  const IncrementalSplit split =
      with_context("split", [&] { return build_split(world, config.scheme, config.class_order, config.split, derive_seed(config.seed, 3)); });
  if (write) write_json((out / "split.json").string(), encode(split));

  ExperimentReport report;
  report.config = to_json(config);
  report.config.erase("output_dir");

  ReplayBuffer buffer;
  std::map<std::string, int> buffer_steps;

  for (std::size_t i = 0; i < split.steps.size(); ++i) {
    const auto& step = split.steps[i];
    const std::string step_ctx = "step " + std::to_string(i);
    const std::set<ClassId> current(step.classes.begin(), step.classes.end());
    const std::set<ClassId> learned = split.learned_before(i);
    std::set<ClassId> known = learned;
    known.insert(current.begin(), current.end());

    StepReport rep;
    rep.step = i;
    rep.classes = step.classes;
    rep.learned.assign(learned.begin(), learned.end());
    rep.n_sequences = step.sequence_ids.size();

    std::vector<KeyedLabel> labels;
    std::vector<PseudoLabel> accepted, unmatched;
    std::vector<QualityItem> quality_items;
    std::vector<KeyedAnnotation> learned_gt;
    std::vector<CenterItem> learned_centers;
    std::vector<const Sequence*> step_sequences;

    for (const auto& id : step.sequence_ids) {
      const Sequence& full = *by_id.at(id);
      step_sequences.push_back(&full);
      with_context(step_ctx + ", sequence " + id, [&] {
        std::vector<FilterResult> per_frame(full.samples.size());
        if (!learned.empty()) {
          // The previous model only knows the learned classes.
          Sequence seq = full;
          simulate_detector(seq, dp, static_cast<int>(i), wc.classes, learned);
          per_frame = pseudo_label_sequence(seq, config.pseudo, config.theta, horizon, wc.dt(), config.filter,
                                            config.keypoints);
        }
        for (std::size_t f = 0; f < full.samples.size(); ++f) {
          const Sample& s = full.samples[f];
          const SampleKey key{id, s.frame_index};
          std::vector<Annotation> gt;
          for (const auto& a : s.annotations) {
            if (current.count(a.class_id)) gt.push_back(a);
            if (learned.count(a.class_id)) {
              learned_gt.push_back({key, a});
              learned_centers.push_back(center_item(key, a));
            }
          }
          const auto merged = merge_labels(gt, per_frame[f].accepted, per_frame[f].unmatched, current);
          for (const auto& l : merged) labels.push_back({key, l});
          rep.n_gt += gt.size();
          rep.n_accepted += per_frame[f].accepted.size();
          rep.n_unmatched += per_frame[f].unmatched.size();
          for (const auto& p : per_frame[f].accepted)
            quality_items.push_back({key, p.class_id, p.box, p.future, p.confidence, p.source_track_id});
          accepted.insert(accepted.end(), per_frame[f].accepted.begin(), per_frame[f].accepted.end());
          unmatched.insert(unmatched.end(), per_frame[f].unmatched.begin(), per_frame[f].unmatched.end());
        }
      });
    }

    if (!learned.empty()) {
      rep.pseudo_quality = pseudo_label_quality(quality_items, learned_gt, config.eval.match_dist);
      rep.filter = filter_metrics(accepted, unmatched, learned_centers, config.eval.match_dist);
    }

    // Forecasting metrics of the weighted label set against full ground truth.
    with_context(step_ctx + ", evaluation", [&] {
      std::vector<ForecastPrediction> preds;
      for (const auto& k : labels) {
        if (k.label.loss_weight == 0) continue;
        const Sequence& seq = *by_id.at(k.key.sequence_id);
        const Sample& s = seq.samples.at(static_cast<std::size_t>(k.key.frame - seq.samples.front().frame_index));
        if (full_horizon(seq, s, horizon)) preds.push_back(as_prediction(k));
      }
      const auto gt = keyed_ground_truth(step_sequences, horizon, known);
      for (std::size_t j = 0; j <= i; ++j) {
        const std::set<ClassId> group(split.steps[j].classes.begin(), split.steps[j].classes.end());
        rep.groups.push_back({j, split.steps[j].classes, evaluate_forecasts(gt, preds, config.eval, group)});
      }
      rep.all = evaluate_forecasts(gt, preds, config.eval, known);
    });

    // Replay buffer for this step from the previous sub-dataset and buffer.
    if (i > 0) {
      with_context(step_ctx + ", replay", [&] {
        const auto& prev = split.steps[i - 1];
        std::map<std::string, int> sources = buffer_steps;
        for (const auto& id : prev.sequence_ids) sources[id] = static_cast<int>(i - 1);
        std::vector<Sequence> candidates;
        for (const auto& [id, src] : sources) {
          Sequence seq = strip_annotations(*by_id.at(id), learned);
          if (config.replay == ReplayStrategy::kVariance) {
            simulate_detector(seq, dp, static_cast<int>(i), wc.classes, learned);
            simulate_queries(seq, wc.query_dim, wc.query_noise, wc.query_window, wc.dt(), derive_seed(config.seed, 6, i));
          }
          candidates.push_back(std::move(seq));
        }
        buffer = select_replay(config.replay, candidates, sources, rep.learned, config.n_replay,
                               static_cast<int>(i - 1), derive_seed(config.seed, 5, i));
        std::map<std::string, int> kept;
        for (const auto& e : buffer.entries) kept[e.sequence_id] = sources.at(e.sequence_id);
        buffer_steps = std::move(kept);
        rep.buffer = buffer;
      });
    }

    report.steps.push_back(std::move(rep));

    if (write) {
      write_jsonl((out / ("labels_step_" + std::to_string(i) + ".jsonl")).string(), labels);
      if (report.steps.back().buffer)
        write_json((out / ("buffer_step_" + std::to_string(i) + ".json")).string(), encode(buffer));
      write_json((out / "report.json").string(), encode(report, tax));
      write_text(out / "report.csv", report_csv(report, tax));
    }
  }
  if (write) write_manifest(out);
  return report;
}

}  // namespace owf
