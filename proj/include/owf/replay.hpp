#pragma once

// Sequence-level replay buffer selection.
//
// The variance strategy scores each stored sequence per class by the summed
// squared distance of its motion queries from the class mean query; high
// scores mark sequences rich in moving and turning agents. Three baselines
// (random, feature dissimilarity, class-distribution matching) use the same
// buffer type.

#include <algorithm>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "owf/assignment.hpp"
#include "owf/error.hpp"
#include "owf/random.hpp"
#include "owf/types.hpp"

namespace owf {

inline constexpr std::size_t kDefaultReplayCapacity = 30;

enum class ReplayStrategy { kVariance, kRandom, kFeatureSimilarity, kDistribution, kNone };

inline std::string to_string(ReplayStrategy s) {
  switch (s) {
    case ReplayStrategy::kVariance: return "variance";
    case ReplayStrategy::kRandom: return "random";
    case ReplayStrategy::kFeatureSimilarity: return "feature_similarity";
    case ReplayStrategy::kDistribution: return "distribution";
    case ReplayStrategy::kNone: return "none";
  }
  return "?";
}

inline ReplayStrategy replay_strategy_from_string(const std::string& s) {
  if (s == "variance") return ReplayStrategy::kVariance;
  if (s == "random") return ReplayStrategy::kRandom;
  if (s == "feature_similarity") return ReplayStrategy::kFeatureSimilarity;
  if (s == "distribution") return ReplayStrategy::kDistribution;
  if (s == "none") return ReplayStrategy::kNone;
  throw ValidationError("unknown replay strategy '" + s + "'");
}

struct ReplayEntry {
  std::string sequence_id;
  std::optional<ClassId> class_id;
  double score = 0.0;
};

struct ReplayBuffer {
  std::size_t capacity = kDefaultReplayCapacity;
  std::vector<ReplayEntry> entries;
  // Set when fewer distinct sequences than `capacity` were available.
  bool underfilled = false;

  bool contains(const std::string& id) const {
    return std::any_of(entries.begin(), entries.end(), [&](const ReplayEntry& e) { return e.sequence_id == id; });
  }
  std::set<std::string> ids() const {
    std::set<std::string> out;
    for (const auto& e : entries) out.insert(e.sequence_id);
    return out;
  }
};

// ---------------------------------------------------------------------------
// Motion-query statistics

/// A query attributed to the class of the ground-truth instance it was
/// matched to.
struct MatchedQuery {
  std::string sequence_id;
  ClassId class_id = 0;
  std::vector<double> vector;
};

struct MatchedQueries {
  std::vector<MatchedQuery> queries;
  std::size_t unmatched_gt = 0;  // instances without a prediction (excluded)
};

/// Matches every ground-truth instance to a detection and collects the
/// detection's motion query. `classes` empty means all classes.
inline MatchedQueries collect_matched_queries(const std::vector<Sequence>& sequences,
                                              const std::set<ClassId>& classes = {}) {
  MatchedQueries out;
  for (const auto& seq : sequences)
    for (const auto& s : seq.samples) {
      std::vector<Annotation> gt;
      for (const auto& a : s.annotations)
        if (classes.empty() || classes.count(a.class_id)) gt.push_back(a);
      const auto match = assign(gt, s.detections);
      for (std::size_t g = 0; g < gt.size(); ++g) {
        const MotionQuery* q = nullptr;
        if (match[g]) {
          const auto& track = s.detections[*match[g]].track_id;
          for (const auto& cand : s.queries)
            if (cand.owner.track_id == track) q = &cand;
        }
        if (!q) {
          ++out.unmatched_gt;
          continue;
        }
        out.queries.push_back({seq.sequence_id, gt[g].class_id, q->vector});
      }
    }
  return out;
}

/// Arithmetic mean of the class-`c` query vectors.
inline std::vector<double> class_mean_query(const std::vector<MatchedQuery>& queries, ClassId c) {
  std::vector<double> sum;
  std::size_t n = 0;
  for (const auto& q : queries) {
    if (q.class_id != c) continue;
    if (sum.empty()) sum.assign(q.vector.size(), 0.0);
    if (q.vector.size() != sum.size()) throw ValidationError("motion queries of differing dimension");
    for (std::size_t d = 0; d < sum.size(); ++d) sum[d] += q.vector[d];
    ++n;
  }
  if (n == 0) throw ValidationError("no matched instances of class " + std::to_string(c));
  for (double& x : sum) x /= static_cast<double>(n);
  return sum;
}

/// Sum over the sequence's class-`c` instances of the squared Euclidean
/// distance to `mean`.
inline double sequence_score(const std::vector<MatchedQuery>& queries, const std::string& sequence_id, ClassId c,
                             const std::vector<double>& mean) {
  double s = 0.0;
  for (const auto& q : queries) {
    if (q.sequence_id != sequence_id || q.class_id != c) continue;
    if (q.vector.size() != mean.size()) throw ValidationError("query dimension differs from mean");
    for (std::size_t d = 0; d < mean.size(); ++d) {
      const double e = q.vector[d] - mean[d];
      s += e * e;
    }
  }
  return s;
}

struct SequenceScores {
  std::string sequence_id;
  int source_step = 0;
  // Only classes with at least one matched instance in the sequence.
  std::map<ClassId, double> class_scores;

  double total() const {
    double t = 0;
    for (const auto& [c, s] : class_scores) t += s;
    return t;
  }
};

/// Scores every sequence for every class in `classes`.
inline std::vector<SequenceScores> score_sequences(const std::vector<MatchedQuery>& queries,
                                                   const std::map<std::string, int>& sequence_steps,
                                                   const std::vector<ClassId>& classes) {
  std::map<ClassId, std::vector<double>> means;
  for (ClassId c : classes) {
    const bool any = std::any_of(queries.begin(), queries.end(), [c](const MatchedQuery& q) { return q.class_id == c; });
    if (any) means[c] = class_mean_query(queries, c);
  }
  std::map<std::string, std::set<ClassId>> present;
  for (const auto& q : queries) present[q.sequence_id].insert(q.class_id);

  std::vector<SequenceScores> out;
  for (const auto& [id, step] : sequence_steps) {
    SequenceScores s{id, step, {}};
    for (ClassId c : classes)
      if (present[id].count(c) && means.count(c)) s.class_scores[c] = sequence_score(queries, id, c, means[c]);
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Selection

inline bool score_order(double sa, const std::string& ia, double sb, const std::string& ib) {
  if (sa != sb) return sa > sb;
  return ia < ib;
}

/// Even per-class allocation of floor(capacity / |classes|) slots, highest
/// score first, a sequence used by an earlier class being skipped. Leftover
/// slots go first to the latest sub-dataset by total score, then round-robin
/// to classes in ascending frequency.
inline ReplayBuffer select_variance(const std::vector<SequenceScores>& scores, std::size_t capacity,
                                    const std::vector<ClassId>& classes,
                                    const std::map<ClassId, double>& class_frequencies, int latest_step) {
  if (classes.empty()) throw ValidationError("no learned classes to allocate replay slots to");
  if (capacity < classes.size())
    throw ValidationError("replay capacity " + std::to_string(capacity) + " smaller than number of classes " +
                          std::to_string(classes.size()));
  ReplayBuffer buf;
  buf.capacity = capacity;
  std::set<std::string> chosen;

  // Class candidates in selection order.
  auto ranked_for = [&](ClassId c) {
    std::vector<const SequenceScores*> r;
    for (const auto& s : scores)
      if (s.class_scores.count(c)) r.push_back(&s);
    std::sort(r.begin(), r.end(), [c](const SequenceScores* a, const SequenceScores* b) {
      return score_order(a->class_scores.at(c), a->sequence_id, b->class_scores.at(c), b->sequence_id);
    });
    return r;
  };
  auto take_next = [&](ClassId c) {
    for (const auto* s : ranked_for(c))
      if (!chosen.count(s->sequence_id)) {
        chosen.insert(s->sequence_id);
        buf.entries.push_back({s->sequence_id, c, s->class_scores.at(c)});
        return true;
      }
    return false;
  };

  const std::size_t per_class = capacity / classes.size();
  for (ClassId c : classes)
    for (std::size_t k = 0; k < per_class; ++k)
      if (!take_next(c)) break;

  // Residual pass 1: latest sub-dataset.
  std::vector<const SequenceScores*> latest;
  for (const auto& s : scores)
    if (s.source_step == latest_step && !chosen.count(s.sequence_id)) latest.push_back(&s);
  std::sort(latest.begin(), latest.end(), [](const SequenceScores* a, const SequenceScores* b) {
    return score_order(a->total(), a->sequence_id, b->total(), b->sequence_id);
  });
  for (const auto* s : latest) {
    if (buf.entries.size() >= capacity) break;
    std::optional<ClassId> tag;
    double best = -1.0;
    for (const auto& [c, v] : s->class_scores)
      if (v > best) best = v, tag = c;
    chosen.insert(s->sequence_id);
    buf.entries.push_back({s->sequence_id, tag, s->total()});
  }

  // Residual pass 2: rarest classes first, one extra each per round.
  std::vector<ClassId> by_freq = classes;
  std::stable_sort(by_freq.begin(), by_freq.end(), [&](ClassId a, ClassId b) {
    const double fa = class_frequencies.count(a) ? class_frequencies.at(a) : 0.0;
    const double fb = class_frequencies.count(b) ? class_frequencies.at(b) : 0.0;
    if (fa != fb) return fa < fb;
    return a < b;
  });
  bool progress = true;
  while (buf.entries.size() < capacity && progress) {
    progress = false;
    for (ClassId c : by_freq) {
      if (buf.entries.size() >= capacity) break;
      if (take_next(c)) progress = true;
    }
  }

  // Whatever is left, by total score.
  if (buf.entries.size() < capacity) {
    std::vector<const SequenceScores*> rest;
    for (const auto& s : scores)
      if (!chosen.count(s.sequence_id)) rest.push_back(&s);
    std::sort(rest.begin(), rest.end(), [](const SequenceScores* a, const SequenceScores* b) {
      return score_order(a->total(), a->sequence_id, b->total(), b->sequence_id);
    });
    for (const auto* s : rest) {
      if (buf.entries.size() >= capacity) break;
      chosen.insert(s->sequence_id);
      buf.entries.push_back({s->sequence_id, std::nullopt, s->total()});
    }
  }
  buf.underfilled = buf.entries.size() < capacity;
  return buf;
}

inline ReplayBuffer select_random(std::vector<std::string> sequence_ids, std::size_t capacity, std::uint64_t seed) {
  std::sort(sequence_ids.begin(), sequence_ids.end());
  sequence_ids.erase(std::unique(sequence_ids.begin(), sequence_ids.end()), sequence_ids.end());
  Rng rng(derive_seed(seed, 0x7E91A));
  std::shuffle(sequence_ids.begin(), sequence_ids.end(), rng.engine());
  ReplayBuffer buf;
  buf.capacity = capacity;
  for (std::size_t i = 0; i < sequence_ids.size() && i < capacity; ++i) buf.entries.push_back({sequence_ids[i], {}, 0.0});
  buf.underfilled = buf.entries.size() < capacity;
  return buf;
}

using FeatureStack = std::vector<std::vector<double>>;

inline double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ValidationError("feature vectors of differing dimension");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / std::sqrt(na * nb);
}

/// Symmetric Chamfer similarity: mean best-match cosine in both directions.
inline double chamfer_cosine_similarity(const FeatureStack& a, const FeatureStack& b) {
  if (a.empty() || b.empty()) throw ValidationError("empty feature stack");
  auto directed = [](const FeatureStack& x, const FeatureStack& y) {
    double sum = 0.0;
    for (const auto& u : x) {
      double best = -std::numeric_limits<double>::infinity();
      for (const auto& v : y) best = std::max(best, cosine_similarity(u, v));
      sum += best;
    }
    return sum / static_cast<double>(x.size());
  };
  return 0.5 * (directed(a, b) + directed(b, a));
}

/// Greedy dissimilarity selection: seed with the least similar pair, then
/// keep adding the sequence whose highest similarity to the buffer is
/// lowest. Ties by sequence id.
inline ReplayBuffer select_feature_similarity(const std::map<std::string, FeatureStack>& stacks,
                                              std::size_t capacity) {
  std::vector<std::string> ids;
  for (const auto& [id, st] : stacks) {
    if (st.empty()) throw ValidationError("empty feature stack for sequence " + id);
    ids.push_back(id);
  }
  const std::size_t n = ids.size();
  std::vector<std::vector<double>> sim(n, std::vector<double>(n, 1.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) sim[i][j] = sim[j][i] = chamfer_cosine_similarity(stacks.at(ids[i]), stacks.at(ids[j]));

  ReplayBuffer buf;
  buf.capacity = capacity;
  std::vector<bool> in(n, false);
  auto push = [&](std::size_t i, double score) {
    in[i] = true;
    buf.entries.push_back({ids[i], {}, score});
  };
  if (n == 0 || capacity == 0) {
    buf.underfilled = buf.entries.size() < capacity;
    return buf;
  }
  if (n == 1) {
    push(0, 1.0);
  } else {
    std::size_t bi = 0, bj = 1;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j)
        if (sim[i][j] < sim[bi][bj]) bi = i, bj = j;
    push(bi, sim[bi][bj]);
    if (capacity > 1) push(bj, sim[bi][bj]);
  }
  while (buf.entries.size() < capacity && buf.entries.size() < n) {
    std::size_t best = n;
    double best_val = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      if (in[i]) continue;
      double worst = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < n; ++j)
        if (in[j]) worst = std::max(worst, sim[i][j]);
      if (worst < best_val) best_val = worst, best = i;
    }
    push(best, best_val);
  }
  buf.underfilled = buf.entries.size() < capacity;
  return buf;
}

using ClassHistogram = std::map<ClassId, double>;

inline double normalized_l1(const ClassHistogram& a, const ClassHistogram& b) {
  double sa = 0, sb = 0;
  for (const auto& [c, v] : a) sa += v;
  for (const auto& [c, v] : b) sb += v;
  std::set<ClassId> keys;
  for (const auto& [c, v] : a) keys.insert(c);
  for (const auto& [c, v] : b) keys.insert(c);
  double d = 0;
  for (ClassId c : keys) {
    const double pa = sa > 0 && a.count(c) ? a.at(c) / sa : 0.0;
    const double pb = sb > 0 && b.count(c) ? b.at(c) / sb : 0.0;
    d += std::abs(pa - pb);
  }
  return d;
}

/// Greedy distribution matching: each pick minimizes the L1 distance between
/// the buffer's normalized class histogram and the dataset's.
inline ReplayBuffer select_distribution(const std::map<std::string, ClassHistogram>& histograms,
                                        const ClassHistogram& dataset, std::size_t capacity) {
  ReplayBuffer buf;
  buf.capacity = capacity;
  ClassHistogram acc;
  std::set<std::string> chosen;
  while (buf.entries.size() < capacity && chosen.size() < histograms.size()) {
    const std::string* best = nullptr;
    double best_d = std::numeric_limits<double>::infinity();
    for (const auto& [id, h] : histograms) {
      if (chosen.count(id)) continue;
      ClassHistogram trial = acc;
      for (const auto& [c, v] : h) trial[c] += v;
      const double d = normalized_l1(trial, dataset);
      if (d < best_d) best_d = d, best = &id;
    }
    chosen.insert(*best);
    for (const auto& [c, v] : histograms.at(*best)) acc[c] += v;
    buf.entries.push_back({*best, {}, best_d});
  }
  buf.underfilled = buf.entries.size() < capacity;
  return buf;
}

/// Per-sample stand-in for a global image descriptor: annotation counts per
/// class, mean agent speed, ego speed proxy and mean agent range.
inline std::vector<double> sample_feature(const Sample& s, const std::vector<ClassId>& taxonomy) {
  std::vector<double> f;
  for (ClassId c : taxonomy)
    f.push_back(static_cast<double>(std::count_if(s.annotations.begin(), s.annotations.end(),
                                                  [c](const Annotation& a) { return a.class_id == c; })));
  double speed = 0, range = 0;
  for (const auto& a : s.annotations) {
    speed += std::hypot(a.box.vx, a.box.vy);
    range += std::hypot(a.box.x, a.box.y);
  }
  const double n = std::max<double>(1.0, static_cast<double>(s.annotations.size()));
  f.push_back(speed / n);
  f.push_back(range / n / 10.0);
  f.push_back(1.0);
  return f;
}

inline FeatureStack sequence_features(const Sequence& seq, const std::vector<ClassId>& taxonomy) {
  FeatureStack st;
  for (const auto& s : seq.samples) st.push_back(sample_feature(s, taxonomy));
  return st;
}

inline ClassHistogram class_histogram(const Sequence& seq, const std::set<ClassId>& classes = {}) {
  ClassHistogram h;
  for (const auto& s : seq.samples)
    for (const auto& a : s.annotations)
      if (classes.empty() || classes.count(a.class_id)) h[a.class_id] += 1.0;
  return h;
}

}  // namespace owf
