#pragma once

// Class-incremental split construction and annotation stripping.

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "owf/error.hpp"
#include "owf/random.hpp"
#include "owf/types.hpp"

namespace owf {

struct SplitParams {
  // per_class: upper bound of sequences drawn per class.
  std::size_t max_sequences = 300;
  // group: number of sequences per step, one entry per class group.
  std::vector<std::size_t> group_sizes;
  // per_class only. When false, steps receive disjoint sequence sets; when
  // true, a sequence may be drawn again for a later class.
  bool allow_sequence_reuse = false;
};

/// Annotations filtered to `class_set`; everything else is left untouched.
inline Sample strip_annotations(const Sample& sample, const std::set<ClassId>& class_set) {
  Sample out = sample;
  std::erase_if(out.annotations, [&](const Annotation& a) { return class_set.count(a.class_id) == 0; });
  return out;
}

inline Sequence strip_annotations(const Sequence& seq, const std::set<ClassId>& class_set) {
  Sequence out{seq.sequence_id, {}};
  out.samples.reserve(seq.samples.size());
  for (const auto& s : seq.samples) out.samples.push_back(strip_annotations(s, class_set));
  return out;
}

/// `class_groups` holds one class set per step. For per_class every group
/// must be a single class.
inline IncrementalSplit build_split(const std::vector<Sequence>& sequences, SplitScheme scheme,
                                    const std::vector<std::vector<ClassId>>& class_groups,
                                    const SplitParams& params, std::uint64_t seed) {
  if (class_groups.empty()) throw ValidationError("class order is empty");
  std::set<ClassId> seen;
  for (const auto& g : class_groups) {
    if (g.empty()) throw ValidationError("empty class group in class order");
    for (ClassId c : g)
      if (!seen.insert(c).second) throw ValidationError("class " + std::to_string(c) + " appears in two steps");
  }
  if (scheme == SplitScheme::kPerClass)
    for (const auto& g : class_groups)
      if (g.size() != 1) throw ValidationError("per_class scheme needs exactly one class per step");

  // Sorted by sequence id so the draw does not depend on input order.
  std::vector<std::size_t> order(sequences.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return sequences[a].sequence_id < sequences[b].sequence_id; });
  std::vector<std::set<ClassId>> present(sequences.size());
  for (std::size_t i = 0; i < sequences.size(); ++i) present[i] = sequences[i].classes_present();

  for (ClassId c : seen) {
    const bool any = std::any_of(present.begin(), present.end(), [c](const auto& p) { return p.count(c) != 0; });
    if (!any) throw ValidationError("class " + std::to_string(c) + " has no containing sequence");
  }

  IncrementalSplit split;
  split.scheme = scheme;
  Rng rng(derive_seed(seed, 0x5017));

  switch (scheme) {
    case SplitScheme::kPerClass: {
      std::set<std::size_t> used;
      for (const auto& g : class_groups) {
        const ClassId c = g.front();
        std::vector<std::size_t> candidates;
        for (std::size_t idx : order)
          if (present[idx].count(c) && (params.allow_sequence_reuse || !used.count(idx))) candidates.push_back(idx);
        if (candidates.empty())
          throw ValidationError("class " + std::to_string(c) + " has no unassigned containing sequence");
        std::shuffle(candidates.begin(), candidates.end(), rng.engine());
        candidates.resize(std::min(candidates.size(), params.max_sequences));
        std::sort(candidates.begin(), candidates.end(), [&](std::size_t a, std::size_t b) {
          return sequences[a].sequence_id < sequences[b].sequence_id;
        });
        SplitStep step{{c}, {}};
        for (std::size_t idx : candidates) {
          used.insert(idx);
          step.sequence_ids.push_back(sequences[idx].sequence_id);
        }
        split.steps.push_back(std::move(step));
      }
      break;
    }
    case SplitScheme::kGroup: {
      if (params.group_sizes.size() != class_groups.size())
        throw ValidationError("group scheme needs one size per class group");
      const std::size_t total = std::accumulate(params.group_sizes.begin(), params.group_sizes.end(), std::size_t{0});
      if (total > sequences.size())
        throw ValidationError("group sizes sum to " + std::to_string(total) + " but only " +
                              std::to_string(sequences.size()) + " sequences exist");
      std::vector<std::size_t> shuffled = order;
      std::shuffle(shuffled.begin(), shuffled.end(), rng.engine());
      std::size_t cursor = 0;
      for (std::size_t gi = 0; gi < class_groups.size(); ++gi) {
        SplitStep step{class_groups[gi], {}};
        for (std::size_t k = 0; k < params.group_sizes[gi]; ++k)
          step.sequence_ids.push_back(sequences[shuffled[cursor++]].sequence_id);
        std::sort(step.sequence_ids.begin(), step.sequence_ids.end());
        split.steps.push_back(std::move(step));
      }
      break;
    }
    case SplitScheme::kOverlapping: {
      std::vector<std::string> all;
      for (std::size_t idx : order) all.push_back(sequences[idx].sequence_id);
      for (const auto& g : class_groups) split.steps.push_back({g, all});
      break;
    }
  }
  return split;
}

/// The sequences of a step with annotations restricted to that step's
/// classes.
inline std::vector<Sequence> materialize_step(const std::vector<Sequence>& sequences,
                                              const IncrementalSplit& split, std::size_t step) {
  const auto& st = split.steps.at(step);
  const std::set<ClassId> classes(st.classes.begin(), st.classes.end());
  std::map<std::string, const Sequence*> by_id;
  for (const auto& s : sequences) by_id[s.sequence_id] = &s;
  std::vector<Sequence> out;
  for (const auto& id : st.sequence_ids) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw ValidationError("split references unknown sequence " + id);
    out.push_back(strip_annotations(*it->second, classes));
  }
  return out;
}

}  // namespace owf
