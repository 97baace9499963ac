#include "sms/search.hpp"

#include <algorithm>
#include <limits>
#include <optional>
#include <set>

#include "sms/oracle.hpp"
#include "sms/rng.hpp"

namespace sms {

FrameCombination::FrameCombination(std::vector<int> indices) : indices_(std::move(indices)) {
  std::sort(indices_.begin(), indices_.end());
}

SearchSpace SearchSpace::flat(int candidate_count, int slots) {
  if (candidate_count < 1 || slots < 1)
    throw ArgumentError("SearchSpace::flat: counts must be >= 1");
  std::vector<int> all(candidate_count);
  for (int i = 0; i < candidate_count; ++i) all[i] = i;
  SearchSpace space;
  space.per_slot.assign(slots, all);
  return space;
}

bool SearchSpace::slots_identical() const {
  for (std::size_t k = 1; k < per_slot.size(); ++k)
    if (per_slot[k] != per_slot.front()) return false;
  return true;
}

long long multiset_count(int m, int n, long long cap) {
  if (m < 1 || n < 1) throw ArgumentError("multiset_count: m and n must be >= 1");
  // C(m+n-1, n), saturated at cap+1.
  unsigned __int128 result = 1;
  for (int i = 1; i <= n; ++i) {
    result = result * static_cast<unsigned>(m - 1 + i) / static_cast<unsigned>(i);
    if (result > static_cast<unsigned __int128>(cap)) return cap + 1;
  }
  return static_cast<long long>(result);
}

namespace {

// Penalty-augmented first-improvement local search with memoized
// evaluations. Budget counts fresh objective calls only.
class GlsEngine {
 public:
  GlsEngine(SearchSpace space, Objective objective, PriorCost prior_costs, GlsConfig config)
      : space_(std::move(space)),
        objective_(std::move(objective)),
        prior_costs_(std::move(prior_costs)),
        config_(config) {
    if (space_.per_slot.empty()) throw ArgumentError("gls: search space has no slots");
    for (const auto& slot : space_.per_slot)
      if (slot.empty()) throw ArgumentError("gls: empty candidate list");
    if (config_.max_evaluations < 0) throw ArgumentError("gls: negative budget");
    if (space_.slots_identical()) {
      slot_set_.insert(space_.per_slot.front().begin(), space_.per_slot.front().end());
      const int n = static_cast<int>(space_.per_slot.size());
      space_size_ = multiset_count(static_cast<int>(slot_set_.size()), n,
                                   std::numeric_limits<long long>::max() - 1);
    }
  }

  // Record an externally evaluated combination. Seeds compete for the
  // returned best but consume no budget.
  void seed(const FrameCombination& combination, double value) {
    if (!memo_.emplace(combination, value).second) return;
    if (!slot_set_.empty() && in_space(combination)) ++known_in_space_;
    consider_best(combination, value);
  }

  SearchResult run(std::vector<int> init_slots) {
    if (init_slots.size() != space_.per_slot.size())
      throw ArgumentError("gls: init length does not match slot count");
    for (std::size_t k = 0; k < init_slots.size(); ++k) {
      const auto& slot = space_.per_slot[k];
      if (std::find(slot.begin(), slot.end(), init_slots[k]) == slot.end())
        throw ArgumentError("gls: init index not in slot candidates");
    }
    slots_ = std::move(init_slots);

    std::optional<double> g = evaluate(current());
    if (!g) return finish();  // zero budget and unseeded init
    double g_current = *g;

    int stall = 0;
    while (true) {
      const int evals_before = evals_used_;
      if (!descend(g_current)) break;
      if (lambda_ == 0.0)
        lambda_ = config_.lambda_alpha * std::abs(g_current) /
                  static_cast<double>(slots_.size());
      bump_penalties();
      if (space_size_ > 0 && known_in_space_ >= space_size_) break;
      if (evals_used_ == evals_before) {
        if (++stall >= kStallLimit) break;
      } else {
        stall = 0;
      }
      if (lambda_ == 0.0) break;  // penalties are inert; descent is stuck
    }
    return finish();
  }

 private:
  static constexpr int kStallLimit = 200;

  FrameCombination current() const { return FrameCombination(slots_); }

  bool in_space(const FrameCombination& combination) const {
    for (int i : combination.indices())
      if (!slot_set_.count(i)) return false;
    return static_cast<std::size_t>(combination.size()) == space_.per_slot.size();
  }

  std::optional<double> evaluate(const FrameCombination& combination) {
    if (auto it = memo_.find(combination); it != memo_.end()) return it->second;
    if (evals_used_ >= config_.max_evaluations) return std::nullopt;
    const double value = objective_(combination);
    ++evals_used_;
    memo_.emplace(combination, value);
    if (!slot_set_.empty()) ++known_in_space_;  // fresh evals are in-space
    consider_best(combination, value);
    return value;
  }

  void consider_best(const FrameCombination& combination, double value) {
    if (has_best_ && value >= best_value_) return;
    has_best_ = true;
    best_value_ = value;
    best_ = combination;
    if (!trace_.best_objective_by_eval.empty() &&
        trace_.best_objective_by_eval.back().first == evals_used_) {
      trace_.best_objective_by_eval.back().second = value;
    } else {
      trace_.best_objective_by_eval.emplace_back(evals_used_, value);
    }
  }

  double penalty_sum() const {
    double sum = 0.0;
    int prev = std::numeric_limits<int>::min();
    std::vector<int> sorted = slots_;
    std::sort(sorted.begin(), sorted.end());
    for (int i : sorted) {
      if (i == prev) continue;  // presence is set-based
      prev = i;
      if (auto it = penalties_.find(i); it != penalties_.end()) sum += it->second;
    }
    return sum;
  }

  // First-improvement descent under the augmented objective; returns false
  // when the budget runs out.
  bool descend(double& g_current) {
    const int n = static_cast<int>(slots_.size());
    bool improved = true;
    while (improved) {
      improved = false;
      for (int k = 0; k < n; ++k) {
        const double current_aug = g_current + lambda_ * penalty_sum();
        const int saved = slots_[k];
        for (int candidate : space_.per_slot[k]) {
          if (candidate == saved) continue;
          slots_[k] = candidate;
          const std::optional<double> g = evaluate(current());
          if (!g) {
            slots_[k] = saved;
            return false;
          }
          if (*g + lambda_ * penalty_sum() < current_aug) {
            g_current = *g;  // accept, move on to the next slot
            improved = true;
            break;
          }
          slots_[k] = saved;
        }
      }
    }
    return true;
  }

  // Increment the penalty of every present index with maximal utility
  // prior(i) / (1 + penalty_i).
  void bump_penalties() {
    std::vector<int> present = slots_;
    std::sort(present.begin(), present.end());
    present.erase(std::unique(present.begin(), present.end()), present.end());

    double max_utility = -std::numeric_limits<double>::infinity();
    std::vector<double> utilities(present.size());
    for (std::size_t i = 0; i < present.size(); ++i) {
      const int penalty = penalties_.count(present[i]) ? penalties_[present[i]] : 0;
      utilities[i] = prior_costs_(present[i]) / (1.0 + penalty);
      max_utility = std::max(max_utility, utilities[i]);
    }
    for (std::size_t i = 0; i < present.size(); ++i)
      if (utilities[i] == max_utility) ++penalties_[present[i]];
  }

  SearchResult finish() {
    SearchResult result;
    result.best = best_;
    result.objective = best_value_;
    trace_.final = best_;
    trace_.evaluations = evals_used_;
    trace_.penalties = penalties_;
    result.trace = std::move(trace_);
    return result;
  }

  SearchSpace space_;
  Objective objective_;
  PriorCost prior_costs_;
  GlsConfig config_;

  std::vector<int> slots_;
  std::map<FrameCombination, double> memo_;
  std::map<int, int> penalties_;
  std::set<int> slot_set_;  // nonempty iff slots are identical
  long long space_size_ = 0;
  long long known_in_space_ = 0;
  double lambda_ = 0.0;
  int evals_used_ = 0;

  bool has_best_ = false;
  double best_value_ = std::numeric_limits<double>::infinity();
  FrameCombination best_;
  GlsTrace trace_;
};

// Greedy multiset-to-slot assignment; sufficient for flat and per-slot
// constructed inits.
std::vector<int> assign_to_slots(const FrameCombination& init, const SearchSpace& space) {
  std::map<int, int> remaining;
  for (int i : init.indices()) ++remaining[i];
  std::vector<int> slots(space.per_slot.size(), -1);
  for (std::size_t k = 0; k < space.per_slot.size(); ++k) {
    bool assigned = false;
    for (int candidate : space.per_slot[k]) {
      auto it = remaining.find(candidate);
      if (it != remaining.end() && it->second > 0) {
        --it->second;
        slots[k] = candidate;
        assigned = true;
        break;
      }
    }
    if (!assigned) throw ArgumentError("gls: init combination inconsistent with search space");
  }
  return slots;
}

}  // namespace

SearchResult guided_local_search(
    const FrameCombination& init, const SearchSpace& space, const Objective& objective,
    const PriorCost& prior_costs, const GlsConfig& config,
    const std::vector<std::pair<FrameCombination, double>>* warm_start) {
  if (config.max_evaluations < 1) throw ArgumentError("gls: budget must be >= 1");
  if (init.size() != static_cast<int>(space.per_slot.size()))
    throw ArgumentError("gls: init length does not match slot count");
  GlsEngine engine(space, objective, prior_costs, config);
  if (warm_start)
    for (const auto& [combination, value] : *warm_start) engine.seed(combination, value);
  return engine.run(assign_to_slots(init, space));
}

namespace {

// Append `source` trace entries shifted by `eval_offset`, keeping the
// running best non-increasing.
void merge_trace(GlsTrace& merged, const GlsTrace& source, int eval_offset) {
  for (const auto& [evals, value] : source.best_objective_by_eval) {
    if (!merged.best_objective_by_eval.empty()) {
      const auto& [last_evals, last_value] = merged.best_objective_by_eval.back();
      if (value >= last_value) continue;
      if (last_evals == evals + eval_offset) {
        merged.best_objective_by_eval.back().second = value;
        continue;
      }
    }
    merged.best_objective_by_eval.emplace_back(evals + eval_offset, value);
  }
}

}  // namespace

SearchResult hierarchical_search(const FeatureMatrix& features, LossOracle& oracle,
                                 int clip_len, int n, const GlsConfig& config) {
  if (n < 1) throw ArgumentError("hierarchical_search: n must be >= 1");
  const int total_budget = config.max_evaluations;
  if (total_budget < 1) throw ArgumentError("hierarchical_search: budget must be >= 1");

  const int m = features.frame_count();
  const ClipPartition partition = split_clips(m, clip_len);
  const int clip_count = partition.clip_count();
  if (total_budget < clip_count + 2)
    throw BudgetError("hierarchical_search: budget too small to evaluate the initial solutions");

  // ---- Phase 1: clip-level search ----
  Matrix clip_features(clip_count, features.dim());
  for (int c = 0; c < clip_count; ++c)
    clip_features.row(c) = clip_feature(features, partition.ranges[c]).transpose();

  const Vector clip_priors = per_clip_losses(oracle, features, partition);

  const bool vector_entry = oracle.supports_vector_loss();
  const std::string& video_id = features.video_id;
  Objective clip_objective = [&](const FrameCombination& clips) {
    if (vector_entry) {
      Vector mean = Vector::Zero(clip_features.cols());
      for (int c : clips.indices()) mean += clip_features.row(c).transpose();
      return oracle.vector_loss(video_id, mean / clips.size());
    }
    std::vector<int> frames;
    for (int c : clips.indices())
      for (int i = partition.ranges[c].start; i < partition.ranges[c].end; ++i)
        frames.push_back(i);
    return oracle.loss(video_id, FrameCombination(std::move(frames)));
  };

  int lowest_clip = 0;
  for (int c = 1; c < clip_count; ++c)
    if (clip_priors(c) < clip_priors(lowest_clip)) lowest_clip = c;

  GlsConfig clip_config = config;
  clip_config.max_evaluations = std::max(
      0, static_cast<int>(total_budget * config.clip_budget_fraction) - clip_count);

  SearchResult clip_result;
  {
    GlsEngine engine(SearchSpace::flat(clip_count, n), clip_objective,
                     [&](int c) { return clip_priors(c); }, clip_config);
    for (int c = 0; c < clip_count; ++c)
      engine.seed(FrameCombination(std::vector<int>(n, c)), clip_priors(c));
    clip_result = engine.run(std::vector<int>(n, lowest_clip));
  }
  const int spent_clip_phase = clip_count + clip_result.trace.evaluations;

  // ---- Phase 2: frame-level search inside the selected clips ----
  SearchSpace frame_space;
  std::set<int> union_set;
  for (int c : clip_result.best.indices()) {
    const IndexRange& range = partition.ranges[c];
    std::vector<int> slot(range.length());
    for (int i = 0; i < range.length(); ++i) {
      slot[i] = range.start + i;
      union_set.insert(range.start + i);
    }
    frame_space.per_slot.push_back(std::move(slot));
  }
  const std::vector<int> union_frames(union_set.begin(), union_set.end());

  int remaining = total_budget - spent_clip_phase;
  if (remaining < static_cast<int>(union_frames.size()) + 1)
    throw BudgetError("hierarchical_search: budget exhausted before the frame phase");

  std::map<int, double> frame_prior;
  for (int i : union_frames)
    frame_prior[i] = oracle.loss(video_id, FrameCombination({i}));
  remaining -= static_cast<int>(union_frames.size());

  Objective frame_objective = [&](const FrameCombination& combination) {
    return oracle.loss(video_id, combination);
  };

  GlsConfig frame_config = config;
  frame_config.max_evaluations = remaining;

  Rng rng(config.seed);
  std::vector<int> init_slots(n);
  for (int k = 0; k < n; ++k) {
    const auto& slot = frame_space.per_slot[k];
    init_slots[k] = slot[rng.uniform_int(slot.size())];
  }

  SearchResult frame_result;
  {
    GlsEngine engine(frame_space, frame_objective,
                     [&](int i) { return frame_prior.at(i); }, frame_config);
    for (int i : union_frames)
      engine.seed(FrameCombination(std::vector<int>(n, i)), frame_prior.at(i));
    frame_result = engine.run(std::move(init_slots));
  }

  SearchResult result;
  result.best = frame_result.best;
  result.objective = frame_result.objective;
  merge_trace(result.trace, clip_result.trace, clip_count);
  merge_trace(result.trace, frame_result.trace,
              spent_clip_phase + static_cast<int>(union_frames.size()));
  result.trace.final = result.best;
  result.trace.penalties = frame_result.trace.penalties;
  result.trace.evaluations = spent_clip_phase + static_cast<int>(union_frames.size()) +
                             frame_result.trace.evaluations;
  return result;
}

SearchResult stage3_search(const FeatureMatrix& features, const Vector& target,
                           int n, const GlsConfig& config) {
  if (n < 1) throw ArgumentError("stage3_search: n must be >= 1");
  if (config.max_evaluations < 1) throw ArgumentError("stage3_search: budget must be >= 1");
  if (target.size() != features.dim())
    throw ArgumentError("stage3_search: target dimension mismatch");
  if (target.norm() == 0.0) throw ArgumentError("stage3_search: zero-norm target");

  const int m = features.frame_count();
  // Degenerate aggregates (zero norm) are treated as maximally distant.
  Vector priors(m);
  for (int i = 0; i < m; ++i) {
    priors(i) = features.rows.row(i).norm() == 0.0
                    ? 2.0
                    : cosine_distance(features.rows.row(i).transpose(), target);
  }

  Objective objective = [&](const FrameCombination& combination) {
    const Vector mean = mean_pool_rows(features.rows, combination.indices());
    return mean.norm() == 0.0 ? 2.0 : cosine_distance(mean, target);
  };

  std::vector<int> order(m);
  for (int i = 0; i < m; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return priors(a) != priors(b) ? priors(a) < priors(b) : a < b;
  });
  std::vector<int> init_slots(n);
  for (int k = 0; k < n; ++k) init_slots[k] = order[k % m];

  GlsEngine engine(SearchSpace::flat(m, n), objective,
                   [&](int i) { return priors(i); }, config);
  for (int i = 0; i < m; ++i)
    engine.seed(FrameCombination(std::vector<int>(n, i)), priors(i));
  return engine.run(std::move(init_slots));
}

BruteResult brute_force(int m, int n, const Objective& objective, long long cap) {
  if (m < 1 || n < 1) throw ArgumentError("brute_force: m and n must be >= 1");
  if (multiset_count(m, n, cap) > cap)
    throw CapacityError("brute_force: multiset count exceeds cap");

  BruteResult result;
  result.objective = std::numeric_limits<double>::infinity();
  std::vector<int> tuple(n, 0);
  while (true) {
    FrameCombination combination(tuple);
    const double value = objective(combination);
    ++result.evaluated;
    if (value < result.objective) {
      result.objective = value;
      result.best = std::move(combination);
    }
    // advance the non-decreasing odometer (lexicographic order)
    int k = n - 1;
    while (k >= 0 && tuple[k] == m - 1) --k;
    if (k < 0) break;
    const int next = tuple[k] + 1;
    for (int j = k; j < n; ++j) tuple[j] = next;
  }
  return result;
}

BruteResult brute_force(const SearchSpace& space, const Objective& objective, long long cap) {
  if (space.per_slot.empty()) throw ArgumentError("brute_force: search space has no slots");
  unsigned __int128 product = 1;
  for (const auto& slot : space.per_slot) {
    if (slot.empty()) throw ArgumentError("brute_force: empty candidate list");
    product *= slot.size();
    if (product > static_cast<unsigned __int128>(cap))
      throw CapacityError("brute_force: slot product exceeds cap");
  }

  const int n = static_cast<int>(space.per_slot.size());
  BruteResult result;
  result.objective = std::numeric_limits<double>::infinity();
  std::map<FrameCombination, double> seen;
  std::vector<int> cursor(n, 0);
  while (true) {
    std::vector<int> tuple(n);
    for (int k = 0; k < n; ++k) tuple[k] = space.per_slot[k][cursor[k]];
    FrameCombination combination(std::move(tuple));
    auto [it, fresh] = seen.emplace(combination, 0.0);
    if (fresh) {
      it->second = objective(combination);
      ++result.evaluated;
    }
    const double value = it->second;
    if (value < result.objective ||
        (value == result.objective && combination < result.best)) {
      result.objective = value;
      result.best = std::move(combination);
    }
    int k = n - 1;
    while (k >= 0 && cursor[k] + 1 == static_cast<int>(space.per_slot[k].size())) --k;
    if (k < 0) break;
    ++cursor[k];
    for (int j = k + 1; j < n; ++j) cursor[j] = 0;
  }
  return result;
}

FrameCombination uniform_baseline(int m, int n) {
  if (m < 1 || n < 1) throw ArgumentError("uniform_baseline: m and n must be >= 1");
  std::vector<int> frames(n);
  for (int k = 0; k < n; ++k) {
    const long long start = static_cast<long long>(k) * m / n;
    const long long end = static_cast<long long>(k + 1) * m / n;
    frames[k] = static_cast<int>((start + end) / 2);
  }
  return FrameCombination(std::move(frames));
}

FrameCombination uniform_baseline_random(int m, int n, std::uint64_t seed) {
  if (m < 1 || n < 1) throw ArgumentError("uniform_baseline: m and n must be >= 1");
  Rng rng(seed);
  std::vector<int> frames(n);
  for (int k = 0; k < n; ++k) {
    const long long start = static_cast<long long>(k) * m / n;
    const long long end = static_cast<long long>(k + 1) * m / n;
    frames[k] = start < end
                    ? static_cast<int>(start + static_cast<long long>(
                                                   rng.uniform_int(end - start)))
                    : static_cast<int>(start);
  }
  return FrameCombination(std::move(frames));
}

}  // namespace sms
