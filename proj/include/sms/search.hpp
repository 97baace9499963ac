#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <map>
#include <utility>
#include <vector>

#include "sms/errors.hpp"
#include "sms/feature_store.hpp"

namespace sms {

class LossOracle;

// Multiset of frame (or clip) indices, kept sorted ascending. Equality is
// multiset equality.
class FrameCombination {
 public:
  FrameCombination() = default;
  explicit FrameCombination(std::vector<int> indices);

  const std::vector<int>& indices() const { return indices_; }
  int size() const { return static_cast<int>(indices_.size()); }

  bool operator==(const FrameCombination&) const = default;
  auto operator<=>(const FrameCombination&) const = default;

 private:
  std::vector<int> indices_;
};

// Candidate indices per combination slot.
struct SearchSpace {
  std::vector<std::vector<int>> per_slot;

  static SearchSpace flat(int candidate_count, int slots);
  bool slots_identical() const;
};

struct GlsConfig {
  double lambda_alpha = 0.3;
  int max_evaluations = 1000;
  std::uint64_t seed = 0;
  // Fraction of the budget given to the clip phase of hierarchical search;
  // unspent budget rolls over to the frame phase.
  double clip_budget_fraction = 0.5;
};

struct GlsTrace {
  // (evaluation count, best original objective so far); objective values
  // non-increasing, counts strictly increasing.
  std::vector<std::pair<int, double>> best_objective_by_eval;
  std::map<int, int> penalties;
  FrameCombination final;
  int evaluations = 0;
};

struct SearchResult {
  FrameCombination best;
  double objective = 0.0;
  GlsTrace trace;
};

using Objective = std::function<double(const FrameCombination&)>;
using PriorCost = std::function<double(int)>;

// Guided local search: first-improvement descent over single-slot
// replacements under the penalty-augmented objective; at each local optimum
// the penalties of the present indices with maximal utility
// prior(i)/(1+penalty_i) are incremented. lambda is set to
// lambda_alpha * |objective at first local optimum| / n. Repeated
// combinations are memoized and cost no budget. Returns the best
// combination ever evaluated by the original objective (ties keep the
// earliest).
//
// `warm_start` entries are combinations whose objective value is already
// known and paid for by the caller; they seed the memo table.
SearchResult guided_local_search(
    const FrameCombination& init, const SearchSpace& space,
    const Objective& objective, const PriorCost& prior_costs,
    const GlsConfig& config,
    const std::vector<std::pair<FrameCombination, double>>* warm_start = nullptr);

// Two-phase search: GLS over clips (initialized from the lowest-loss clip,
// per-clip losses as priors), then GLS over the frames of the selected
// clips (random init, per-frame losses as priors). The budget is shared
// across phases, including the prior-loss evaluations.
SearchResult hierarchical_search(const FeatureMatrix& features, LossOracle& oracle,
                                 int clip_len, int n, const GlsConfig& config);

// Frame-level GLS matching a target feature: objective is the cosine
// distance between the selection's mean feature and `target`; initialized
// from the n frames closest to the target.
SearchResult stage3_search(const FeatureMatrix& features, const Vector& target,
                           int n, const GlsConfig& config);

template <typename A, typename B>
double cosine_distance(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) throw ArgumentError("cosine_distance: zero-norm vector");
  const double c = a.dot(b) / (na * nb);
  return std::min(2.0, std::max(0.0, 1.0 - c));
}

struct BruteResult {
  FrameCombination best;
  double objective = 0.0;
  long long evaluated = 0;
};

// Number of size-n multisets over m items, saturated at `cap`+1.
long long multiset_count(int m, int n, long long cap = 1'000'000);

// Exact enumeration of all size-n multisets over [0, m); ties go to the
// lexicographically smallest combination.
BruteResult brute_force(int m, int n, const Objective& objective,
                        long long cap = 1'000'000);
BruteResult brute_force(const SearchSpace& space, const Objective& objective,
                        long long cap = 1'000'000);

// Segment-center sampling: [0, m) is divided into n equal segments and each
// contributes its center frame.
FrameCombination uniform_baseline(int m, int n);
// Random-within-segment variant.
FrameCombination uniform_baseline_random(int m, int n, std::uint64_t seed);

}  // namespace sms
