#ifndef INTENTRL_GRANULARITY_HPP_
#define INTENTRL_GRANULARITY_HPP_

#include <map>
#include <optional>
#include <string>

#include "intentrl/aggregate.hpp"

namespace intentrl {

// Stopping-rule defaults.
inline constexpr double kDefaultEpsilon = 0.01;
inline constexpr int kDefaultTau = 10;
inline constexpr int kDefaultKMax = 512;

// Reward-sensitivity curve over nested cuts. scores[k] is the mean
// absolute change in pooled reward per history-action pair when the cut
// moves from k to k+1; nk_fraction[k] is the fraction of pairs whose key
// changed; upper_bound[k] is the running maximum of nk_fraction from the
// right, which is non-increasing by construction.
struct SplitScoreCurve {
  std::map<int, double> scores;
  std::map<int, double> nk_fraction;
  std::map<int, double> upper_bound;
  double epsilon = kDefaultEpsilon;
  int tau = kDefaultTau;
  std::optional<int> k_star;
};

// Single-granularity score via full materialization of both reward
// tables. Requires 2 <= k < n.
double split_score(const TrajectorySet& set, const Dendrogram& dg,
                   const EmbeddingMatrix& m, int k, double gamma);

// n_k / |D|: the fraction of pairs whose intention key differs between the
// cuts at k and k+1 (i.e. pairs touching the cluster that splits).
double split_score_upper_bound(const TrajectorySet& set, const Dendrogram& dg,
                               const EmbeddingMatrix& m, int k);

// Smallest k with scores[j] < epsilon for every j in [k, k+tau]; absent
// when no candidate window qualifies.
std::optional<int> select_k(const std::map<int, double>& scores, double epsilon,
                            int tau);

// Full curve for k in [2, min(k_max, n)-1], computed incrementally from
// one cluster split at a time. Callers normalize terminal rewards first
// (the pipeline does) so that scores lie in [0, 1].
SplitScoreCurve sweep_split_scores(const TrajectorySet& set, const Dendrogram& dg,
                                   const EmbeddingMatrix& m, int k_max,
                                   double gamma, double epsilon, int tau);

// Min-max normalizes terminal rewards to [0, 1] per task; a degenerate
// (all-equal) task maps to 0.
TrajectorySet normalize_terminal_rewards(const TrajectorySet& set);

// Plot-ready CSV: k, split_score, upper_bound, below_epsilon.
void write_sweep_csv(const SplitScoreCurve& curve, const std::string& path);

// Selection summary record {epsilon, tau, k_star}.
void write_selection_summary(const SplitScoreCurve& curve, const std::string& path);

}  // namespace intentrl

#endif  // INTENTRL_GRANULARITY_HPP_
