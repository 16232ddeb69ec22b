#ifndef INTENTRL_AGGREGATE_HPP_
#define INTENTRL_AGGREGATE_HPP_

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "intentrl/hac.hpp"
#include "intentrl/traj.hpp"

namespace intentrl {

// Per-step cluster labels for one trajectory.
struct StepLabels {
  int action = 0;
  std::optional<int> observation;

  bool operator==(const StepLabels&) const = default;
};

struct ProjectedTrajectory {
  int source_index = -1;  // index into the owning TrajectorySet
  int horizon = 0;
  double terminal_reward = 0.0;
  std::vector<StepLabels> labels;
};

// The pooling key: interleaved (action, observation) labels for steps
// 1..t-1 followed by the step-t action label. The current observation is
// not part of the key.
struct IntentionKey {
  std::vector<int32_t> history;
  int32_t action = 0;

  bool operator==(const IntentionKey&) const = default;
  bool operator<(const IntentionKey& o) const {
    if (history != o.history) return history < o.history;
    return action < o.action;
  }
};

struct IntentionKeyHash {
  size_t operator()(const IntentionKey& k) const {
    uint64_t h = 14695981039346656037ull;
    h = fnv1a64_bytes(k.history.data(), k.history.size() * sizeof(int32_t), h);
    h = fnv1a64_bytes(&k.action, sizeof(k.action), h);
    return static_cast<size_t>(h);
  }
};

struct RewardStats {
  double mean = 0.0;
  int64_t count = 0;

  bool operator==(const RewardStats&) const = default;
};

// Mean discounted reward per intention key, with support counts.
// Doubles as the online reward oracle.
struct RewardTable {
  int k = 0;
  double gamma = 1.0;
  std::unordered_map<IntentionKey, RewardStats, IntentionKeyHash> entries;
  double global_mean = 0.0;  // count-weighted mean across entries
  int64_t total_count = 0;

  const RewardStats* find(const IntentionKey& key) const {
    auto it = entries.find(key);
    return it == entries.end() ? nullptr : &it->second;
  }
};

// Per-step advantages: the pooled table mean plus the raw discounted
// reward kept for diagnostics, along with the key id for grouping.
struct AdvantageSet {
  struct StepAdv {
    double raw = 0.0;
    double aggregated = 0.0;
    int key_id = 0;
  };
  std::vector<std::vector<StepAdv>> per_trajectory;
  std::vector<IntentionKey> keys;  // key_id -> key
  int k = 0;
  double gamma = 1.0;
};

// gamma^(T-t) * terminal_reward for t = 1..T. Requires 0 < gamma <= 1.
std::vector<double> discount_rewards(const Trajectory& traj, double gamma);

// Maps every step's utterances to cluster labels. Throws when a uid is
// missing from the assignment.
ProjectedTrajectory project_trajectory(const Trajectory& traj,
                                       const ClusterAssignment& ca,
                                       int source_index = -1);

// Key of step t (1-based) in a projected trajectory.
IntentionKey intention_key(const ProjectedTrajectory& pt, int t);

// Pools discounted rewards over all history-action pairs sharing a key.
RewardTable build_reward_table(const TrajectorySet& set,
                               const ClusterAssignment& ca, double gamma);

// Same pooling over pre-materialized (key, discounted reward) pairs; used
// by the online loop where labels come from nearest-centroid projection.
RewardTable build_reward_table_from_pairs(
    const std::vector<std::pair<IntentionKey, double>>& pairs, int k,
    double gamma);

// Looks up each step's pooled mean. In offline mode the table was built
// from the same set, so every key must resolve.
AdvantageSet assign_advantages(const TrajectorySet& set,
                               const ClusterAssignment& ca,
                               const RewardTable& table);

void save_reward_table(const RewardTable& table, const std::string& path);
RewardTable load_reward_table(const std::string& path);

}  // namespace intentrl

#endif  // INTENTRL_AGGREGATE_HPP_
