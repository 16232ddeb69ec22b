#include "intentrl/aggregate.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <json.hpp>

namespace intentrl {

using nlohmann::json;

std::vector<double> discount_rewards(const Trajectory& traj, double gamma) {
  if (!(gamma > 0.0 && gamma <= 1.0)) {
    throw ValidationError("discount_rewards: gamma must be in (0, 1]");
  }
  const int T = traj.horizon();
  std::vector<double> out(static_cast<size_t>(T));
  for (int t = 1; t <= T; ++t) {
    out[static_cast<size_t>(t - 1)] =
        std::pow(gamma, static_cast<double>(T - t)) * traj.terminal_reward;
  }
  return out;
}

ProjectedTrajectory project_trajectory(const Trajectory& traj,
                                       const ClusterAssignment& ca,
                                       int source_index) {
  ProjectedTrajectory pt;
  pt.source_index = source_index;
  pt.horizon = traj.horizon();
  pt.terminal_reward = traj.terminal_reward;
  pt.labels.reserve(traj.steps.size());
  auto lookup = [&](const Utterance& u) {
    auto it = ca.labels.find(u.uid);
    if (it == ca.labels.end()) {
      throw ValidationError("project_trajectory: uid " + std::to_string(u.uid) +
                            " missing from cluster assignment");
    }
    return it->second;
  };
  for (const auto& step : traj.steps) {
    StepLabels sl;
    sl.action = lookup(step.action);
    if (step.observation) sl.observation = lookup(*step.observation);
    pt.labels.push_back(sl);
  }
  return pt;
}

IntentionKey intention_key(const ProjectedTrajectory& pt, int t) {
  IntentionKey key;
  key.history.reserve(static_cast<size_t>(2 * (t - 1)));
  for (int s = 1; s < t; ++s) {
    const StepLabels& sl = pt.labels[static_cast<size_t>(s - 1)];
    key.history.push_back(sl.action);
    // Only the final step may lack an observation, and it never appears in
    // any history prefix.
    key.history.push_back(sl.observation.value());
  }
  key.action = pt.labels[static_cast<size_t>(t - 1)].action;
  return key;
}

namespace {

struct Accum {
  std::vector<double> values;
};

// Mean with an exact fast path: pooling identical values yields that value
// bit-for-bit, so degenerate pools stay exactly degenerate.
double pooled_mean(const std::vector<double>& values) {
  bool all_equal = true;
  for (double v : values) {
    if (v != values.front()) {
      all_equal = false;
      break;
    }
  }
  if (all_equal) return values.front();
  double s = 0.0;
  for (double v : values) s += v;
  return s / static_cast<double>(values.size());
}

}  // namespace

namespace {

RewardTable pools_to_table(
    std::unordered_map<IntentionKey, Accum, IntentionKeyHash>& pools, int k,
    double gamma);

}  // namespace

RewardTable build_reward_table(const TrajectorySet& set,
                               const ClusterAssignment& ca, double gamma) {
  std::unordered_map<IntentionKey, Accum, IntentionKeyHash> pools;
  for (size_t i = 0; i < set.trajectories.size(); ++i) {
    const Trajectory& traj = set.trajectories[i];
    auto pt = project_trajectory(traj, ca, static_cast<int>(i));
    auto rewards = discount_rewards(traj, gamma);
    for (int t = 1; t <= pt.horizon; ++t) {
      pools[intention_key(pt, t)].values.push_back(rewards[static_cast<size_t>(t - 1)]);
    }
  }
  return pools_to_table(pools, ca.k, gamma);
}

RewardTable build_reward_table_from_pairs(
    const std::vector<std::pair<IntentionKey, double>>& pairs, int k,
    double gamma) {
  std::unordered_map<IntentionKey, Accum, IntentionKeyHash> pools;
  for (const auto& [key, reward] : pairs) pools[key].values.push_back(reward);
  return pools_to_table(pools, k, gamma);
}

namespace {

RewardTable pools_to_table(
    std::unordered_map<IntentionKey, Accum, IntentionKeyHash>& pools, int k,
    double gamma) {
  RewardTable table;
  table.k = k;
  table.gamma = gamma;
  std::vector<const IntentionKey*> ordered;
  ordered.reserve(pools.size());
  for (const auto& [key, _] : pools) ordered.push_back(&key);
  std::sort(ordered.begin(), ordered.end(),
            [](const IntentionKey* a, const IntentionKey* b) { return *a < *b; });
  double weighted_sum = 0.0;
  for (const IntentionKey* key : ordered) {
    const Accum& acc = pools.at(*key);
    RewardStats st;
    st.count = static_cast<int64_t>(acc.values.size());
    st.mean = pooled_mean(acc.values);
    weighted_sum += st.mean * static_cast<double>(st.count);
    table.total_count += st.count;
    table.entries.emplace(*key, st);
  }
  table.global_mean =
      table.total_count > 0 ? weighted_sum / static_cast<double>(table.total_count) : 0.0;
  return table;
}

}  // namespace

AdvantageSet assign_advantages(const TrajectorySet& set,
                               const ClusterAssignment& ca,
                               const RewardTable& table) {
  AdvantageSet adv;
  adv.k = table.k;
  adv.gamma = table.gamma;
  std::unordered_map<IntentionKey, int, IntentionKeyHash> key_ids;
  for (size_t i = 0; i < set.trajectories.size(); ++i) {
    const Trajectory& traj = set.trajectories[i];
    auto pt = project_trajectory(traj, ca, static_cast<int>(i));
    auto rewards = discount_rewards(traj, table.gamma);
    std::vector<AdvantageSet::StepAdv> steps;
    steps.reserve(static_cast<size_t>(pt.horizon));
    for (int t = 1; t <= pt.horizon; ++t) {
      IntentionKey key = intention_key(pt, t);
      const RewardStats* st = table.find(key);
      if (st == nullptr) {
        throw ValidationError(
            "assign_advantages: intention key missing from table (offline "
            "tables must cover the set they score)");
      }
      auto [it, inserted] = key_ids.try_emplace(key, static_cast<int>(adv.keys.size()));
      if (inserted) adv.keys.push_back(key);
      steps.push_back({rewards[static_cast<size_t>(t - 1)], st->mean, it->second});
    }
    adv.per_trajectory.push_back(std::move(steps));
  }
  return adv;
}

void save_reward_table(const RewardTable& table, const std::string& path) {
  std::vector<const IntentionKey*> keys;
  keys.reserve(table.entries.size());
  for (const auto& [key, _] : table.entries) keys.push_back(&key);
  std::sort(keys.begin(), keys.end(),
            [](const IntentionKey* a, const IntentionKey* b) { return *a < *b; });
  json rec;
  rec["k"] = table.k;
  rec["gamma"] = table.gamma;
  json entries = json::array();
  for (const IntentionKey* key : keys) {
    const RewardStats& st = table.entries.at(*key);
    entries.push_back({{"history_labels", key->history},
                       {"action_label", key->action},
                       {"mean", st.mean},
                       {"count", st.count}});
  }
  rec["entries"] = std::move(entries);
  write_file(path, rec.dump(2) + "\n");
}

RewardTable load_reward_table(const std::string& path) {
  json rec = json::parse(read_file(path));
  RewardTable table;
  table.k = rec.at("k").get<int>();
  table.gamma = rec.at("gamma").get<double>();
  double weighted_sum = 0.0;
  for (const auto& e : rec.at("entries")) {
    IntentionKey key;
    key.history = e.at("history_labels").get<std::vector<int32_t>>();
    key.action = e.at("action_label").get<int32_t>();
    RewardStats st{e.at("mean").get<double>(), e.at("count").get<int64_t>()};
    weighted_sum += st.mean * static_cast<double>(st.count);
    table.total_count += st.count;
    table.entries.emplace(std::move(key), st);
  }
  table.global_mean =
      table.total_count > 0 ? weighted_sum / static_cast<double>(table.total_count) : 0.0;
  return table;
}

}  // namespace intentrl
