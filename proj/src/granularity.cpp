#include "intentrl/granularity.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

namespace intentrl {

using nlohmann::json;

namespace {

struct NodeKey {
  std::vector<int32_t> nodes;  // history positions then the action position

  bool operator==(const NodeKey&) const = default;
};

struct NodeKeyHash {
  size_t operator()(const NodeKey& k) const {
    return static_cast<size_t>(
        fnv1a64_bytes(k.nodes.data(), k.nodes.size() * sizeof(int32_t)));
  }
};

// Row indices of every key position of every step, in trajectory order.
struct StepIndex {
  std::vector<std::vector<int>> positions;  // per step: rows in its key
  std::vector<double> rewards;              // discounted
};

StepIndex build_step_index(const TrajectorySet& set, const EmbeddingMatrix& m,
                           double gamma) {
  StepIndex si;
  for (const auto& traj : set.trajectories) {
    auto rewards = discount_rewards(traj, gamma);
    std::vector<int> prefix;  // rows of (a_1, o_1, ..., a_{t-1}, o_{t-1})
    for (int t = 1; t <= traj.horizon(); ++t) {
      const Step& step = traj.steps[static_cast<size_t>(t - 1)];
      std::vector<int> rows = prefix;
      rows.push_back(static_cast<int>(m.uid_index.at(step.action.uid)));
      si.positions.push_back(std::move(rows));
      si.rewards.push_back(rewards[static_cast<size_t>(t - 1)]);
      prefix.push_back(static_cast<int>(m.uid_index.at(step.action.uid)));
      if (step.observation) {
        prefix.push_back(static_cast<int>(m.uid_index.at(step.observation->uid)));
      }
    }
  }
  return si;
}

// Roots of the forest after applying the first n-k merges.
std::vector<int> roots_at_cut(const Dendrogram& dg, int k) {
  const int n = dg.n;
  std::vector<int> parent(2 * static_cast<size_t>(n) - 1);
  for (size_t i = 0; i < parent.size(); ++i) parent[i] = static_cast<int>(i);
  for (int s = 0; s < n - k; ++s) {
    parent[static_cast<size_t>(dg.merges[static_cast<size_t>(s)].left)] =
        dg.merges[static_cast<size_t>(s)].id;
    parent[static_cast<size_t>(dg.merges[static_cast<size_t>(s)].right)] =
        dg.merges[static_cast<size_t>(s)].id;
  }
  std::vector<int> node_of_row(static_cast<size_t>(n));
  for (int row = 0; row < n; ++row) {
    int node = row;
    while (parent[static_cast<size_t>(node)] != node) node = parent[static_cast<size_t>(node)];
    node_of_row[static_cast<size_t>(row)] = node;
  }
  return node_of_row;
}

void collect_leaves(const Dendrogram& dg, int node, std::vector<int>& out) {
  if (node < dg.n) {
    out.push_back(node);
    return;
  }
  const auto& mg = dg.merges[static_cast<size_t>(node - dg.n)];
  collect_leaves(dg, mg.left, out);
  collect_leaves(dg, mg.right, out);
}

void check_sweep_range(const Dendrogram& dg, int k) {
  if (k < 2 || k >= dg.n) {
    throw ValidationError("split score: k=" + std::to_string(k) +
                          " out of range [2, " + std::to_string(dg.n - 1) + "]");
  }
}

}  // namespace

double split_score(const TrajectorySet& set, const Dendrogram& dg,
                   const EmbeddingMatrix& m, int k, double gamma) {
  check_sweep_range(dg, k);
  auto ca_k = cut_dendrogram(dg, k, m);
  auto ca_k1 = cut_dendrogram(dg, k + 1, m);
  auto table_k = build_reward_table(set, ca_k, gamma);
  auto table_k1 = build_reward_table(set, ca_k1, gamma);

  double delta = 0.0;
  int64_t total = 0;
  for (size_t i = 0; i < set.trajectories.size(); ++i) {
    const Trajectory& traj = set.trajectories[i];
    auto pt_k = project_trajectory(traj, ca_k, static_cast<int>(i));
    auto pt_k1 = project_trajectory(traj, ca_k1, static_cast<int>(i));
    for (int t = 1; t <= traj.horizon(); ++t) {
      const RewardStats* a = table_k.find(intention_key(pt_k, t));
      const RewardStats* b = table_k1.find(intention_key(pt_k1, t));
      delta += std::abs(b->mean - a->mean);
      ++total;
    }
  }
  if (total == 0) throw ValidationError("split_score: empty trajectory set");
  return delta / static_cast<double>(total);
}

double split_score_upper_bound(const TrajectorySet& set, const Dendrogram& dg,
                               const EmbeddingMatrix& m, int k) {
  check_sweep_range(dg, k);
  auto node_of_row = roots_at_cut(dg, k);
  int split_node = dg.merges[static_cast<size_t>(dg.n - k - 1)].id;
  auto si = build_step_index(set, m, 1.0);
  if (si.positions.empty()) throw ValidationError("split_score_upper_bound: empty set");
  int64_t affected = 0;
  for (const auto& rows : si.positions) {
    for (int row : rows) {
      if (node_of_row[static_cast<size_t>(row)] == split_node) {
        ++affected;
        break;
      }
    }
  }
  return static_cast<double>(affected) / static_cast<double>(si.positions.size());
}

std::optional<int> select_k(const std::map<int, double>& scores, double epsilon,
                            int tau) {
  if (!(epsilon > 0.0)) throw ValidationError("select_k: epsilon must be > 0");
  if (tau < 0) throw ValidationError("select_k: tau must be >= 0");
  for (const auto& [k, _] : scores) {
    bool ok = true;
    for (int j = k; j <= k + tau; ++j) {
      auto it = scores.find(j);
      if (it == scores.end()) {
        ok = false;  // window extends past the swept range
        break;
      }
      if (!(it->second < epsilon)) {
        ok = false;
        break;
      }
    }
    if (ok) return k;
  }
  return std::nullopt;
}

SplitScoreCurve sweep_split_scores(const TrajectorySet& set, const Dendrogram& dg,
                                   const EmbeddingMatrix& m, int k_max,
                                   double gamma, double epsilon, int tau) {
  SplitScoreCurve curve;
  curve.epsilon = epsilon;
  curve.tau = tau;
  const int n = dg.n;
  int k_hi = std::min(k_max, n) - 1;  // score(k) needs the cut at k+1
  if (k_hi < 2) return curve;

  auto si = build_step_index(set, m, gamma);
  const int64_t total = static_cast<int64_t>(si.positions.size());
  if (total == 0) throw ValidationError("sweep_split_scores: empty trajectory set");

  auto node_of_row = roots_at_cut(dg, 2);

  std::vector<NodeKey> key_of_step(static_cast<size_t>(total));
  struct Group {
    double sum = 0.0;
    int64_t count = 0;
  };
  std::unordered_map<NodeKey, Group, NodeKeyHash> groups;
  std::unordered_map<int, std::vector<int>> steps_by_node;

  auto materialize = [&](int s) {
    NodeKey key;
    const auto& rows = si.positions[static_cast<size_t>(s)];
    key.nodes.reserve(rows.size());
    for (int row : rows) key.nodes.push_back(node_of_row[static_cast<size_t>(row)]);
    return key;
  };
  auto register_step_nodes = [&](int s) {
    const NodeKey& key = key_of_step[static_cast<size_t>(s)];
    std::vector<int32_t> distinct(key.nodes.begin(), key.nodes.end());
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    for (int32_t node : distinct) {
      auto& v = steps_by_node[node];
      if (v.empty() || v.back() != s) v.push_back(s);
    }
  };

  for (int s = 0; s < total; ++s) {
    key_of_step[static_cast<size_t>(s)] = materialize(s);
    auto& g = groups[key_of_step[static_cast<size_t>(s)]];
    g.sum += si.rewards[static_cast<size_t>(s)];
    g.count += 1;
    register_step_nodes(s);
  }

  for (int k = 2; k <= k_hi; ++k) {
    const auto& mg = dg.merges[static_cast<size_t>(n - k - 1)];
    auto it = steps_by_node.find(mg.id);
    std::vector<int> affected;
    if (it != steps_by_node.end()) affected = it->second;
    // The node index can hold duplicates and stale entries from earlier
    // re-keyings; keep each step once, and only if its key still holds the
    // split node.
    std::sort(affected.begin(), affected.end());
    affected.erase(std::unique(affected.begin(), affected.end()), affected.end());
    std::erase_if(affected, [&](int s) {
      const auto& nodes = key_of_step[static_cast<size_t>(s)].nodes;
      return std::find(nodes.begin(), nodes.end(), mg.id) == nodes.end();
    });

    std::vector<double> old_means(affected.size());
    for (size_t a = 0; a < affected.size(); ++a) {
      const Group& g = groups.at(key_of_step[static_cast<size_t>(affected[a])]);
      old_means[a] = g.sum / static_cast<double>(g.count);
    }
    for (int s : affected) {
      auto git = groups.find(key_of_step[static_cast<size_t>(s)]);
      git->second.sum -= si.rewards[static_cast<size_t>(s)];
      git->second.count -= 1;
      if (git->second.count == 0) groups.erase(git);
    }

    // Split mg.id into its children.
    std::vector<int> leaves;
    collect_leaves(dg, mg.left, leaves);
    for (int row : leaves) node_of_row[static_cast<size_t>(row)] = mg.left;
    leaves.clear();
    collect_leaves(dg, mg.right, leaves);
    for (int row : leaves) node_of_row[static_cast<size_t>(row)] = mg.right;

    for (int s : affected) {
      key_of_step[static_cast<size_t>(s)] = materialize(s);
      auto& g = groups[key_of_step[static_cast<size_t>(s)]];
      g.sum += si.rewards[static_cast<size_t>(s)];
      g.count += 1;
      register_step_nodes(s);
    }

    double delta = 0.0;
    for (size_t a = 0; a < affected.size(); ++a) {
      const Group& g = groups.at(key_of_step[static_cast<size_t>(affected[a])]);
      delta += std::abs(g.sum / static_cast<double>(g.count) - old_means[a]);
    }
    curve.scores[k] = delta / static_cast<double>(total);
    curve.nk_fraction[k] =
        static_cast<double>(affected.size()) / static_cast<double>(total);
  }

  double running = 0.0;
  for (auto it2 = curve.nk_fraction.rbegin(); it2 != curve.nk_fraction.rend(); ++it2) {
    running = std::max(running, it2->second);
    curve.upper_bound[it2->first] = running;
  }
  curve.k_star = select_k(curve.scores, epsilon, tau);
  return curve;
}

TrajectorySet normalize_terminal_rewards(const TrajectorySet& set) {
  std::map<Task, std::pair<double, double>> range;
  for (const auto& traj : set.trajectories) {
    auto it = range.find(traj.task);
    if (it == range.end()) {
      range[traj.task] = {traj.terminal_reward, traj.terminal_reward};
    } else {
      it->second.first = std::min(it->second.first, traj.terminal_reward);
      it->second.second = std::max(it->second.second, traj.terminal_reward);
    }
  }
  TrajectorySet out = set;
  for (auto& traj : out.trajectories) {
    auto [lo, hi] = range.at(traj.task);
    traj.terminal_reward = hi > lo ? (traj.terminal_reward - lo) / (hi - lo) : 0.0;
  }
  return out;
}

void write_sweep_csv(const SplitScoreCurve& curve, const std::string& path) {
  std::ostringstream out;
  out << "k,split_score,upper_bound,below_epsilon\n";
  for (const auto& [k, score] : curve.scores) {
    out << k << "," << format_double(score) << ","
        << format_double(curve.upper_bound.at(k)) << ","
        << (score < curve.epsilon ? 1 : 0) << "\n";
  }
  write_file(path, out.str());
}

void write_selection_summary(const SplitScoreCurve& curve, const std::string& path) {
  json rec;
  rec["epsilon"] = curve.epsilon;
  rec["tau"] = curve.tau;
  if (curve.k_star) {
    rec["k_star"] = *curve.k_star;
  } else {
    rec["k_star"] = nullptr;
  }
  write_file(path, rec.dump(2) + "\n");
}

}  // namespace intentrl
