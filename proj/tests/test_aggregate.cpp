#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <map>

#include "intentrl/aggregate.hpp"
#include "oracles.hpp"

using namespace intentrl;

namespace {

Trajectory solo_traj(const std::string& id,
                     const std::vector<std::pair<std::string, std::string>>& turns,
                     double reward, bool last_obs = true) {
  Trajectory t;
  t.game_id = id;
  t.task = Task::kCustom;
  t.player = Player::kSolo;
  t.terminal_reward = reward;
  for (size_t i = 0; i < turns.size(); ++i) {
    Step s;
    s.t = static_cast<int>(i) + 1;
    s.action = Utterance{turns[i].first, Speaker::kAgent, 0};
    if (i + 1 < turns.size() || last_obs) {
      s.observation = Utterance{turns[i].second, Speaker::kEnvironment, 0};
    }
    t.steps.push_back(std::move(s));
  }
  return t;
}

// Cluster assignment over a set's corpus from an explicit uid -> label map;
// centroids are irrelevant for aggregation tests.
ClusterAssignment labels_for(const TrajectorySet& set,
                             const std::map<std::string, int>& by_text, int k) {
  ClusterAssignment ca;
  ca.k = k;
  ca.d = 1;
  ca.centroids.assign(static_cast<size_t>(k), 0.0);
  ca.sizes.assign(static_cast<size_t>(k), 0);
  for (const auto& u : set.corpus) {
    int label = by_text.count(u.text) > 0 ? by_text.at(u.text) : 0;
    ca.labels[u.uid] = label;
    ca.sizes[static_cast<size_t>(label)] += 1;
  }
  return ca;
}

ClusterAssignment singleton_labels(const TrajectorySet& set) {
  ClusterAssignment ca;
  ca.k = static_cast<int>(set.corpus.size());
  ca.d = 1;
  ca.centroids.assign(static_cast<size_t>(ca.k), 0.0);
  ca.sizes.assign(static_cast<size_t>(ca.k), 1);
  for (const auto& u : set.corpus) ca.labels[u.uid] = static_cast<int>(u.uid);
  return ca;
}

// Random corpora with random label maps; clustering structure is irrelevant
// to the aggregation identities.
struct RandomCorpus {
  TrajectorySet set;
  ClusterAssignment ca;
  double gamma;
};

RandomCorpus random_corpus(uint64_t seed, int min_trajs = 2, int max_trajs = 30) {
  Rng rng(seed);
  std::vector<std::string> vocab;
  int v = static_cast<int>(rng.uniform_int(3, 12));
  for (int i = 0; i < v; ++i) vocab.push_back("phrase " + std::to_string(i));
  std::vector<Trajectory> trajs;
  int n = static_cast<int>(rng.uniform_int(min_trajs, max_trajs));
  for (int i = 0; i < n; ++i) {
    int T = static_cast<int>(rng.uniform_int(1, 6));
    std::vector<std::pair<std::string, std::string>> turns;
    for (int t = 0; t < T; ++t) {
      turns.emplace_back(rng.choice(vocab), rng.choice(vocab));
    }
    double reward = rng.uniform() < 0.3 ? (rng.uniform() < 0.5 ? 0.0 : 1.0)
                                        : rng.uniform() * 2.0 - 0.5;
    trajs.push_back(solo_traj("g" + std::to_string(i), turns, reward,
                              rng.uniform() < 0.7));
  }
  RandomCorpus out;
  out.set = assemble_set(std::move(trajs));
  int k = static_cast<int>(rng.uniform_int(1, std::max<int64_t>(
      1, static_cast<int64_t>(out.set.corpus.size()))));
  std::map<std::string, int> by_text;
  ClusterAssignment ca;
  ca.k = k;
  ca.d = 1;
  ca.centroids.assign(static_cast<size_t>(k), 0.0);
  ca.sizes.assign(static_cast<size_t>(k), 0);
  for (const auto& u : out.set.corpus) {
    ca.labels[u.uid] = static_cast<int>(rng.uniform_int(0, k - 1));
  }
  out.ca = std::move(ca);
  out.gamma = rng.uniform() < 0.25 ? 1.0 : 0.5 + 0.5 * rng.uniform();
  return out;
}

}  // namespace

TEST_CASE("discount schedule") {
  auto traj = solo_traj("g", {{"a", "x"}, {"b", "y"}, {"c", "z"}}, 1.0);
  auto r9 = discount_rewards(traj, 0.9);
  CHECK(r9[2] == 1.0);                                // gamma^0
  CHECK(r9[0] == doctest::Approx(0.81).epsilon(1e-12));  // gamma^2
  auto r1 = discount_rewards(traj, 1.0);
  for (double r : r1) CHECK(r == 1.0);
  CHECK_THROWS_AS(discount_rewards(traj, 0.0), ValidationError);
  CHECK_THROWS_AS(discount_rewards(traj, 1.5), ValidationError);
}

TEST_CASE("projection is a deterministic table lookup") {
  auto set = assemble_set({solo_traj("g0", {{"a", "x"}, {"b", "y"}}, 1.0),
                           solo_traj("g1", {{"a", "x"}, {"b", "y"}}, 0.0)});
  auto ca = labels_for(set, {{"a", 0}, {"b", 1}, {"x", 2}, {"y", 2}}, 3);
  auto p0 = project_trajectory(set.trajectories[0], ca, 0);
  CHECK(p0.labels.size() == 2);
  CHECK(p0.labels[0].action == 0);
  CHECK(*p0.labels[0].observation == 2);
  CHECK(p0.labels[1].action == 1);
  auto p1 = project_trajectory(set.trajectories[1], ca, 1);
  CHECK(p0.labels == p1.labels);  // identical utterance sequences

  ClusterAssignment missing;
  missing.k = 1;
  missing.d = 1;
  CHECK_THROWS_AS(project_trajectory(set.trajectories[0], missing, 0),
                  ValidationError);
}

TEST_CASE("projection at singleton granularity is injective") {
  auto set = assemble_set({solo_traj("g0", {{"a", "x"}, {"b", "y"}}, 1.0),
                           solo_traj("g1", {{"c", "x"}, {"b", "z"}}, 0.0)});
  auto ca = singleton_labels(set);
  auto p0 = project_trajectory(set.trajectories[0], ca, 0);
  auto p1 = project_trajectory(set.trajectories[1], ca, 1);
  CHECK(p0.labels != p1.labels);
}

TEST_CASE("pooled mean over one shared key") {
  auto set = assemble_set({solo_traj("g0", {{"ask it", "fine"}}, 1.0),
                           solo_traj("g1", {{"ask it", "fine"}}, 0.0)});
  auto ca = labels_for(set, {{"ask it", 0}, {"fine", 1}}, 2);
  auto table = build_reward_table(set, ca, 0.9);
  REQUIRE(table.entries.size() == 1);
  const auto& [key, st] = *table.entries.begin();
  CHECK(st.count == 2);
  CHECK(st.mean == 0.5);
  CHECK(key.history.empty());
  CHECK(table.total_count == 2);
}

TEST_CASE("singleton cut makes aggregation the identity") {
  RandomCorpus rc = random_corpus(5);
  auto ca = singleton_labels(rc.set);
  // Force distinct utterance sequences per trajectory by construction is
  // not guaranteed here, so check the weaker identity: every entry's mean
  // equals each contributing discounted reward when its count is 1.
  auto table = build_reward_table(rc.set, ca, rc.gamma);
  auto adv = assign_advantages(rc.set, ca, table);
  for (size_t i = 0; i < adv.per_trajectory.size(); ++i) {
    for (const auto& s : adv.per_trajectory[i]) {
      const auto& st = table.entries.at(adv.keys[static_cast<size_t>(s.key_id)]);
      if (st.count == 1) CHECK(s.aggregated == s.raw);
    }
  }
}

TEST_CASE("table matches the exhaustive oracle") {
  for (uint64_t seed = 1; seed <= 30; ++seed) {
    RandomCorpus rc = random_corpus(seed);
    auto table = build_reward_table(rc.set, rc.ca, rc.gamma);
    auto oracle = oracles::exhaustive_reward_table(rc.set, rc.ca, rc.gamma);
    REQUIRE(table.entries.size() == oracle.entries.size());
    CHECK(table.total_count == oracle.total_count);
    for (const auto& [key, st] : oracle.entries) {
      auto it = table.entries.find(key);
      REQUIRE(it != table.entries.end());
      CHECK(it->second.count == st.count);
      CHECK(it->second.mean == doctest::Approx(st.mean).epsilon(1e-12));
    }
  }
}

TEST_CASE("advantages equal table means exactly") {
  RandomCorpus rc = random_corpus(77);
  auto table = build_reward_table(rc.set, rc.ca, rc.gamma);
  auto adv = assign_advantages(rc.set, rc.ca, table);
  for (const auto& traj : adv.per_trajectory) {
    for (const auto& s : traj) {
      const auto& key = adv.keys[static_cast<size_t>(s.key_id)];
      CHECK(s.aggregated == table.entries.at(key).mean);
    }
  }
}

TEST_CASE("constant rewards pool to the same discounted value per position") {
  auto set = assemble_set({solo_traj("g0", {{"a", "x"}, {"b", "y"}}, 2.0),
                           solo_traj("g1", {{"a", "x"}, {"b", "y"}}, 2.0)});
  auto ca = labels_for(set, {}, 1);
  auto table = build_reward_table(set, ca, 0.9);
  auto adv = assign_advantages(set, ca, table);
  for (const auto& traj : adv.per_trajectory) {
    CHECK(traj[0].aggregated == doctest::Approx(2.0 * 0.9).epsilon(1e-12));
    CHECK(traj[1].aggregated == 2.0);
  }
}

TEST_CASE("law of total variance and the variance inequality") {
  for (uint64_t seed = 1; seed <= 200; ++seed) {
    RandomCorpus rc = random_corpus(seed);
    auto table = build_reward_table(rc.set, rc.ca, rc.gamma);
    auto adv = assign_advantages(rc.set, rc.ca, table);

    // Population variances computed directly here, independent of the
    // train-module report.
    std::vector<double> raw, agg;
    std::map<int, std::vector<double>> by_key;
    for (const auto& traj : adv.per_trajectory) {
      for (const auto& s : traj) {
        raw.push_back(s.raw);
        agg.push_back(s.aggregated);
        by_key[s.key_id].push_back(s.raw);
      }
    }
    auto variance = [](const std::vector<double>& v) {
      double mean = 0;
      for (double x : v) mean += x;
      mean /= static_cast<double>(v.size());
      double s = 0;
      for (double x : v) s += (x - mean) * (x - mean);
      return s / static_cast<double>(v.size());
    };
    double var_raw = variance(raw);
    double var_agg = variance(agg);
    double within = 0;
    for (const auto& [_, values] : by_key) {
      within += variance(values) * static_cast<double>(values.size());
    }
    within /= static_cast<double>(raw.size());
    CHECK(std::abs(var_raw - var_agg - within) < 1e-9);
    CHECK(var_agg <= var_raw);
  }
}

TEST_CASE("count-weighted mean of aggregated advantages preserves the grand mean") {
  for (uint64_t seed = 300; seed < 330; ++seed) {
    RandomCorpus rc = random_corpus(seed);
    auto table = build_reward_table(rc.set, rc.ca, rc.gamma);
    auto adv = assign_advantages(rc.set, rc.ca, table);
    double sum_raw = 0, sum_agg = 0;
    int64_t n = 0;
    for (const auto& traj : adv.per_trajectory) {
      for (const auto& s : traj) {
        sum_raw += s.raw;
        sum_agg += s.aggregated;
        ++n;
      }
    }
    CHECK(sum_agg / static_cast<double>(n) ==
          doctest::Approx(sum_raw / static_cast<double>(n)).epsilon(1e-12));
    CHECK(table.global_mean ==
          doctest::Approx(sum_raw / static_cast<double>(n)).epsilon(1e-12));
  }
}

TEST_CASE("missing key in offline mode is an error") {
  auto set = assemble_set({solo_traj("g0", {{"a", "x"}}, 1.0)});
  auto other = assemble_set({solo_traj("g1", {{"b", "y"}}, 1.0)});
  auto ca = labels_for(set, {{"a", 0}, {"x", 1}}, 2);
  auto ca_other = labels_for(other, {{"b", 1}, {"y", 0}}, 2);
  auto table = build_reward_table(other, ca_other, 0.9);
  // The foreign table lacks this set's key (action label 0, empty history).
  CHECK_THROWS_AS(assign_advantages(set, ca, table), ValidationError);
}

TEST_CASE("reward table file round trip") {
  RandomCorpus rc = random_corpus(911);
  auto table = build_reward_table(rc.set, rc.ca, rc.gamma);
  auto dir = std::filesystem::temp_directory_path() / "intentrl_aggregate_tests";
  std::filesystem::create_directories(dir);
  std::string path = (dir / "table.json").string();
  save_reward_table(table, path);
  auto loaded = load_reward_table(path);
  CHECK(loaded.k == table.k);
  CHECK(loaded.gamma == table.gamma);
  CHECK(loaded.total_count == table.total_count);
  REQUIRE(loaded.entries.size() == table.entries.size());
  for (const auto& [key, st] : table.entries) {
    CHECK(loaded.entries.at(key) == st);
  }
  // Deterministic bytes.
  std::string again = (dir / "table2.json").string();
  save_reward_table(loaded, again);
  CHECK(read_file(path) == read_file(again));
}

TEST_CASE("monotone refinement: finer nested labels explain no less variance") {
  // Nested label maps built by splitting one label at a time.
  Rng rng(37);
  RandomCorpus rc = random_corpus(1234, 10, 25);
  int n_corpus = static_cast<int>(rc.set.corpus.size());
  std::vector<int> coarse(static_cast<size_t>(n_corpus), 0);
  double prev_within = std::numeric_limits<double>::infinity();
  int k = 1;
  std::vector<int> labels = coarse;
  while (k < std::min(n_corpus, 8)) {
    // Split: move a random subset of one label's members to a new label.
    int target = static_cast<int>(rng.uniform_int(0, k - 1));
    bool moved = false;
    for (int i = 0; i < n_corpus; ++i) {
      if (labels[static_cast<size_t>(i)] == target && rng.uniform() < 0.5) {
        labels[static_cast<size_t>(i)] = k;
        moved = true;
      }
    }
    if (!moved) continue;
    ++k;
    ClusterAssignment ca;
    ca.k = k;
    ca.d = 1;
    for (const auto& u : rc.set.corpus) {
      ca.labels[u.uid] = labels[static_cast<size_t>(u.uid)];
    }
    auto table = build_reward_table(rc.set, ca, rc.gamma);
    auto adv = assign_advantages(rc.set, ca, table);
    std::map<int, std::vector<double>> by_key;
    int64_t total = 0;
    for (const auto& traj : adv.per_trajectory) {
      for (const auto& s : traj) {
        by_key[s.key_id].push_back(s.raw);
        ++total;
      }
    }
    double within = 0;
    for (const auto& [_, values] : by_key) {
      double mean = 0;
      for (double x : values) mean += x;
      mean /= static_cast<double>(values.size());
      double s = 0;
      for (double x : values) s += (x - mean) * (x - mean);
      within += s;
    }
    within /= static_cast<double>(total);
    CHECK(within <= prev_within + 1e-12);
    prev_within = within;
  }
}
