#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "intentrl/embed.hpp"
#include "intentrl/granularity.hpp"

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

// Corpus whose utterances are short numeric strings; embedded with the hash
// featurizer so dendrogram geometry is real but fully deterministic.
struct Fixture {
  TrajectorySet set;
  EmbeddingMatrix matrix;
  Dendrogram dg;
};

Fixture random_fixture(uint64_t seed, int n_trajs, int vocab_size) {
  Rng rng(seed);
  std::vector<std::string> vocab;
  for (int i = 0; i < vocab_size; ++i) {
    vocab.push_back("utterance token " + std::to_string(i) + " tail" +
                    std::string(static_cast<size_t>(i % 5), 'x'));
  }
  std::vector<Trajectory> trajs;
  for (int i = 0; i < n_trajs; ++i) {
    int T = static_cast<int>(rng.uniform_int(1, 5));
    std::vector<std::pair<std::string, std::string>> turns;
    for (int t = 0; t < T; ++t) turns.emplace_back(rng.choice(vocab), rng.choice(vocab));
    double reward = rng.uniform() < 0.5 ? 0.0 : 1.0;
    trajs.push_back(solo_traj("g" + std::to_string(i), turns, reward,
                              rng.uniform() < 0.8));
  }
  Fixture f;
  f.set = assemble_set(std::move(trajs));
  EmbedderConfig cfg;
  cfg.dim = 16;
  f.matrix = embed_corpus(cfg, f.set, "");
  f.dg = build_dendrogram(f.matrix);
  return f;
}

}  // namespace

TEST_CASE("hand-enumerated split: pooled {1,0} separating at k+1 scores 0.5") {
  // Corpus of three texts: two near-identical actions (one cluster at k=2)
  // and one far observation hanging on a final step (never in any key).
  std::vector<Trajectory> trajs;
  trajs.push_back(solo_traj("g0", {{"aaaa aaaa", "zzzz yyyy xxxx wwww"}}, 1.0));
  trajs.push_back(solo_traj("g1", {{"aaaa aaab", "ignored"}}, 0.0, false));
  auto set = assemble_set(std::move(trajs));
  REQUIRE(set.corpus.size() == 3);
  EmbedderConfig cfg;
  cfg.dim = 16;
  auto m = embed_corpus(cfg, set, "");
  auto dg = build_dendrogram(m);
  // At k=2 the two actions share a cluster; k=3 separates them.
  auto ca2 = cut_dendrogram(dg, 2, m);
  REQUIRE(ca2.labels.at(set.trajectories[0].steps[0].action.uid) ==
          ca2.labels.at(set.trajectories[1].steps[0].action.uid));
  double score = split_score(set, dg, m, 2, 0.9);
  CHECK(score == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(split_score_upper_bound(set, dg, m, 2) == 1.0);  // both steps affected
}

TEST_CASE("splitting a cluster of equal pooled rewards scores zero") {
  std::vector<Trajectory> trajs;
  trajs.push_back(solo_traj("g0", {{"aaaa aaaa", "zzzz yyyy xxxx wwww"}}, 1.0));
  trajs.push_back(solo_traj("g1", {{"aaaa aaab", "ignored"}}, 1.0, false));
  auto set = assemble_set(std::move(trajs));
  EmbedderConfig cfg;
  cfg.dim = 16;
  auto m = embed_corpus(cfg, set, "");
  auto dg = build_dendrogram(m);
  CHECK(split_score(set, dg, m, 2, 0.9) == 0.0);
}

TEST_CASE("select_k picks the first window below epsilon") {
  std::map<int, double> scores = {{2, 0.5},  {3, 0.2},   {4, 0.005}, {5, 0.004},
                                  {6, 0.003}, {7, 0.002}, {8, 0.001}};
  auto k = select_k(scores, 0.01, 3);
  REQUIRE(k.has_value());
  CHECK(*k == 4);
}

TEST_CASE("select_k returns absent when nothing qualifies") {
  std::map<int, double> scores = {{2, 0.5}, {3, 0.2}, {4, 0.1}};
  CHECK(!select_k(scores, 0.01, 1).has_value());
  // Window extending past the swept range does not qualify either.
  std::map<int, double> tail = {{2, 0.5}, {3, 0.001}, {4, 0.001}};
  CHECK(!select_k(tail, 0.01, 5).has_value());
}

TEST_CASE("stopping defaults match the published values") {
  CHECK(kDefaultEpsilon == 0.01);
  CHECK(kDefaultTau == 10);
}

TEST_CASE("select_k is monotone in epsilon") {
  Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    std::map<int, double> scores;
    for (int k = 2; k <= 30; ++k) scores[k] = rng.uniform() * 0.2;
    double eps_small = 0.02 + rng.uniform() * 0.05;
    double eps_large = eps_small + rng.uniform() * 0.1;
    int tau = static_cast<int>(rng.uniform_int(0, 4));
    auto k_small = select_k(scores, eps_small, tau);
    auto k_large = select_k(scores, eps_large, tau);
    if (k_small.has_value()) {
      REQUIRE(k_large.has_value());
      CHECK(*k_large <= *k_small);
    }
  }
}

TEST_CASE("sweep matches the two-table path and respects the bound chain") {
  for (uint64_t seed : {1ull, 2ull, 3ull}) {
    auto f = random_fixture(seed, 20, 10);
    auto normalized = normalize_terminal_rewards(f.set);
    int k_max = static_cast<int>(f.matrix.n);
    auto curve = sweep_split_scores(normalized, f.dg, f.matrix, k_max, 0.9,
                                    kDefaultEpsilon, 2);
    REQUIRE(!curve.scores.empty());
    for (const auto& [k, score] : curve.scores) {
      // Two-path equality: incremental sweep vs full table materialization.
      double full = split_score(normalized, f.dg, f.matrix, k, 0.9);
      CHECK(score == doctest::Approx(full).epsilon(1e-9));
      // Bound chain 0 <= score <= n_k/|D| <= upper_bound <= 1.
      double nk = curve.nk_fraction.at(k);
      double standalone = split_score_upper_bound(normalized, f.dg, f.matrix, k);
      CHECK(nk == standalone);
      CHECK(score >= 0.0);
      CHECK(score <= nk + 1e-12);
      CHECK(nk <= curve.upper_bound.at(k) + 1e-15);
      CHECK(curve.upper_bound.at(k) <= 1.0);
    }
    // Running-max bound is non-increasing.
    double prev = 2.0;
    for (const auto& [k, ub] : curve.upper_bound) {
      CHECK(ub <= prev + 1e-15);
      prev = ub;
    }
  }
}

TEST_CASE("split affecting no steps scores zero and counts zero") {
  // A corpus whose only multi-member cluster consists of final-step
  // observations: splitting it can never touch an intention key.
  std::vector<Trajectory> trajs;
  trajs.push_back(solo_traj("g0", {{"qqqq qqqq", "obs obs obs A"}}, 1.0));
  trajs.push_back(solo_traj("g1", {{"rrrr ssss", "obs obs obs B"}}, 0.0));
  auto set = assemble_set(std::move(trajs));
  EmbedderConfig cfg;
  cfg.dim = 16;
  auto m = embed_corpus(cfg, set, "");
  auto dg = build_dendrogram(m);
  // Find a k whose split node contains only the two observation rows.
  bool found = false;
  for (int k = 2; k < static_cast<int>(m.n); ++k) {
    double nk = split_score_upper_bound(set, dg, m, k);
    if (nk == 0.0) {
      CHECK(split_score(set, dg, m, k, 0.9) == 0.0);
      found = true;
    }
  }
  CHECK(found);
}

TEST_CASE("reward normalization is per task and degenerate-safe") {
  std::vector<Trajectory> trajs;
  trajs.push_back(solo_traj("g0", {{"a", "b"}}, 4.0));
  trajs.push_back(solo_traj("g1", {{"a", "b"}}, -2.0));
  trajs.push_back(solo_traj("g2", {{"a", "b"}}, 1.0));
  auto t3 = solo_traj("g3", {{"a", "b"}}, 7.0);
  t3.task = Task::kBargain;
  trajs.push_back(t3);  // a second task with a single (degenerate) value
  auto set = assemble_set(std::move(trajs));
  auto normalized = normalize_terminal_rewards(set);
  CHECK(normalized.trajectories[0].terminal_reward == 1.0);
  CHECK(normalized.trajectories[1].terminal_reward == 0.0);
  CHECK(normalized.trajectories[2].terminal_reward == 0.5);
  CHECK(normalized.trajectories[3].terminal_reward == 0.0);
}

TEST_CASE("sweep csv and selection summary are written") {
  auto f = random_fixture(9, 15, 8);
  auto normalized = normalize_terminal_rewards(f.set);
  auto curve = sweep_split_scores(normalized, f.dg, f.matrix,
                                  static_cast<int>(f.matrix.n), 0.9, 0.5, 1);
  auto dir = std::filesystem::temp_directory_path() / "intentrl_gran_tests";
  std::filesystem::create_directories(dir);
  write_sweep_csv(curve, (dir / "sweep.csv").string());
  write_selection_summary(curve, (dir / "sel.json").string());
  auto csv = read_file((dir / "sweep.csv").string());
  CHECK(csv.rfind("k,split_score,upper_bound,below_epsilon\n", 0) == 0);
  auto sel = read_file((dir / "sel.json").string());
  CHECK(sel.find("k_star") != std::string::npos);
}

TEST_CASE("k range validation") {
  auto f = random_fixture(11, 6, 5);
  CHECK_THROWS_AS(split_score(f.set, f.dg, f.matrix, 1, 0.9), ValidationError);
  CHECK_THROWS_AS(
      split_score(f.set, f.dg, f.matrix, static_cast<int>(f.matrix.n), 0.9),
      ValidationError);
}
