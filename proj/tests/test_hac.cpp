#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "intentrl/hac.hpp"
#include "oracles.hpp"

using namespace intentrl;

namespace {

EmbeddingMatrix matrix_from(const std::vector<std::vector<float>>& rows) {
  EmbeddingMatrix m;
  m.n = static_cast<int64_t>(rows.size());
  m.d = static_cast<int64_t>(rows.front().size());
  for (const auto& r : rows) m.data.insert(m.data.end(), r.begin(), r.end());
  m.uids.resize(static_cast<size_t>(m.n));
  for (int64_t i = 0; i < m.n; ++i) m.uids[static_cast<size_t>(i)] = static_cast<uint32_t>(i);
  m.rebuild_index();
  return m;
}

EmbeddingMatrix random_matrix(int n, int d, uint64_t seed, int duplicates = 0) {
  Rng rng(seed);
  std::vector<std::vector<float>> rows;
  for (int i = 0; i < n - duplicates; ++i) {
    std::vector<float> r(static_cast<size_t>(d));
    for (auto& x : r) x = static_cast<float>(rng.uniform());
    rows.push_back(std::move(r));
  }
  for (int i = 0; i < duplicates; ++i) {
    rows.push_back(rows[static_cast<size_t>(rng.uniform_int(
        0, static_cast<int64_t>(rows.size()) - 1))]);
  }
  return matrix_from(rows);
}

// Partition of leaf rows implied by an assignment, independent of label ids.
std::set<std::set<uint32_t>> partition_of(const ClusterAssignment& ca) {
  std::map<int, std::set<uint32_t>> by_label;
  for (const auto& [uid, label] : ca.labels) by_label[label].insert(uid);
  std::set<std::set<uint32_t>> out;
  for (auto& [_, members] : by_label) out.insert(members);
  return out;
}

}  // namespace

TEST_CASE("three 1-d points merge in oracle-checked order") {
  auto m = matrix_from({{0.0f}, {0.1f}, {1.0f}});
  auto dg = build_dendrogram(m);
  REQUIRE(dg.merges.size() == 2);
  CHECK(dg.merges[0].left == 0);
  CHECK(dg.merges[0].right == 1);
  // Inputs are float32, so hand values hold to float precision.
  CHECK(dg.merges[0].height == doctest::Approx(0.1).epsilon(1e-6));
  CHECK(dg.merges[1].height == doctest::Approx(0.95).epsilon(1e-6));
}

TEST_CASE("identical points merge at height zero") {
  auto m = matrix_from({{0.5f, 0.5f}, {0.5f, 0.5f}, {0.5f, 0.5f}, {0.5f, 0.5f}});
  auto dg = build_dendrogram(m);
  for (const auto& mg : dg.merges) CHECK(mg.height == 0.0);
}

TEST_CASE("merge sequence equals the naive oracle") {
  for (uint64_t seed = 1; seed <= 8; ++seed) {
    int n = 30 + static_cast<int>(seed) * 20;
    auto m = random_matrix(n, 4, seed, /*duplicates=*/seed % 3 == 0 ? 5 : 0);
    auto fast = build_dendrogram(m);
    auto naive = oracles::naive_average_linkage(m);
    REQUIRE(fast.merges.size() == naive.merges.size());
    for (size_t i = 0; i < fast.merges.size(); ++i) {
      CHECK(fast.merges[i].left == naive.merges[i].left);
      CHECK(fast.merges[i].right == naive.merges[i].right);
      CHECK(fast.merges[i].id == naive.merges[i].id);
      CHECK(fast.merges[i].height ==
            doctest::Approx(naive.merges[i].height).epsilon(1e-9));
    }
  }
}

TEST_CASE("heights are non-decreasing") {
  for (uint64_t seed = 20; seed < 25; ++seed) {
    auto m = random_matrix(60, 3, seed);
    auto dg = build_dendrogram(m);
    for (size_t i = 1; i < dg.merges.size(); ++i) {
      CHECK(dg.merges[i].height >= dg.merges[i - 1].height - 1e-12);
    }
  }
}

TEST_CASE("build rejects bad input") {
  auto one = matrix_from({{1.0f}});
  CHECK_THROWS_AS(build_dendrogram(one), ValidationError);
  auto m = matrix_from({{1.0f}, {2.0f}});
  m.data[0] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(build_dendrogram(m), ValidationError);
}

TEST_CASE("cut at extremes") {
  auto m = random_matrix(12, 3, 5);
  auto dg = build_dendrogram(m);
  auto singletons = cut_dendrogram(dg, 12, m);
  CHECK(singletons.k == 12);
  for (int64_t s : singletons.sizes) CHECK(s == 1);
  auto everything = cut_dendrogram(dg, 1, m);
  CHECK(everything.sizes[0] == 12);
  CHECK_THROWS_AS(cut_dendrogram(dg, 0, m), ValidationError);
  CHECK_THROWS_AS(cut_dendrogram(dg, 13, m), ValidationError);
}

TEST_CASE("cut of the worked example separates the far point") {
  auto m = matrix_from({{0.0f}, {0.1f}, {1.0f}});
  auto dg = build_dendrogram(m);
  auto ca = cut_dendrogram(dg, 2, m);
  CHECK(ca.labels.at(0) == ca.labels.at(1));
  CHECK(ca.labels.at(0) != ca.labels.at(2));
}

TEST_CASE("cuts are nested: k to k+1 splits exactly one cluster") {
  auto m = random_matrix(40, 3, 11);
  auto dg = build_dendrogram(m);
  for (int k = 1; k < 40; ++k) {
    auto coarse = partition_of(cut_dendrogram(dg, k, m));
    auto fine = partition_of(cut_dendrogram(dg, k + 1, m));
    int split = 0;
    for (const auto& cluster : coarse) {
      if (fine.count(cluster) > 0) continue;
      ++split;
      // The missing cluster must be the union of exactly two fine clusters.
      std::vector<std::set<uint32_t>> parts;
      for (const auto& f : fine) {
        if (std::includes(cluster.begin(), cluster.end(), f.begin(), f.end())) {
          parts.push_back(f);
        }
      }
      CHECK(parts.size() == 2);
      CHECK(parts[0].size() + parts[1].size() == cluster.size());
    }
    CHECK(split == 1);
  }
}

TEST_CASE("permutation equivariance: same partition of uids") {
  auto m = random_matrix(30, 4, 17);
  // Build a permuted copy with the same uids attached to the same vectors.
  Rng rng(99);
  std::vector<int> perm(30);
  for (int i = 0; i < 30; ++i) perm[static_cast<size_t>(i)] = i;
  rng.shuffle(perm);
  EmbeddingMatrix permuted;
  permuted.n = m.n;
  permuted.d = m.d;
  permuted.data.resize(m.data.size());
  permuted.uids.resize(static_cast<size_t>(m.n));
  for (int i = 0; i < 30; ++i) {
    int src = perm[static_cast<size_t>(i)];
    std::copy(m.data.begin() + src * m.d, m.data.begin() + (src + 1) * m.d,
              permuted.data.begin() + i * m.d);
    permuted.uids[static_cast<size_t>(i)] = m.uids[static_cast<size_t>(src)];
  }
  permuted.rebuild_index();

  for (int k : {2, 5, 9}) {
    auto a = partition_of(cut_dendrogram(build_dendrogram(m), k, m));
    auto b = partition_of(cut_dendrogram(build_dendrogram(permuted), k, permuted));
    CHECK(a == b);
  }
}

TEST_CASE("centroids are member means") {
  auto m = random_matrix(25, 5, 23);
  auto dg = build_dendrogram(m);
  auto ca = cut_dendrogram(dg, 6, m);
  std::vector<std::vector<double>> sums(6, std::vector<double>(5, 0.0));
  std::vector<int> counts(6, 0);
  for (int64_t i = 0; i < m.n; ++i) {
    int label = ca.labels.at(m.uids[static_cast<size_t>(i)]);
    counts[static_cast<size_t>(label)] += 1;
    for (int64_t j = 0; j < m.d; ++j) {
      sums[static_cast<size_t>(label)][static_cast<size_t>(j)] +=
          m.data[static_cast<size_t>(i) * m.d + j];
    }
  }
  for (int c = 0; c < 6; ++c) {
    for (int64_t j = 0; j < 5; ++j) {
      CHECK(ca.centroid(c)[static_cast<size_t>(j)] ==
            doctest::Approx(sums[static_cast<size_t>(c)][static_cast<size_t>(j)] /
                            counts[static_cast<size_t>(c)])
                .epsilon(1e-6));
    }
  }
}

TEST_CASE("labels are ordered by minimum member uid") {
  auto m = random_matrix(20, 3, 31);
  auto dg = build_dendrogram(m);
  auto ca = cut_dendrogram(dg, 5, m);
  std::vector<uint32_t> min_uid(5, std::numeric_limits<uint32_t>::max());
  for (const auto& [uid, label] : ca.labels) {
    min_uid[static_cast<size_t>(label)] = std::min(min_uid[static_cast<size_t>(label)], uid);
  }
  CHECK(std::is_sorted(min_uid.begin(), min_uid.end()));
}

TEST_CASE("nearest centroid assignment") {
  auto m = random_matrix(30, 4, 41);
  auto dg = build_dendrogram(m);
  auto ca = cut_dendrogram(dg, 7, m);

  std::vector<float> exactly_three(4);
  for (int64_t j = 0; j < 4; ++j) {
    exactly_three[static_cast<size_t>(j)] = static_cast<float>(ca.centroid(3)[static_cast<size_t>(j)]);
  }
  CHECK(nearest_centroid_assign(ca, exactly_three) == 3);

  // Equidistant: duplicate centroid geometry via a two-cluster assignment.
  ClusterAssignment tie;
  tie.k = 2;
  tie.d = 1;
  tie.centroids = {0.0, 1.0};
  tie.sizes = {1, 1};
  std::vector<float> mid = {0.5f};
  CHECK(nearest_centroid_assign(tie, mid) == 0);

  std::vector<float> wrong_dim = {0.0f, 1.0f};
  CHECK_THROWS_AS(nearest_centroid_assign(tie, wrong_dim), ValidationError);

  // Exhaustive-scan agreement on random queries.
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<float> v(4);
    for (auto& x : v) x = static_cast<float>(rng.uniform() * 2 - 1);
    int got = nearest_centroid_assign(ca, v);
    int want = 0;
    double best = std::numeric_limits<double>::infinity();
    for (int c = 0; c < ca.k; ++c) {
      double s = 0;
      for (int64_t j = 0; j < 4; ++j) {
        double diff = v[static_cast<size_t>(j)] - ca.centroid(c)[static_cast<size_t>(j)];
        s += diff * diff;
      }
      if (s < best) {
        best = s;
        want = c;
      }
    }
    CHECK(got == want);
  }
}

TEST_CASE("dendrogram and assignment round trip through files") {
  auto m = random_matrix(15, 3, 53);
  auto dg = build_dendrogram(m);
  auto dir = std::filesystem::temp_directory_path() / "intentrl_hac_tests";
  std::filesystem::create_directories(dir);
  std::string dpath = (dir / "dg.json").string();
  save_dendrogram(dg, dpath);
  auto dg2 = load_dendrogram(dpath);
  CHECK(dg2 == dg);

  auto ca = cut_dendrogram(dg, 4, m);
  std::string apath = (dir / "assign.json").string();
  save_assignment(ca, apath);
  auto ca2 = load_assignment(apath);
  CHECK(ca2.k == ca.k);
  CHECK(ca2.labels == ca.labels);
  CHECK(ca2.centroids == ca.centroids);
  CHECK(ca2.sizes == ca.sizes);
}
