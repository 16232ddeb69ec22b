#include "intentrl/hac.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <map>

#include <json.hpp>

namespace intentrl {

using nlohmann::json;

namespace {

double point_distance(const EmbeddingMatrix& m, int64_t a, int64_t b) {
  const float* pa = m.data.data() + a * m.d;
  const float* pb = m.data.data() + b * m.d;
  double s = 0.0;
  for (int64_t j = 0; j < m.d; ++j) {
    double diff = static_cast<double>(pa[j]) - static_cast<double>(pb[j]);
    s += diff * diff;
  }
  return std::sqrt(s);
}

// Candidate merge, ordered by (distance, smaller node id, larger node id).
struct Candidate {
  double dist = std::numeric_limits<double>::infinity();
  int lo_id = -1;
  int hi_id = -1;
  int other_slot = -1;

  bool better_than(const Candidate& o) const {
    if (dist != o.dist) return dist < o.dist;
    if (lo_id != o.lo_id) return lo_id < o.lo_id;
    return hi_id < o.hi_id;
  }
};

}  // namespace

Dendrogram build_dendrogram(const EmbeddingMatrix& m) {
  const int n = static_cast<int>(m.n);
  if (n < 2) throw ValidationError("build_dendrogram requires n >= 2");
  for (float x : m.data) {
    if (!std::isfinite(x)) throw ValidationError("non-finite embedding input");
  }

  // sum[i][j] holds the sum of pairwise point distances between clusters in
  // slots i and j; average linkage is sum / (size_i * size_j). Summing (the
  // Lance-Williams update for average linkage in sum form) keeps cluster
  // distances exactly representable as sums of base distances.
  std::vector<double> sum(static_cast<size_t>(n) * n, 0.0);
  auto at = [&](int i, int j) -> double& { return sum[static_cast<size_t>(i) * n + j]; };
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      double dist = point_distance(m, i, j);
      at(i, j) = dist;
      at(j, i) = dist;
    }
  }

  std::vector<int> node_id(n), size(n, 1);
  std::vector<bool> active(n, true);
  for (int i = 0; i < n; ++i) node_id[i] = i;

  auto candidate_between = [&](int i, int j) {
    Candidate c;
    c.dist = at(i, j) / (static_cast<double>(size[i]) * size[j]);
    c.lo_id = std::min(node_id[i], node_id[j]);
    c.hi_id = std::max(node_id[i], node_id[j]);
    c.other_slot = j;
    return c;
  };

  std::vector<Candidate> best(n);
  auto rescan = [&](int i) {
    Candidate b;
    for (int j = 0; j < n; ++j) {
      if (j == i || !active[j]) continue;
      Candidate c = candidate_between(i, j);
      if (c.better_than(b)) b = c;
    }
    best[i] = b;
  };
  for (int i = 0; i < n; ++i) rescan(i);

  Dendrogram dg;
  dg.n = n;
  double prev_height = 0.0;
  for (int step = 0; step < n - 1; ++step) {
    int pick = -1;
    Candidate pick_c;
    for (int i = 0; i < n; ++i) {
      if (!active[i]) continue;
      if (best[i].other_slot >= 0 && best[i].better_than(pick_c)) {
        pick_c = best[i];
        pick = i;
      }
    }
    int a = pick, b = pick_c.other_slot;
    int new_id = n + step;
    dg.merges.push_back({pick_c.lo_id, pick_c.hi_id, pick_c.dist, new_id});
    if (pick_c.dist < prev_height - 1e-9) {
      throw std::logic_error("average-linkage heights must be non-decreasing");
    }
    prev_height = std::max(prev_height, pick_c.dist);

    // Merge slot b into slot a.
    active[b] = false;
    for (int t = 0; t < n; ++t) {
      if (!active[t] || t == a) continue;
      double merged = at(a, t) + at(b, t);
      at(a, t) = merged;
      at(t, a) = merged;
    }
    size[a] += size[b];
    node_id[a] = new_id;

    // Cached best partners stay valid unless they referenced a merged slot:
    // the merged cluster is never strictly closer than the cached best, and
    // its node id is the largest so it also loses id tie-breaks.
    rescan(a);
    for (int t = 0; t < n; ++t) {
      if (!active[t] || t == a) continue;
      if (best[t].other_slot == a || best[t].other_slot == b) rescan(t);
    }
  }
  return dg;
}

ClusterAssignment cut_dendrogram(const Dendrogram& dg, int k,
                                 const EmbeddingMatrix& m) {
  const int n = dg.n;
  if (k < 1 || k > n) {
    throw ValidationError("cut_dendrogram: k=" + std::to_string(k) +
                          " out of range [1, " + std::to_string(n) + "]");
  }
  // Apply the first n-k merges.
  std::vector<int> parent(2 * n - 1);
  for (int i = 0; i < 2 * n - 1; ++i) parent[i] = i;
  for (int s = 0; s < n - k; ++s) {
    const auto& mg = dg.merges[static_cast<size_t>(s)];
    parent[mg.left] = mg.id;
    parent[mg.right] = mg.id;
  }
  auto root_of = [&](int node) {
    while (parent[node] != node) node = parent[node];
    return node;
  };

  std::map<int, std::vector<int>> members;  // root node -> leaf rows
  for (int row = 0; row < n; ++row) members[root_of(row)].push_back(row);
  if (static_cast<int>(members.size()) != k) {
    throw std::logic_error("cut produced wrong cluster count");
  }

  // Order clusters by ascending minimum member uid.
  std::vector<std::pair<uint32_t, const std::vector<int>*>> order;
  for (const auto& [root, rows] : members) {
    uint32_t min_uid = std::numeric_limits<uint32_t>::max();
    for (int r : rows) min_uid = std::min(min_uid, m.uids[static_cast<size_t>(r)]);
    order.emplace_back(min_uid, &rows);
  }
  std::sort(order.begin(), order.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  ClusterAssignment ca;
  ca.k = k;
  ca.d = m.d;
  ca.centroids.assign(static_cast<size_t>(k) * m.d, 0.0);
  ca.sizes.assign(static_cast<size_t>(k), 0);
  for (int label = 0; label < k; ++label) {
    const auto& rows = *order[static_cast<size_t>(label)].second;
    double* cen = ca.centroids.data() + static_cast<size_t>(label) * m.d;
    for (int r : rows) {
      ca.labels[m.uids[static_cast<size_t>(r)]] = label;
      auto row = m.row(r);
      for (int64_t j = 0; j < m.d; ++j) cen[j] += static_cast<double>(row[j]);
    }
    ca.sizes[static_cast<size_t>(label)] = static_cast<int64_t>(rows.size());
    for (int64_t j = 0; j < m.d; ++j) cen[j] /= static_cast<double>(rows.size());
  }
  return ca;
}

int nearest_centroid_assign(const ClusterAssignment& ca, std::span<const float> v) {
  if (static_cast<int64_t>(v.size()) != ca.d) {
    throw ValidationError("nearest_centroid_assign: dimension mismatch (" +
                          std::to_string(v.size()) + " vs " + std::to_string(ca.d) + ")");
  }
  int best = 0;
  double best_dist = std::numeric_limits<double>::infinity();
  for (int c = 0; c < ca.k; ++c) {
    auto cen = ca.centroid(c);
    double s = 0.0;
    for (int64_t j = 0; j < ca.d; ++j) {
      double diff = static_cast<double>(v[static_cast<size_t>(j)]) - cen[static_cast<size_t>(j)];
      s += diff * diff;
    }
    if (s < best_dist) {
      best_dist = s;
      best = c;
    }
  }
  return best;
}

void save_dendrogram(const Dendrogram& dg, const std::string& path) {
  json rec;
  rec["n"] = dg.n;
  json merges = json::array();
  for (const auto& mg : dg.merges) {
    merges.push_back({{"left", mg.left},
                      {"right", mg.right},
                      {"height", mg.height},
                      {"id", mg.id}});
  }
  rec["merges"] = std::move(merges);
  write_file(path, rec.dump(2) + "\n");
}

Dendrogram load_dendrogram(const std::string& path) {
  json rec = json::parse(read_file(path));
  Dendrogram dg;
  dg.n = rec.at("n").get<int>();
  for (const auto& mg : rec.at("merges")) {
    dg.merges.push_back({mg.at("left").get<int>(), mg.at("right").get<int>(),
                         mg.at("height").get<double>(), mg.at("id").get<int>()});
  }
  if (static_cast<int>(dg.merges.size()) != dg.n - 1) {
    throw ValidationError("dendrogram merge count mismatch: " + path);
  }
  return dg;
}

void save_assignment(const ClusterAssignment& ca, const std::string& path) {
  std::string block(reinterpret_cast<const char*>(ca.centroids.data()),
                    ca.centroids.size() * sizeof(double));
  write_file(path + ".centroids", block);
  json rec;
  rec["k"] = ca.k;
  rec["d"] = ca.d;
  rec["sizes"] = ca.sizes;
  json labels = json::object();
  std::vector<uint32_t> uids;
  uids.reserve(ca.labels.size());
  for (const auto& [uid, _] : ca.labels) uids.push_back(uid);
  std::sort(uids.begin(), uids.end());
  for (uint32_t uid : uids) labels[std::to_string(uid)] = ca.labels.at(uid);
  rec["labels"] = std::move(labels);
  rec["centroids_checksum"] = hex64(fnv1a64(block));
  write_file(path, rec.dump(2) + "\n");
}

ClusterAssignment load_assignment(const std::string& path) {
  json rec = json::parse(read_file(path));
  ClusterAssignment ca;
  ca.k = rec.at("k").get<int>();
  ca.d = rec.at("d").get<int64_t>();
  ca.sizes = rec.at("sizes").get<std::vector<int64_t>>();
  for (const auto& [uid_str, label] : rec.at("labels").items()) {
    ca.labels[static_cast<uint32_t>(std::stoul(uid_str))] = label.get<int>();
  }
  std::string block = read_file(path + ".centroids");
  if (rec.at("centroids_checksum").get<std::string>() != hex64(fnv1a64(block))) {
    throw ValidationError("centroid block checksum failure: " + path);
  }
  if (block.size() != static_cast<size_t>(ca.k) * ca.d * sizeof(double)) {
    throw ValidationError("centroid block length mismatch: " + path);
  }
  ca.centroids.resize(static_cast<size_t>(ca.k) * ca.d);
  std::memcpy(ca.centroids.data(), block.data(), block.size());
  return ca;
}

}  // namespace intentrl
