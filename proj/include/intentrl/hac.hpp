#ifndef INTENTRL_HAC_HPP_
#define INTENTRL_HAC_HPP_

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "intentrl/embed.hpp"

namespace intentrl {

// Full merge history of average-linkage agglomerative clustering.
// Node ids: leaves are 0..n-1 (matching embedding rows), internal nodes
// are n..2n-2 in merge order.
struct DendrogramMerge {
  int left = 0;
  int right = 0;
  double height = 0.0;
  int id = 0;

  bool operator==(const DendrogramMerge&) const = default;
};

struct Dendrogram {
  int n = 0;
  std::vector<DendrogramMerge> merges;  // length n-1

  bool operator==(const Dendrogram&) const = default;
};

// A cut of the dendrogram at granularity k. Labels are assigned by
// ascending minimum member uid, so they are stable across runs.
struct ClusterAssignment {
  int k = 0;
  int64_t d = 0;
  std::unordered_map<uint32_t, int> labels;  // uid -> label in [0, k)
  std::vector<double> centroids;             // k*d, row-major
  std::vector<int64_t> sizes;                // per label

  std::span<const double> centroid(int label) const {
    return std::span<const double>(centroids.data() + static_cast<size_t>(label) * d,
                                   static_cast<size_t>(d));
  }
};

// Builds the dendrogram over all embedding rows. Base metric is Euclidean;
// inter-cluster distance is the mean of all pairwise point distances.
// Ties are broken by the lexicographically smallest (left, right) node-id
// pair. Merge heights are checked non-decreasing on every build.
Dendrogram build_dendrogram(const EmbeddingMatrix& m);

// Cuts the dendrogram into exactly k clusters by undoing the last k-1
// merges. Cuts are nested: k -> k+1 splits exactly one cluster.
ClusterAssignment cut_dendrogram(const Dendrogram& dg, int k,
                                 const EmbeddingMatrix& m);

// Nearest-centroid label for an unseen vector; ties go to the smallest
// label. Throws on dimension mismatch.
int nearest_centroid_assign(const ClusterAssignment& ca, std::span<const float> v);

void save_dendrogram(const Dendrogram& dg, const std::string& path);
Dendrogram load_dendrogram(const std::string& path);

// Assignment persistence: JSON record plus a raw centroid block at
// path + ".centroids".
void save_assignment(const ClusterAssignment& ca, const std::string& path);
ClusterAssignment load_assignment(const std::string& path);

}  // namespace intentrl

#endif  // INTENTRL_HAC_HPP_
