#ifndef INTENTRL_CLUSTER_METRICS_HPP_
#define INTENTRL_CLUSTER_METRICS_HPP_

#include <map>
#include <string>
#include <vector>

#include "intentrl/hac.hpp"

namespace intentrl {

// Internal clustering-quality metrics, used only as a comparison baseline
// against the reward-oriented granularity selection.
struct MetricReport {
  int k = 0;
  double silhouette = 0.0;
  double chi = 0.0;       // +inf sentinel when within-cluster dispersion is 0
  double dbi = 0.0;
  double combined = 0.0;  // filled by combined_score
};

// Mean silhouette over all samples; members of singleton clusters
// contribute s(i) = 0. Requires k >= 2.
double silhouette_score(const EmbeddingMatrix& m, const ClusterAssignment& ca);

// (Tr(B)/Tr(W)) * ((n-k)/(k-1)); +inf sentinel when Tr(W) = 0.
// Requires 2 <= k <= n-1.
double calinski_harabasz(const EmbeddingMatrix& m, const ClusterAssignment& ca);

// (1/k) sum_i max_{j!=i} (S_i+S_j)/M_ij. Throws naming the offending pair
// when two centroids coincide.
double davies_bouldin(const EmbeddingMatrix& m, const ClusterAssignment& ca);

// Min-max normalizes silhouette, CHI, and 1/DBI independently across the
// k-range and averages the three per k. A metric constant across the range
// contributes 0.5 everywhere; +inf sentinels are excluded from
// normalization and map to the maximum (1.0).
std::map<int, double> combined_score(const std::vector<MetricReport>& reports);

// Sweeps k over [k_min, k_max] using nested cuts and fills all metrics.
std::vector<MetricReport> metric_sweep(const EmbeddingMatrix& m,
                                       const Dendrogram& dg, int k_min, int k_max);

// Plot-ready CSV: k, silhouette, chi, dbi, inv_dbi, combined.
void write_metric_csv(const std::vector<MetricReport>& reports,
                      const std::string& path);

}  // namespace intentrl

#endif  // INTENTRL_CLUSTER_METRICS_HPP_
