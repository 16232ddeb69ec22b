#include "intentrl/cluster_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace intentrl {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::vector<int> row_labels(const EmbeddingMatrix& m, const ClusterAssignment& ca) {
  std::vector<int> labels(static_cast<size_t>(m.n));
  for (int64_t i = 0; i < m.n; ++i) {
    labels[static_cast<size_t>(i)] = ca.labels.at(m.uids[static_cast<size_t>(i)]);
  }
  return labels;
}

double row_distance(const EmbeddingMatrix& m, int64_t a, int64_t b) {
  const float* pa = m.data.data() + a * m.d;
  const float* pb = m.data.data() + b * m.d;
  double s = 0.0;
  for (int64_t j = 0; j < m.d; ++j) {
    double diff = static_cast<double>(pa[j]) - static_cast<double>(pb[j]);
    s += diff * diff;
  }
  return std::sqrt(s);
}

}  // namespace

double silhouette_score(const EmbeddingMatrix& m, const ClusterAssignment& ca) {
  if (ca.k < 2) throw ValidationError("silhouette_score requires k >= 2");
  const int64_t n = m.n;
  auto labels = row_labels(m, ca);
  std::vector<int64_t> counts(static_cast<size_t>(ca.k), 0);
  for (int lab : labels) counts[static_cast<size_t>(lab)]++;

  double total = 0.0;
  std::vector<double> dist_sum(static_cast<size_t>(ca.k));
  for (int64_t i = 0; i < n; ++i) {
    std::fill(dist_sum.begin(), dist_sum.end(), 0.0);
    for (int64_t j = 0; j < n; ++j) {
      if (j == i) continue;
      dist_sum[static_cast<size_t>(labels[static_cast<size_t>(j)])] += row_distance(m, i, j);
    }
    int own = labels[static_cast<size_t>(i)];
    if (counts[static_cast<size_t>(own)] <= 1) continue;  // singleton: s(i) = 0
    double a = dist_sum[static_cast<size_t>(own)] /
               static_cast<double>(counts[static_cast<size_t>(own)] - 1);
    double b = kInf;
    for (int c = 0; c < ca.k; ++c) {
      if (c == own || counts[static_cast<size_t>(c)] == 0) continue;
      b = std::min(b, dist_sum[static_cast<size_t>(c)] /
                          static_cast<double>(counts[static_cast<size_t>(c)]));
    }
    double denom = std::max(a, b);
    if (denom > 0.0) total += (b - a) / denom;
  }
  return total / static_cast<double>(n);
}

double calinski_harabasz(const EmbeddingMatrix& m, const ClusterAssignment& ca) {
  const int64_t n = m.n;
  if (ca.k < 2 || ca.k > n - 1) {
    throw ValidationError("calinski_harabasz requires 2 <= k <= n-1");
  }
  auto labels = row_labels(m, ca);
  std::vector<double> grand(static_cast<size_t>(m.d), 0.0);
  for (int64_t i = 0; i < n; ++i) {
    auto row = m.row(i);
    for (int64_t j = 0; j < m.d; ++j) grand[static_cast<size_t>(j)] += row[static_cast<size_t>(j)];
  }
  for (auto& g : grand) g /= static_cast<double>(n);

  double tr_w = 0.0, tr_b = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    auto row = m.row(i);
    auto cen = ca.centroid(labels[static_cast<size_t>(i)]);
    for (int64_t j = 0; j < m.d; ++j) {
      double diff = static_cast<double>(row[static_cast<size_t>(j)]) - cen[static_cast<size_t>(j)];
      tr_w += diff * diff;
    }
  }
  for (int c = 0; c < ca.k; ++c) {
    auto cen = ca.centroid(c);
    double s = 0.0;
    for (int64_t j = 0; j < m.d; ++j) {
      double diff = cen[static_cast<size_t>(j)] - grand[static_cast<size_t>(j)];
      s += diff * diff;
    }
    tr_b += static_cast<double>(ca.sizes[static_cast<size_t>(c)]) * s;
  }
  double factor = static_cast<double>(n - ca.k) / static_cast<double>(ca.k - 1);
  if (tr_w == 0.0) return kInf;
  return (tr_b / tr_w) * factor;
}

double davies_bouldin(const EmbeddingMatrix& m, const ClusterAssignment& ca) {
  if (ca.k < 2) throw ValidationError("davies_bouldin requires k >= 2");
  auto labels = row_labels(m, ca);

  // S_i: mean member-to-centroid distance.
  std::vector<double> scatter(static_cast<size_t>(ca.k), 0.0);
  for (int64_t i = 0; i < m.n; ++i) {
    int lab = labels[static_cast<size_t>(i)];
    auto row = m.row(i);
    auto cen = ca.centroid(lab);
    double s = 0.0;
    for (int64_t j = 0; j < m.d; ++j) {
      double diff = static_cast<double>(row[static_cast<size_t>(j)]) - cen[static_cast<size_t>(j)];
      s += diff * diff;
    }
    scatter[static_cast<size_t>(lab)] += std::sqrt(s);
  }
  for (int c = 0; c < ca.k; ++c) {
    scatter[static_cast<size_t>(c)] /= static_cast<double>(ca.sizes[static_cast<size_t>(c)]);
  }

  double total = 0.0;
  for (int i = 0; i < ca.k; ++i) {
    double worst = 0.0;
    for (int j = 0; j < ca.k; ++j) {
      if (j == i) continue;
      auto ci = ca.centroid(i);
      auto cj = ca.centroid(j);
      double s = 0.0;
      for (int64_t t = 0; t < ca.d; ++t) {
        double diff = ci[static_cast<size_t>(t)] - cj[static_cast<size_t>(t)];
        s += diff * diff;
      }
      double sep = std::sqrt(s);
      if (sep == 0.0) {
        throw ValidationError("davies_bouldin: coincident centroids for clusters " +
                              std::to_string(i) + " and " + std::to_string(j));
      }
      worst = std::max(worst, (scatter[static_cast<size_t>(i)] +
                               scatter[static_cast<size_t>(j)]) / sep);
    }
    total += worst;
  }
  return total / static_cast<double>(ca.k);
}

namespace {

// Min-max normalization for one metric across the k-range. Infinite values
// are excluded from the range and map to 1.0; a degenerate (all equal)
// finite range maps to 0.5.
std::vector<double> normalize_metric(const std::vector<double>& values) {
  double lo = kInf, hi = -kInf;
  for (double v : values) {
    if (std::isfinite(v)) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  std::vector<double> out(values.size());
  for (size_t i = 0; i < values.size(); ++i) {
    double v = values[i];
    if (!std::isfinite(v)) {
      out[i] = 1.0;
    } else if (!(hi > lo)) {
      out[i] = 0.5;
    } else {
      out[i] = (v - lo) / (hi - lo);
    }
  }
  return out;
}

}  // namespace

std::map<int, double> combined_score(const std::vector<MetricReport>& reports) {
  if (reports.size() < 2) {
    throw ValidationError("combined_score requires metrics for at least 2 k values");
  }
  std::vector<double> sil, chi, inv_dbi;
  for (const auto& r : reports) {
    sil.push_back(r.silhouette);
    chi.push_back(r.chi);
    inv_dbi.push_back(r.dbi > 0.0 ? 1.0 / r.dbi : kInf);
  }
  auto ns = normalize_metric(sil);
  auto nc = normalize_metric(chi);
  auto nd = normalize_metric(inv_dbi);
  std::map<int, double> out;
  for (size_t i = 0; i < reports.size(); ++i) {
    out[reports[i].k] = (ns[i] + nc[i] + nd[i]) / 3.0;
  }
  return out;
}

std::vector<MetricReport> metric_sweep(const EmbeddingMatrix& m,
                                       const Dendrogram& dg, int k_min, int k_max) {
  std::vector<MetricReport> reports;
  for (int k = k_min; k <= k_max; ++k) {
    auto ca = cut_dendrogram(dg, k, m);
    MetricReport r;
    r.k = k;
    r.silhouette = silhouette_score(m, ca);
    r.chi = calinski_harabasz(m, ca);
    r.dbi = davies_bouldin(m, ca);
    reports.push_back(r);
  }
  auto combined = combined_score(reports);
  for (auto& r : reports) r.combined = combined.at(r.k);
  return reports;
}

void write_metric_csv(const std::vector<MetricReport>& reports,
                      const std::string& path) {
  std::ostringstream out;
  out << "k,silhouette,chi,dbi,inv_dbi,combined\n";
  for (const auto& r : reports) {
    double inv = r.dbi > 0.0 ? 1.0 / r.dbi : kInf;
    out << r.k << "," << format_double(r.silhouette) << "," << format_double(r.chi)
        << "," << format_double(r.dbi) << "," << format_double(inv) << ","
        << format_double(r.combined) << "\n";
  }
  write_file(path, out.str());
}

}  // namespace intentrl
