#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "deepgrading/features.hpp"
#include "deepgrading/volume.hpp"

namespace dg {

/// (sensitivity + specificity) / 2 with labels and predictions in {0, 1}.
double bacc(std::span<const int> labels, std::span<const int> predictions);

/// Mann-Whitney AUC: P(score_pos > score_neg) + 0.5 P(tie).
double auc(std::span<const int> labels, std::span<const double> scores);

/// Rows are points.
struct KMeansResult {
  std::vector<int> assignment;
  Eigen::MatrixXd centers;
  double inertia = 0.0;
};

/// Lloyd's algorithm with k = 2, best inertia over `restarts` seeded
/// initialisations.
KMeansResult kmeans2(const Eigen::MatrixXd& points, std::uint64_t seed, int restarts = 10);

/// Mean over points of (b - a) / max(a, b) with Euclidean distances.
double silhouette(const Eigen::MatrixXd& points, std::span<const int> assignment);

/// One-sided Wilcoxon signed-rank test of x > y. Exact null distribution for
/// up to 12 nonzero differences, normal approximation with tie correction
/// above. Zero differences are dropped.
double wilcoxon_one_sided(std::span<const double> x, std::span<const double> y);

double cosine_similarity(std::span<const double> u, std::span<const double> v);

/// Pairs the i-th vectors of both sets and returns the median cosine similarity.
double consistency_median(std::span<const std::vector<double>> a, std::span<const std::vector<double>> b);

/// Two-sided Welch t-test p-value.
double welch_ttest(std::span<const double> a, std::span<const double> b);

double median(std::vector<double> values);

/// Voxelwise mean of a set of maps.
Volume3D group_average_map(std::span<const Volume3D> maps);

/// Structure ids (1-based) ranked by mean |DG_s| over subjects, descending,
/// ties by smaller id.
std::vector<int> top_structures(std::span<const std::vector<double>> dg, int k = 10);

struct StructurePair {
  int a = 0, b = 0;  // 1-based structure ids, a < b
  double difference = 0.0;
};

struct AdjacencyAnalysis {
  Eigen::MatrixXd mean_negative, mean_positive;  // class-averaged adjacency
  Eigen::MatrixXd difference;                    // |mean_positive - mean_negative|
  std::vector<StructurePair> top_pairs;
};

/// Averages per-subject adjacency matrices within each class, ranks the
/// upper-triangle entries of their absolute difference (ties by (a, b)).
AdjacencyAnalysis adjacency_group_analysis(std::span<const Eigen::MatrixXd> adjacency,
                                           std::span<const int> labels, int top_k = 25);

/// Min-max rescaling to [0, 1] for export; a constant matrix maps to zeros.
Eigen::MatrixXd normalize_unit_range(const Eigen::MatrixXd& m);

}  // namespace dg
