#pragma once

#include <filesystem>
#include <span>
#include <string>

#include <Eigen/Core>

#include "deepgrading/features.hpp"

namespace dg {

enum class EdgeMode { FullyOne, Correlation, VolumeDiff };

std::string_view edge_mode_name(EdgeMode m);
EdgeMode parse_edge_mode(std::string_view s);

/// Complete graph over the s structures of one subject.
struct SubjectGraph {
  Eigen::MatrixXf features;    // s x F
  Eigen::MatrixXd adjacency;   // s x s, symmetric, nonnegative
  Eigen::MatrixXf propagation; // normalize_adjacency(adjacency)
  EdgeMode mode = EdgeMode::FullyOne;

  int nodes() const { return static_cast<int>(features.rows()); }
};

Eigen::MatrixXd edges_fully_one(int s);

/// |Pearson r| between structure columns of an n_subjects x s DG matrix;
/// diagonal 1, and 0 off-diagonal for constant columns.
Eigen::MatrixXd edges_correlation(const Eigen::MatrixXd& dg);

/// |V_a - V_b|, diagonal 0.
Eigen::MatrixXd edges_volume_diff(std::span<const double> v);

/// D^-1/2 (A + I) D^-1/2 with D the row sums of A + I.
Eigen::MatrixXd normalize_adjacency(const Eigen::MatrixXd& a);

SubjectGraph make_graph(Eigen::MatrixXf features, Eigen::MatrixXd adjacency, EdgeMode mode);

/// Builds the graph of one subject. `correlation` is the cohort-level matrix
/// and is only read in Correlation mode.
SubjectGraph build_graph(const StructureFeatures& f, const FeatureNormalizer& norm, EdgeMode mode,
                         const Eigen::MatrixXd* correlation = nullptr);

/// Stacks the DG vectors of subjects into an n x s matrix.
Eigen::MatrixXd dg_matrix(std::span<const StructureFeatures> subjects);

void write_matrix_csv(const std::filesystem::path& path, const Eigen::MatrixXd& m);

}  // namespace dg
