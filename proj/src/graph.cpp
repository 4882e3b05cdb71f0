#include "deepgrading/graph.hpp"

#include <cmath>
#include <fstream>

#include "deepgrading/errors.hpp"
#include "deepgrading/table.hpp"

namespace dg {

std::string_view edge_mode_name(EdgeMode m) {
  switch (m) {
    case EdgeMode::FullyOne: return "fully_one";
    case EdgeMode::Correlation: return "correlation";
    case EdgeMode::VolumeDiff: return "volume_diff";
  }
  return "?";
}

EdgeMode parse_edge_mode(std::string_view s) {
  if (s == "fully_one") return EdgeMode::FullyOne;
  if (s == "correlation") return EdgeMode::Correlation;
  if (s == "volume_diff") return EdgeMode::VolumeDiff;
  throw ConfigError("unknown edge mode '" + std::string(s) + "'");
}

Eigen::MatrixXd edges_fully_one(int s) {
  if (s < 1) throw DataError("graph needs at least one node");
  return Eigen::MatrixXd::Ones(s, s);
}

Eigen::MatrixXd edges_correlation(const Eigen::MatrixXd& dg) {
  const Eigen::Index n = dg.rows(), s = dg.cols();
  if (n < 3) throw DataError("correlation edges need at least 3 subjects");
  const Eigen::RowVectorXd mean = dg.colwise().mean();
  const Eigen::MatrixXd c = dg.rowwise() - mean;
  Eigen::VectorXd norm(s);
  for (Eigen::Index j = 0; j < s; ++j) norm(j) = c.col(j).norm();
  Eigen::MatrixXd a = Eigen::MatrixXd::Identity(s, s);
  for (Eigen::Index i = 0; i < s; ++i)
    for (Eigen::Index j = i + 1; j < s; ++j) {
      double r = 0.0;
      // relative threshold: a column is constant up to rounding of its mean
      const double tol_i = 1e-12 * std::sqrt(double(n)) * (std::abs(mean(i)) + 1.0);
      const double tol_j = 1e-12 * std::sqrt(double(n)) * (std::abs(mean(j)) + 1.0);
      if (norm(i) > tol_i && norm(j) > tol_j) r = std::min(1.0, std::abs(c.col(i).dot(c.col(j))) / (norm(i) * norm(j)));
      a(i, j) = a(j, i) = r;
    }
  return a;
}

Eigen::MatrixXd edges_volume_diff(std::span<const double> v) {
  const auto s = static_cast<Eigen::Index>(v.size());
  if (s < 1) throw DataError("graph needs at least one node");
  Eigen::MatrixXd a(s, s);
  for (Eigen::Index i = 0; i < s; ++i)
    for (Eigen::Index j = 0; j < s; ++j) a(i, j) = std::abs(v[static_cast<std::size_t>(i)] - v[static_cast<std::size_t>(j)]);
  return a;
}

Eigen::MatrixXd normalize_adjacency(const Eigen::MatrixXd& a) {
  if (a.rows() != a.cols() || a.rows() == 0) throw DataError("adjacency must be square and nonempty");
  if (!a.allFinite() || (a.array() < 0.0).any()) throw DataError("adjacency must be finite and nonnegative");
  const Eigen::MatrixXd t = a + Eigen::MatrixXd::Identity(a.rows(), a.cols());
  const Eigen::VectorXd inv_sqrt = t.rowwise().sum().array().rsqrt();
  return inv_sqrt.asDiagonal() * t * inv_sqrt.asDiagonal();
}

SubjectGraph make_graph(Eigen::MatrixXf features, Eigen::MatrixXd adjacency, EdgeMode mode) {
  if (adjacency.rows() != features.rows()) throw DataError("adjacency size differs from node count");
  SubjectGraph g;
  g.propagation = normalize_adjacency(adjacency).cast<float>();
  g.features = std::move(features);
  g.adjacency = std::move(adjacency);
  g.mode = mode;
  return g;
}

SubjectGraph build_graph(const StructureFeatures& f, const FeatureNormalizer& norm, EdgeMode mode,
                         const Eigen::MatrixXd* correlation) {
  Eigen::MatrixXd a;
  switch (mode) {
    case EdgeMode::FullyOne: a = edges_fully_one(f.structure_count()); break;
    case EdgeMode::Correlation:
      if (!correlation) throw DataError("correlation edges need the cohort correlation matrix");
      a = *correlation;
      break;
    case EdgeMode::VolumeDiff: a = edges_volume_diff(f.v); break;
  }
  return make_graph(node_features(norm, f), std::move(a), mode);
}

Eigen::MatrixXd dg_matrix(std::span<const StructureFeatures> subjects) {
  if (subjects.empty()) throw DataError("no subjects");
  const int s = subjects.front().structure_count();
  Eigen::MatrixXd m(static_cast<Eigen::Index>(subjects.size()), s);
  for (std::size_t i = 0; i < subjects.size(); ++i)
    for (int k = 0; k < s; ++k) m(static_cast<Eigen::Index>(i), k) = subjects[i].dg[static_cast<std::size_t>(k)];
  return m;
}

void write_matrix_csv(const std::filesystem::path& path, const Eigen::MatrixXd& m) {
  CsvTable t;
  for (Eigen::Index j = 0; j < m.cols(); ++j) t.header.push_back("S" + std::to_string(j + 1));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    std::vector<std::string> r;
    for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(format_double(m(i, j)));
    t.rows.push_back(std::move(r));
  }
  write_csv(path, t);
}

}  // namespace dg
