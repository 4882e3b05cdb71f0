#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <numeric>

#include "deepgrading/errors.hpp"
#include "deepgrading/graph.hpp"
#include "helpers.hpp"

using namespace dg;

namespace {

Eigen::MatrixXd random_symmetric(int s, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 3.0);
  Eigen::MatrixXd a(s, s);
  for (int i = 0; i < s; ++i)
    for (int k = i; k < s; ++k) a(i, k) = a(k, i) = u(rng);
  return a;
}

Eigen::MatrixXd permutation(int s, Rng& rng) {
  std::vector<int> p(static_cast<std::size_t>(s));
  std::iota(p.begin(), p.end(), 0);
  std::shuffle(p.begin(), p.end(), rng);
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(s, s);
  for (int i = 0; i < s; ++i) m(i, p[static_cast<std::size_t>(i)]) = 1.0;
  return m;
}

}  // namespace

TEST_CASE("fully-one edges") {
  const Eigen::MatrixXd a = edges_fully_one(3);
  CHECK(a == Eigen::MatrixXd::Ones(3, 3));
  CHECK(a.rowwise().sum() == Eigen::VectorXd::Constant(3, 3.0));
}

TEST_CASE("correlation edges") {
  Eigen::MatrixXd dg(4, 3);
  dg << 1, 2, 5, 2, 4, 5, 3, 6, 5, 4, 8, 5;
  const Eigen::MatrixXd c = edges_correlation(dg);
  CHECK(c(0, 1) == doctest::Approx(1.0));
  CHECK(c(0, 2) == 0.0);
  CHECK(c(2, 2) == 1.0);

  Eigen::MatrixXd neg(3, 2);
  neg << 1, -1, 2, -2, 4, -4;
  CHECK(edges_correlation(neg)(0, 1) == doctest::Approx(1.0));

  Eigen::MatrixXd hand(3, 2);
  hand << 1, 1, 2, 2, 3, 4;
  // r = 3 / sqrt(2 * (14/3)) = 0.98198...
  CHECK(edges_correlation(hand)(0, 1) == doctest::Approx(3.0 / std::sqrt(2.0 * 14.0 / 3.0)).epsilon(1e-12));
  CHECK(edges_correlation(hand)(0, 1) == doctest::Approx(0.982).epsilon(1e-3));

  CHECK_THROWS_AS(edges_correlation(Eigen::MatrixXd::Ones(2, 3)), DataError);
}

TEST_CASE("correlation edges are symmetric and invariant to affine column rescaling") {
  Rng rng(2);
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXd dg(20, 6);
  for (Eigen::Index i = 0; i < dg.size(); ++i) dg.data()[i] = n(rng);
  const Eigen::MatrixXd c = edges_correlation(dg);
  CHECK((c - c.transpose()).cwiseAbs().maxCoeff() <= 1e-7);
  CHECK(c.minCoeff() >= 0.0);
  Eigen::MatrixXd scaled = dg;
  scaled.col(2) = -4.0 * scaled.col(2).array() + 7.0;
  scaled.col(4) = 0.01 * scaled.col(4).array() - 3.0;
  CHECK((edges_correlation(scaled) - c).cwiseAbs().maxCoeff() <= 1e-6);
}

TEST_CASE("volume difference edges") {
  CHECK(edges_volume_diff(std::vector<double>{50, 50}) == Eigen::MatrixXd::Zero(2, 2));
  const Eigen::MatrixXd a = edges_volume_diff(std::vector<double>{60, 40});
  CHECK(a(0, 1) == 20.0);
  CHECK(a(1, 0) == 20.0);
  CHECK(a(0, 0) == 0.0);

  Rng rng(3);
  std::uniform_real_distribution<double> u(0.0, 30.0);
  for (int t = 0; t < 20; ++t) {
    std::vector<double> v(7);
    for (double& x : v) x = u(rng);
    const Eigen::MatrixXd m = edges_volume_diff(v);
    CHECK(m == m.transpose());
    for (int i = 0; i < 7; ++i)
      for (int j = 0; j < 7; ++j)
        for (int k = 0; k < 7; ++k) CHECK(m(i, k) <= m(i, j) + m(j, k) + 1e-12);
  }
}

TEST_CASE("adjacency normalization examples") {
  CHECK(normalize_adjacency(Eigen::MatrixXd::Ones(1, 1))(0, 0) == doctest::Approx(1.0));
  const Eigen::MatrixXd p = normalize_adjacency(edges_fully_one(3));
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k) CHECK(p(i, k) == doctest::Approx(i == k ? 0.5 : 0.25));
}

TEST_CASE("normalized adjacency has spectral radius at most one and commutes with permutations") {
  Rng rng(4);
  for (int t = 0; t < 20; ++t) {
    const int s = 2 + t % 9;
    const Eigen::MatrixXd a = random_symmetric(s, rng);
    const Eigen::MatrixXd p = normalize_adjacency(a);
    CHECK((p - p.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(p);
    CHECK(es.eigenvalues().cwiseAbs().maxCoeff() <= 1.0 + 1e-9);
    const Eigen::MatrixXd P = permutation(s, rng);
    const Eigen::MatrixXd lhs = normalize_adjacency(P * a * P.transpose());
    const Eigen::MatrixXd rhs = P * p * P.transpose();
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() <= 1e-6);
  }
}

TEST_CASE("graph builder wires features, edges and propagation") {
  const StructureFeatures f{"x", Diagnosis::AD, 70.0, {0.5, -0.5, 0.0}, {30.0, 50.0, 20.0}};
  FeatureNormalizer n{{true, true, true}, {0.0, 33.0, 70.0}, {1.0, 10.0, 5.0}};
  const SubjectGraph g = build_graph(f, n, EdgeMode::VolumeDiff);
  CHECK(g.nodes() == 3);
  CHECK(g.features.cols() == 3);
  CHECK(g.adjacency(0, 1) == 20.0);
  CHECK((g.propagation - normalize_adjacency(g.adjacency).cast<float>()).cwiseAbs().maxCoeff() < 1e-7);
  CHECK_THROWS(build_graph(f, n, EdgeMode::Correlation));
  const Eigen::MatrixXd corr = Eigen::MatrixXd::Identity(3, 3);
  CHECK(build_graph(f, n, EdgeMode::Correlation, &corr).adjacency == corr);
  CHECK(parse_edge_mode(edge_mode_name(EdgeMode::FullyOne)) == EdgeMode::FullyOne);
  CHECK_THROWS_AS(parse_edge_mode("nope"), ConfigError);
}
