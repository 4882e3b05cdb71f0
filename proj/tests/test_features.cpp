#include <doctest.h>

#include <cmath>

#include "deepgrading/errors.hpp"
#include "deepgrading/features.hpp"
#include "deepgrading/phantom.hpp"
#include "helpers.hpp"

using namespace dg;

namespace {

LabelVolume random_labels(Dims3 d, int s, Rng& rng) {
  std::uniform_int_distribution<int> u(0, s);
  Grid3<std::int32_t> g(d, {1, 1, 1}, 0);
  for (auto& v : g.data()) v = u(rng);
  return LabelVolume(g, s);
}

StructureFeatures row(const std::string& id, Diagnosis d, double age, std::vector<double> dg, std::vector<double> v) {
  return {id, d, age, std::move(dg), std::move(v)};
}

}  // namespace

TEST_CASE("structure grading of simple maps") {
  Rng rng(1);
  const LabelVolume lab = random_labels({6, 5, 4}, 4, rng);
  const Volume3D c(lab.dims(), {1, 1, 1}, 0.25f);
  for (double v : structure_grading(c, lab)) CHECK(v == doctest::Approx(0.25));

  Volume3D m(lab.dims(), {1, 1, 1}, 0.0f);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = lab[i] == 1 ? 1.0f : (lab[i] > 0 ? -1.0f : 0.0f);
  CHECK(structure_grading(m, lab)[0] == 1.0);
  CHECK_THROWS_AS(structure_grading(Volume3D({2, 2, 2}, {1, 1, 1}, 0.0f), lab), DataError);
}

TEST_CASE("structure grading equals a per-structure loop and is linear") {
  Rng rng(2);
  const LabelVolume lab = random_labels({9, 7, 5}, 6, rng);
  const Volume3D a = dgtest::random_volume(lab.dims(), rng), b = dgtest::random_volume(lab.dims(), rng);
  const auto dg = structure_grading(a, lab);
  for (int s = 1; s <= 6; ++s) {
    double sum = 0.0;
    int n = 0;
    for (int z = 0; z < 5; ++z)
      for (int y = 0; y < 7; ++y)
        for (int x = 0; x < 9; ++x)
          if (lab(x, y, z) == s) {
            sum += a(x, y, z);
            ++n;
          }
    CHECK(dg[static_cast<std::size_t>(s - 1)] == sum / n);
  }
  Volume3D mix = a;
  for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = 0.3f * a[i] - 1.7f * b[i];
  const auto dm = structure_grading(mix, lab), db = structure_grading(b, lab);
  for (std::size_t s = 0; s < dm.size(); ++s) CHECK(std::abs(dm[s] - (0.3 * dg[s] - 1.7 * db[s])) <= 1e-6);
}

TEST_CASE("absent structures grade 0 and are reported") {
  Grid3<std::int32_t> g({2, 1, 1}, {1, 1, 1}, 1);
  const LabelVolume lab(g, 3);
  std::vector<int> missing;
  const auto dg = structure_grading(Volume3D({2, 1, 1}, {1, 1, 1}, 0.5f), lab, &missing);
  CHECK(dg == std::vector<double>{0.5, 0.0, 0.0});
  CHECK(missing == std::vector<int>{2, 3});
}

TEST_CASE("structure volumes") {
  CHECK(structure_volumes(LabelVolume(Grid3<std::int32_t>({3, 3, 3}, {1, 1, 1}, 1), 1)) == std::vector<double>{100.0});
  Grid3<std::int32_t> two({4, 1, 1}, {1, 1, 1}, 0);
  two[0] = 1;
  two[1] = 2;
  CHECK(structure_volumes(LabelVolume(two, 2)) == std::vector<double>{50.0, 50.0});
  CHECK_THROWS_AS(structure_volumes(LabelVolume(Grid3<std::int32_t>({2, 2, 2}, {1, 1, 1}, 0), 2)), DataError);

  PhantomConfig pc;
  pc.dims = {24, 24, 24};
  Rng rng(3);
  const PhantomSubject s = generate_subject(pc, Diagnosis::CN, rng);
  const auto v = structure_volumes(s.labels);
  std::vector<std::size_t> count(13, 0);
  for (std::size_t i = 0; i < s.labels.grid().size(); ++i) ++count[static_cast<std::size_t>(s.labels[i])];
  double total = 0.0;
  for (int k = 1; k <= 12; ++k) {
    CHECK(v[static_cast<std::size_t>(k - 1)] == 100.0 * static_cast<double>(count[static_cast<std::size_t>(k)]) / static_cast<double>(s.icc_voxels));
    total += v[static_cast<std::size_t>(k - 1)];
  }
  CHECK(total == doctest::Approx(100.0).epsilon(1e-12));
}

TEST_CASE("channel sets parse in any order") {
  CHECK(parse_channels("DG+A") == ChannelSet{true, false, true});
  CHECK(parse_channels("A+V+DG") == ChannelSet{true, true, true});
  CHECK(channels_name(parse_channels("V+DG")) == "DG+V");
  CHECK_THROWS_AS(parse_channels("DG+X"), ConfigError);
}

TEST_CASE("normalizer z-scores the training set") {
  std::vector<StructureFeatures> train{row("a", Diagnosis::CN, 60, {0.1, -0.2}, {40, 60}),
                                       row("b", Diagnosis::AD, 70, {0.5, 0.3}, {45, 55}),
                                       row("c", Diagnosis::AD, 80, {0.9, -0.1}, {50, 50})};
  const FeatureNormalizer n = fit_normalizer(train, {true, true, true});
  REQUIRE(n.mean.size() == 3);
  for (int c = 0; c < 3; ++c) {
    double s = 0.0, s2 = 0.0;
    int cnt = 0;
    for (const auto& f : train) {
      const Eigen::MatrixXf x = node_features(n, f);
      for (int i = 0; i < x.rows(); ++i) {
        s += x(i, c);
        s2 += static_cast<double>(x(i, c)) * x(i, c);
        ++cnt;
      }
    }
    CHECK(std::abs(s / cnt) < 1e-6);
    CHECK(std::sqrt(s2 / cnt) == doctest::Approx(1.0).epsilon(1e-6));
  }
  const StructureFeatures mean_row = row("m", Diagnosis::CN, 70, {n.mean[0], n.mean[0]}, {n.mean[1], n.mean[1]});
  const Eigen::MatrixXf z = node_features(n, mean_row);
  CHECK(z.cwiseAbs().maxCoeff() < 1e-6);
  // age is replicated on every node
  const Eigen::MatrixXf x = node_features(n, train[0]);
  CHECK(x(0, 2) == x(1, 2));

  std::vector<StructureFeatures> flat{row("a", Diagnosis::CN, 60, {0.2, 0.2}, {50, 50}),
                                      row("b", Diagnosis::AD, 60, {0.2, 0.2}, {50, 50})};
  const FeatureNormalizer fn = fit_normalizer(flat, {true, false, true});
  CHECK(node_features(fn, flat[0]).cwiseAbs().maxCoeff() == 0.0f);
  CHECK(node_features(fn, flat[0]).cols() == 2);
  CHECK_THROWS_AS(fit_normalizer(std::span(flat).first(1), {true, false, false}), DataError);
}

TEST_CASE("features CSV round trip") {
  dgtest::TempDir tmp("feat");
  const std::vector<StructureFeatures> rows{row("s1", Diagnosis::AD, 71.3, {0.123456789012345, -1.0 / 3.0}, {33.3, 66.7}),
                                            row("s2", Diagnosis::pMCI, 64.0, {0.0, 1.0}, {50.0, 50.0})};
  write_features_csv(tmp.path() / "f.csv", rows);
  const auto back = read_features_csv(tmp.path() / "f.csv");
  REQUIRE(back.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(back[i].id == rows[i].id);
    CHECK(back[i].label == rows[i].label);
    CHECK(back[i].age == rows[i].age);
    CHECK(back[i].dg == rows[i].dg);
    CHECK(back[i].v == rows[i].v);
  }
}
