#include <doctest.h>

#include <cmath>
#include <set>

#include "deepgrading/ensemble.hpp"
#include "deepgrading/errors.hpp"
#include "deepgrading/phantom.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace dg;
using dgtest::brute_fuse;

namespace {

std::vector<Volume3D> random_patches(const PatchGridSpec& spec, Rng& rng) {
  std::vector<Volume3D> out;
  for (int j = 0; j < spec.count(); ++j) out.push_back(dgtest::random_volume(spec.patch_dims(), rng));
  return out;
}

double grid_distance2(const PatchGridSpec& spec, int a, int b) {
  const Index3 g = spec.grid_coord(a), h = spec.grid_coord(b);
  return std::pow(g.x - h.x, 2) + std::pow(g.y - h.y, 2) + std::pow(g.z - h.z, 2);
}

Ensemble constant_ensemble(const PatchGridSpec& spec, float c) {
  GradingModel m;
  m.net = UNet(UNetConfig{2, 2, 3}, spec.patch_dims(), 1);
  for (auto& p : m.net.params()) {
    if (p.name == "head.weight") std::fill(p.value.begin(), p.value.end(), 0.0f);
    if (p.name == "head.bias") std::fill(p.value.begin(), p.value.end(), std::atanh(c));
  }
  m.alpha = 0.6;
  return single_model_ensemble(spec, m);
}

}  // namespace

TEST_CASE("training order examples") {
  const auto one = training_order(PatchGridSpec({8, 8, 8}, {4, 4, 4}, {1, 1, 1}));
  REQUIRE(one.size() == 1);
  CHECK_FALSE(one[0].parent);

  const auto two = training_order(PatchGridSpec({8, 8, 8}, {4, 4, 4}, {2, 1, 1}));
  REQUIRE(two.size() == 2);
  CHECK_FALSE(two[0].parent);
  CHECK(two[1].parent == 0);

  const PatchGridSpec cube({8, 8, 8}, {4, 4, 4}, {2, 2, 2});
  for (const auto& s : training_order(cube))
    if (s.parent) CHECK(grid_distance2(cube, s.patch, *s.parent) == 1.0);
}

TEST_CASE("training order is a spanning tree with nearest earlier parents") {
  for (Dims3 k : {Dims3{3, 3, 3}, Dims3{5, 5, 5}, Dims3{4, 2, 3}}) {
    const PatchGridSpec spec({40, 40, 40}, {12, 12, 12}, k);
    const auto order = training_order(spec);
    REQUIRE(static_cast<int>(order.size()) == spec.count());
    CHECK_FALSE(order[0].parent);
    std::set<int> scheduled;
    for (const auto& s : order) {
      if (s.parent) {
        CHECK(scheduled.count(*s.parent) == 1);
        double best = 1e9;
        int best_j = -1;
        for (int p : scheduled)
          if (grid_distance2(spec, s.patch, p) < best) {
            best = grid_distance2(spec, s.patch, p);
            best_j = p;
          }
        CHECK(*s.parent == best_j);
      } else {
        CHECK(scheduled.empty());
      }
      scheduled.insert(s.patch);
    }
    CHECK(static_cast<int>(scheduled.size()) == spec.count());
  }
}

TEST_CASE("fusion examples") {
  SUBCASE("single covering patch") {
    const PatchGridSpec spec({4, 4, 4}, {4, 4, 4}, {1, 1, 1});
    const std::vector<Volume3D> g{Volume3D({4, 4, 4}, {1, 1, 1}, 0.7f)};
    for (double a : {0.1, 0.5, 1.0})
      for (float v : dgtest::values(fuse(spec, g, std::vector<double>{a}))) CHECK(v == 0.7f);
  }
  // origins 0 and 1 on a 3-voxel axis: only the middle voxel is shared
  const PatchGridSpec spec({3, 1, 1}, {2, 1, 1}, {2, 1, 1});
  const std::vector<Volume3D> g{Volume3D({2, 1, 1}, {1, 1, 1}, 1.0f), Volume3D({2, 1, 1}, {1, 1, 1}, 0.0f)};
  SUBCASE("two weighted patches") {
    const Volume3D f = fuse(spec, g, std::vector<double>{0.9, 0.6});
    CHECK(f[0] == 1.0f);
    CHECK(f[1] == doctest::Approx(0.6).epsilon(1e-7));
    CHECK(f[2] == 0.0f);
    const std::vector<Volume3D> h{Volume3D({2, 1, 1}, {1, 1, 1}, 0.5f), Volume3D({2, 1, 1}, {1, 1, 1}, -0.5f)};
    CHECK(fuse(spec, h, std::vector<double>{0.8, 0.8})[1] == 0.0f);
  }
  SUBCASE("all-zero weights fall back to the plain mean") {
    CHECK(fuse(spec, g, std::vector<double>{0.0, 0.0})[1] == 0.5f);
  }
  SUBCASE("missing patch") {
    const PatchGridSpec spec({4, 1, 1}, {2, 1, 1}, {2, 1, 1});
    const std::vector<Volume3D> g{Volume3D({2, 1, 1}, {1, 1, 1}, 1.0f)};
    CHECK_THROWS_AS(fuse(spec, g, std::vector<double>{1.0}), DataError);
  }
}

TEST_CASE("fusion equals the brute-force oracle exactly on 16^3 grids") {
  Rng rng(12);
  std::uniform_real_distribution<double> w(0.0, 1.0);
  for (Dims3 k : {Dims3{3, 3, 3}, Dims3{2, 4, 3}}) {
    const PatchGridSpec spec({16, 16, 16}, {8, 6, 7}, k);
    for (int trial = 0; trial < 3; ++trial) {
      const auto g = random_patches(spec, rng);
      std::vector<double> a;
      for (int j = 0; j < spec.count(); ++j) a.push_back(trial == 2 && j % 3 == 0 ? 0.0 : w(rng));
      const Volume3D f = fuse(spec, g, a);
      CHECK(f.data() == brute_fuse(spec, g, a).data());

      // bounds over covering patches
      for (int z = 0; z < 16; ++z)
        for (int y = 0; y < 16; ++y)
          for (int x = 0; x < 16; ++x) {
            float lo = 2.0f, hi = -2.0f;
            for (int j : covering_patches(spec, {x, y, z})) {
              const Index3 o = spec.origin(j);
              const float v = g[static_cast<std::size_t>(j)](x - o.x, y - o.y, z - o.z);
              lo = std::min(lo, v);
              hi = std::max(hi, v);
            }
            CHECK(f(x, y, z) >= lo);
            CHECK(f(x, y, z) <= hi);
          }
    }
  }
}

TEST_CASE("fusion is invariant to scaling all weights and reduces to the mean for equal weights") {
  Rng rng(13);
  const PatchGridSpec spec({16, 16, 16}, {8, 8, 8}, {3, 3, 3});
  const auto g = random_patches(spec, rng);
  std::vector<double> a;
  std::uniform_real_distribution<double> w(0.05, 1.0);
  for (int j = 0; j < spec.count(); ++j) a.push_back(w(rng));
  const Volume3D base = fuse(spec, g, a);
  for (double c : {0.01, 3.0, 250.0}) {
    std::vector<double> s = a;
    for (double& v : s) v *= c;
    const Volume3D f = fuse(spec, g, s);
    for (std::size_t i = 0; i < f.size(); ++i) CHECK(std::abs(f[i] - base[i]) <= 1e-6);
  }
  const Volume3D eq = fuse(spec, g, std::vector<double>(static_cast<std::size_t>(spec.count()), 0.37));
  const Volume3D one = fuse(spec, g, std::vector<double>(static_cast<std::size_t>(spec.count()), 1.0));
  for (std::size_t i = 0; i < eq.size(); ++i) CHECK(std::abs(eq[i] - one[i]) <= 1e-6);
}

TEST_CASE("grading a subject with constant models gives the constant inside the ICC") {
  PhantomConfig pc;
  pc.dims = {24, 26, 24};
  Rng rng(3);
  const PhantomSubject s = generate_subject(pc, Diagnosis::AD, rng);
  const PatchGridSpec spec({12, 13, 12}, {6, 6, 6}, {2, 3, 2});
  const Ensemble ens = constant_ensemble(spec, 0.3f);
  const Volume3D map = grade_subject(ens, s.image, s.labels);
  REQUIRE(map.dims() == s.image.dims());
  const float c = std::tanh(std::atanh(0.3f));
  for (std::size_t i = 0; i < map.size(); ++i) {
    if (s.labels[i] == 0)
      CHECK(map[i] == 0.0f);
    else
      CHECK(map[i] == doctest::Approx(c).epsilon(1e-6));
  }
  CHECK_THROWS_AS(grade_subject(ens, Volume3D({20, 20, 20}, {1, 1, 1}, 0.0f),
                                LabelVolume(Grid3<std::int32_t>({20, 20, 20}, {1, 1, 1}, 1), 1)),
                  DataError);
}

TEST_CASE("weighted grading with equal alphas matches unweighted grading") {
  PhantomConfig pc;
  pc.dims = {24, 24, 24};
  Rng rng(4);
  const PhantomSubject s = generate_subject(pc, Diagnosis::CN, rng);
  const PatchGridSpec spec({12, 12, 12}, {6, 6, 6}, {2, 2, 2});
  Ensemble ens;
  ens.manifest.grid = spec;
  for (int j = 0; j < spec.count(); ++j) {
    ens.manifest.entries.push_back({j, spec.origin(j), "", 0.7});
    ens.models.emplace_back(UNetConfig{2, 2, 3}, spec.patch_dims(), 50 + static_cast<std::uint64_t>(j));
  }
  const Volume3D w = grade_subject(ens, s.image, s.labels, FusionMode::Weighted);
  const Volume3D u = grade_subject(ens, s.image, s.labels, FusionMode::Unweighted);
  for (std::size_t i = 0; i < w.size(); ++i) CHECK(std::abs(w[i] - u[i]) <= 1e-6);
  for (float v : w.data()) CHECK(std::abs(v) <= 1.0f);
}

TEST_CASE("manifest JSON round trip and validation") {
  const PatchGridSpec spec({12, 12, 12}, {6, 6, 6}, {2, 1, 1});
  EnsembleManifest m;
  m.grid = spec;
  m.seed = 99;
  m.fusion = FusionMode::Unweighted;
  m.entries = {{1, spec.origin(1), "checkpoints/patch_001.dgck", 0.75}, {0, spec.origin(0), "checkpoints/patch_000.dgck", 0.5}};
  const EnsembleManifest back = nlohmann::json(m).get<EnsembleManifest>();
  CHECK(back.complete());
  CHECK(back.entries[0].patch == 0);
  CHECK(back.entries[1].alpha == 0.75);
  CHECK(back.fusion == FusionMode::Unweighted);
  CHECK(back.seed == 99);

  nlohmann::json bad = m;
  bad["entries"][0]["alpha"] = 1.5;
  CHECK_THROWS_AS(bad.get<EnsembleManifest>(), DataError);
  nlohmann::json dup = m;
  dup["entries"][1]["j"] = 1;
  dup["entries"][1]["origin"] = {6, 0, 0};
  CHECK_THROWS_AS(dup.get<EnsembleManifest>(), DataError);
}

namespace {

GradingCohort tiny_cohort() {
  PhantomConfig pc;
  pc.dims = {24, 24, 24};
  pc.structures = 6;
  pc.affected = {1};
  GradingCohort c;
  for (int i = 0; i < 8; ++i) {
    const Diagnosis d = i % 2 ? Diagnosis::AD : Diagnosis::CN;
    Rng rng(derive_seed(5, "tiny", static_cast<std::uint64_t>(i)));
    const PhantomSubject s = generate_subject(pc, d, rng);
    c.add(s.image, s.labels, d);
  }
  return c;
}

std::vector<std::uint64_t> hashes(const Ensemble& e) {
  std::vector<std::uint64_t> h;
  for (const auto& m : e.models) h.push_back(m.weight_hash());
  return h;
}

}  // namespace

TEST_CASE("ensemble training writes every checkpoint, resumes and ignores the thread count") {
  dgtest::TempDir tmp("ens");
  const GradingCohort cohort = tiny_cohort();
  const PatchGridSpec spec({12, 12, 12}, {6, 6, 6}, {2, 2, 1});
  TrainConfig cfg;
  cfg.max_epochs = 2;
  cfg.patience = 2;
  cfg.unet.base_channels = 2;
  cfg.seed = 4;

  int trained = 0;
  EnsembleTrainOptions opts;
  opts.out_dir = tmp.path();
  opts.on_patch_done = [&](const GradingModel&) { ++trained; };
  const Ensemble a = train_ensemble(cohort, spec, cfg, opts);
  CHECK(trained == 4);
  for (int j = 0; j < 4; ++j) {
    char name[40];
    std::snprintf(name, sizeof name, "checkpoints/patch_%03d.dgck", j);
    CHECK(std::filesystem::exists(tmp.path() / name));
  }
  const Ensemble loaded = load_ensemble(tmp.path() / "manifest.json");
  CHECK(hashes(loaded) == hashes(a));
  for (const auto& e : loaded.manifest.entries) {
    CHECK(e.alpha >= 0.0);
    CHECK(e.alpha <= 1.0);
  }

  trained = 0;
  const Ensemble again = train_ensemble(cohort, spec, cfg, opts);
  CHECK(trained == 0);
  CHECK(hashes(again) == hashes(a));

  std::filesystem::remove(tmp.path() / "checkpoints/patch_003.dgck");
  trained = 0;
  const Ensemble resumed = train_ensemble(cohort, spec, cfg, opts);
  CHECK(trained == 1);
  CHECK(hashes(resumed) == hashes(a));

  EnsembleTrainOptions threaded;
  threaded.threads = 3;
  CHECK(hashes(train_ensemble(cohort, spec, cfg, threaded)) == hashes(a));

  TrainConfig changed = cfg;
  changed.seed = 5;
  CHECK_THROWS_AS(train_ensemble(cohort, spec, changed, opts), ConfigError);
}
