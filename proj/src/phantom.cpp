#include "deepgrading/phantom.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>

#include "deepgrading/errors.hpp"

namespace dg {

namespace {

constexpr double kIccRadius = 0.42;       // semi-axis as a fraction of the volume extent
constexpr double kLatticeSpread = 0.62;   // lattice extent as a fraction of the ICC semi-axis
constexpr double kCenterJitter = 1.5;     // voxels
constexpr double kWeightJitter = 0.05;
constexpr double kIccJitter = 0.02;
constexpr std::size_t kMinStructureVoxels = 27;
// Healthy tissue intensities; the default shift moves affected tissue below
// the whole band.
constexpr double kBaseLow = 0.65;
constexpr double kBaseHigh = 0.85;

std::array<int, 3> lattice_shape(const PhantomConfig& c) {
  // Smallest a*b*c >= s, then the cell shape closest to the volume aspect.
  std::array<int, 3> best{c.structures, 1, 1};
  double best_score = std::numeric_limits<double>::infinity();
  for (int a = 1; a <= c.structures; ++a)
    for (int b = 1; b <= c.structures; ++b)
      for (int z = 1; z <= c.structures; ++z) {
        const int prod = a * b * z;
        if (prod < c.structures || prod > 2 * c.structures) continue;
        const double ex = c.dims.x / double(a), ey = c.dims.y / double(b), ez = c.dims.z / double(z);
        const double m = (ex + ey + ez) / 3.0;
        const double aspect = ((ex - m) * (ex - m) + (ey - m) * (ey - m) + (ez - m) * (ez - m)) / (m * m);
        const double score = (prod - c.structures) + aspect;
        if (score < best_score) {
          best_score = score;
          best = {a, b, z};
        }
      }
  return best;
}

double severity_shrink(const PhantomConfig& c, Diagnosis cls) {
  if (c.null_signal) return 1.0;
  switch (cls) {
    case Diagnosis::AD: return c.shrink;
    case Diagnosis::pMCI: return c.progressor_shrink;
    default: return 1.0;
  }
}

/// Intensity shift scales with the weight change so that the progressor
/// analog sits between CN and AD.
double severity_shift(const PhantomConfig& c, double shrink) {
  if (c.shrink == 1.0) return shrink == 1.0 ? 0.0 : c.intensity_shift;
  return c.intensity_shift * (1.0 - shrink) / (1.0 - c.shrink);
}

const AgeRange& age_model(const PhantomConfig& c, Diagnosis cls) {
  if (c.null_signal) return c.age_cn;
  return cls == Diagnosis::AD || cls == Diagnosis::pMCI ? c.age_ad : c.age_cn;
}

}  // namespace

void PhantomConfig::validate() const {
  if (dims.x < 8 || dims.y < 8 || dims.z < 8) throw ConfigError("phantom dims must be at least 8 per axis");
  if (spacing.x <= 0 || spacing.y <= 0 || spacing.z <= 0) throw ConfigError("phantom spacing must be positive");
  if (structures < 1) throw ConfigError("phantom needs at least one structure");
  for (int a : affected)
    if (a < 1 || a > structures) throw ConfigError("affected structure id out of 1..s");
  if (!(shrink > 0.0 && shrink <= 1.0)) throw ConfigError("shrink factor must lie in (0, 1]");
  if (!(progressor_shrink > 0.0 && progressor_shrink <= 1.0))
    throw ConfigError("progressor shrink factor must lie in (0, 1]");
  if (noise_std < 0.0) throw ConfigError("noise std must be nonnegative");
  if (age_cn.lo > age_cn.hi || age_ad.lo > age_ad.hi) throw ConfigError("age range bounds are reversed");
  if (train_per_class < 0 || test_per_class < 0 || progressor_per_class < 0)
    throw ConfigError("subject counts must be nonnegative");
  const double icc = 4.0 / 3.0 * M_PI * kIccRadius * kIccRadius * kIccRadius * dims.x * dims.y * dims.z;
  if (icc < static_cast<double>(structures) * 4.0 * kMinStructureVoxels)
    throw ConfigError("structures cannot fit inside the ICC at these dims");
}

void to_json(nlohmann::json& j, const PhantomConfig& c) {
  j = {{"dims", {c.dims.x, c.dims.y, c.dims.z}},
       {"spacing", {c.spacing.x, c.spacing.y, c.spacing.z}},
       {"structures", c.structures},
       {"affected", c.affected},
       {"shrink", c.shrink},
       {"intensity_shift", c.intensity_shift},
       {"noise_std", c.noise_std},
       {"age_cn", {c.age_cn.lo, c.age_cn.hi}},
       {"age_ad", {c.age_ad.lo, c.age_ad.hi}},
       {"null_signal", c.null_signal},
       {"train_per_class", c.train_per_class},
       {"test_per_class", c.test_per_class},
       {"progressor_per_class", c.progressor_per_class},
       {"progressor_shrink", c.progressor_shrink},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, PhantomConfig& c) {
  static const std::vector<std::string> keys = {
      "dims", "spacing", "structures", "affected", "shrink", "intensity_shift", "noise_std", "age_cn", "age_ad",
      "null_signal", "train_per_class", "test_per_class", "progressor_per_class", "progressor_shrink", "seed"};
  if (!j.is_object()) throw ConfigError("phantom config must be an object");
  for (const auto& [k, v] : j.items())
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) throw ConfigError("unknown phantom key '" + k + "'");
  try {
    PhantomConfig d;
    if (j.contains("dims")) {
      const auto v = j.at("dims").get<std::vector<int>>();
      if (v.size() != 3) throw ConfigError("phantom dims need 3 values");
      d.dims = {v[0], v[1], v[2]};
    }
    if (j.contains("spacing")) {
      const auto v = j.at("spacing").get<std::vector<double>>();
      if (v.size() != 3) throw ConfigError("phantom spacing needs 3 values");
      d.spacing = {v[0], v[1], v[2]};
    }
    auto range = [&](const char* key, AgeRange& r) {
      if (!j.contains(key)) return;
      const auto v = j.at(key).get<std::vector<double>>();
      if (v.size() != 2) throw ConfigError(std::string(key) + " needs [lo, hi]");
      r = {v[0], v[1]};
    };
    range("age_cn", d.age_cn);
    range("age_ad", d.age_ad);
    d.structures = j.value("structures", d.structures);
    d.affected = j.value("affected", d.affected);
    d.shrink = j.value("shrink", d.shrink);
    d.intensity_shift = j.value("intensity_shift", d.intensity_shift);
    d.noise_std = j.value("noise_std", d.noise_std);
    d.null_signal = j.value("null_signal", d.null_signal);
    d.train_per_class = j.value("train_per_class", d.train_per_class);
    d.test_per_class = j.value("test_per_class", d.test_per_class);
    d.progressor_per_class = j.value("progressor_per_class", d.progressor_per_class);
    d.progressor_shrink = j.value("progressor_shrink", d.progressor_shrink);
    d.seed = j.value("seed", d.seed);
    d.validate();
    c = std::move(d);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("phantom config: ") + e.what());
  }
}

std::vector<std::array<double, 3>> canonical_centers(const PhantomConfig& cfg) {
  const auto shape = lattice_shape(cfg);
  std::vector<std::array<double, 3>> out;
  for (int k = 0; k < shape[2] && static_cast<int>(out.size()) < cfg.structures; ++k)
    for (int j = 0; j < shape[1] && static_cast<int>(out.size()) < cfg.structures; ++j)
      for (int i = 0; i < shape[0] && static_cast<int>(out.size()) < cfg.structures; ++i) {
        const int idx[3] = {i, j, k};
        std::array<double, 3> c{};
        for (int a = 0; a < 3; ++a) {
          const double u = shape[a] == 1 ? 0.0 : 2.0 * (idx[a] + 0.5) / shape[a] - 1.0;
          const double centre = 0.5 * (cfg.dims[a] - 1);
          c[a] = centre + u * kLatticeSpread * kIccRadius * cfg.dims[a];
        }
        out.push_back(c);
      }
  return out;
}

PhantomSubject generate_subject(const PhantomConfig& cfg, Diagnosis cls, Rng& rng) {
  cfg.validate();
  const int s = cfg.structures;
  std::uniform_real_distribution<double> unit(-1.0, 1.0);

  std::array<double, 3> radius{};
  for (int a = 0; a < 3; ++a) radius[a] = kIccRadius * cfg.dims[a] * (1.0 + kIccJitter * unit(rng));
  auto centers = canonical_centers(cfg);
  std::vector<double> weight(static_cast<std::size_t>(s));
  for (int i = 0; i < s; ++i) {
    for (int a = 0; a < 3; ++a) centers[static_cast<std::size_t>(i)][a] += kCenterJitter * unit(rng);
    weight[static_cast<std::size_t>(i)] = 1.0 + kWeightJitter * unit(rng);
  }

  const double shrink = severity_shrink(cfg, cls);
  const double shift = shrink == 1.0 ? 0.0 : severity_shift(cfg, shrink);
  std::vector<double> intensity(static_cast<std::size_t>(s));
  for (int i = 0; i < s; ++i) {
    // golden-ratio sequence keeps neighbouring ids apart in intensity
    const double frac = std::fmod(0.5 + 0.6180339887498949 * i, 1.0);
    intensity[static_cast<std::size_t>(i)] = kBaseLow + (kBaseHigh - kBaseLow) * frac;
  }
  std::vector<bool> hit(static_cast<std::size_t>(s), false);
  for (int a : cfg.affected) {
    hit[static_cast<std::size_t>(a - 1)] = true;
    weight[static_cast<std::size_t>(a - 1)] *= shrink;
    intensity[static_cast<std::size_t>(a - 1)] += shift;
  }

  Grid3<std::int32_t> lab(cfg.dims, cfg.spacing, 0);
  Volume3D img(cfg.dims, cfg.spacing, 0.0f);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<std::size_t> count(static_cast<std::size_t>(s), 0);
  std::size_t icc = 0;
  for (int z = 0; z < cfg.dims.z; ++z)
    for (int y = 0; y < cfg.dims.y; ++y)
      for (int x = 0; x < cfg.dims.x; ++x) {
        const double p[3] = {double(x), double(y), double(z)};
        double r2 = 0.0;
        for (int a = 0; a < 3; ++a) {
          const double d = (p[a] - 0.5 * (cfg.dims[a] - 1)) / radius[a];
          r2 += d * d;
        }
        double value = 0.0;
        if (r2 <= 1.0) {
          int best = 0;
          double best_d = std::numeric_limits<double>::infinity();
          for (int i = 0; i < s; ++i) {
            const auto& c = centers[static_cast<std::size_t>(i)];
            const double d = std::sqrt((p[0] - c[0]) * (p[0] - c[0]) + (p[1] - c[1]) * (p[1] - c[1]) +
                                       (p[2] - c[2]) * (p[2] - c[2])) /
                             weight[static_cast<std::size_t>(i)];
            if (d < best_d) {
              best_d = d;
              best = i;
            }
          }
          lab(x, y, z) = best + 1;
          ++count[static_cast<std::size_t>(best)];
          ++icc;
          value = intensity[static_cast<std::size_t>(best)];
        }
        img(x, y, z) = static_cast<float>(value + cfg.noise_std * noise(rng));
      }
  for (int i = 0; i < s; ++i)
    if (count[static_cast<std::size_t>(i)] < kMinStructureVoxels)
      throw ConfigError("structure " + std::to_string(i + 1) + " does not fit inside the ICC");

  const AgeRange& ar = age_model(cfg, cls);
  std::uniform_real_distribution<double> age(ar.lo, ar.hi);
  return {std::move(img), LabelVolume(std::move(lab), s), age(rng), icc};
}

std::vector<SubjectRecord> cohort_plan(const PhantomConfig& cfg) {
  cfg.validate();
  std::vector<SubjectRecord> out;
  std::uint64_t group = 0;
  auto add = [&](const std::string& split, Diagnosis cls, int n) {
    ++group;
    if (n == 0) return;
    // Stratified ages: one draw per equal-width bin, bins shuffled.
    Rng rng(derive_seed(cfg.seed, "phantom-age", group));
    std::vector<int> bin(static_cast<std::size_t>(n));
    std::iota(bin.begin(), bin.end(), 0);
    std::shuffle(bin.begin(), bin.end(), rng);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const AgeRange& ar = age_model(cfg, cls);
    for (int i = 0; i < n; ++i) {
      const double a = ar.lo + (ar.hi - ar.lo) * (bin[static_cast<std::size_t>(i)] + u(rng)) / n;
      char id[64];
      std::snprintf(id, sizeof id, "%s_%s_%03d", split.c_str(), std::string(diagnosis_name(cls)).c_str(), i + 1);
      out.push_back({id, cls, std::round(a * 10.0) / 10.0, split});
    }
  };
  add("train", Diagnosis::CN, cfg.train_per_class);
  add("train", Diagnosis::AD, cfg.train_per_class);
  add("test", Diagnosis::CN, cfg.test_per_class);
  add("test", Diagnosis::AD, cfg.test_per_class);
  add("progressor", Diagnosis::sMCI, cfg.progressor_per_class);
  add("progressor", Diagnosis::pMCI, cfg.progressor_per_class);
  return out;
}

PhantomSubject generate_planned(const PhantomConfig& cfg, const SubjectRecord& rec, std::size_t index) {
  Rng rng(derive_seed(cfg.seed, "phantom-subject", index));
  PhantomSubject s = generate_subject(cfg, rec.label, rng);
  s.age = rec.age;
  return s;
}

std::vector<SubjectRecord> generate_cohort(const PhantomConfig& cfg, const std::filesystem::path& dir) {
  const auto plan = cohort_plan(cfg);
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < plan.size(); ++i) {
    PhantomSubject p = generate_planned(cfg, plan[i], i);
    save_subject(dir, Subject{plan[i], std::move(p.image), std::move(p.labels)});
  }
  write_metadata_csv(dir / "metadata.csv", plan);
  return plan;
}

}  // namespace dg
