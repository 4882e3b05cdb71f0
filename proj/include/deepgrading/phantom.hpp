#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <json.hpp>

#include "deepgrading/cohort.hpp"
#include "deepgrading/util.hpp"
#include "deepgrading/volume.hpp"

namespace dg {

struct AgeRange {
  double lo = 60.0, hi = 85.0;
};

struct PhantomConfig {
  Dims3 dims{46, 54, 46};
  Spacing3 spacing{2.0, 2.0, 2.0};
  int structures = 12;
  std::vector<int> affected{1, 2, 3};
  double shrink = 0.7;            // scale on the Voronoi weight of affected structures
  double intensity_shift = -0.3;  // added to affected tissue
  double noise_std = 0.05;
  AgeRange age_cn{60.0, 85.0};
  AgeRange age_ad{62.0, 88.0};
  // Null signal: AD subjects are drawn from the CN distribution, ages included.
  bool null_signal = false;
  int train_per_class = 40;
  int test_per_class = 20;
  // sMCI/pMCI analog; pMCI gets progressor_shrink, sMCI is unaffected.
  int progressor_per_class = 0;
  double progressor_shrink = 0.85;
  std::uint64_t seed = 1;

  /// Throws ConfigError on invalid values.
  void validate() const;
};

void to_json(nlohmann::json& j, const PhantomConfig& c);
void from_json(const nlohmann::json& j, PhantomConfig& c);

struct PhantomSubject {
  Volume3D image;
  LabelVolume labels;
  double age = 0.0;
  std::size_t icc_voxels = 0;
};

/// Canonical structure centers in voxel coordinates, ordered by (z, y, x) of
/// their lattice cell, so that ids 1, 2, 3 are spatial neighbours.
std::vector<std::array<double, 3>> canonical_centers(const PhantomConfig& cfg);

/// One synthetic subject. The ICC is an ellipsoid partitioned into
/// `structures` cells of a multiplicatively weighted Voronoi diagram around
/// jittered canonical centers; every cell has its own base intensity.
PhantomSubject generate_subject(const PhantomConfig& cfg, Diagnosis cls, Rng& rng);

/// Metadata of the cohort in generation order: train CN, train AD, test CN,
/// test AD, then progressor sMCI, pMCI. Ages are stratified per group.
std::vector<SubjectRecord> cohort_plan(const PhantomConfig& cfg);

/// Generates the subject behind one plan row; index is its position in the plan.
PhantomSubject generate_planned(const PhantomConfig& cfg, const SubjectRecord& rec, std::size_t index);

/// Writes every planned subject plus metadata.csv under dir and returns the rows.
std::vector<SubjectRecord> generate_cohort(const PhantomConfig& cfg, const std::filesystem::path& dir);

}  // namespace dg
