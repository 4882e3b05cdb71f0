#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "deepgrading/ensemble.hpp"
#include "deepgrading/features.hpp"
#include "deepgrading/gcn.hpp"
#include "deepgrading/grader.hpp"
#include "deepgrading/graph.hpp"
#include "deepgrading/phantom.hpp"

namespace dg {

struct GridConfig {
  Dims3 patch{12, 14, 12};  // at grading (half) resolution
  Dims3 k{3, 3, 3};
};

struct RunPaths {
  std::string cohort = "cohort";
  std::string ensemble = "ensemble";
  std::string output = "out";
};

/// Everything a command needs. Component seeds that the JSON leaves out are
/// derived from the root seed by name.
struct RunConfig {
  std::uint64_t seed = 1;
  PhantomConfig phantom;
  GridConfig grid;
  TrainConfig grader;
  ClassifierTrainConfig classifier;
  ChannelSet channels{true, false, true};
  EdgeMode edge_mode = EdgeMode::VolumeDiff;
  FusionMode fusion = FusionMode::Weighted;
  int repetitions = 10;
  double validation_fraction = 0.2;  // classifier train/validation split
  double tta_noise = 0.1;
  int tta_passes = 3;
  int threads = 1;
  RunPaths paths;

  /// Grid over a cohort whose full-resolution dims are `image_dims`.
  PatchGridSpec grid_spec(Dims3 image_dims) const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
/// Rejects unknown keys at every level with ConfigError.
void from_json(const nlohmann::json& j, RunConfig& c);

RunConfig default_run_config();
/// Parses a JSON file; an empty path gives the defaults.
RunConfig load_run_config(const std::filesystem::path& path);
/// Applies DG_COHORT_DIR, DG_ENSEMBLE_DIR and DG_OUTPUT_DIR when set.
void apply_path_overrides(RunConfig& c);
/// Writes the resolved config as pretty JSON.
void write_run_config(const std::filesystem::path& path, const RunConfig& c);

}  // namespace dg
