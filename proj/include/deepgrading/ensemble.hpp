#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "deepgrading/grader.hpp"
#include "deepgrading/patch_grid.hpp"

namespace dg {

enum class FusionMode { Weighted, Unweighted };

std::string_view fusion_mode_name(FusionMode m);
FusionMode parse_fusion_mode(std::string_view s);

struct OrderStep {
  int patch = 0;
  std::optional<int> parent;  // none for the root, trained from scratch
};

/// Raster-order schedule; each patch after the first inherits from the
/// already-scheduled patch nearest in grid coordinates (ties: lower index).
std::vector<OrderStep> training_order(const PatchGridSpec& spec);

/// G_i = sum_j alpha_j g_ij / sum_j alpha_j over the patches covering voxel i,
/// accumulated in ascending j. Voxels whose covering weights are all zero
/// get the unweighted mean instead.
Volume3D fuse(const PatchGridSpec& spec, std::span<const Volume3D> patches, std::span<const double> alphas);

struct ManifestEntry {
  int patch = 0;
  Index3 origin;
  std::string checkpoint;  // relative to the manifest directory
  double alpha = 0.0;
};

struct EnsembleManifest {
  PatchGridSpec grid;
  std::vector<ManifestEntry> entries;  // ascending patch index
  std::uint64_t seed = 0;
  FusionMode fusion = FusionMode::Weighted;
  nlohmann::json train_config;

  bool complete() const { return static_cast<int>(entries.size()) == grid.count(); }
  const ManifestEntry* find(int patch) const;
};

void to_json(nlohmann::json& j, const EnsembleManifest& m);
void from_json(const nlohmann::json& j, EnsembleManifest& m);

EnsembleManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const EnsembleManifest& m);

/// A complete manifest together with its loaded models, one per patch index.
struct Ensemble {
  EnsembleManifest manifest;
  std::vector<UNet> models;

  std::vector<double> fusion_weights() const;
};

Ensemble load_ensemble(const std::filesystem::path& manifest_path);

struct EnsembleTrainOptions {
  FusionMode fusion = FusionMode::Weighted;
  int threads = 1;
  /// When set, checkpoints and manifest.json are written here after every
  /// patch, and patches already recorded there are loaded instead of retrained.
  std::optional<std::filesystem::path> out_dir;
  std::function<void(const GradingModel&)> on_patch_done;
};

/// Trains one regressor per patch location following training_order; every
/// child starts from its parent's best weights. Patches may train
/// concurrently once their parent is done; results do not depend on the
/// number of threads.
Ensemble train_ensemble(const GradingCohort& cohort, const PatchGridSpec& spec, const TrainConfig& cfg,
                        const EnsembleTrainOptions& opts = {});

/// Ensemble whose every location uses the same pooled regressor.
Ensemble single_model_ensemble(const PatchGridSpec& spec, const GradingModel& model);

/// Downsample, grade every patch at its manifest origin, fuse, upsample to the
/// input dims and zero everything outside the full-resolution ICC.
Volume3D grade_subject(const Ensemble& ens, const Volume3D& image, const LabelVolume& labels);

/// Same with a fusion mode override.
Volume3D grade_subject(const Ensemble& ens, const Volume3D& image, const LabelVolume& labels, FusionMode mode);

}  // namespace dg
