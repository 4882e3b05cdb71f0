#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <vector>

#include <json.hpp>

#include "deepgrading/cohort.hpp"
#include "deepgrading/param.hpp"
#include "deepgrading/patch_grid.hpp"
#include "deepgrading/unet.hpp"
#include "deepgrading/util.hpp"

namespace dg {

/// Per-voxel ground truth: +1 inside the ICC for AD, -1 inside the ICC for
/// CN, 0 outside. Throws DataError for any other diagnosis.
Volume3D make_target(Diagnosis cls, const MaskVolume& icc_patch);

struct TrainSample {
  Volume3D x;
  Volume3D y;
  double mix = 1.0;  // weight of the AD sample when mixed
};

/// Convex combination with the AD sample weighted by `weight`.
TrainSample mixup(const TrainSample& ad, const TrainSample& cn, double weight);
/// Weight drawn from Beta(beta, beta).
TrainSample mixup(const TrainSample& ad, const TrainSample& cn, Rng& rng, double beta = 0.3);

struct TrainConfig {
  AdamConfig adam{};  // learning rate 0.001
  int patience = 20;
  int batch_size = 1;
  int max_epochs = 30;
  double validation_fraction = 0.2;
  double mixup_beta = 0.3;
  UNetConfig unet{};
  std::uint64_t seed = 1;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Stops once `patience` consecutive epochs fail to strictly improve on the
/// best validation loss seen so far.
class EarlyStopping {
 public:
  explicit EarlyStopping(int patience) : patience_(patience) {}
  /// Returns true when this loss is a new best.
  bool update(double val_loss);
  bool should_stop() const { return stale_ >= patience_; }
  double best() const { return best_; }

 private:
  int patience_;
  int stale_ = 0;
  double best_ = std::numeric_limits<double>::infinity();
};

/// Training inputs at grading resolution: downsampled image and ICC mask per
/// subject. Only AD and CN subjects take part in grader training.
struct GradingCohort {
  std::vector<Volume3D> images;
  std::vector<MaskVolume> icc;
  std::vector<Diagnosis> classes;

  std::size_t size() const { return images.size(); }
  void add(const Volume3D& full_image, const LabelVolume& full_labels, Diagnosis cls);
};

/// Mean and inverse standard deviation over every voxel of every cohort image.
InputNormalization fit_input_normalization(const GradingCohort& cohort);

struct GradingModel {
  UNet net;
  int patch_index = -1;  // -1 for a model pooled over every location
  Index3 origin;
  double alpha = 0.0;     // validation balanced accuracy
  std::uint64_t seed = 0;
  int epochs = 0;
  double best_val_loss = 0.0;
};

/// Class-balanced split of the AD and CN subjects. Both parts hold the same
/// number of AD and CN subjects.
struct BalancedSplit {
  std::vector<std::size_t> train_ad, train_cn, val_ad, val_cn;
};
BalancedSplit balanced_split(const std::vector<Diagnosis>& classes, double val_fraction, Rng& rng);

/// Patch-level decision rule: AD iff the mean grade over ICC voxels of the
/// patch is positive (over all voxels when the patch holds no ICC voxel).
bool patch_predicts_ad(const Volume3D& grades, const MaskVolume& icc_patch);

/// Trains the regressor for patch location j. init, when given, provides the
/// transfer-learning starting weights.
GradingModel train_patch_model(const GradingCohort& cohort, const PatchGridSpec& spec, int j,
                               const UNet* init, const TrainConfig& cfg);

/// Single regressor trained on samples drawn from every patch location.
GradingModel train_pooled_model(const GradingCohort& cohort, const PatchGridSpec& spec, const TrainConfig& cfg);

void save_grading_model(const std::filesystem::path& path, const GradingModel& m);
GradingModel load_grading_model(const std::filesystem::path& path);

}  // namespace dg
