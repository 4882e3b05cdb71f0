#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "deepgrading/cohort.hpp"
#include "deepgrading/ensemble.hpp"
#include "deepgrading/features.hpp"
#include "deepgrading/gcn.hpp"
#include "deepgrading/graph.hpp"
#include "deepgrading/metrics.hpp"

namespace dg {

/// AD and CN subjects at grading resolution; other diagnoses are skipped.
GradingCohort make_grading_cohort(std::span<const Subject> subjects);

/// Grades one subject and aggregates the map per structure. The map is
/// returned through `map` when given.
StructureFeatures subject_features(const Ensemble& ens, const Subject& s, FusionMode mode,
                                   Volume3D* map = nullptr);

/// Features of every subject, in input order. Subjects are spread over
/// `threads` workers; results do not depend on the thread count.
std::vector<StructureFeatures> cohort_features(const Ensemble& ens, std::span<const Subject> subjects,
                                               FusionMode mode, int threads = 1,
                                               std::vector<Volume3D>* maps = nullptr);

struct ClassifierSpec {
  ChannelSet channels;
  EdgeMode edge_mode = EdgeMode::VolumeDiff;
  ClassifierTrainConfig train;
  double validation_fraction = 0.2;
};

/// GCN plus everything needed to turn a feature row into its graph.
struct TrainedClassifier {
  GcnModel model;
  FeatureNormalizer norm;
  EdgeMode edge_mode = EdgeMode::VolumeDiff;
  Eigen::MatrixXd correlation;  // empty unless edge_mode is Correlation
  int epochs = 0;
  double best_val_loss = 0.0;

  SubjectGraph graph(const StructureFeatures& f) const;
};

/// Class-balanced train/validation split of `train`, normalizer and
/// correlation edges fitted on the training part, then GCN training.
/// Labels come from positive_class().
TrainedClassifier fit_classifier(std::span<const StructureFeatures> train, const ClassifierSpec& spec);

/// Test-time-augmented probabilities in input order.
std::vector<double> predict_probabilities(const TrainedClassifier& c, std::span<const StructureFeatures> rows,
                                          Rng& rng, double noise_std, int passes);

void save_classifier(const std::filesystem::path& path, const TrainedClassifier& c);
TrainedClassifier load_classifier(const std::filesystem::path& path);

struct TestSet {
  std::string name;
  std::vector<StructureFeatures> rows;
};

/// Per-repetition scores of one test set.
struct DatasetScores {
  std::string name;
  std::vector<double> bacc, auc;

  double mean_bacc() const;
  double mean_auc() const;
  const std::vector<double>& metric(const std::string& name) const;
};

/// Named test sets come first, then "global_diagnosis" (all CN/AD test
/// subjects pooled) and "global_prognosis" (all sMCI/pMCI) when present.
struct EvalReport {
  int repetitions = 0;
  std::vector<DatasetScores> datasets;

  const DatasetScores* find(const std::string& name) const;
};

void to_json(nlohmann::json& j, const EvalReport& r);
void from_json(const nlohmann::json& j, EvalReport& r);

struct EvalOptions {
  ClassifierSpec classifier;
  int repetitions = 10;
  double tta_noise = 0.1;
  int tta_passes = 3;
};

/// Retrains the classifier once per repetition with seeds derived from
/// (classifier seed, "repetition", r) and scores every test set.
EvalReport evaluate_repetitions(std::span<const StructureFeatures> train, std::span<const TestSet> tests,
                                const EvalOptions& opts);

/// Scores a fixed classifier as a one-repetition report.
EvalReport evaluate_classifier(const TrainedClassifier& c, std::span<const TestSet> tests, std::uint64_t seed,
                               double tta_noise, int tta_passes);

/// report.json and report.csv (dataset,repetition,bacc,auc) under dir.
void write_eval_report(const std::filesystem::path& dir, const EvalReport& r);
EvalReport read_eval_report(const std::filesystem::path& json_path);

struct WilcoxonComparison {
  std::string dataset;
  double mean_candidate = 0.0, mean_baseline = 0.0;
  double p_value = 1.0;
  bool all_equal = false;  // no nonzero paired difference; p reported as 1
};

/// One-sided test that `candidate` beats `baseline` on every dataset both
/// reports share, pairing repetitions by index.
std::vector<WilcoxonComparison> compare_reports(const EvalReport& candidate, const EvalReport& baseline,
                                                const std::string& metric = "bacc");

/// Pixel (x, y) of axial slice z holds round((v + 1) / 2 * 255) with v
/// clamped to [-1, 1]. Rows run along y, x fastest.
void write_slice_pgm(const std::filesystem::path& path, const Volume3D& map, int z);

struct ReportOptions {
  std::vector<int> slices;  // axial slices; empty means the middle one
  int top_k = 10;
  int top_pairs = 25;
};

/// Group-average maps, slice images, top-structure and top-pair tables
/// for the positive (AD, pMCI) and negative groups. `maps[i]` belongs to
/// `features[i]`.
void write_report(const std::filesystem::path& dir, std::span<const Volume3D> maps,
                  std::span<const StructureFeatures> features, const ReportOptions& opts);

}  // namespace dg
