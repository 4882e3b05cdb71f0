#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "deepgrading/cohort.hpp"
#include "deepgrading/volume.hpp"

namespace dg {

/// Per-subject structure-level features.
struct StructureFeatures {
  std::string id;
  Diagnosis label = Diagnosis::CN;
  double age = 0.0;
  std::vector<double> dg;  // mean grade per structure, in [-1, 1]
  std::vector<double> v;   // structure volume, % of ICC

  int structure_count() const { return static_cast<int>(dg.size()); }
};

/// DG_s = mean of the map over voxels labeled s; structures with no voxel get
/// 0 and are appended to `missing` when given.
std::vector<double> structure_grading(const Volume3D& map, const LabelVolume& lab,
                                      std::vector<int>* missing = nullptr);

/// V_s = 100 * count(label == s) / count(label > 0).
std::vector<double> structure_volumes(const LabelVolume& lab);

/// Node feature channels; selected channels appear in the order DG, V, A.
struct ChannelSet {
  bool dg = true;
  bool v = false;
  bool a = true;

  int width() const { return int(dg) + int(v) + int(a); }
  friend bool operator==(const ChannelSet&, const ChannelSet&) = default;
};

/// Parses "DG+A", "DG+V+A", "V", ... (order-insensitive).
ChannelSet parse_channels(const std::string& text);
std::string channels_name(const ChannelSet& c);

/// Z-score statistics per selected channel, pooled over structures and
/// estimated on training subjects only.
struct FeatureNormalizer {
  ChannelSet channels;
  std::vector<double> mean;
  std::vector<double> stddev;
};

FeatureNormalizer fit_normalizer(std::span<const StructureFeatures> train, ChannelSet channels);

/// s x F node-feature matrix of normalized channels; age is replicated on
/// every node.
Eigen::MatrixXf node_features(const FeatureNormalizer& norm, const StructureFeatures& f);

// Features CSV: subject_id,label,age,DG_1..DG_s,V_1..V_s
void write_features_csv(const std::filesystem::path& path, std::span<const StructureFeatures> rows);
std::vector<StructureFeatures> read_features_csv(const std::filesystem::path& path);

}  // namespace dg
