#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "deepgrading/volume.hpp"

namespace dg {

enum class Diagnosis { CN, AD, sMCI, pMCI };

std::string_view diagnosis_name(Diagnosis d);
Diagnosis parse_diagnosis(std::string_view s);
/// Binary disease indicator used by the classifiers: AD and pMCI are positive.
inline int positive_class(Diagnosis d) { return d == Diagnosis::AD || d == Diagnosis::pMCI ? 1 : 0; }

struct SubjectRecord {
  std::string id;
  Diagnosis label = Diagnosis::CN;
  double age = 0.0;
  std::string split;  // "train", or the name of a test set
};

struct Subject {
  SubjectRecord meta;
  Volume3D image;
  LabelVolume labels;
};

// Cohort directory layout: metadata.csv, images/<id>.nii, labels/<id>.nii.
std::vector<SubjectRecord> read_metadata_csv(const std::filesystem::path& path);
void write_metadata_csv(const std::filesystem::path& path, const std::vector<SubjectRecord>& rows);

std::filesystem::path image_path(const std::filesystem::path& cohort_dir, const std::string& id);
std::filesystem::path label_path(const std::filesystem::path& cohort_dir, const std::string& id);

void save_subject(const std::filesystem::path& cohort_dir, const Subject& s);
Subject load_subject(const std::filesystem::path& cohort_dir, const SubjectRecord& rec, int structure_count = 0);

/// Loads every subject listed in metadata.csv, optionally restricted to one split.
std::vector<Subject> load_cohort(const std::filesystem::path& cohort_dir,
                                 std::optional<std::string> split = std::nullopt,
                                 int structure_count = 0);

}  // namespace dg
