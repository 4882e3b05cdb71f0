#include "deepgrading/cohort.hpp"

#include <fstream>
#include <sstream>

#include "deepgrading/errors.hpp"
#include "deepgrading/nifti.hpp"
#include "deepgrading/table.hpp"

namespace dg {

std::string_view diagnosis_name(Diagnosis d) {
  switch (d) {
    case Diagnosis::CN: return "CN";
    case Diagnosis::AD: return "AD";
    case Diagnosis::sMCI: return "sMCI";
    case Diagnosis::pMCI: return "pMCI";
  }
  return "?";
}

Diagnosis parse_diagnosis(std::string_view s) {
  if (s == "CN") return Diagnosis::CN;
  if (s == "AD") return Diagnosis::AD;
  if (s == "sMCI") return Diagnosis::sMCI;
  if (s == "pMCI") return Diagnosis::pMCI;
  throw DataError("unknown diagnosis label '" + std::string(s) + "'");
}

std::vector<SubjectRecord> read_metadata_csv(const std::filesystem::path& path) {
  const CsvTable t = read_csv(path);
  const std::size_t id = t.column("subject_id"), label = t.column("label"), age = t.column("age"),
                    split = t.column("split");
  std::vector<SubjectRecord> out;
  for (const auto& row : t.rows)
    out.push_back({row[id], parse_diagnosis(row[label]), parse_double(row[age]), row[split]});
  return out;
}

void write_metadata_csv(const std::filesystem::path& path, const std::vector<SubjectRecord>& rows) {
  CsvTable t;
  t.header = {"subject_id", "label", "age", "split"};
  for (const auto& r : rows)
    t.rows.push_back({r.id, std::string(diagnosis_name(r.label)), format_double(r.age), r.split});
  write_csv(path, t);
}

std::filesystem::path image_path(const std::filesystem::path& dir, const std::string& id) {
  return dir / "images" / (id + ".nii");
}

std::filesystem::path label_path(const std::filesystem::path& dir, const std::string& id) {
  return dir / "labels" / (id + ".nii");
}

void save_subject(const std::filesystem::path& dir, const Subject& s) {
  std::filesystem::create_directories(dir / "images");
  std::filesystem::create_directories(dir / "labels");
  write_nifti(image_path(dir, s.meta.id), s.image);
  write_nifti_labels(label_path(dir, s.meta.id), s.labels);
}

Subject load_subject(const std::filesystem::path& dir, const SubjectRecord& rec, int structure_count) {
  Subject s{rec, read_nifti(image_path(dir, rec.id)), read_nifti_labels(label_path(dir, rec.id), structure_count)};
  if (!(s.image.dims() == s.labels.dims()))
    throw DataError("image and label dims differ for subject " + rec.id);
  return s;
}

std::vector<Subject> load_cohort(const std::filesystem::path& dir, std::optional<std::string> split,
                                 int structure_count) {
  std::vector<Subject> out;
  for (const auto& rec : read_metadata_csv(dir / "metadata.csv"))
    if (!split || rec.split == *split) out.push_back(load_subject(dir, rec, structure_count));
  return out;
}

}  // namespace dg
