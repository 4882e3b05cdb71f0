#include "deepgrading/features.hpp"

#include <cmath>
#include <sstream>

#include "deepgrading/errors.hpp"
#include "deepgrading/table.hpp"

namespace dg {

std::vector<double> structure_grading(const Volume3D& map, const LabelVolume& lab, std::vector<int>* missing) {
  if (!(map.dims() == lab.dims())) throw DataError("grading map and label dims differ");
  const int s = lab.structure_count();
  std::vector<double> sum(static_cast<std::size_t>(s) + 1, 0.0);
  std::vector<std::size_t> n(static_cast<std::size_t>(s) + 1, 0);
  for (std::size_t i = 0; i < map.size(); ++i) {
    const auto l = static_cast<std::size_t>(lab[i]);
    sum[l] += map[i];
    ++n[l];
  }
  std::vector<double> dg(static_cast<std::size_t>(s), 0.0);
  for (int k = 1; k <= s; ++k) {
    if (n[static_cast<std::size_t>(k)] == 0) {
      if (missing) missing->push_back(k);
      continue;
    }
    dg[static_cast<std::size_t>(k - 1)] = sum[static_cast<std::size_t>(k)] / static_cast<double>(n[static_cast<std::size_t>(k)]);
  }
  return dg;
}

std::vector<double> structure_volumes(const LabelVolume& lab) {
  const int s = lab.structure_count();
  std::vector<std::size_t> n(static_cast<std::size_t>(s) + 1, 0);
  for (std::size_t i = 0; i < lab.grid().size(); ++i) ++n[static_cast<std::size_t>(lab[i])];
  std::size_t icc = 0;
  for (int k = 1; k <= s; ++k) icc += n[static_cast<std::size_t>(k)];
  if (icc == 0) throw DataError("structure volumes need a nonempty ICC");
  std::vector<double> v(static_cast<std::size_t>(s));
  for (int k = 1; k <= s; ++k)
    v[static_cast<std::size_t>(k - 1)] = 100.0 * static_cast<double>(n[static_cast<std::size_t>(k)]) / static_cast<double>(icc);
  return v;
}

ChannelSet parse_channels(const std::string& text) {
  ChannelSet c{false, false, false};
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, '+')) {
    if (tok == "DG")
      c.dg = true;
    else if (tok == "V")
      c.v = true;
    else if (tok == "A")
      c.a = true;
    else
      throw ConfigError("unknown feature channel '" + tok + "' (expected DG, V, A)");
  }
  if (c.width() == 0) throw ConfigError("at least one feature channel is required");
  return c;
}

std::string channels_name(const ChannelSet& c) {
  std::string s;
  auto add = [&](bool on, const char* name) {
    if (!on) return;
    if (!s.empty()) s += '+';
    s += name;
  };
  add(c.dg, "DG");
  add(c.v, "V");
  add(c.a, "A");
  return s;
}

namespace {

constexpr double kStdFloor = 1e-8;

void mean_std(const std::vector<double>& xs, double& mean, double& sd) {
  double m = 0.0;
  for (double x : xs) m += x;
  m /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - m) * (x - m);
  var /= static_cast<double>(xs.size());
  mean = m;
  sd = std::max(std::sqrt(var), kStdFloor);
}

}  // namespace

FeatureNormalizer fit_normalizer(std::span<const StructureFeatures> train, ChannelSet channels) {
  if (train.size() < 2) throw DataError("normalizer needs at least 2 training subjects");
  FeatureNormalizer n;
  n.channels = channels;
  auto add = [&](const std::vector<double>& xs) {
    double m, sd;
    mean_std(xs, m, sd);
    n.mean.push_back(m);
    n.stddev.push_back(sd);
  };
  if (channels.dg) {
    std::vector<double> xs;
    for (const auto& f : train) xs.insert(xs.end(), f.dg.begin(), f.dg.end());
    add(xs);
  }
  if (channels.v) {
    std::vector<double> xs;
    for (const auto& f : train) xs.insert(xs.end(), f.v.begin(), f.v.end());
    add(xs);
  }
  if (channels.a) {
    std::vector<double> xs;
    for (const auto& f : train) xs.push_back(f.age);
    add(xs);
  }
  return n;
}

Eigen::MatrixXf node_features(const FeatureNormalizer& norm, const StructureFeatures& f) {
  const int s = f.structure_count();
  Eigen::MatrixXf x(s, norm.channels.width());
  int col = 0;
  auto z = [&](double v) { return static_cast<float>((v - norm.mean[static_cast<std::size_t>(col)]) / norm.stddev[static_cast<std::size_t>(col)]); };
  if (norm.channels.dg) {
    for (int i = 0; i < s; ++i) x(i, col) = z(f.dg[static_cast<std::size_t>(i)]);
    ++col;
  }
  if (norm.channels.v) {
    if (static_cast<int>(f.v.size()) != s) throw DataError("DG and V lengths differ");
    for (int i = 0; i < s; ++i) x(i, col) = z(f.v[static_cast<std::size_t>(i)]);
    ++col;
  }
  if (norm.channels.a) {
    for (int i = 0; i < s; ++i) x(i, col) = z(f.age);
    ++col;
  }
  return x;
}

void write_features_csv(const std::filesystem::path& path, std::span<const StructureFeatures> rows) {
  if (rows.empty()) throw DataError("no feature rows to write");
  const int s = rows.front().structure_count();
  CsvTable t;
  t.header = {"subject_id", "label", "age"};
  for (int k = 1; k <= s; ++k) t.header.push_back("DG_" + std::to_string(k));
  for (int k = 1; k <= s; ++k) t.header.push_back("V_" + std::to_string(k));
  for (const auto& f : rows) {
    if (f.structure_count() != s || static_cast<int>(f.v.size()) != s)
      throw DataError("structure count differs across subjects");
    std::vector<std::string> r = {f.id, std::string(diagnosis_name(f.label)), format_double(f.age)};
    for (double x : f.dg) r.push_back(format_double(x));
    for (double x : f.v) r.push_back(format_double(x));
    t.rows.push_back(std::move(r));
  }
  write_csv(path, t);
}

std::vector<StructureFeatures> read_features_csv(const std::filesystem::path& path) {
  const CsvTable t = read_csv(path);
  const std::size_t id = t.column("subject_id"), label = t.column("label"), age = t.column("age");
  int s = 0;
  while (true) {
    bool found = false;
    for (const auto& h : t.header) found |= h == "DG_" + std::to_string(s + 1);
    if (!found) break;
    ++s;
  }
  if (s == 0) throw DataError("features CSV has no DG columns");
  std::vector<std::size_t> dg_cols, v_cols;
  for (int k = 1; k <= s; ++k) {
    dg_cols.push_back(t.column("DG_" + std::to_string(k)));
    v_cols.push_back(t.column("V_" + std::to_string(k)));
  }
  std::vector<StructureFeatures> out;
  for (const auto& r : t.rows) {
    StructureFeatures f;
    f.id = r[id];
    f.label = parse_diagnosis(r[label]);
    f.age = parse_double(r[age]);
    for (auto c : dg_cols) f.dg.push_back(parse_double(r[c]));
    for (auto c : v_cols) f.v.push_back(parse_double(r[c]));
    out.push_back(std::move(f));
  }
  return out;
}

}  // namespace dg
