#include "deepgrading/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <numeric>
#include <thread>

#include "deepgrading/errors.hpp"
#include "deepgrading/nifti.hpp"
#include "deepgrading/table.hpp"

namespace dg {

GradingCohort make_grading_cohort(std::span<const Subject> subjects) {
  GradingCohort c;
  for (const auto& s : subjects)
    if (s.meta.label == Diagnosis::AD || s.meta.label == Diagnosis::CN) c.add(s.image, s.labels, s.meta.label);
  return c;
}

StructureFeatures subject_features(const Ensemble& ens, const Subject& s, FusionMode mode, Volume3D* map) {
  Volume3D g = grade_subject(ens, s.image, s.labels, mode);
  StructureFeatures f;
  f.id = s.meta.id;
  f.label = s.meta.label;
  f.age = s.meta.age;
  f.dg = structure_grading(g, s.labels);
  f.v = structure_volumes(s.labels);
  if (map) *map = std::move(g);
  return f;
}

std::vector<StructureFeatures> cohort_features(const Ensemble& ens, std::span<const Subject> subjects,
                                               FusionMode mode, int threads, std::vector<Volume3D>* maps) {
  const std::size_t n = subjects.size();
  std::vector<StructureFeatures> out(n);
  if (maps) maps->assign(n, Volume3D{});
  const auto workers = static_cast<std::size_t>(std::clamp<int>(threads, 1, static_cast<int>(std::max<std::size_t>(n, 1))));
  std::vector<std::exception_ptr> errors(workers);
  // Worker w grades subjects w, w + workers, ...; each result lands in its own slot.
  auto work = [&](std::size_t w) {
    try {
      for (std::size_t i = w; i < n; i += workers)
        out[i] = subject_features(ens, subjects[i], mode, maps ? &(*maps)[i] : nullptr);
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

SubjectGraph TrainedClassifier::graph(const StructureFeatures& f) const {
  return build_graph(f, norm, edge_mode, edge_mode == EdgeMode::Correlation ? &correlation : nullptr);
}

namespace {

LabeledGraphs to_graphs(const TrainedClassifier& c, std::span<const StructureFeatures> rows) {
  LabeledGraphs d;
  for (const auto& f : rows) {
    d.graphs.push_back(c.graph(f));
    d.labels.push_back(positive_class(f.label));
  }
  return d;
}

std::vector<StructureFeatures> pick(std::span<const StructureFeatures> rows, const std::vector<std::size_t>& a,
                                    const std::vector<std::size_t>& b) {
  std::vector<StructureFeatures> out;
  for (std::size_t i : a) out.push_back(rows[i]);
  for (std::size_t i : b) out.push_back(rows[i]);
  return out;
}

}  // namespace

TrainedClassifier fit_classifier(std::span<const StructureFeatures> train, const ClassifierSpec& spec) {
  // balanced_split works on AD/CN; positives are mapped onto AD.
  std::vector<Diagnosis> classes;
  for (const auto& f : train) classes.push_back(positive_class(f.label) ? Diagnosis::AD : Diagnosis::CN);
  Rng split_rng(derive_seed(spec.train.seed, "classifier-split"));
  const BalancedSplit split = balanced_split(classes, spec.validation_fraction, split_rng);
  const auto tr = pick(train, split.train_ad, split.train_cn);
  const auto va = pick(train, split.val_ad, split.val_cn);

  TrainedClassifier c;
  c.edge_mode = spec.edge_mode;
  c.norm = fit_normalizer(tr, spec.channels);
  if (spec.edge_mode == EdgeMode::Correlation) c.correlation = edges_correlation(dg_matrix(tr));
  ClassifierTrainResult r = train_classifier(to_graphs(c, tr), to_graphs(c, va), spec.train);
  c.model = std::move(r.model);
  c.epochs = r.epochs;
  c.best_val_loss = r.best_val_loss;
  return c;
}

std::vector<double> predict_probabilities(const TrainedClassifier& c, std::span<const StructureFeatures> rows,
                                          Rng& rng, double noise_std, int passes) {
  std::vector<double> p;
  p.reserve(rows.size());
  for (const auto& f : rows) p.push_back(predict_tta(c.model, c.graph(f), rng, noise_std, passes));
  return p;
}

void save_classifier(const std::filesystem::path& path, const TrainedClassifier& c) {
  nlohmann::json corr = nlohmann::json::array();
  for (Eigen::Index i = 0; i < c.correlation.rows(); ++i) {
    std::vector<double> row(static_cast<std::size_t>(c.correlation.cols()));
    for (Eigen::Index k = 0; k < c.correlation.cols(); ++k) row[static_cast<std::size_t>(k)] = c.correlation(i, k);
    corr.push_back(row);
  }
  const nlohmann::json meta = {{"channels", channels_name(c.norm.channels)},
                               {"edge_mode", edge_mode_name(c.edge_mode)},
                               {"normalizer", {{"mean", c.norm.mean}, {"stddev", c.norm.stddev}}},
                               {"correlation", corr},
                               {"epochs", c.epochs},
                               {"best_val_loss", c.best_val_loss}};
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  save_gcn(path, c.model, meta);
}

TrainedClassifier load_classifier(const std::filesystem::path& path) {
  nlohmann::json meta;
  TrainedClassifier c;
  c.model = load_gcn(path, &meta);
  try {
    c.norm.channels = parse_channels(meta.at("channels").get<std::string>());
    c.edge_mode = parse_edge_mode(meta.at("edge_mode").get<std::string>());
    c.norm.mean = meta.at("normalizer").at("mean").get<std::vector<double>>();
    c.norm.stddev = meta.at("normalizer").at("stddev").get<std::vector<double>>();
    const auto corr = meta.at("correlation").get<std::vector<std::vector<double>>>();
    c.correlation.resize(static_cast<Eigen::Index>(corr.size()), static_cast<Eigen::Index>(corr.size()));
    for (std::size_t i = 0; i < corr.size(); ++i) {
      if (corr[i].size() != corr.size()) throw DataError("correlation matrix is not square");
      for (std::size_t k = 0; k < corr.size(); ++k)
        c.correlation(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = corr[i][k];
    }
    c.epochs = meta.at("epochs").get<int>();
    c.best_val_loss = meta.at("best_val_loss").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError("classifier checkpoint " + path.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw DataError(e.what());
  }
  const auto w = static_cast<std::size_t>(c.norm.channels.width());
  if (c.norm.mean.size() != w || c.norm.stddev.size() != w || c.model.in_features() != c.norm.channels.width())
    throw DataError("classifier checkpoint channels disagree with the model width");
  if (c.edge_mode == EdgeMode::Correlation && c.correlation.size() == 0)
    throw DataError("correlation classifier stored without its edge matrix");
  return c;
}

double DatasetScores::mean_bacc() const { return bacc.empty() ? 0.0 : std::accumulate(bacc.begin(), bacc.end(), 0.0) / static_cast<double>(bacc.size()); }

double DatasetScores::mean_auc() const { return auc.empty() ? 0.0 : std::accumulate(auc.begin(), auc.end(), 0.0) / static_cast<double>(auc.size()); }

const std::vector<double>& DatasetScores::metric(const std::string& m) const {
  if (m == "bacc") return bacc;
  if (m == "auc") return auc;
  throw ConfigError("unknown metric '" + m + "' (expected bacc or auc)");
}

const DatasetScores* EvalReport::find(const std::string& name) const {
  for (const auto& d : datasets)
    if (d.name == name) return &d;
  return nullptr;
}

void to_json(nlohmann::json& j, const EvalReport& r) {
  j = {{"repetitions", r.repetitions}, {"datasets", nlohmann::json::array()}};
  for (const auto& d : r.datasets)
    j["datasets"].push_back({{"name", d.name},
                             {"bacc", d.bacc},
                             {"auc", d.auc},
                             {"mean_bacc", d.mean_bacc()},
                             {"mean_auc", d.mean_auc()}});
}

void from_json(const nlohmann::json& j, EvalReport& r) {
  r.repetitions = j.at("repetitions").get<int>();
  r.datasets.clear();
  for (const auto& d : j.at("datasets")) {
    DatasetScores s;
    s.name = d.at("name").get<std::string>();
    s.bacc = d.at("bacc").get<std::vector<double>>();
    s.auc = d.at("auc").get<std::vector<double>>();
    if (static_cast<int>(s.bacc.size()) != r.repetitions || static_cast<int>(s.auc.size()) != r.repetitions)
      throw DataError("report dataset '" + s.name + "' does not hold one value per repetition");
    r.datasets.push_back(std::move(s));
  }
}

namespace {

bool is_prognosis(Diagnosis d) { return d == Diagnosis::sMCI || d == Diagnosis::pMCI; }

struct Scored {
  std::vector<int> labels;
  std::vector<double> probs;

  void add(int y, double p) {
    labels.push_back(y);
    probs.push_back(p);
  }
};

void score_into(DatasetScores& d, const Scored& s) {
  std::vector<int> pred;
  for (double p : s.probs) pred.push_back(p > 0.5 ? 1 : 0);
  d.bacc.push_back(bacc(s.labels, pred));
  d.auc.push_back(auc(s.labels, s.probs));
}

// Appends one repetition to `report`, whose dataset list is created on the first call.
void score_repetition(EvalReport& report, const TrainedClassifier& c, std::span<const TestSet> tests,
                      std::uint64_t rep_seed, double noise, int passes) {
  Scored global[2];
  std::vector<Scored> per(tests.size());
  for (std::size_t t = 0; t < tests.size(); ++t) {
    Rng rng(derive_seed(rep_seed, "tta", t));
    const auto probs = predict_probabilities(c, tests[t].rows, rng, noise, passes);
    for (std::size_t i = 0; i < probs.size(); ++i) {
      const StructureFeatures& f = tests[t].rows[i];
      per[t].add(positive_class(f.label), probs[i]);
      global[is_prognosis(f.label)].add(positive_class(f.label), probs[i]);
    }
  }
  if (report.datasets.empty()) {
    for (const auto& t : tests) report.datasets.push_back({t.name, {}, {}});
    if (!global[0].labels.empty()) report.datasets.push_back({"global_diagnosis", {}, {}});
    if (!global[1].labels.empty()) report.datasets.push_back({"global_prognosis", {}, {}});
  }
  std::size_t k = 0;
  for (; k < tests.size(); ++k) score_into(report.datasets[k], per[k]);
  if (!global[0].labels.empty()) score_into(report.datasets[k++], global[0]);
  if (!global[1].labels.empty()) score_into(report.datasets[k++], global[1]);
  ++report.repetitions;
}

}  // namespace

EvalReport evaluate_repetitions(std::span<const StructureFeatures> train, std::span<const TestSet> tests,
                                const EvalOptions& opts) {
  if (opts.repetitions < 1) throw ConfigError("at least one repetition is required");
  if (tests.empty()) throw DataError("evaluation needs at least one test set");
  EvalReport report;
  for (int r = 0; r < opts.repetitions; ++r) {
    ClassifierSpec spec = opts.classifier;
    spec.train.seed = derive_seed(opts.classifier.train.seed, "repetition", static_cast<std::uint64_t>(r));
    const TrainedClassifier c = fit_classifier(train, spec);
    score_repetition(report, c, tests, spec.train.seed, opts.tta_noise, opts.tta_passes);
  }
  return report;
}

EvalReport evaluate_classifier(const TrainedClassifier& c, std::span<const TestSet> tests, std::uint64_t seed,
                               double tta_noise, int tta_passes) {
  if (tests.empty()) throw DataError("evaluation needs at least one test set");
  EvalReport report;
  score_repetition(report, c, tests, seed, tta_noise, tta_passes);
  return report;
}

void write_eval_report(const std::filesystem::path& dir, const EvalReport& r) {
  std::filesystem::create_directories(dir);
  std::ofstream js(dir / "report.json");
  if (!js) throw DataError("cannot write " + (dir / "report.json").string());
  js << nlohmann::json(r).dump(2) << '\n';
  CsvTable t{{"dataset", "repetition", "bacc", "auc"}, {}};
  for (const auto& d : r.datasets)
    for (std::size_t i = 0; i < d.bacc.size(); ++i)
      t.rows.push_back({d.name, std::to_string(i), format_double(d.bacc[i]), format_double(d.auc[i])});
  write_csv(dir / "report.csv", t);
}

EvalReport read_eval_report(const std::filesystem::path& json_path) {
  std::ifstream in(json_path);
  if (!in) throw DataError("cannot open report " + json_path.string());
  try {
    return nlohmann::json::parse(in).get<EvalReport>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError("report " + json_path.string() + ": " + e.what());
  }
}

std::vector<WilcoxonComparison> compare_reports(const EvalReport& candidate, const EvalReport& baseline,
                                                const std::string& metric) {
  std::vector<WilcoxonComparison> out;
  for (const auto& d : candidate.datasets) {
    const DatasetScores* b = baseline.find(d.name);
    if (!b) continue;
    const auto& x = d.metric(metric);
    const auto& y = b->metric(metric);
    if (x.size() != y.size()) throw DataError("reports differ in repetition count for '" + d.name + "'");
    WilcoxonComparison c;
    c.dataset = d.name;
    c.mean_candidate = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
    c.mean_baseline = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
    c.all_equal = x == y;
    c.p_value = c.all_equal ? 1.0 : wilcoxon_one_sided(x, y);
    out.push_back(c);
  }
  return out;
}

void write_slice_pgm(const std::filesystem::path& path, const Volume3D& map, int z) {
  const Dims3 d = map.dims();
  if (z < 0 || z >= d.z) throw DataError("slice index outside the volume");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "P5\n" << d.x << ' ' << d.y << "\n255\n";
  std::vector<unsigned char> px(static_cast<std::size_t>(d.x) * static_cast<std::size_t>(d.y));
  for (int y = 0; y < d.y; ++y)
    for (int x = 0; x < d.x; ++x) {
      const double v = std::clamp(static_cast<double>(map(x, y, z)), -1.0, 1.0);
      px[static_cast<std::size_t>(y) * static_cast<std::size_t>(d.x) + static_cast<std::size_t>(x)] =
          static_cast<unsigned char>(std::lround((v + 1.0) * 127.5));
    }
  out.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
}

void write_report(const std::filesystem::path& dir, std::span<const Volume3D> maps,
                  std::span<const StructureFeatures> features, const ReportOptions& opts) {
  if (maps.size() != features.size()) throw DataError("report needs one map per feature row");
  if (features.empty()) throw DataError("report of an empty cohort");
  std::filesystem::create_directories(dir);

  for (Diagnosis d : {Diagnosis::CN, Diagnosis::AD, Diagnosis::sMCI, Diagnosis::pMCI}) {
    std::vector<Volume3D> group;
    for (std::size_t i = 0; i < features.size(); ++i)
      if (features[i].label == d) group.push_back(maps[i]);
    if (group.empty()) continue;
    const Volume3D mean = group_average_map(group);
    const std::string name(diagnosis_name(d));
    write_nifti(dir / ("mean_map_" + name + ".nii"), mean);
    std::vector<int> slices = opts.slices;
    if (slices.empty()) slices.push_back(mean.dims().z / 2);
    for (int z : slices) write_slice_pgm(dir / "slices" / ("mean_map_" + name + "_z" + std::to_string(z) + ".pgm"), mean, z);
  }

  std::vector<std::vector<double>> dg;
  for (const auto& f : features) dg.push_back(f.dg);
  const auto top = top_structures(dg, opts.top_k);
  CsvTable ts{{"rank", "structure", "mean_abs_dg"}, {}};
  for (std::size_t r = 0; r < top.size(); ++r) {
    double m = 0.0;
    for (const auto& v : dg) m += std::abs(v[static_cast<std::size_t>(top[r] - 1)]);
    ts.rows.push_back({std::to_string(r + 1), std::to_string(top[r]), format_double(m / static_cast<double>(dg.size()))});
  }
  write_csv(dir / "top_structures.csv", ts);

  std::vector<Eigen::MatrixXd> adj;
  std::vector<int> labels;
  for (const auto& f : features) {
    adj.push_back(edges_volume_diff(f.v));
    labels.push_back(positive_class(f.label));
  }
  const AdjacencyAnalysis an = adjacency_group_analysis(adj, labels, opts.top_pairs);
  CsvTable tp{{"rank", "structure_a", "structure_b", "difference"}, {}};
  for (std::size_t r = 0; r < an.top_pairs.size(); ++r)
    tp.rows.push_back({std::to_string(r + 1), std::to_string(an.top_pairs[r].a), std::to_string(an.top_pairs[r].b),
                       format_double(an.top_pairs[r].difference)});
  write_csv(dir / "top_pairs.csv", tp);
  write_matrix_csv(dir / "adjacency_negative.csv", normalize_unit_range(an.mean_negative));
  write_matrix_csv(dir / "adjacency_positive.csv", normalize_unit_range(an.mean_positive));
  write_matrix_csv(dir / "adjacency_difference.csv", normalize_unit_range(an.difference));
}

}  // namespace dg
