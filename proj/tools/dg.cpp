// dg: command-line driver for the deep grading pipeline.
//
// Every command takes an optional --config JSON file. Paths resolve from the
// config, then DG_COHORT_DIR / DG_ENSEMBLE_DIR / DG_OUTPUT_DIR, then flags.
// The resolved config is written next to the command's outputs.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "deepgrading/config.hpp"
#include "deepgrading/errors.hpp"
#include "deepgrading/metrics.hpp"
#include "deepgrading/nifti.hpp"
#include "deepgrading/phantom.hpp"
#include "deepgrading/pipeline.hpp"
#include "deepgrading/table.hpp"

namespace fs = std::filesystem;
using namespace dg;

namespace {

struct Common {
  std::string config;
};

RunConfig resolve(const Common& c) {
  RunConfig cfg = load_run_config(c.config);
  apply_path_overrides(cfg);
  return cfg;
}

void write_resolved(const fs::path& dir, const std::string& command, const RunConfig& cfg) {
  write_run_config(dir / (command + ".config.json"), cfg);
}

fs::path manifest_file(const fs::path& p) { return fs::is_directory(p) ? p / "manifest.json" : p; }

void print_age_summary(const std::vector<SubjectRecord>& plan) {
  std::map<std::string, std::map<Diagnosis, std::vector<double>>> ages;
  std::vector<std::string> splits;
  for (const auto& r : plan) {
    if (!ages.count(r.split)) splits.push_back(r.split);
    ages[r.split][r.label].push_back(r.age);
  }
  std::printf("%-12s %-6s %5s %14s %10s\n", "split", "class", "n", "age mean (sd)", "t-test p");
  for (const auto& split : splits) {
    std::vector<const std::vector<double>*> groups;
    for (const auto& [cls, a] : ages[split]) {
      double m = 0.0, v = 0.0;
      for (double x : a) m += x;
      m /= static_cast<double>(a.size());
      for (double x : a) v += (x - m) * (x - m);
      const double sd = a.size() > 1 ? std::sqrt(v / static_cast<double>(a.size() - 1)) : 0.0;
      std::printf("%-12s %-6s %5zu %7.1f (%4.1f)\n", split.c_str(), std::string(diagnosis_name(cls)).c_str(), a.size(), m, sd);
      groups.push_back(&a);
    }
    if (groups.size() == 2 && groups[0]->size() >= 2 && groups[1]->size() >= 2)
      std::printf("%-12s %-6s %5s %14s %10.3f\n", split.c_str(), "", "", "", welch_ttest(*groups[0], *groups[1]));
  }
}

int cmd_phantom_gen(const Common& c, const std::optional<std::string>& out, std::optional<std::uint64_t> seed,
                    bool null_signal, std::optional<int> progressors) {
  RunConfig cfg = resolve(c);
  if (out) cfg.paths.cohort = *out;
  if (seed) cfg.phantom.seed = *seed;
  if (null_signal) cfg.phantom.null_signal = true;
  if (progressors) cfg.phantom.progressor_per_class = *progressors;
  cfg.phantom.validate();
  const fs::path dir = cfg.paths.cohort;
  const auto plan = generate_cohort(cfg.phantom, dir);
  write_resolved(dir, "phantom-gen", cfg);
  print_age_summary(plan);
  std::printf("%zu subjects written to %s\ncohort hash %s\n", plan.size(), dir.string().c_str(), hex64(hash_tree(dir)).c_str());
  return 0;
}

int cmd_train_ensemble(const Common& c, const std::optional<std::string>& cohort, const std::optional<std::string>& out,
                       bool resume, std::optional<int> threads) {
  RunConfig cfg = resolve(c);
  if (cohort) cfg.paths.cohort = *cohort;
  if (out) cfg.paths.ensemble = *out;
  if (threads) cfg.threads = *threads;
  if (cfg.threads < 1) throw ConfigError("threads must be positive");
  const fs::path dir = cfg.paths.ensemble;
  if (fs::exists(dir / "manifest.json") && !resume)
    throw ConfigError(dir.string() + " already holds a manifest; pass --resume to continue it");

  const auto subjects = load_cohort(cfg.paths.cohort, "train", cfg.phantom.structures);
  if (subjects.empty()) throw DataError("cohort has no training subjects");
  const PatchGridSpec spec = cfg.grid_spec(subjects.front().image.dims());
  EnsembleTrainOptions opts;
  opts.fusion = cfg.fusion;
  opts.threads = cfg.threads;
  opts.out_dir = dir;
  opts.on_patch_done = [&](const GradingModel& m) {
    std::fprintf(stderr, "patch %3d/%d alpha %.3f epochs %d val_loss %.4f\n", m.patch_index + 1, spec.count(), m.alpha,
                 m.epochs, m.best_val_loss);
  };
  const Ensemble ens = train_ensemble(make_grading_cohort(subjects), spec, cfg.grader, opts);
  write_resolved(dir, "train-ensemble", cfg);
  std::printf("%d models in %s\n", static_cast<int>(ens.models.size()), (dir / "manifest.json").string().c_str());
  return 0;
}

std::vector<std::string> cohort_splits(const std::vector<SubjectRecord>& rows) {
  std::vector<std::string> out;
  for (const auto& r : rows)
    if (std::find(out.begin(), out.end(), r.split) == out.end()) out.push_back(r.split);
  return out;
}

int cmd_grade(const Common& c, const std::optional<std::string>& ensemble, const std::optional<std::string>& cohort,
              const std::optional<std::string>& out, std::vector<std::string> splits,
              const std::optional<std::string>& fusion, bool no_maps, std::optional<int> threads) {
  RunConfig cfg = resolve(c);
  if (ensemble) cfg.paths.ensemble = *ensemble;
  if (cohort) cfg.paths.cohort = *cohort;
  if (out) cfg.paths.output = *out;
  if (fusion) cfg.fusion = parse_fusion_mode(*fusion);
  if (threads) cfg.threads = *threads;
  const Ensemble ens = load_ensemble(manifest_file(cfg.paths.ensemble));
  if (splits.empty()) splits = cohort_splits(read_metadata_csv(fs::path(cfg.paths.cohort) / "metadata.csv"));
  const fs::path dir = cfg.paths.output;
  fs::create_directories(dir);
  if (!no_maps) fs::create_directories(dir / "maps");
  for (const auto& split : splits) {
    const auto subjects = load_cohort(cfg.paths.cohort, split, cfg.phantom.structures);
    if (subjects.empty()) throw DataError("cohort has no subjects in split '" + split + "'");
    std::vector<Volume3D> maps;
    const auto rows = cohort_features(ens, subjects, cfg.fusion, cfg.threads, no_maps ? nullptr : &maps);
    write_features_csv(dir / ("features_" + split + ".csv"), rows);
    if (!no_maps)
      for (std::size_t i = 0; i < rows.size(); ++i) write_nifti(dir / "maps" / (rows[i].id + ".nii"), maps[i]);
    std::printf("%-12s %zu subjects graded\n", split.c_str(), rows.size());
  }
  write_resolved(dir, "grade", cfg);
  return 0;
}

ClassifierSpec classifier_spec(const RunConfig& cfg) {
  return {cfg.channels, cfg.edge_mode, cfg.classifier, cfg.validation_fraction};
}

int cmd_train_classifier(const Common& c, const std::string& features, const std::optional<std::string>& out) {
  RunConfig cfg = resolve(c);
  const fs::path path = out ? fs::path(*out) : fs::path(cfg.paths.output) / "classifier.dgck";
  const auto rows = read_features_csv(features);
  const TrainedClassifier tc = fit_classifier(rows, classifier_spec(cfg));
  save_classifier(path, tc);
  write_resolved(path.has_parent_path() ? path.parent_path() : fs::path("."), "train-classifier", cfg);
  std::printf("classifier %s: %d epochs, best validation BCE %.4f\n", path.string().c_str(), tc.epochs, tc.best_val_loss);
  return 0;
}

std::string test_set_name(const fs::path& csv) {
  std::string stem = csv.stem().string();
  const std::string prefix = "features_";
  return stem.rfind(prefix, 0) == 0 ? stem.substr(prefix.size()) : stem;
}

int cmd_evaluate(const Common& c, const std::optional<std::string>& train, const std::vector<std::string>& tests,
                 const std::optional<std::string>& classifier, const std::optional<std::string>& out,
                 const std::optional<std::string>& baseline, const std::string& metric,
                 std::optional<int> repetitions) {
  RunConfig cfg = resolve(c);
  if (out) cfg.paths.output = *out;
  if (repetitions) cfg.repetitions = *repetitions;
  if (cfg.repetitions < 1) throw ConfigError("repetitions must be positive");
  if (metric != "bacc" && metric != "auc") throw ConfigError("--metric must be bacc or auc");
  std::vector<TestSet> sets;
  for (const auto& t : tests) sets.push_back({test_set_name(t), read_features_csv(t)});

  EvalReport report;
  if (classifier) {
    report = evaluate_classifier(load_classifier(*classifier), sets, derive_seed(cfg.classifier.seed, "tta"),
                                 cfg.tta_noise, cfg.tta_passes);
  } else {
    if (!train) throw ConfigError("evaluate needs --train features unless --classifier is given");
    const auto rows = read_features_csv(*train);
    report = evaluate_repetitions(rows, sets, {classifier_spec(cfg), cfg.repetitions, cfg.tta_noise, cfg.tta_passes});
  }
  const fs::path dir = cfg.paths.output;
  write_eval_report(dir, report);
  std::printf("%-18s %8s %8s\n", "dataset", "BACC", "AUC");
  for (const auto& d : report.datasets) std::printf("%-18s %8.4f %8.4f\n", d.name.c_str(), d.mean_bacc(), d.mean_auc());

  if (baseline) {
    const auto cmp = compare_reports(report, read_eval_report(*baseline), metric);
    CsvTable t{{"dataset", "metric", "mean_candidate", "mean_baseline", "p_value", "all_equal"}, {}};
    std::printf("one-sided Wilcoxon vs %s (%s)\n", baseline->c_str(), metric.c_str());
    for (const auto& r : cmp) {
      t.rows.push_back({r.dataset, metric, format_double(r.mean_candidate), format_double(r.mean_baseline),
                        format_double(r.p_value), r.all_equal ? "1" : "0"});
      std::printf("%-18s %8.4f %8.4f p=%.4g%s\n", r.dataset.c_str(), r.mean_candidate, r.mean_baseline, r.p_value,
                  r.all_equal ? " (identical values)" : "");
    }
    write_csv(dir / "wilcoxon.csv", t);
  }
  write_resolved(dir, "evaluate", cfg);
  return 0;
}

int cmd_consistency(const Common& c, const std::string& a, const std::string& b, const std::optional<std::string>& cohort,
                    const std::string& split, const std::optional<std::string>& out) {
  RunConfig cfg = resolve(c);
  if (cohort) cfg.paths.cohort = *cohort;
  if (out) cfg.paths.output = *out;
  const Ensemble ea = load_ensemble(manifest_file(a));
  const Ensemble eb = load_ensemble(manifest_file(b));
  const auto subjects = load_cohort(cfg.paths.cohort, split, cfg.phantom.structures);
  if (subjects.empty()) throw DataError("cohort has no subjects in split '" + split + "'");
  const auto fa = cohort_features(ea, subjects, cfg.fusion, cfg.threads);
  const auto fb = cohort_features(eb, subjects, cfg.fusion, cfg.threads);
  std::vector<std::vector<double>> da, db;
  nlohmann::json per = nlohmann::json::array();
  for (std::size_t i = 0; i < fa.size(); ++i) {
    da.push_back(fa[i].dg);
    db.push_back(fb[i].dg);
    per.push_back({{"subject", fa[i].id}, {"cosine", cosine_similarity(fa[i].dg, fb[i].dg)}});
  }
  const double med = consistency_median(da, db);
  const fs::path dir = cfg.paths.output;
  fs::create_directories(dir);
  std::ofstream js(dir / "consistency.json");
  if (!js) throw DataError("cannot write consistency.json");
  js << nlohmann::json{{"median_cosine", med}, {"split", split}, {"subjects", per}}.dump(2) << '\n';
  write_resolved(dir, "consistency", cfg);
  std::printf("median cosine similarity %.6f over %zu subjects\n", med, fa.size());
  return 0;
}

int cmd_report(const Common& c, const std::optional<std::string>& maps_dir, const std::string& features,
               const std::optional<std::string>& out, const std::vector<int>& slices) {
  RunConfig cfg = resolve(c);
  if (out) cfg.paths.output = *out;
  const fs::path maps_root = maps_dir ? fs::path(*maps_dir) : fs::path(cfg.paths.output) / "maps";
  const auto rows = read_features_csv(features);
  std::vector<Volume3D> maps;
  for (const auto& r : rows) maps.push_back(read_nifti(maps_root / (r.id + ".nii")));
  const fs::path dir = fs::path(cfg.paths.output) / "report";
  write_report(dir, maps, rows, {slices, 10, 25});
  write_resolved(dir, "report", cfg);
  std::printf("report written to %s\n", dir.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deep grading pipeline: patch-ensemble grading, structure features and GCN classification"};
  app.require_subcommand(1);
  Common common;
  auto add_config = [&](CLI::App* s) { s->add_option("--config", common.config, "Run config JSON"); };

  std::optional<std::string> out, cohort, ensemble, classifier, baseline, train, maps_dir, fusion;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads, progressors, repetitions;
  bool null_signal = false, resume = false, no_maps = false;
  std::vector<std::string> splits, tests;
  std::vector<int> slices;
  std::string features, metric = "bacc", ens_a, ens_b, split = "test";

  auto* gen = app.add_subcommand("phantom-gen", "Generate a synthetic phantom cohort");
  add_config(gen);
  gen->add_option("--out", out, "Cohort directory");
  gen->add_option("--seed", seed, "Phantom seed");
  gen->add_flag("--null-signal", null_signal, "AD subjects drawn from the CN model");
  gen->add_option("--progressors", progressors, "sMCI/pMCI analog subjects per class");

  auto* te = app.add_subcommand("train-ensemble", "Train one grading model per patch location");
  add_config(te);
  te->add_option("--cohort", cohort, "Cohort directory");
  te->add_option("--out", out, "Ensemble directory");
  te->add_flag("--resume", resume, "Keep finished patches of an existing manifest");
  te->add_option("--threads", threads, "Worker threads");

  auto* gr = app.add_subcommand("grade", "Grade cohort subjects and write structure features");
  add_config(gr);
  gr->add_option("--ensemble", ensemble, "Ensemble directory or manifest.json");
  gr->add_option("--cohort", cohort, "Cohort directory");
  gr->add_option("--out", out, "Output directory");
  gr->add_option("--split", splits, "Cohort split to grade (repeatable; default all)");
  gr->add_option("--fusion", fusion, "weighted or unweighted");
  gr->add_flag("--no-maps", no_maps, "Skip writing grading maps");
  gr->add_option("--threads", threads, "Worker threads");

  auto* tc = app.add_subcommand("train-classifier", "Train the GCN classifier on a features CSV");
  add_config(tc);
  tc->add_option("--features", features, "Training features CSV")->required();
  tc->add_option("--out", out, "Checkpoint path");

  auto* ev = app.add_subcommand("evaluate", "Repeated classifier evaluation with optional Wilcoxon comparison");
  add_config(ev);
  ev->add_option("--train", train, "Training features CSV");
  ev->add_option("--test", tests, "Test features CSV (repeatable)")->required();
  ev->add_option("--classifier", classifier, "Score this checkpoint instead of retraining");
  ev->add_option("--out", out, "Output directory");
  ev->add_option("--baseline", baseline, "Baseline report.json for the one-sided Wilcoxon test");
  ev->add_option("--metric", metric, "bacc or auc");
  ev->add_option("--repetitions", repetitions, "Classifier retrainings");

  auto* co = app.add_subcommand("consistency", "Median cosine similarity of DG vectors from two ensembles");
  add_config(co);
  co->add_option("--ensemble-a", ens_a, "First ensemble")->required();
  co->add_option("--ensemble-b", ens_b, "Second ensemble")->required();
  co->add_option("--cohort", cohort, "Cohort directory");
  co->add_option("--split", split, "Cohort split");
  co->add_option("--out", out, "Output directory");

  auto* rp = app.add_subcommand("report", "Group maps, slice images and ranking tables");
  add_config(rp);
  rp->add_option("--features", features, "Features CSV")->required();
  rp->add_option("--maps", maps_dir, "Directory of <id>.nii grading maps");
  rp->add_option("--out", out, "Output directory");
  rp->add_option("--slices", slices, "Axial slice indices");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*gen) return cmd_phantom_gen(common, out, seed, null_signal, progressors);
    if (*te) return cmd_train_ensemble(common, cohort, out, resume, threads);
    if (*gr) return cmd_grade(common, ensemble, cohort, out, splits, fusion, no_maps, threads);
    if (*tc) return cmd_train_classifier(common, features, out);
    if (*ev) return cmd_evaluate(common, train, tests, classifier, out, baseline, metric, repetitions);
    if (*co) return cmd_consistency(common, ens_a, ens_b, cohort, split, out);
    if (*rp) return cmd_report(common, maps_dir, features, out, slices);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return 4;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    // I/O failures from the standard library count as data errors.
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  }
  return 2;
}
