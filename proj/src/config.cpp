#include "deepgrading/config.hpp"

#include <cstdlib>
#include <fstream>

#include "deepgrading/errors.hpp"

namespace dg {

namespace {

nlohmann::json dims_json(Dims3 d) { return {d.x, d.y, d.z}; }

Dims3 parse_dims(const nlohmann::json& j, const char* what) {
  const auto v = j.get<std::vector<int>>();
  if (v.size() != 3) throw ConfigError(std::string(what) + " needs 3 values");
  for (int x : v)
    if (x < 1) throw ConfigError(std::string(what) + " values must be positive");
  return {v[0], v[1], v[2]};
}

void reject_unknown(const nlohmann::json& j, const std::vector<std::string>& keys, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [k, v] : j.items())
    if (std::find(keys.begin(), keys.end(), k) == keys.end())
      throw ConfigError("unknown key '" + k + "' in " + where);
}

}  // namespace

PatchGridSpec RunConfig::grid_spec(Dims3 image_dims) const {
  const Dims3 half{(image_dims.x + 1) / 2, (image_dims.y + 1) / 2, (image_dims.z + 1) / 2};
  for (int a = 0; a < 3; ++a)
    if (grid.patch[a] > half[a])
      throw ConfigError("patch dims exceed the downsampled volume dims");
  return PatchGridSpec(half, grid.patch, grid.k);
}

void to_json(nlohmann::json& j, const RunConfig& c) {
  j = {{"seed", c.seed},
       {"phantom", c.phantom},
       {"grid", {{"patch_dims", dims_json(c.grid.patch)}, {"k", dims_json(c.grid.k)}}},
       {"grader", c.grader},
       {"classifier", c.classifier},
       {"features", {{"channels", channels_name(c.channels)}, {"edge_mode", edge_mode_name(c.edge_mode)}}},
       {"fusion_mode", fusion_mode_name(c.fusion)},
       {"evaluation",
        {{"repetitions", c.repetitions},
         {"validation_fraction", c.validation_fraction},
         {"tta_noise", c.tta_noise},
         {"tta_passes", c.tta_passes}}},
       {"threads", c.threads},
       {"paths", {{"cohort", c.paths.cohort}, {"ensemble", c.paths.ensemble}, {"output", c.paths.output}}}};
}

void from_json(const nlohmann::json& j, RunConfig& out) {
  reject_unknown(j,
                 {"seed", "phantom", "grid", "grader", "classifier", "features", "fusion_mode", "evaluation",
                  "threads", "paths"},
                 "run config");
  try {
    RunConfig c;
    c.seed = j.value("seed", c.seed);
    // Component seeds left out of the JSON come from the root seed.
    nlohmann::json ph = j.value("phantom", nlohmann::json::object());
    if (!ph.contains("seed")) ph["seed"] = derive_seed(c.seed, "phantom");
    c.phantom = ph.get<PhantomConfig>();
    nlohmann::json gr = j.value("grader", nlohmann::json::object());
    if (!gr.contains("seed")) gr["seed"] = derive_seed(c.seed, "grader");
    c.grader = gr.get<TrainConfig>();
    nlohmann::json cl = j.value("classifier", nlohmann::json::object());
    if (!cl.contains("seed")) cl["seed"] = derive_seed(c.seed, "classifier");
    c.classifier = cl.get<ClassifierTrainConfig>();

    if (j.contains("grid")) {
      const auto& g = j.at("grid");
      reject_unknown(g, {"patch_dims", "k"}, "grid");
      if (g.contains("patch_dims")) c.grid.patch = parse_dims(g.at("patch_dims"), "grid.patch_dims");
      if (g.contains("k")) {
        if (g.at("k").is_number_integer()) {
          const int k = g.at("k").get<int>();
          if (k < 1) throw ConfigError("grid.k must be positive");
          c.grid.k = {k, k, k};
        } else {
          c.grid.k = parse_dims(g.at("k"), "grid.k");
        }
      }
    }
    if (j.contains("features")) {
      const auto& f = j.at("features");
      reject_unknown(f, {"channels", "edge_mode"}, "features");
      if (f.contains("channels")) c.channels = parse_channels(f.at("channels").get<std::string>());
      if (f.contains("edge_mode")) c.edge_mode = parse_edge_mode(f.at("edge_mode").get<std::string>());
    }
    if (j.contains("fusion_mode")) c.fusion = parse_fusion_mode(j.at("fusion_mode").get<std::string>());
    if (j.contains("evaluation")) {
      const auto& e = j.at("evaluation");
      reject_unknown(e, {"repetitions", "validation_fraction", "tta_noise", "tta_passes"}, "evaluation");
      c.repetitions = e.value("repetitions", c.repetitions);
      c.validation_fraction = e.value("validation_fraction", c.validation_fraction);
      c.tta_noise = e.value("tta_noise", c.tta_noise);
      c.tta_passes = e.value("tta_passes", c.tta_passes);
    }
    c.threads = j.value("threads", c.threads);
    if (j.contains("paths")) {
      const auto& p = j.at("paths");
      reject_unknown(p, {"cohort", "ensemble", "output"}, "paths");
      c.paths.cohort = p.value("cohort", c.paths.cohort);
      c.paths.ensemble = p.value("ensemble", c.paths.ensemble);
      c.paths.output = p.value("output", c.paths.output);
    }

    if (c.repetitions < 1) throw ConfigError("evaluation.repetitions must be positive");
    if (c.validation_fraction <= 0 || c.validation_fraction >= 1)
      throw ConfigError("evaluation.validation_fraction must lie in (0, 1)");
    if (c.tta_noise < 0 || c.tta_passes < 1) throw ConfigError("invalid test-time augmentation settings");
    if (c.threads < 1) throw ConfigError("threads must be positive");
    for (int a = 0; a < 3; ++a)
      if (c.phantom.dims[a] < 2 * c.grid.patch[a])
        throw ConfigError("phantom dims must be at least twice the patch dims");
    out = std::move(c);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
}

RunConfig default_run_config() { return nlohmann::json::object().get<RunConfig>(); }

RunConfig load_run_config(const std::filesystem::path& path) {
  if (path.empty()) return default_run_config();
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return j.get<RunConfig>();
}

void apply_path_overrides(RunConfig& c) {
  if (const char* v = std::getenv("DG_COHORT_DIR"); v && *v) c.paths.cohort = v;
  if (const char* v = std::getenv("DG_ENSEMBLE_DIR"); v && *v) c.paths.ensemble = v;
  if (const char* v = std::getenv("DG_OUTPUT_DIR"); v && *v) c.paths.output = v;
}

void write_run_config(const std::filesystem::path& path, const RunConfig& c) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << nlohmann::json(c).dump(2) << '\n';
}

}  // namespace dg
