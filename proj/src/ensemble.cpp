#include "deepgrading/ensemble.hpp"

#include <algorithm>
#include <condition_variable>
#include <cstdio>
#include <deque>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <thread>

#include "deepgrading/errors.hpp"

namespace dg {

std::string_view fusion_mode_name(FusionMode m) { return m == FusionMode::Weighted ? "weighted" : "unweighted"; }

FusionMode parse_fusion_mode(std::string_view s) {
  if (s == "weighted") return FusionMode::Weighted;
  if (s == "unweighted") return FusionMode::Unweighted;
  throw ConfigError("unknown fusion mode '" + std::string(s) + "'");
}

std::vector<OrderStep> training_order(const PatchGridSpec& spec) {
  std::vector<OrderStep> order;
  for (int j = 0; j < spec.count(); ++j) {
    OrderStep step{j, std::nullopt};
    const Index3 g = spec.grid_coord(j);
    long best = -1;
    for (const OrderStep& prev : order) {
      const Index3 h = spec.grid_coord(prev.patch);
      const long d2 = long(g.x - h.x) * (g.x - h.x) + long(g.y - h.y) * (g.y - h.y) + long(g.z - h.z) * (g.z - h.z);
      // scheduled patches are visited in ascending index, so strict < keeps the lower index on ties
      if (best < 0 || d2 < best) {
        best = d2;
        step.parent = prev.patch;
      }
    }
    order.push_back(step);
  }
  return order;
}

Volume3D fuse(const PatchGridSpec& spec, std::span<const Volume3D> patches, std::span<const double> alphas) {
  const int m = spec.count();
  if (static_cast<int>(patches.size()) != m) throw DataError("fusion needs exactly one grading patch per location");
  if (static_cast<int>(alphas.size()) != m) throw DataError("fusion needs exactly one weight per location");
  for (const auto& p : patches)
    if (!(p.dims() == spec.patch_dims())) throw DataError("grading patch dims differ from the grid");
  for (double a : alphas)
    if (!(a >= 0.0) || !std::isfinite(a)) throw DataError("fusion weights must be finite and nonnegative");

  const Dims3 vd = spec.volume_dims();
  const Dims3 pd = spec.patch_dims();
  std::vector<double> num(vd.count(), 0.0), den(vd.count(), 0.0), sum(vd.count(), 0.0);
  std::vector<int> cnt(vd.count(), 0);
  Volume3D probe(vd);
  for (int j = 0; j < m; ++j) {
    const Index3 o = spec.origin(j);
    const Volume3D& g = patches[static_cast<std::size_t>(j)];
    const double a = alphas[static_cast<std::size_t>(j)];
    for (int k = 0; k < pd.z; ++k)
      for (int jj = 0; jj < pd.y; ++jj)
        for (int i = 0; i < pd.x; ++i) {
          const std::size_t v = probe.offset(o.x + i, o.y + jj, o.z + k);
          const double val = g(i, jj, k);
          num[v] += a * val;
          den[v] += a;
          sum[v] += val;
          ++cnt[v];
        }
  }
  Volume3D out(vd, patches.empty() ? Spacing3{} : patches.front().spacing());
  for (std::size_t v = 0; v < out.size(); ++v) {
    if (cnt[v] == 0) throw DataError("voxel not covered by any patch");
    out[v] = static_cast<float>(den[v] > 0.0 ? num[v] / den[v] : sum[v] / cnt[v]);
  }
  return out;
}

const ManifestEntry* EnsembleManifest::find(int patch) const {
  for (const auto& e : entries)
    if (e.patch == patch) return &e;
  return nullptr;
}

void to_json(nlohmann::json& j, const EnsembleManifest& m) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : m.entries)
    entries.push_back({{"j", e.patch},
                       {"origin", {e.origin.x, e.origin.y, e.origin.z}},
                       {"checkpoint", e.checkpoint},
                       {"alpha", e.alpha}});
  j = {{"grid", m.grid},
       {"entries", entries},
       {"seed", m.seed},
       {"fusion_mode", fusion_mode_name(m.fusion)},
       {"train_config", m.train_config}};
}

void from_json(const nlohmann::json& j, EnsembleManifest& m) {
  m.grid = j.at("grid").get<PatchGridSpec>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.fusion = parse_fusion_mode(j.at("fusion_mode").get<std::string>());
  m.train_config = j.value("train_config", nlohmann::json::object());
  m.entries.clear();
  std::vector<bool> seen(static_cast<std::size_t>(m.grid.count()), false);
  for (const auto& e : j.at("entries")) {
    ManifestEntry me;
    me.patch = e.at("j").get<int>();
    const auto o = e.at("origin").get<std::vector<int>>();
    if (o.size() != 3) throw DataError("manifest origin needs three entries");
    me.origin = {o[0], o[1], o[2]};
    me.checkpoint = e.at("checkpoint").get<std::string>();
    me.alpha = e.at("alpha").get<double>();
    if (me.patch < 0 || me.patch >= m.grid.count() || seen[static_cast<std::size_t>(me.patch)])
      throw DataError("manifest patch index invalid or repeated");
    if (!(me.origin == m.grid.origin(me.patch))) throw DataError("manifest origin disagrees with grid");
    if (!(me.alpha >= 0.0 && me.alpha <= 1.0)) throw DataError("manifest alpha outside [0, 1]");
    seen[static_cast<std::size_t>(me.patch)] = true;
    m.entries.push_back(std::move(me));
  }
  std::sort(m.entries.begin(), m.entries.end(), [](const auto& a, const auto& b) { return a.patch < b.patch; });
}

EnsembleManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  try {
    return nlohmann::json::parse(in).get<EnsembleManifest>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad manifest " + path.string() + ": " + e.what());
  }
}

void write_manifest(const std::filesystem::path& path, const EnsembleManifest& m) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out << nlohmann::json(m).dump(2) << '\n';
    if (!out) throw DataError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::vector<double> Ensemble::fusion_weights() const {
  std::vector<double> w(manifest.entries.size(), 1.0);
  if (manifest.fusion == FusionMode::Weighted)
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = manifest.entries[i].alpha;
  return w;
}

Ensemble load_ensemble(const std::filesystem::path& manifest_path) {
  Ensemble ens;
  ens.manifest = read_manifest(manifest_path);
  if (!ens.manifest.complete()) throw DataError("manifest is incomplete; resume training first");
  const auto dir = manifest_path.parent_path();
  for (const auto& e : ens.manifest.entries) {
    GradingModel gm = load_grading_model(dir / e.checkpoint);
    if (!(gm.net.patch_dims() == ens.manifest.grid.patch_dims()))
      throw DataError("checkpoint patch dims differ from the manifest grid");
    ens.models.push_back(std::move(gm.net));
  }
  return ens;
}

namespace {

std::string checkpoint_name(int j) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "patch_%03d.dgck", j);
  return std::string("checkpoints/") + buf;
}

}  // namespace

Ensemble train_ensemble(const GradingCohort& cohort, const PatchGridSpec& spec, const TrainConfig& cfg,
                        const EnsembleTrainOptions& opts) {
  const int m = spec.count();
  const std::vector<OrderStep> order = training_order(spec);
  std::vector<std::vector<int>> children(static_cast<std::size_t>(m));
  for (const auto& s : order)
    if (s.parent) children[static_cast<std::size_t>(*s.parent)].push_back(s.patch);

  EnsembleManifest manifest;
  manifest.grid = spec;
  manifest.seed = cfg.seed;
  manifest.fusion = opts.fusion;
  manifest.train_config = cfg;

  std::vector<std::optional<UNet>> models(static_cast<std::size_t>(m));
  std::filesystem::path manifest_path;
  if (opts.out_dir) {
    std::filesystem::create_directories(*opts.out_dir / "checkpoints");
    manifest_path = *opts.out_dir / "manifest.json";
    if (std::filesystem::exists(manifest_path)) {
      const EnsembleManifest prev = read_manifest(manifest_path);
      if (!(prev.grid == spec) || prev.seed != cfg.seed || prev.train_config != manifest.train_config)
        throw ConfigError("existing manifest in " + opts.out_dir->string() + " was trained with a different config");
      for (const auto& e : prev.entries) {
        const auto ck = *opts.out_dir / e.checkpoint;
        if (!std::filesystem::exists(ck)) continue;
        models[static_cast<std::size_t>(e.patch)] = load_grading_model(ck).net;
        manifest.entries.push_back(e);
      }
    }
  }

  std::mutex mu;
  std::condition_variable cv;
  std::deque<int> ready;
  int running = 0, remaining = 0;
  std::exception_ptr failure;

  for (const auto& s : order)
    if (!models[static_cast<std::size_t>(s.patch)]) ++remaining;
  // A patch is ready once its parent exists; done patches release children.
  std::function<void(int)> release = [&](int j) {
    for (int c : children[static_cast<std::size_t>(j)]) {
      if (models[static_cast<std::size_t>(c)])
        release(c);
      else
        ready.push_back(c);
    }
  };
  if (!models[0])
    ready.push_back(0);
  else
    release(0);

  auto persist = [&](const GradingModel& gm) {
    ManifestEntry e{gm.patch_index, gm.origin, checkpoint_name(gm.patch_index), gm.alpha};
    manifest.entries.push_back(e);
    std::sort(manifest.entries.begin(), manifest.entries.end(),
              [](const auto& a, const auto& b) { return a.patch < b.patch; });
    if (opts.out_dir) {
      save_grading_model(*opts.out_dir / e.checkpoint, gm);
      write_manifest(manifest_path, manifest);
    }
  };

  auto worker = [&] {
    std::unique_lock lock(mu);
    for (;;) {
      cv.wait(lock, [&] { return failure || remaining == 0 || !ready.empty(); });
      if (failure || remaining == 0) return;
      const int j = ready.front();
      ready.pop_front();
      ++running;
      const auto parent = order[static_cast<std::size_t>(j)].parent;
      const UNet* init = parent ? &*models[static_cast<std::size_t>(*parent)] : nullptr;
      lock.unlock();
      try {
        GradingModel gm = train_patch_model(cohort, spec, j, init, cfg);
        lock.lock();
        persist(gm);
        models[static_cast<std::size_t>(j)] = gm.net;
        if (opts.on_patch_done) opts.on_patch_done(gm);
        --running;
        --remaining;
        release(j);
      } catch (...) {
        lock.lock();
        --running;
        if (!failure) failure = std::current_exception();
      }
      cv.notify_all();
    }
  };

  const int threads = std::max(1, opts.threads);
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  Ensemble ens;
  ens.manifest = std::move(manifest);
  for (auto& mdl : models) ens.models.push_back(std::move(*mdl));
  return ens;
}

Ensemble single_model_ensemble(const PatchGridSpec& spec, const GradingModel& model) {
  Ensemble ens;
  ens.manifest.grid = spec;
  ens.manifest.seed = model.seed;
  ens.manifest.fusion = FusionMode::Unweighted;
  for (int j = 0; j < spec.count(); ++j) {
    ens.manifest.entries.push_back({j, spec.origin(j), "", model.alpha});
    ens.models.push_back(model.net);
  }
  return ens;
}

Volume3D grade_subject(const Ensemble& ens, const Volume3D& image, const LabelVolume& labels) {
  return grade_subject(ens, image, labels, ens.manifest.fusion);
}

Volume3D grade_subject(const Ensemble& ens, const Volume3D& image, const LabelVolume& labels, FusionMode mode) {
  if (!(image.dims() == labels.dims())) throw DataError("image and label dims differ");
  const PatchGridSpec& spec = ens.manifest.grid;
  const Volume3D small = downsample_stride2(image);
  if (!(small.dims() == spec.volume_dims())) throw DataError("volume dims do not match the ensemble grid");
  if (static_cast<int>(ens.models.size()) != spec.count()) throw DataError("ensemble is missing models");

  std::vector<Volume3D> grades;
  grades.reserve(ens.models.size());
  for (int j = 0; j < spec.count(); ++j)
    grades.push_back(ens.models[static_cast<std::size_t>(j)].forward(extract_patch(small, spec.origin(j), spec.patch_dims())));
  std::vector<double> w(static_cast<std::size_t>(spec.count()), 1.0);
  if (mode == FusionMode::Weighted)
    for (const auto& e : ens.manifest.entries) w[static_cast<std::size_t>(e.patch)] = e.alpha;
  Volume3D map = upsample_trilinear(fuse(spec, grades, w), image.dims());
  map = Volume3D(image.dims(), image.spacing(), std::move(map.data()));
  for (std::size_t v = 0; v < map.size(); ++v)
    if (labels[v] == 0) map[v] = 0.0f;
  return map;
}

}  // namespace dg
