#include "deepgrading/grader.hpp"

#include <algorithm>
#include <cmath>

#include "deepgrading/checkpoint.hpp"
#include "deepgrading/errors.hpp"

namespace dg {

Volume3D make_target(Diagnosis cls, const MaskVolume& icc_patch) {
  float v = 0.0f;
  if (cls == Diagnosis::AD)
    v = 1.0f;
  else if (cls == Diagnosis::CN)
    v = -1.0f;
  else
    throw DataError("grading targets exist only for AD and CN subjects");
  Volume3D t(icc_patch.dims(), icc_patch.spacing());
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = icc_patch[i] ? v : 0.0f;
  return t;
}

TrainSample mixup(const TrainSample& ad, const TrainSample& cn, double weight) {
  if (!(ad.x.dims() == cn.x.dims()) || !(ad.y.dims() == cn.y.dims()) || !(ad.x.dims() == ad.y.dims()))
    throw DataError("mixup inputs differ in dims");
  if (weight == 1.0) return {ad.x, ad.y, 1.0};
  TrainSample out{ad.x, ad.y, weight};
  const auto a = static_cast<float>(weight), b = static_cast<float>(1.0 - weight);
  for (std::size_t i = 0; i < out.x.size(); ++i) {
    out.x[i] = a * ad.x[i] + b * cn.x[i];
    out.y[i] = a * ad.y[i] + b * cn.y[i];
  }
  return out;
}

TrainSample mixup(const TrainSample& ad, const TrainSample& cn, Rng& rng, double beta) {
  return mixup(ad, cn, sample_beta(rng, beta, beta));
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"learning_rate", c.adam.learning_rate},
       {"beta1", c.adam.beta1},
       {"beta2", c.adam.beta2},
       {"epsilon", c.adam.epsilon},
       {"patience", c.patience},
       {"batch_size", c.batch_size},
       {"max_epochs", c.max_epochs},
       {"validation_fraction", c.validation_fraction},
       {"mixup_beta", c.mixup_beta},
       {"depth", c.unet.depth},
       {"base_channels", c.unet.base_channels},
       {"kernel", c.unet.kernel},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  static const std::vector<std::string> keys = {
      "learning_rate", "beta1", "beta2", "epsilon", "patience", "batch_size", "max_epochs",
      "validation_fraction", "mixup_beta", "depth", "base_channels", "kernel", "seed"};
  for (const auto& [k, v] : j.items())
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) throw ConfigError("unknown grader key '" + k + "'");
  TrainConfig d;
  c.adam.learning_rate = j.value("learning_rate", d.adam.learning_rate);
  c.adam.beta1 = j.value("beta1", d.adam.beta1);
  c.adam.beta2 = j.value("beta2", d.adam.beta2);
  c.adam.epsilon = j.value("epsilon", d.adam.epsilon);
  c.patience = j.value("patience", d.patience);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.max_epochs = j.value("max_epochs", d.max_epochs);
  c.validation_fraction = j.value("validation_fraction", d.validation_fraction);
  c.mixup_beta = j.value("mixup_beta", d.mixup_beta);
  c.unet.depth = j.value("depth", d.unet.depth);
  c.unet.base_channels = j.value("base_channels", d.unet.base_channels);
  c.unet.kernel = j.value("kernel", d.unet.kernel);
  c.seed = j.value("seed", d.seed);
  if (c.adam.learning_rate <= 0 || c.patience < 1 || c.batch_size < 1 || c.max_epochs < 1 ||
      c.validation_fraction <= 0 || c.validation_fraction >= 1 || c.mixup_beta <= 0)
    throw ConfigError("grader training values must be positive (patience >= 1, 0 < validation_fraction < 1)");
}

bool EarlyStopping::update(double val_loss) {
  if (val_loss < best_) {
    best_ = val_loss;
    stale_ = 0;
    return true;
  }
  ++stale_;
  return false;
}

void GradingCohort::add(const Volume3D& full_image, const LabelVolume& full_labels, Diagnosis cls) {
  if (!(full_image.dims() == full_labels.dims())) throw DataError("image and label dims differ");
  images.push_back(downsample_stride2(full_image));
  icc.push_back(icc_mask(downsample_labels_stride2(full_labels)));
  classes.push_back(cls);
}

InputNormalization fit_input_normalization(const GradingCohort& cohort) {
  if (cohort.size() == 0) throw DataError("input normalization needs a nonempty cohort");
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (const auto& img : cohort.images)
    for (float v : img.data()) {
      sum += v;
      sq += static_cast<double>(v) * v;
      ++n;
    }
  const double mean = sum / static_cast<double>(n);
  const double var = std::max(sq / static_cast<double>(n) - mean * mean, 0.0);
  const double sd = std::sqrt(var);
  return {static_cast<float>(mean), sd > 1e-8 ? static_cast<float>(1.0 / sd) : 1.0f};
}

BalancedSplit balanced_split(const std::vector<Diagnosis>& classes, double val_fraction, Rng& rng) {
  std::vector<std::size_t> ad, cn;
  for (std::size_t i = 0; i < classes.size(); ++i) {
    if (classes[i] == Diagnosis::AD) ad.push_back(i);
    if (classes[i] == Diagnosis::CN) cn.push_back(i);
  }
  if (ad.size() < 2 || cn.size() < 2)
    throw DataError("training needs at least 2 subjects of each class");
  std::shuffle(ad.begin(), ad.end(), rng);
  std::shuffle(cn.begin(), cn.end(), rng);
  const std::size_t per_class = std::min(ad.size(), cn.size());
  const std::size_t n_val = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::lround(val_fraction * static_cast<double>(per_class))), 1, per_class - 1);
  BalancedSplit s;
  s.val_ad.assign(ad.begin(), ad.begin() + static_cast<std::ptrdiff_t>(n_val));
  s.val_cn.assign(cn.begin(), cn.begin() + static_cast<std::ptrdiff_t>(n_val));
  s.train_ad.assign(ad.begin() + static_cast<std::ptrdiff_t>(n_val), ad.begin() + static_cast<std::ptrdiff_t>(per_class));
  s.train_cn.assign(cn.begin() + static_cast<std::ptrdiff_t>(n_val), cn.begin() + static_cast<std::ptrdiff_t>(per_class));
  return s;
}

bool patch_predicts_ad(const Volume3D& grades, const MaskVolume& icc_patch) {
  double sum = 0.0, all = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < grades.size(); ++i) {
    all += grades[i];
    if (icc_patch[i]) {
      sum += grades[i];
      ++n;
    }
  }
  const double mean = n ? sum / static_cast<double>(n) : all / static_cast<double>(grades.size());
  return mean > 0.0;
}

namespace {

struct Evaluation {
  double loss = 0.0;
  double bacc = 0.0;
};

Evaluation validate(const UNet& net, const GradingCohort& cohort, const PatchGridSpec& spec,
                    const std::vector<int>& locations, const BalancedSplit& split) {
  double loss = 0.0;
  std::size_t n = 0, tp = 0, tn = 0, pos = 0, neg = 0;
  auto run = [&](std::size_t s, Diagnosis cls) {
    for (int loc : locations) {
      const Index3 o = spec.origin(loc);
      const MaskVolume icc = extract_patch(cohort.icc[s], o, spec.patch_dims());
      const Volume3D pred = net.forward(extract_patch(cohort.images[s], o, spec.patch_dims()));
      loss += mae_loss(pred, make_target(cls, icc));
      ++n;
      const bool ad = patch_predicts_ad(pred, icc);
      if (cls == Diagnosis::AD) {
        ++pos;
        tp += ad;
      } else {
        ++neg;
        tn += !ad;
      }
    }
  };
  for (std::size_t s : split.val_ad) run(s, Diagnosis::AD);
  for (std::size_t s : split.val_cn) run(s, Diagnosis::CN);
  Evaluation e;
  e.loss = loss / static_cast<double>(n);
  e.bacc = 0.5 * (static_cast<double>(tp) / static_cast<double>(pos) + static_cast<double>(tn) / static_cast<double>(neg));
  if (!std::isfinite(e.loss)) throw NumericError("non-finite validation loss");
  return e;
}

TrainSample draw_sample(const GradingCohort& cohort, const PatchGridSpec& spec, std::size_t subject,
                        Diagnosis cls, Index3 origin, Rng& rng) {
  const Index3 o = jitter_origin(origin, spec.patch_dims(), spec.volume_dims(), rng);
  return {extract_patch(cohort.images[subject], o, spec.patch_dims()),
          make_target(cls, extract_patch(cohort.icc[subject], o, spec.patch_dims())), 1.0};
}

GradingModel train_on_locations(const GradingCohort& cohort, const PatchGridSpec& spec,
                                const std::vector<int>& locations, int tag, const UNet* init,
                                const TrainConfig& cfg) {
  for (const auto& img : cohort.images)
    if (!(img.dims() == spec.volume_dims())) throw DataError("cohort volumes do not match the patch grid");
  const auto stream = static_cast<std::uint64_t>(tag + 1);
  Rng split_rng(derive_seed(cfg.seed, "grader-split", stream));
  const BalancedSplit split = balanced_split(cohort.classes, cfg.validation_fraction, split_rng);
  Rng rng(derive_seed(cfg.seed, "grader-train", stream));

  GradingModel out;
  out.patch_index = tag;
  out.origin = tag >= 0 ? spec.origin(tag) : Index3{};
  out.seed = derive_seed(cfg.seed, "grader-init", stream);
  if (init && !(init->config() == cfg.unet)) throw DataError("transfer source architecture differs from config");
  UNet net = init ? *init : UNet(cfg.unet, spec.patch_dims(), out.seed);
  if (!init) net.set_input_normalization(fit_input_normalization(cohort));

  Adam adam(cfg.adam);
  EarlyStopping stopper(cfg.patience);
  const std::size_t n_train = split.train_ad.size() + split.train_cn.size();
  std::uniform_int_distribution<std::size_t> pick_ad(0, split.train_ad.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_cn(0, split.train_cn.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_loc(0, locations.size() - 1);

  UNet best = net;
  double best_bacc = 0.5;
  int epoch = 0;
  while (epoch < cfg.max_epochs) {
    ++epoch;
    std::size_t in_batch = 0;
    net.zero_grad();
    for (std::size_t step = 0; step < n_train; ++step) {
      const Index3 o = spec.origin(locations[pick_loc(rng)]);
      const TrainSample ad = draw_sample(cohort, spec, split.train_ad[pick_ad(rng)], Diagnosis::AD, o, rng);
      const TrainSample cn = draw_sample(cohort, spec, split.train_cn[pick_cn(rng)], Diagnosis::CN, o, rng);
      const TrainSample mixed = mixup(ad, cn, rng, cfg.mixup_beta);
      net.accumulate_gradients(mixed.x, mixed.y);
      if (++in_batch == static_cast<std::size_t>(cfg.batch_size) || step + 1 == n_train) {
        if (in_batch > 1)
          for (auto& p : net.params())
            for (float& g : p.grad) g /= static_cast<float>(in_batch);
        adam.step(net.params());
        net.zero_grad();
        in_batch = 0;
      }
    }
    const Evaluation e = validate(net, cohort, spec, locations, split);
    if (stopper.update(e.loss)) {
      best = net;
      best_bacc = e.bacc;
    }
    if (stopper.should_stop()) break;
  }
  best.zero_grad();
  out.net = std::move(best);
  out.alpha = best_bacc;
  out.epochs = epoch;
  out.best_val_loss = stopper.best();
  return out;
}

}  // namespace

GradingModel train_patch_model(const GradingCohort& cohort, const PatchGridSpec& spec, int j,
                               const UNet* init, const TrainConfig& cfg) {
  if (j < 0 || j >= spec.count()) throw DataError("patch index out of range");
  return train_on_locations(cohort, spec, {j}, j, init, cfg);
}

GradingModel train_pooled_model(const GradingCohort& cohort, const PatchGridSpec& spec, const TrainConfig& cfg) {
  std::vector<int> all(static_cast<std::size_t>(spec.count()));
  for (int j = 0; j < spec.count(); ++j) all[static_cast<std::size_t>(j)] = j;
  return train_on_locations(cohort, spec, all, -1, nullptr, cfg);
}

void save_grading_model(const std::filesystem::path& path, const GradingModel& m) {
  const UNetConfig& c = m.net.config();
  const Dims3& p = m.net.patch_dims();
  const nlohmann::json meta = {
      {"kind", "grading_model"},
      {"architecture", {{"depth", c.depth}, {"base_channels", c.base_channels}, {"kernel", c.kernel}}},
      {"patch_dims", {p.x, p.y, p.z}},
      {"seed", m.seed},
      {"alpha", m.alpha},
      {"patch_index", m.patch_index},
      {"origin", {m.origin.x, m.origin.y, m.origin.z}},
      {"epochs", m.epochs},
      {"best_val_loss", m.best_val_loss},
      {"input_normalization", {m.net.input_normalization().shift, m.net.input_normalization().scale}}};
  write_checkpoint(path, meta, m.net.params());
}

GradingModel load_grading_model(const std::filesystem::path& path) {
  const Checkpoint ck = read_checkpoint(path);
  GradingModel m;
  try {
    if (ck.meta.at("kind") != "grading_model") throw DataError("checkpoint is not a grading model");
    const auto& a = ck.meta.at("architecture");
    const UNetConfig cfg{a.at("depth").get<int>(), a.at("base_channels").get<int>(), a.at("kernel").get<int>()};
    const auto pd = ck.meta.at("patch_dims").get<std::vector<int>>();
    const auto o = ck.meta.at("origin").get<std::vector<int>>();
    m.seed = ck.meta.at("seed").get<std::uint64_t>();
    m.net = UNet(cfg, {pd.at(0), pd.at(1), pd.at(2)}, m.seed);
    m.alpha = ck.meta.at("alpha").get<double>();
    m.patch_index = ck.meta.at("patch_index").get<int>();
    m.origin = {o.at(0), o.at(1), o.at(2)};
    m.epochs = ck.meta.value("epochs", 0);
    m.best_val_loss = ck.meta.value("best_val_loss", 0.0);
    const auto in = ck.meta.at("input_normalization").get<std::vector<float>>();
    if (in.size() != 2) throw DataError("input_normalization needs [shift, scale]");
    m.net.set_input_normalization({in[0], in[1]});
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad grading checkpoint metadata: ") + e.what());
  }
  for (auto& p : m.net.params()) {
    const Param& t = ck.tensor(p.name);
    if (t.shape != p.shape) throw DataError("tensor '" + p.name + "' has unexpected shape");
    p.value = t.value;
  }
  return m;
}

}  // namespace dg
