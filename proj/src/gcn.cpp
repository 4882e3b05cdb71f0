#include "deepgrading/gcn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Core>

#include "deepgrading/checkpoint.hpp"
#include "deepgrading/errors.hpp"

namespace dg {

namespace {

using MatR = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;
using CMapRow = Eigen::Map<const Eigen::RowVectorXf>;

struct Trace {
  std::vector<Eigen::MatrixXf> h;   // h[0] = X, h[l+1] = relu(z[l])
  std::vector<Eigen::MatrixXf> ah;  // A_hat * h[l]
  Eigen::RowVectorXf pooled;
  double logit = 0.0;
};

}  // namespace

GcnModel::GcnModel(int in_features, std::uint64_t seed, int hidden) : in_features_(in_features), hidden_(hidden) {
  if (in_features < 1) throw DataError("GCN needs at least one input feature");
  if (hidden < 1) throw DataError("GCN needs at least one hidden unit");
  const auto width = static_cast<std::uint32_t>(hidden);
  Rng rng(seed);
  auto glorot = [&](Param& p, int fan_in, int fan_out) {
    const float lim = std::sqrt(6.0f / static_cast<float>(fan_in + fan_out));
    std::uniform_real_distribution<float> u(-lim, lim);
    for (float& w : p.value) w = u(rng);
  };
  int in = in_features;
  for (int l = 0; l < kLayers; ++l) {
    params_.emplace_back("gcn" + std::to_string(l) + ".weight",
                         std::vector<std::uint32_t>{static_cast<std::uint32_t>(in), width});
    glorot(params_.back(), in, hidden);
    params_.emplace_back("gcn" + std::to_string(l) + ".bias", std::vector<std::uint32_t>{width});
    in = hidden;
  }
  params_.emplace_back("out.weight", std::vector<std::uint32_t>{width, 1});
  glorot(params_.back(), hidden, 1);
  params_.emplace_back("out.bias", std::vector<std::uint32_t>{1});
}

namespace {

Trace run(const std::vector<Param>& p, int in_features, int hidden, const SubjectGraph& g) {
  if (g.features.cols() != in_features) throw DataError("graph feature width does not match the model");
  if (g.propagation.rows() != g.features.rows() || g.propagation.cols() != g.features.rows())
    throw DataError("graph propagation matrix size differs from node count");
  Trace t;
  t.h.push_back(g.features);
  int in = in_features;
  for (int l = 0; l < GcnModel::kLayers; ++l) {
    t.ah.push_back(g.propagation * t.h.back());
    Eigen::MatrixXf z = t.ah.back() * CMapR(p[2 * l].value.data(), in, hidden);
    z.rowwise() += CMapRow(p[2 * l + 1].value.data(), hidden);
    t.h.push_back(z.cwiseMax(0.0f));
    in = hidden;
  }
  t.pooled = t.h.back().colwise().mean();
  double logit = p[7].value[0];
  for (int c = 0; c < hidden; ++c) logit += static_cast<double>(t.pooled(c)) * p[6].value[static_cast<std::size_t>(c)];
  t.logit = logit;
  return t;
}

double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

}  // namespace

double GcnModel::logit(const SubjectGraph& g) const { return run(params_, in_features_, hidden_, g).logit; }

double GcnModel::forward(const SubjectGraph& g) const { return sigmoid(logit(g)); }

double bce_with_logit(double logit, int label) {
  // log(1 + exp(-|x|)) + max(x, 0) - x*y
  return std::log1p(std::exp(-std::abs(logit))) + std::max(logit, 0.0) - logit * label;
}

void GcnModel::backward_logit(const SubjectGraph& g, double d_logit) {
  const Trace t = run(params_, in_features_, hidden_, g);
  const auto dl = static_cast<float>(d_logit);
  params_[7].grad[0] += dl;
  const int hidden = hidden_;
  Eigen::RowVectorXf d_pooled(hidden);
  for (int c = 0; c < hidden; ++c) {
    params_[6].grad[static_cast<std::size_t>(c)] += dl * t.pooled(c);
    d_pooled(c) = dl * params_[6].value[static_cast<std::size_t>(c)];
  }
  const auto s = static_cast<float>(g.nodes());
  Eigen::MatrixXf dh = Eigen::MatrixXf::Ones(g.nodes(), 1) * (d_pooled / s);
  for (int l = kLayers - 1; l >= 0; --l) {
    const int in = l == 0 ? in_features_ : hidden;
    const Eigen::MatrixXf dz = (t.h[static_cast<std::size_t>(l + 1)].array() > 0.0f).select(dh.array(), 0.0f).matrix();
    MapR(params_[2 * l].grad.data(), in, hidden).noalias() += t.ah[static_cast<std::size_t>(l)].transpose() * dz;
    Eigen::Map<Eigen::RowVectorXf>(params_[2 * l + 1].grad.data(), hidden) += dz.colwise().sum();
    if (l > 0)
      dh = g.propagation.transpose() * (dz * CMapR(params_[2 * l].value.data(), in, hidden).transpose());
  }
}

double GcnModel::accumulate_gradients(const SubjectGraph& g, int label) {
  const double z = logit(g);
  if (!std::isfinite(z)) throw NumericError("non-finite GCN output");
  backward_logit(g, sigmoid(z) - label);
  return bce_with_logit(z, label);
}

std::uint64_t GcnModel::activation_pattern(const SubjectGraph& g) const {
  const Trace t = run(params_, in_features_, hidden_, g);
  std::vector<std::uint8_t> on;
  for (std::size_t l = 1; l < t.h.size(); ++l)
    for (Eigen::Index i = 0; i < t.h[l].size(); ++i) on.push_back(t.h[l].data()[i] > 0.0f);
  return hash_values(std::span<const std::uint8_t>(on));
}

void GcnModel::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

std::uint64_t GcnModel::weight_hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : params_) h = hash_values(std::span<const float>(p.value), fnv1a(p.name, h));
  return h;
}

void to_json(nlohmann::json& j, const ClassifierTrainConfig& c) {
  j = {{"learning_rate", c.adam.learning_rate}, {"beta1", c.adam.beta1}, {"beta2", c.adam.beta2},
       {"epsilon", c.adam.epsilon}, {"patience", c.patience}, {"batch_size", c.batch_size},
       {"max_epochs", c.max_epochs}, {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, ClassifierTrainConfig& c) {
  static const std::vector<std::string> keys = {"learning_rate", "beta1", "beta2", "epsilon",
                                                "patience", "batch_size", "max_epochs", "seed"};
  for (const auto& [k, v] : j.items())
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) throw ConfigError("unknown classifier key '" + k + "'");
  ClassifierTrainConfig d;
  c.adam.learning_rate = j.value("learning_rate", d.adam.learning_rate);
  c.adam.beta1 = j.value("beta1", d.adam.beta1);
  c.adam.beta2 = j.value("beta2", d.adam.beta2);
  c.adam.epsilon = j.value("epsilon", d.adam.epsilon);
  c.patience = j.value("patience", d.patience);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.max_epochs = j.value("max_epochs", d.max_epochs);
  c.seed = j.value("seed", d.seed);
  if (c.adam.learning_rate <= 0 || c.patience < 1 || c.batch_size < 1 || c.max_epochs < 1)
    throw ConfigError("classifier training values must be positive");
}

namespace {

void require_both_classes(const LabeledGraphs& d, const char* what) {
  if (d.graphs.size() != d.labels.size()) throw DataError("graph/label count mismatch");
  bool pos = false, neg = false;
  for (int y : d.labels) (y ? pos : neg) = true;
  if (!pos || !neg) throw DataError(std::string(what) + " split must contain both classes");
}

double mean_bce(const GcnModel& m, const LabeledGraphs& d) {
  double s = 0.0;
  for (std::size_t i = 0; i < d.graphs.size(); ++i) s += bce_with_logit(m.logit(d.graphs[i]), d.labels[i]);
  return s / static_cast<double>(d.graphs.size());
}

}  // namespace

ClassifierTrainResult train_classifier(const LabeledGraphs& train, const LabeledGraphs& val,
                                       const ClassifierTrainConfig& cfg) {
  require_both_classes(train, "training");
  require_both_classes(val, "validation");
  const int f = static_cast<int>(train.graphs.front().features.cols());
  Rng rng(derive_seed(cfg.seed, "gcn-train"));
  GcnModel model(f, derive_seed(cfg.seed, "gcn-init"));
  Adam adam(cfg.adam);

  ClassifierTrainResult res;
  GcnModel best = model;
  double best_loss = std::numeric_limits<double>::infinity();
  int stale = 0;
  std::vector<std::size_t> order(train.graphs.size());
  std::iota(order.begin(), order.end(), 0);
  int epoch = 0;
  while (epoch < cfg.max_epochs) {
    ++epoch;
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      model.zero_grad();
      for (std::size_t i = start; i < end; ++i)
        epoch_loss += model.accumulate_gradients(train.graphs[order[i]], train.labels[order[i]]);
      const auto inv = 1.0f / static_cast<float>(end - start);
      for (auto& p : model.params())
        for (float& g : p.grad) g *= inv;
      adam.step(model.params());
    }
    res.train_loss.push_back(epoch_loss / static_cast<double>(order.size()));
    const double vl = mean_bce(model, val);
    if (!std::isfinite(vl)) throw NumericError("non-finite validation loss");
    if (vl < best_loss) {
      best_loss = vl;
      best = model;
      stale = 0;
    } else if (++stale >= cfg.patience) {
      break;
    }
  }
  best.zero_grad();
  res.model = std::move(best);
  res.epochs = epoch;
  res.best_val_loss = best_loss;
  return res;
}

double predict_tta(const GcnModel& model, const SubjectGraph& g, Rng& rng, double noise_std, int passes) {
  if (passes < 1) throw DataError("at least one prediction pass is required");
  if (noise_std == 0.0) return model.forward(g);
  std::normal_distribution<float> noise(0.0f, static_cast<float>(noise_std));
  double sum = 0.0;
  SubjectGraph noisy = g;
  for (int p = 0; p < passes; ++p) {
    for (Eigen::Index i = 0; i < g.features.size(); ++i) noisy.features.data()[i] = g.features.data()[i] + noise(rng);
    sum += model.forward(noisy);
  }
  return sum / passes;
}

void save_gcn(const std::filesystem::path& path, const GcnModel& m, const nlohmann::json& extra_meta) {
  nlohmann::json meta = extra_meta;
  meta["kind"] = "gcn_classifier";
  meta["in_features"] = m.in_features();
  meta["hidden"] = m.hidden();
  meta["layers"] = GcnModel::kLayers;
  write_checkpoint(path, meta, m.params());
}

GcnModel load_gcn(const std::filesystem::path& path, nlohmann::json* meta) {
  const Checkpoint ck = read_checkpoint(path);
  if (ck.meta.value("kind", "") != "gcn_classifier") throw DataError("checkpoint is not a GCN classifier");
  GcnModel m(ck.meta.at("in_features").get<int>(), 0, ck.meta.value("hidden", GcnModel::kHidden));
  for (auto& p : m.params()) {
    const Param& t = ck.tensor(p.name);
    if (t.shape != p.shape) throw DataError("tensor '" + p.name + "' has unexpected shape");
    p.value = t.value;
  }
  if (meta) *meta = ck.meta;
  return m;
}

}  // namespace dg
