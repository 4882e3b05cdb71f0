#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <json.hpp>

#include "deepgrading/graph.hpp"
#include "deepgrading/param.hpp"
#include "deepgrading/util.hpp"

namespace dg {

/// Three graph-convolution layers of `hidden` units (ReLU after each), global
/// mean pooling over nodes and a dense layer to one logit.
class GcnModel {
 public:
  static constexpr int kHidden = 32;
  static constexpr int kLayers = 3;

  GcnModel() = default;
  GcnModel(int in_features, std::uint64_t seed, int hidden = kHidden);

  int in_features() const { return in_features_; }
  int hidden() const { return hidden_; }
  std::vector<Param>& params() { return params_; }
  const std::vector<Param>& params() const { return params_; }

  double logit(const SubjectGraph& g) const;
  /// Probability of the positive class, in (0, 1).
  double forward(const SubjectGraph& g) const;

  /// Adds d(BCE)/d(weights) into the gradient buffers and returns the BCE.
  double accumulate_gradients(const SubjectGraph& g, int label);
  /// Adds d(logit)/d(weights) scaled by `d_logit` to the gradients.
  void backward_logit(const SubjectGraph& g, double d_logit);

  void zero_grad();
  std::uint64_t weight_hash() const;
  /// Hash of which hidden units are active; equal patterns mean the logit is
  /// affine in every weight between two inputs.
  std::uint64_t activation_pattern(const SubjectGraph& g) const;

 private:
  int in_features_ = 0;
  int hidden_ = kHidden;
  // W0, b0, W1, b1, W2, b2, w_out, b_out; weights row-major [in, out]
  std::vector<Param> params_;
};

/// Numerically stable binary cross-entropy of a logit.
double bce_with_logit(double logit, int label);

struct ClassifierTrainConfig {
  AdamConfig adam{3e-4};
  int patience = 20;
  int batch_size = 8;
  int max_epochs = 300;
  std::uint64_t seed = 1;
};

void to_json(nlohmann::json& j, const ClassifierTrainConfig& c);
void from_json(const nlohmann::json& j, ClassifierTrainConfig& c);

struct LabeledGraphs {
  std::vector<SubjectGraph> graphs;
  std::vector<int> labels;  // 1 = disease
};

struct ClassifierTrainResult {
  GcnModel model;
  int epochs = 0;
  double best_val_loss = 0.0;
  std::vector<double> train_loss;  // per epoch
};

/// Adam on mean BCE over minibatches; stops after `patience` epochs without a
/// validation-BCE improvement and returns the best-validation weights.
ClassifierTrainResult train_classifier(const LabeledGraphs& train, const LabeledGraphs& val,
                                       const ClassifierTrainConfig& cfg);

/// Mean probability over `passes` forward passes, each with i.i.d. Gaussian
/// noise of the given standard deviation added to every node feature.
double predict_tta(const GcnModel& model, const SubjectGraph& g, Rng& rng, double noise_std = 0.1, int passes = 3);

void save_gcn(const std::filesystem::path& path, const GcnModel& m, const nlohmann::json& extra_meta);
GcnModel load_gcn(const std::filesystem::path& path, nlohmann::json* meta = nullptr);

}  // namespace dg
