#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "atl/activation.hpp"
#include "atl/relevance.hpp"
#include "atl/selection.hpp"

namespace atl {

enum class HeadKind { Linear, Mlp };

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Defaults reproduce the reference protocol: Adam, lr 0.01 multiplied by 0.8
/// every 10 epochs, 50 epochs, test accuracy sampled every 5 epochs.
struct TrainConfig {
  int epochs = 50;
  double lr0 = 0.01;
  double decay = 0.8;
  int decay_every = 10;
  int eval_every = 5;
  AdamHyper adam;
  std::uint64_t seed = 0;
  HeadKind head = HeadKind::Linear;
  int hidden = 100;

  void validate() const;
  /// Learning rate used for the given 0-based epoch.
  double lr_at(int epoch) const;
};

struct FeatureMatrix {
  Eigen::MatrixXd values;  // rows: examples, cols: features
  std::vector<int> labels;
  int num_classes = 0;

  Eigen::Index rows() const { return values.rows(); }
  Eigen::Index cols() const { return values.cols(); }
};

/// Parameter layout of a head; params are one flat vector.
///   Linear: W (k×d, column-major), b (k)
///   Mlp:    W1 (h×d), b1 (h), W2 (k×h), b2 (k)
struct HeadShape {
  HeadKind kind = HeadKind::Linear;
  int input_dim = 0;
  int hidden = 0;
  int num_classes = 0;

  std::size_t param_count() const;
};

struct EvalPoint {
  int epoch = 0;
  double accuracy = 0.0;

  bool operator==(const EvalPoint&) const = default;
};

struct TrainedClassifier {
  HeadShape shape;
  std::vector<double> params;
  std::vector<EvalPoint> accuracy_trace;
  std::vector<double> loss_trace;  // training loss before each epoch's step
  double best_accuracy = 0.0;
  std::uint64_t seed = 0;

  Eigen::MatrixXd logits(const Eigen::MatrixXd& x) const;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  long step = 0;
};

/// One bias-corrected Adam update. Throws Training on a non-finite gradient.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, double lr,
               const AdamHyper& hyper);

Eigen::MatrixXd head_logits(const HeadShape& shape, std::span<const double> params, const Eigen::MatrixXd& x);

/// Mean softmax cross-entropy; writes its gradient into `grad` when non-empty.
double softmax_cross_entropy(const HeadShape& shape, std::span<const double> params, const FeatureMatrix& data,
                             std::span<double> grad);

/// Uniform in ±1/sqrt(fan_in) per weight, zero biases.
std::vector<double> init_params(const HeadShape& shape, std::uint64_t seed);

/// Full-batch training, one Adam step per epoch; the best sampled test
/// accuracy is kept.
TrainedClassifier train_fcl(const FeatureMatrix& train, const FeatureMatrix& test, const TrainConfig& config);

/// Fraction of rows whose argmax logit (lowest id on ties) equals the label.
double evaluate(const TrainedClassifier& classifier, const FeatureMatrix& features);
double accuracy_of(const Eigen::MatrixXd& logits, std::span<const int> labels);

/// Columns follow the selection's entry order; rows follow the groups.
FeatureMatrix assemble_atl_features(const ActivationCache& cache, const SelectedFeatureSet& selection,
                                    std::span<const ClassGroup> rows);
/// Every record of `split`, labelled by its cache label id.
FeatureMatrix assemble_atl_features(const ActivationCache& cache, const SelectedFeatureSet& selection, Split split);

FeatureMatrix assemble_baseline_features(const ActivationCache& cache, std::span<const ClassGroup> rows);
FeatureMatrix assemble_baseline_features(const ActivationCache& cache, Split split);

/// JSON audit record: seed, config digest, accuracy trace, best accuracy.
std::string run_record(const TrainedClassifier& classifier, const TrainConfig& config);
std::string config_digest(const TrainConfig& config);

}  // namespace atl
