#include "atl/fcl.hpp"

#include <cmath>
#include <functional>

#include "json.hpp"

#include "atl/cache_io.hpp"
#include "atl/error.hpp"
#include "atl/rng.hpp"

namespace atl {

using Eigen::Map;
using Eigen::MatrixXd;
using Eigen::VectorXd;

void TrainConfig::validate() const {
  if (epochs < 1) fail(ErrorKind::Config, "epochs must be positive");
  if (eval_every < 1 || epochs < eval_every) fail(ErrorKind::Config, "eval_every must be in [1, epochs]");
  if (!(lr0 > 0.0)) fail(ErrorKind::Config, "lr0 must be positive");
  if (!(decay > 0.0) || decay_every < 1) fail(ErrorKind::Config, "invalid learning-rate decay schedule");
  if (head == HeadKind::Mlp && hidden < 1) fail(ErrorKind::Config, "MLP head needs hidden units");
}

double TrainConfig::lr_at(int epoch) const { return lr0 * std::pow(decay, epoch / decay_every); }

std::size_t HeadShape::param_count() const {
  const auto d = static_cast<std::size_t>(input_dim);
  const auto k = static_cast<std::size_t>(num_classes);
  if (kind == HeadKind::Linear) return k * d + k;
  const auto h = static_cast<std::size_t>(hidden);
  return h * d + h + k * h + k;
}

namespace {

struct LinearView {
  Map<const MatrixXd> w;
  Map<const VectorXd> b;
};

struct MlpView {
  Map<const MatrixXd> w1;
  Map<const VectorXd> b1;
  Map<const MatrixXd> w2;
  Map<const VectorXd> b2;
};

LinearView linear_view(const HeadShape& s, std::span<const double> p) {
  const Eigen::Index d = s.input_dim;
  const Eigen::Index k = s.num_classes;
  return {Map<const MatrixXd>(p.data(), k, d), Map<const VectorXd>(p.data() + k * d, k)};
}

MlpView mlp_view(const HeadShape& s, std::span<const double> p) {
  const Eigen::Index d = s.input_dim;
  const Eigen::Index k = s.num_classes;
  const Eigen::Index h = s.hidden;
  const double* at = p.data();
  Map<const MatrixXd> w1(at, h, d);
  at += h * d;
  Map<const VectorXd> b1(at, h);
  at += h;
  Map<const MatrixXd> w2(at, k, h);
  at += k * h;
  Map<const VectorXd> b2(at, k);
  return {w1, b1, w2, b2};
}

void check_shape(const HeadShape& s, std::span<const double> params, const MatrixXd& x) {
  if (params.size() != s.param_count()) fail(ErrorKind::InvalidInput, "parameter vector does not match head shape");
  if (x.cols() != s.input_dim) {
    fail(ErrorKind::InvalidInput, "feature width " + std::to_string(x.cols()) + " does not match classifier input " +
                                      std::to_string(s.input_dim));
  }
}

}  // namespace

MatrixXd head_logits(const HeadShape& shape, std::span<const double> params, const MatrixXd& x) {
  check_shape(shape, params, x);
  if (shape.kind == HeadKind::Linear) {
    const auto v = linear_view(shape, params);
    return (x * v.w.transpose()).rowwise() + v.b.transpose();
  }
  const auto v = mlp_view(shape, params);
  const MatrixXd hidden = ((x * v.w1.transpose()).rowwise() + v.b1.transpose()).cwiseMax(0.0);
  return (hidden * v.w2.transpose()).rowwise() + v.b2.transpose();
}

Eigen::MatrixXd TrainedClassifier::logits(const Eigen::MatrixXd& x) const { return head_logits(shape, params, x); }

double softmax_cross_entropy(const HeadShape& shape, std::span<const double> params, const FeatureMatrix& data,
                             std::span<double> grad) {
  check_shape(shape, params, data.values);
  const auto& x = data.values;
  const Eigen::Index n = x.rows();
  const Eigen::Index k = shape.num_classes;
  if (n == 0) fail(ErrorKind::InvalidInput, "cross-entropy over an empty batch");

  MatrixXd pre_hidden;
  MatrixXd hidden;
  MatrixXd logits;
  if (shape.kind == HeadKind::Linear) {
    const auto v = linear_view(shape, params);
    logits = (x * v.w.transpose()).rowwise() + v.b.transpose();
  } else {
    const auto v = mlp_view(shape, params);
    pre_hidden = (x * v.w1.transpose()).rowwise() + v.b1.transpose();
    hidden = pre_hidden.cwiseMax(0.0);
    logits = (hidden * v.w2.transpose()).rowwise() + v.b2.transpose();
  }

  // Softmax in place; `logits` becomes (P - Y) / n for the backward pass.
  double loss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double top = logits.row(i).maxCoeff();
    logits.row(i).array() -= top;
    const double log_z = std::log(logits.row(i).array().exp().sum());
    const int y = data.labels[static_cast<std::size_t>(i)];
    loss += log_z - logits(i, y);
    logits.row(i) = (logits.row(i).array() - log_z).exp().matrix();
    logits(i, y) -= 1.0;
  }
  loss /= static_cast<double>(n);
  if (grad.empty()) return loss;
  if (grad.size() != params.size()) fail(ErrorKind::InvalidInput, "gradient buffer does not match parameters");

  const MatrixXd g = logits / static_cast<double>(n);
  const Eigen::Index d = shape.input_dim;
  if (shape.kind == HeadKind::Linear) {
    Map<MatrixXd>(grad.data(), k, d) = g.transpose() * x;
    Map<VectorXd>(grad.data() + k * d, k) = g.colwise().sum().transpose();
    return loss;
  }
  const Eigen::Index h = shape.hidden;
  const auto v = mlp_view(shape, params);
  double* at = grad.data();
  const MatrixXd d_hidden = (g * v.w2).cwiseProduct((pre_hidden.array() > 0.0).cast<double>().matrix());
  Map<MatrixXd>(at, h, d) = d_hidden.transpose() * x;
  at += h * d;
  Map<VectorXd>(at, h) = d_hidden.colwise().sum().transpose();
  at += h;
  Map<MatrixXd>(at, k, h) = g.transpose() * hidden;
  at += k * h;
  Map<VectorXd>(at, k) = g.colwise().sum().transpose();
  return loss;
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, double lr,
               const AdamHyper& hyper) {
  if (params.size() != grads.size()) fail(ErrorKind::InvalidInput, "adam_step: parameter/gradient size mismatch");
  if (state.m.empty() && state.v.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    fail(ErrorKind::InvalidInput, "adam_step: optimizer state does not match parameters");
  }
  for (double g : grads) {
    if (!std::isfinite(g)) fail(ErrorKind::Training, "non-finite gradient at Adam step " + std::to_string(state.step + 1));
  }
  ++state.step;
  const double bias1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.step));
  const double bias2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.step));
  const double step_size = lr / bias1;
  const double bias2_sqrt = std::sqrt(bias2);
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = hyper.beta1 * state.m[i] + (1.0 - hyper.beta1) * grads[i];
    state.v[i] = hyper.beta2 * state.v[i] + (1.0 - hyper.beta2) * grads[i] * grads[i];
    const double denom = std::sqrt(state.v[i]) / bias2_sqrt + hyper.eps;
    params[i] -= step_size * state.m[i] / denom;
  }
}

std::vector<double> init_params(const HeadShape& shape, std::uint64_t seed) {
  std::vector<double> params(shape.param_count(), 0.0);
  Rng rng(seed);
  auto fill = [&](std::size_t offset, std::size_t count, int fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (std::size_t i = 0; i < count; ++i) params[offset + i] = rng.uniform(-bound, bound);
  };
  const auto d = static_cast<std::size_t>(shape.input_dim);
  const auto k = static_cast<std::size_t>(shape.num_classes);
  if (shape.kind == HeadKind::Linear) {
    fill(0, k * d, shape.input_dim);
  } else {
    const auto h = static_cast<std::size_t>(shape.hidden);
    fill(0, h * d, shape.input_dim);
    fill(h * d + h, k * h, shape.hidden);
  }
  return params;
}

double accuracy_of(const MatrixXd& logits, std::span<const int> labels) {
  if (static_cast<std::size_t>(logits.rows()) != labels.size()) {
    fail(ErrorKind::InvalidInput, "accuracy: label count does not match rows");
  }
  if (labels.empty()) fail(ErrorKind::InvalidInput, "accuracy over an empty set");
  std::size_t correct = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < logits.cols(); ++c) {
      if (logits(i, c) > logits(i, best)) best = c;
    }
    if (best == labels[static_cast<std::size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

double evaluate(const TrainedClassifier& classifier, const FeatureMatrix& features) {
  return accuracy_of(classifier.logits(features.values), features.labels);
}

namespace {

void check_features(const FeatureMatrix& m, const char* what) {
  if (static_cast<std::size_t>(m.rows()) != m.labels.size()) {
    fail(ErrorKind::InvalidInput, std::string(what) + ": label count does not match rows");
  }
  if (!m.values.allFinite()) fail(ErrorKind::InvalidInput, std::string(what) + ": non-finite feature values");
  for (int y : m.labels) {
    if (y < 0 || y >= m.num_classes) fail(ErrorKind::InvalidInput, std::string(what) + ": label out of range");
  }
}

}  // namespace

TrainedClassifier train_fcl(const FeatureMatrix& train, const FeatureMatrix& test, const TrainConfig& config) {
  config.validate();
  if (train.rows() == 0) fail(ErrorKind::InvalidInput, "training set is empty");
  if (test.rows() == 0) fail(ErrorKind::InvalidInput, "test set is empty");
  if (train.cols() != test.cols()) fail(ErrorKind::InvalidInput, "train/test feature widths differ");
  if (train.num_classes < 2 || train.num_classes != test.num_classes) {
    fail(ErrorKind::InvalidInput, "need at least 2 classes shared by train and test");
  }
  check_features(train, "train features");
  check_features(test, "test features");

  TrainedClassifier out;
  out.shape = {config.head, static_cast<int>(train.cols()), config.head == HeadKind::Mlp ? config.hidden : 0,
               train.num_classes};
  out.seed = config.seed;
  out.params = init_params(out.shape, config.seed);

  AdamState state;
  std::vector<double> grad(out.params.size());
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    out.loss_trace.push_back(softmax_cross_entropy(out.shape, out.params, train, grad));
    try {
      adam_step(out.params, grad, state, config.lr_at(epoch), config.adam);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::Training) throw;
      fail(ErrorKind::Training, "epoch " + std::to_string(epoch + 1) + ": " + e.what());
    }
    if ((epoch + 1) % config.eval_every == 0) {
      const double acc = evaluate(out, test);
      out.accuracy_trace.push_back({epoch + 1, acc});
      out.best_accuracy = std::max(out.best_accuracy, acc);
    }
  }
  return out;
}

namespace {

FeatureMatrix rows_from(std::span<const ClassGroup> rows, Eigen::Index width,
                        const std::function<void(const ExampleRecord&, MatrixXd&, Eigen::Index)>& fill) {
  FeatureMatrix m;
  m.num_classes = static_cast<int>(rows.size());
  Eigen::Index n = 0;
  for (const auto& g : rows) n += static_cast<Eigen::Index>(g.examples.size());
  if (n == 0) fail(ErrorKind::InvalidInput, "no examples to assemble features from");
  m.values.resize(n, width);
  Eigen::Index r = 0;
  for (const auto& g : rows) {
    for (const auto* rec : g.examples) {
      fill(*rec, m.values, r);
      m.labels.push_back(g.label.id);
      ++r;
    }
  }
  return m;
}

std::vector<ClassGroup> groups_of_split(const ActivationCache& cache, Split split) {
  int max_id = -1;
  for (const auto& rec : cache.records) max_id = std::max(max_id, rec.label.id);
  std::vector<ClassGroup> groups(static_cast<std::size_t>(max_id + 1));
  for (std::size_t i = 0; i < groups.size(); ++i) groups[i].label.id = static_cast<int>(i);
  bool any = false;
  for (const auto& rec : cache.records) {
    if (rec.split != split) continue;
    groups[static_cast<std::size_t>(rec.label.id)].label = rec.label;
    groups[static_cast<std::size_t>(rec.label.id)].examples.push_back(&rec);
    any = true;
  }
  if (!any) fail(ErrorKind::InvalidInput, "no records in the " + std::string(to_string(split)) + " split");
  return groups;
}

}  // namespace

FeatureMatrix assemble_atl_features(const ActivationCache& cache, const SelectedFeatureSet& selection,
                                    std::span<const ClassGroup> rows) {
  for (const auto& e : selection.entries) {
    if (e.layer.index < 0 || static_cast<std::size_t>(e.layer.index) >= cache.layers.size() ||
        e.channel < 0 || e.channel >= cache.layers[static_cast<std::size_t>(e.layer.index)].channels) {
      fail(ErrorKind::Schema, "selected map (" + e.layer.name + ", " + std::to_string(e.channel) +
                                  ") is not in the cache");
    }
  }
  if (selection.entries.empty()) fail(ErrorKind::InvalidInput, "selection has no entries");
  return rows_from(rows, static_cast<Eigen::Index>(selection.entries.size()),
                   [&](const ExampleRecord& rec, MatrixXd& m, Eigen::Index r) {
                     for (std::size_t j = 0; j < selection.entries.size(); ++j) {
                       const auto& e = selection.entries[j];
                       m(r, static_cast<Eigen::Index>(j)) =
                           rec.lav(static_cast<std::size_t>(e.layer.index))[static_cast<std::size_t>(e.channel)];
                     }
                   });
}

FeatureMatrix assemble_atl_features(const ActivationCache& cache, const SelectedFeatureSet& selection, Split split) {
  const auto groups = groups_of_split(cache, split);
  return assemble_atl_features(cache, selection, groups);
}

FeatureMatrix assemble_baseline_features(const ActivationCache& cache, std::span<const ClassGroup> rows) {
  return rows_from(rows, cache.penultimate_dim, [&](const ExampleRecord& rec, MatrixXd& m, Eigen::Index r) {
    for (int j = 0; j < cache.penultimate_dim; ++j) m(r, j) = rec.penultimate[static_cast<std::size_t>(j)];
  });
}

FeatureMatrix assemble_baseline_features(const ActivationCache& cache, Split split) {
  const auto groups = groups_of_split(cache, split);
  return assemble_baseline_features(cache, groups);
}

namespace {

nlohmann::json config_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"lr0", c.lr0},
          {"decay", c.decay},
          {"decay_every", c.decay_every},
          {"eval_every", c.eval_every},
          {"beta1", c.adam.beta1},
          {"beta2", c.adam.beta2},
          {"eps", c.adam.eps},
          {"head", c.head == HeadKind::Linear ? "linear" : "mlp"},
          {"hidden", c.head == HeadKind::Mlp ? c.hidden : 0}};
}

}  // namespace

std::string config_digest(const TrainConfig& config) { return digest_bytes(config_json(config).dump()); }

std::string run_record(const TrainedClassifier& classifier, const TrainConfig& config) {
  nlohmann::json trace = nlohmann::json::array();
  for (const auto& p : classifier.accuracy_trace) trace.push_back({{"epoch", p.epoch}, {"accuracy", p.accuracy}});
  const nlohmann::json record = {{"seed", classifier.seed},
                                 {"config_digest", config_digest(config)},
                                 {"config", config_json(config)},
                                 {"trace", trace},
                                 {"best_accuracy", classifier.best_accuracy}};
  return record.dump(2);
}

}  // namespace atl
