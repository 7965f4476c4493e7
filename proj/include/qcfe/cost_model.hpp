#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "qcfe/errors.hpp"
#include "qcfe/featurize.hpp"

namespace qcfe {

enum class Activation { Relu, Identity };

struct DenseLayer {
  Eigen::MatrixXd w;  // out x in
  Eigen::VectorXd b;
  Activation act = Activation::Relu;
};

/// Activations recorded by a forward pass; needed for backprop and for
/// difference propagation.
struct MlpTrace {
  std::vector<Eigen::VectorXd> inputs;  // input of each layer
  std::vector<Eigen::VectorXd> pre;     // pre-activation of each layer
  std::vector<Eigen::VectorXd> post;    // output of each layer
};

struct MlpGrad {
  std::vector<Eigen::MatrixXd> w;
  std::vector<Eigen::VectorXd> b;
};

/// Plain feed-forward network.
class Mlp {
 public:
  std::vector<DenseLayer> layers;

  std::size_t input_dim() const;
  std::size_t output_dim() const;

  Eigen::VectorXd forward(const Eigen::VectorXd& x) const;
  MlpTrace trace(const Eigen::VectorXd& x) const;

  /// Adds parameter gradients to `acc` (if non-null) and returns dL/dx.
  /// The relu subgradient at 0 is 0.
  Eigen::VectorXd backward(const MlpTrace& t, const Eigen::VectorXd& grad_out, MlpGrad* acc) const;

  MlpGrad zero_grad() const;
};

enum class ModelKind { Flat, PlanStructured };
enum class Loss { Msle, Mse };

std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& s);

struct TrainConfig {
  std::size_t iterations = 200;  // passes over the training set
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  std::uint64_t seed = 42;
  Loss loss = Loss::Msle;
  std::vector<std::size_t> hidden_sizes{64, 32};
  std::size_t hidden_width = 16;     // plan_structured: width of the hidden message
  bool supervise_all_nodes = false;  // plan_structured: also fit each node's subtree time
};

struct TrainingMeta {
  std::size_t iters = 0;
  std::uint64_t seed = 0;
  std::vector<double> loss_curve;  // [initial, after each accepted pass...]
  double final_learning_rate = 0;
  double train_time_s = 0;
};

/// Flat: mean of the plan's operator vectors through one MLP to a scalar.
/// Plan-structured: one unit per operator tag mapping
/// concat(node features, sum of children's hidden outputs) to
/// (cost, hidden[hidden_width]); the root's cost is the plan's output.
/// Outputs live in log(1 + ms) space.
class CostModel {
 public:
  static constexpr const char* kFlatUnit = "flat";

  ModelKind kind = ModelKind::Flat;
  std::string schema_hash;
  std::size_t input_dim = 0;
  std::size_t hidden_width = 0;
  std::map<std::string, Mlp> units;
  TrainingMeta meta;

  const Mlp& unit_for(const std::string& tag) const;
  /// Input width of a unit (plan-structured units also take the child sum).
  std::size_t unit_input_dim() const { return kind == ModelKind::Flat ? input_dim : input_dim + hidden_width; }
};

CostModel init_model(ModelKind kind, const FeatureSchema& schema, const TrainConfig& cfg);

CostModel train(const std::vector<EncodedPlan>& data, const FeatureSchema& schema, const TrainConfig& cfg,
                ModelKind kind);

/// Continues training from `start`'s weights; with cfg.iterations == 0 the
/// weights are returned unchanged.
CostModel fine_tune(CostModel start, const std::vector<EncodedPlan>& data, const TrainConfig& cfg);

/// Network output (log space) for a plan.
double raw_output(const CostModel& model, const EncodedPlan& plan);
/// max(expm1(raw_output), 1e-6) in ms.
double predict(const CostModel& model, const EncodedPlan& plan);

/// Operator-level view of the model: the MLP a single operator vector goes
/// through, with plan-structured inputs padded by a zero child message.
Eigen::VectorXd operator_input(const CostModel& model, const FeatureVector& x);
double operator_raw_output(const CostModel& model, const FeatureVector& x, const std::string& tag);
double predict_operator(const CostModel& model, const FeatureVector& x, const std::string& tag);

double to_cost_ms(double raw);

struct LossGradient {
  double loss = 0;
  std::map<std::string, MlpGrad> grads;
};

/// Mean loss and parameter gradient over a batch of plans.
LossGradient loss_and_gradient(const CostModel& model, const std::vector<const EncodedPlan*>& batch,
                               const TrainConfig& cfg);
double mean_loss(const CostModel& model, const std::vector<EncodedPlan>& data, const TrainConfig& cfg);

/// Single-node plan wrapping one operator vector (operator-level training).
EncodedPlan single_operator_plan(FeatureVector x, const std::string& tag, double label_ms);

inline constexpr int kWeightFormatVersion = 1;

nlohmann::json export_weights(const CostModel& model);
CostModel import_weights(const nlohmann::json& doc);
void save_model(const std::string& path, const CostModel& model);
CostModel load_model(const std::string& path);

}  // namespace qcfe
