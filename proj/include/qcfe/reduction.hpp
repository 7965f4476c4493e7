#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "qcfe/cost_model.hpp"
#include "qcfe/featurize.hpp"

namespace qcfe {

/// Scores at or below this count as zero importance.
inline constexpr double kKeepThreshold = 1e-12;

enum class ReductionMethod { Greedy, Gradient, Diff };

std::string to_string(ReductionMethod m);
ReductionMethod reduction_method_from_string(const std::string& s);

/// One labelled operator at the encoding level.
struct OperatorSample {
  FeatureVector x;
  double y = 0;  // own cost, ms
  std::string tag;
};

struct ReductionDataset {
  std::vector<OperatorSample> samples;
  std::string schema_hash;
};

/// Operator-level dataset: one sample per plan node, labelled with its own
/// cost; snapshots applied per the encode options.
ReductionDataset build_reduction_dataset(const std::vector<PlanTree>& trees, const FeatureSchema& schema,
                                         EncodeOptions options = {}, Warnings* warnings = nullptr);

/// Training set for an operator-level model over the same samples.
std::vector<EncodedPlan> operator_level_plans(const ReductionDataset& d);

struct ImportanceReport {
  ReductionMethod method = ReductionMethod::Diff;
  std::vector<double> scores;
  std::vector<bool> kept;
  std::vector<std::size_t> reference_ids;  // diff only
  std::uint64_t seed = 0;
  double runtime_ms = 0;
  std::vector<double> qerror_trace;    // greedy only
  std::vector<std::size_t> drop_order;  // greedy only

  std::size_t dropped_count() const;
};

nlohmann::json to_json(const ImportanceReport& r);
ImportanceReport importance_report_from_json(const nlohmann::json& j);

/// Mean q-error of predict_operator over the samples.
double operator_mean_qerror(const CostModel& model, const std::vector<OperatorSample>& samples);

/// Replaces dimension k of every sample by its mean over the set.
std::vector<OperatorSample> mean_mask(std::vector<OperatorSample> samples, std::size_t k);

struct GreedyOptions {
  bool retrain_per_drop = false;
  TrainConfig retrain_cfg;  // used only with retrain_per_drop (operator-level flat model)
};

/// Approximate greedy ablation: repeatedly mean-masks the single feature
/// whose ablation gives the lowest mean q-error, as long as that strictly
/// improves on the current best.
ImportanceReport greedy_reduce(const ReductionDataset& d, const CostModel& model, const FeatureSchema& schema,
                               GreedyOptions options = {});

/// |mean over D of d(raw output)/dx^k| via backprop.
ImportanceReport gradient_importance(const ReductionDataset& d, const CostModel& model, const FeatureSchema& schema);

/// Difference-propagation importance against `refs` reference points drawn
/// without replacement (per model unit for plan-structured models).
ImportanceReport diff_importance(const ReductionDataset& d, const CostModel& model, const FeatureSchema& schema,
                                 std::size_t refs, std::uint64_t seed);

/// Difference-propagation score of every input dimension for one network,
/// a sample set and a reference set; the core of diff_importance.
/// `output_index` selects the scalar output M.
std::vector<double> diff_scores(const Mlp& net, const std::vector<Eigen::VectorXd>& samples,
                                const std::vector<Eigen::VectorXd>& references, std::size_t output_index = 0);

/// Mask update: active[k] = kept[k] && active[k].
FeatureSchema apply_reduction(const FeatureSchema& schema, const ImportanceReport& report);

}  // namespace qcfe
