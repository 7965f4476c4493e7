#pragma once

#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "qcfe/cost_model.hpp"
#include "qcfe/errors.hpp"
#include "qcfe/featurize.hpp"

namespace qcfe {

inline constexpr double kQErrorFloorMs = 1e-6;

/// max(a/p, p/a) with both operands clamped to 1e-6 ms.
double qerror(double actual_ms, double predicted_ms);

/// Pearson correlation with population standard deviations. Returns 0 (and
/// warns) when either vector is constant.
double pearson(std::span<const double> actuals, std::span<const double> predicts, Warnings* warnings = nullptr);

/// Nearest-rank percentile, p in (0, 100].
double percentile_nearest_rank(std::vector<double> values, double p);

double mean_qerror(std::span<const double> actuals, std::span<const double> predicts);

struct EvalReport {
  std::string variant_label;
  double mean_qerror = 0;
  double qerror_p50 = 0;
  double qerror_p90 = 0;
  double qerror_p95 = 0;
  double pearson = 0;
  std::size_t n_examples = 0;
  double train_time_s = 0;
  double inference_throughput_per_s = 0;
  std::string test_set_id;  // fingerprint of the labels; reports are comparable when equal
  Warnings warnings;
};

/// Metrics from precomputed predictions (no timing).
EvalReport report_from_predictions(std::span<const double> actuals, std::span<const double> predicts,
                                   const std::string& variant_label = "");

struct EvalOptions {
  std::string variant_label;
  std::size_t timed_passes = 3;
};

EvalReport evaluate(const CostModel& model, const std::vector<EncodedPlan>& test, EvalOptions options = {});

nlohmann::json to_json(const EvalReport& r);
EvalReport eval_report_from_json(const nlohmann::json& j);

struct ComparisonTable {
  std::string csv;
  nlohmann::json json;
  bool comparable = true;
};

/// Rows sorted by variant label; deltas are relative to reports.front().
ComparisonTable compare(const std::vector<EvalReport>& reports);

}  // namespace qcfe
