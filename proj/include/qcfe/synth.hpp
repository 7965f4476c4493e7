#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "qcfe/plan.hpp"

namespace qcfe {

/// Ground-truth unit costs of one simulated environment. Coefficient vectors
/// follow the operator's FormulaSpec basis.
struct SynthEnvironment {
  std::string env_id;
  std::map<std::string, std::vector<double>> true_coefficients;
  double noise_sigma = 0;  // sigma of the multiplicative lognormal noise
};

/// Reference environment covering every operator with a logical formula.
SynthEnvironment base_environment(std::string env_id = "base", double noise_sigma = 0);

/// All coefficients multiplied by scale_factor (> 0). The new id defaults to
/// "<base id>*<factor>".
SynthEnvironment gen_environment(const SynthEnvironment& base, double scale_factor, std::string env_id = "");

struct SynthTable {
  std::string name;
  double width = 100;
  std::vector<std::string> indexes;
};

/// Relative weights of the generated tree shapes.
struct ShapeWeights {
  double scan = 1;
  double scan_sort = 1;
  double join = 1;
  double join_agg = 1;
};

struct SynthWorkloadSpec {
  std::vector<SynthTable> tables;
  ShapeWeights plan_shapes;
  std::size_t n_plans = 100;
  std::uint64_t seed = 42;
  std::size_t dead_feature_count = 0;
  double card_min = 10;
  double card_max = 1e5;
  double estimate_sigma = 0.3;  // lognormal spread of planner row estimates around actuals
};

/// Four TPC-H flavoured tables.
std::vector<SynthTable> default_tables();
SynthWorkloadSpec default_workload(std::size_t n_plans, std::uint64_t seed, std::size_t dead_feature_count = 0);

/// Plan structure and cardinalities depend only on (spec, plan index); the
/// environment sets the times. Every node's inclusive time is its own
/// formula cost (times noise) plus its children's inclusive times.
std::vector<PlanTree> gen_plans(const SynthWorkloadSpec& spec, const SynthEnvironment& env);

/// Names of the injected constant attributes ("dead_00", ...).
std::vector<std::string> dead_feature_names(std::size_t count);

/// {"env": ..., "dead_dims": [...], "dead_dim_names": [...], "true_coefficients": ...}
/// dead_dims index the schema built from `plans`.
nlohmann::json synth_manifest(const SynthWorkloadSpec& spec, const SynthEnvironment& env,
                              const std::vector<PlanTree>& plans);

nlohmann::json to_json(const SynthEnvironment& env);

/// Parses the `synth` command's spec document:
/// {"env": {"env_id", "noise_sigma", "scale_factor", "true_coefficients"?},
///  "workload": {"n_plans", "seed", "dead_feature_count", "tables"?, "plan_shapes"?,
///               "card_min"?, "card_max"?, "estimate_sigma"?}}
struct SynthJob {
  SynthEnvironment env;
  SynthWorkloadSpec workload;
};
SynthJob synth_job_from_json(const nlohmann::json& j);

}  // namespace qcfe
