#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "qcfe/errors.hpp"
#include "qcfe/plan.hpp"

namespace qcfe {

/// Cardinalities a logical cost formula is evaluated at. `n` is the
/// operator's output cardinality; `n1`/`n2` are its two input cardinalities
/// (used by NestedLoop only).
struct Cardinalities {
  double n = 0;
  double n1 = 0;
  double n2 = 0;
};

/// Logical cost formula of one operator type:
///   SeqScan, Materialize, Aggregate, IndexScan, MergeJoin, HashJoin: c0*n + c1
///   Sort:       c0*n*log2(max(n,2)) + c2
///   NestedLoop: c0*n1*n2 + c1*n1 + c2*n2 + c3
/// The last basis term is always the intercept.
struct FormulaSpec {
  NodeType node_type;
  std::vector<std::string> basis_names;
  std::vector<std::string> coefficient_names;

  std::size_t size() const { return coefficient_names.size(); }
  std::vector<double> evaluate(const Cardinalities& c) const;
  double cost(const std::vector<double>& coefficients, const Cardinalities& c) const;
};

/// nullopt for operator types with no logical formula (Other).
std::optional<FormulaSpec> formula_for(const NodeType& type);

/// Cardinalities of a labeled operator as consumed by its formula.
/// Throws MissingCardinality when a NestedLoop lacks two inputs.
Cardinalities cardinalities_of(const LabeledOperator& op);

struct FitDiagnostics {
  std::size_t sample_count = 0;
  double rmse = 0;
  double r2 = 0;
};

struct FeatureSnapshot {
  std::string env_id;
  std::map<std::string, std::vector<double>> coefficients;
  std::map<std::string, FitDiagnostics> diagnostics;

  const std::vector<double>* find(const std::string& tag) const;
};

nlohmann::json to_json(const FeatureSnapshot& snap);
FeatureSnapshot snapshot_from_json(const nlohmann::json& j);
FeatureSnapshot load_snapshot(const std::string& path);
void save_snapshot(const std::string& path, const FeatureSnapshot& snap);

struct DesignMatrix {
  Eigen::MatrixXd basis;
  Eigen::VectorXd target;
};

DesignMatrix design_matrix(const std::vector<LabeledOperator>& ops, const FormulaSpec& spec);

/// Ridge-damped least squares on the column-equilibrated design. Exposed for
/// tests; fit_snapshot is the normal entry point.
Eigen::VectorXd solve_least_squares(const Eigen::MatrixXd& basis, const Eigen::VectorXd& target);

using OperatorsByType = std::map<std::string, std::vector<LabeledOperator>>;

OperatorsByType group_by_type(const std::vector<LabeledOperator>& ops);

struct SnapshotFit {
  FeatureSnapshot snapshot;
  std::vector<std::string> omitted;  // under-determined or formula-less types
};

SnapshotFit fit_snapshot(const OperatorsByType& ops_by_type, const std::string& env_id,
                         Warnings* warnings = nullptr);

/// Extracts labeled operators from every tree of one environment and fits.
SnapshotFit fit_snapshot(const std::vector<PlanTree>& trees, const std::string& env_id,
                         Warnings* warnings = nullptr);

}  // namespace qcfe
