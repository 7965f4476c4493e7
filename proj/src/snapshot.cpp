#include "qcfe/snapshot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace qcfe {

using nlohmann::json;

namespace {

constexpr double kRidgeFactor = 1e-8;
constexpr int kRefinementSteps = 3;

// log guard only: n = 1 gives 1 * log2(2) = 1, not a zero row
double nlogn(double n) { return n * std::log2(std::max(n, 2.0)); }

}  // namespace

std::vector<double> FormulaSpec::evaluate(const Cardinalities& c) const {
  switch (node_type.kind()) {
    case OpKind::Sort:
      return {nlogn(c.n), 1.0};
    case OpKind::NestedLoop:
      return {c.n1 * c.n2, c.n1, c.n2, 1.0};
    default:
      return {c.n, 1.0};
  }
}

double FormulaSpec::cost(const std::vector<double>& coefficients, const Cardinalities& c) const {
  const auto row = evaluate(c);
  if (coefficients.size() != row.size())
    throw ShapeMismatch(node_type.tag() + ": expected " + std::to_string(row.size()) + " coefficients");
  double s = 0;
  for (std::size_t i = 0; i < row.size(); ++i) s += coefficients[i] * row[i];
  return s;
}

std::optional<FormulaSpec> formula_for(const NodeType& type) {
  FormulaSpec f;
  f.node_type = type;
  switch (type.kind()) {
    case OpKind::SeqScan:
    case OpKind::IndexScan:
    case OpKind::Materialize:
    case OpKind::Aggregate:
    case OpKind::HashJoin:
    case OpKind::MergeJoin:
      f.basis_names = {"n", "1"};
      f.coefficient_names = {"c0", "c1"};
      return f;
    case OpKind::Sort:
      f.basis_names = {"n*log2(n)", "1"};
      f.coefficient_names = {"c0", "c2"};
      return f;
    case OpKind::NestedLoop:
      f.basis_names = {"n1*n2", "n1", "n2", "1"};
      f.coefficient_names = {"c0", "c1", "c2", "c3"};
      return f;
    case OpKind::Other:
      break;
  }
  return std::nullopt;
}

Cardinalities cardinalities_of(const LabeledOperator& op) {
  Cardinalities c;
  c.n = op.output_card;
  if (op.node_type.kind() == OpKind::NestedLoop) {
    if (op.input_cards.size() != 2)
      throw MissingCardinality("NestedLoop needs two input cardinalities, got " +
                               std::to_string(op.input_cards.size()));
    c.n1 = op.input_cards[0];
    c.n2 = op.input_cards[1];
  }
  return c;
}

const std::vector<double>* FeatureSnapshot::find(const std::string& tag) const {
  auto it = coefficients.find(tag);
  return it == coefficients.end() ? nullptr : &it->second;
}

json to_json(const FeatureSnapshot& snap) {
  json ops = json::object();
  for (const auto& [tag, c] : snap.coefficients) ops[tag] = c;
  json diag = json::object();
  for (const auto& [tag, d] : snap.diagnostics)
    diag[tag] = {{"n", d.sample_count}, {"rmse", d.rmse}, {"r2", d.r2}};
  return {{"env_id", snap.env_id}, {"operators", ops}, {"diagnostics", diag}};
}

FeatureSnapshot snapshot_from_json(const json& j) {
  try {
    FeatureSnapshot s;
    s.env_id = j.at("env_id").get<std::string>();
    for (const auto& [tag, c] : j.at("operators").items()) {
      auto coeffs = c.get<std::vector<double>>();
      if (auto f = formula_for(NodeType::from_string(tag)); f && f->size() != coeffs.size())
        throw ShapeMismatch("snapshot operator " + tag + " has " + std::to_string(coeffs.size()) +
                            " coefficients, formula needs " + std::to_string(f->size()));
      s.coefficients[tag] = std::move(coeffs);
    }
    if (auto it = j.find("diagnostics"); it != j.end()) {
      for (const auto& [tag, d] : it->items())
        s.diagnostics[tag] = {d.at("n").get<std::size_t>(), d.at("rmse").get<double>(), d.at("r2").get<double>()};
    }
    return s;
  } catch (const json::exception& e) {
    throw Error(std::string("malformed snapshot document: ") + e.what());
  }
}

FeatureSnapshot load_snapshot(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open snapshot " + path);
  try {
    return snapshot_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw Error(path + ": " + e.what());
  }
}

void save_snapshot(const std::string& path, const FeatureSnapshot& snap) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write snapshot " + path);
  out << to_json(snap).dump(2) << '\n';
}

DesignMatrix design_matrix(const std::vector<LabeledOperator>& ops, const FormulaSpec& spec) {
  DesignMatrix dm;
  dm.basis.resize(static_cast<Eigen::Index>(ops.size()), static_cast<Eigen::Index>(spec.size()));
  dm.target.resize(static_cast<Eigen::Index>(ops.size()));
  for (std::size_t i = 0; i < ops.size(); ++i) {
    const auto& op = ops[i];
    if (op.node_type != spec.node_type)
      throw WrongOperator("design matrix for " + spec.node_type.tag() + " got a " + op.node_type.tag());
    const auto row = spec.evaluate(cardinalities_of(op));
    for (std::size_t k = 0; k < row.size(); ++k)
      dm.basis(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = row[k];
    dm.target(static_cast<Eigen::Index>(i)) = op.own_cost_ms;
  }
  return dm;
}

Eigen::VectorXd solve_least_squares(const Eigen::MatrixXd& basis, const Eigen::VectorXd& target) {
  const Eigen::Index dim = basis.cols();
  // Equilibrate columns so the ridge term is scale-free; n*n2 and the
  // intercept can differ by ten orders of magnitude.
  Eigen::VectorXd scale = basis.colwise().norm().transpose();
  for (Eigen::Index k = 0; k < dim; ++k)
    if (scale(k) == 0.0) scale(k) = 1.0;
  const Eigen::MatrixXd a = basis * scale.cwiseInverse().asDiagonal();

  const Eigen::MatrixXd gram = a.transpose() * a;
  const Eigen::VectorXd rhs = a.transpose() * target;
  const double lambda = kRidgeFactor * gram.trace() / static_cast<double>(dim);
  const Eigen::MatrixXd damped = gram + lambda * Eigen::MatrixXd::Identity(dim, dim);
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(damped);

  // Iterated Tikhonov: each step removes the ridge bias on well-determined
  // directions; directions in the null space of the gram stay at zero.
  Eigen::VectorXd x = ldlt.solve(rhs);
  for (int step = 0; step < kRefinementSteps; ++step) x += ldlt.solve(rhs - gram * x);
  return x.cwiseQuotient(scale);
}

OperatorsByType group_by_type(const std::vector<LabeledOperator>& ops) {
  OperatorsByType out;
  for (const auto& op : ops) out[op.node_type.tag()].push_back(op);
  return out;
}

SnapshotFit fit_snapshot(const OperatorsByType& ops_by_type, const std::string& env_id, Warnings* warnings) {
  SnapshotFit fit;
  fit.snapshot.env_id = env_id;
  for (const auto& [tag, ops] : ops_by_type) {
    if (ops.empty()) continue;
    const auto spec = formula_for(ops.front().node_type);
    if (!spec) {
      fit.omitted.push_back(tag);
      warn(warnings, "no logical cost formula for operator " + tag + "; omitted from snapshot");
      continue;
    }
    if (ops.size() < spec->size()) {
      fit.omitted.push_back(tag);
      warn(warnings, tag + ": " + std::to_string(ops.size()) + " sample(s) for " + std::to_string(spec->size()) +
                         " coefficients; omitted from snapshot");
      continue;
    }
    const auto dm = design_matrix(ops, *spec);
    const Eigen::VectorXd coeffs = solve_least_squares(dm.basis, dm.target);
    const Eigen::VectorXd resid = dm.target - dm.basis * coeffs;

    FitDiagnostics d;
    d.sample_count = ops.size();
    const double n = static_cast<double>(ops.size());
    const double ss_res = resid.squaredNorm();
    const double ss_tot = (dm.target.array() - dm.target.mean()).square().sum();
    d.rmse = std::sqrt(ss_res / n);
    d.r2 = ss_tot > 0 ? 1.0 - ss_res / ss_tot : (ss_res == 0 ? 1.0 : 0.0);

    fit.snapshot.coefficients[tag] = std::vector<double>(coeffs.data(), coeffs.data() + coeffs.size());
    fit.snapshot.diagnostics[tag] = d;
  }
  if (fit.snapshot.coefficients.empty())
    throw NoFittableOperator("environment " + env_id + ": no operator type has enough samples to fit");
  return fit;
}

SnapshotFit fit_snapshot(const std::vector<PlanTree>& trees, const std::string& env_id, Warnings* warnings) {
  std::vector<LabeledOperator> ops;
  for (const auto& t : trees) {
    if (t.env_id != env_id) continue;
    auto part = extract_labeled_operators(t);
    ops.insert(ops.end(), part.begin(), part.end());
  }
  return fit_snapshot(group_by_type(ops), env_id, warnings);
}

}  // namespace qcfe
