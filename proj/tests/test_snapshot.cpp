#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "qcfe/snapshot.hpp"
#include "qcfe/synth.hpp"
#include "test_util.hpp"

using namespace qcfe;

namespace {

LabeledOperator unary(OpKind kind, double n, double cost) {
  LabeledOperator op;
  op.node_type = NodeType(kind);
  op.output_card = n;
  op.input_cards = {n};
  op.own_cost_ms = cost;
  return op;
}

LabeledOperator nested_loop(double n1, double n2, double cost) {
  LabeledOperator op;
  op.node_type = NodeType(OpKind::NestedLoop);
  op.input_cards = {n1, n2};
  op.output_card = n1 * n2;
  op.own_cost_ms = cost;
  return op;
}

std::vector<LabeledOperator> noisy_scans(std::uint64_t seed, std::size_t count) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> card(10, 5000);
  std::normal_distribution<double> noise(0, 3);
  std::vector<LabeledOperator> ops;
  for (std::size_t i = 0; i < count; ++i) {
    const double n = std::round(card(rng));
    ops.push_back(unary(OpKind::SeqScan, n, 0.02 * n + 4 + noise(rng)));
  }
  return ops;
}

}  // namespace

TEST(DesignMatrix, SeqScanRow) {
  const auto spec = *formula_for(NodeType(OpKind::SeqScan));
  const auto dm = design_matrix({unary(OpKind::SeqScan, 10, 1)}, spec);
  ASSERT_EQ(dm.basis.cols(), 2);
  EXPECT_DOUBLE_EQ(dm.basis(0, 0), 10);
  EXPECT_DOUBLE_EQ(dm.basis(0, 1), 1);
  EXPECT_DOUBLE_EQ(dm.target(0), 1);
}

TEST(DesignMatrix, SortRowAtOneUsesLogGuard) {
  const auto spec = *formula_for(NodeType(OpKind::Sort));
  const auto dm = design_matrix({unary(OpKind::Sort, 1, 1), unary(OpKind::Sort, 8, 1)}, spec);
  EXPECT_DOUBLE_EQ(dm.basis(0, 0), 1);
  EXPECT_DOUBLE_EQ(dm.basis(0, 1), 1);
  EXPECT_DOUBLE_EQ(dm.basis(1, 0), 24);
  EXPECT_EQ(spec.coefficient_names, (std::vector<std::string>{"c0", "c2"}));
}

TEST(DesignMatrix, NestedLoopRow) {
  const auto spec = *formula_for(NodeType(OpKind::NestedLoop));
  const auto dm = design_matrix({nested_loop(3, 4, 1)}, spec);
  ASSERT_EQ(dm.basis.cols(), 4);
  EXPECT_EQ(dm.basis.row(0).transpose(), Eigen::Vector4d(12, 3, 4, 1));
}

TEST(DesignMatrix, Errors) {
  const auto spec = *formula_for(NodeType(OpKind::SeqScan));
  EXPECT_THROW(design_matrix({unary(OpKind::Sort, 1, 1)}, spec), WrongOperator);
  LabeledOperator nl = nested_loop(3, 4, 1);
  nl.input_cards = {3};
  EXPECT_THROW(design_matrix({nl}, *formula_for(NodeType(OpKind::NestedLoop))), MissingCardinality);
  EXPECT_FALSE(formula_for(NodeType::other("Gather")).has_value());
}

TEST(FitSnapshot, TwoPointLine) {
  OperatorsByType ops{{"SeqScan", {unary(OpKind::SeqScan, 10, 25), unary(OpKind::SeqScan, 20, 45)}}};
  const auto fit = fit_snapshot(ops, "e");
  const auto& c = fit.snapshot.coefficients.at("SeqScan");
  EXPECT_NEAR(c[0], 2, 1e-9);
  EXPECT_NEAR(c[1], 5, 1e-9);
  EXPECT_EQ(fit.snapshot.diagnostics.at("SeqScan").sample_count, 2u);
}

TEST(FitSnapshot, SortNLogNRecovery) {
  std::vector<LabeledOperator> sorts;
  for (double n : {4.0, 8.0, 16.0, 32.0}) sorts.push_back(unary(OpKind::Sort, n, 3 * n * std::log2(n) + 7));
  const auto fit = fit_snapshot(OperatorsByType{{"Sort", sorts}}, "e");
  const auto& c = fit.snapshot.coefficients.at("Sort");
  EXPECT_NEAR(c[0], 3, 3e-6);
  EXPECT_NEAR(c[1], 7, 7e-6);
}

TEST(FitSnapshot, UnderdeterminedTypeOmittedWithWarning) {
  OperatorsByType ops{{"SeqScan", {unary(OpKind::SeqScan, 10, 25), unary(OpKind::SeqScan, 20, 45)}},
                      {"NestedLoop", {nested_loop(3, 4, 1), nested_loop(5, 6, 2)}}};
  Warnings w;
  const auto fit = fit_snapshot(ops, "e", &w);
  EXPECT_FALSE(fit.snapshot.coefficients.count("NestedLoop"));
  EXPECT_EQ(fit.omitted, (std::vector<std::string>{"NestedLoop"}));
  EXPECT_FALSE(w.empty());
}

TEST(FitSnapshot, NothingFittableThrows) {
  OperatorsByType ops{{"SeqScan", {unary(OpKind::SeqScan, 10, 25)}}};
  EXPECT_THROW(fit_snapshot(ops, "e"), NoFittableOperator);
}

TEST(FitSnapshot, ConstantCardinalityDoesNotFail) {
  OperatorsByType ops{{"SeqScan", {unary(OpKind::SeqScan, 10, 25), unary(OpKind::SeqScan, 10, 27)}}};
  const auto fit = fit_snapshot(ops, "e");
  const auto& c = fit.snapshot.coefficients.at("SeqScan");
  EXPECT_TRUE(std::isfinite(c[0]) && std::isfinite(c[1]));
  EXPECT_NEAR(10 * c[0] + c[1], 26, 1e-6);
}

TEST(LeastSquares, ResidualOrthogonality) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto ops = noisy_scans(seed, 50);
    const auto dm = design_matrix(ops, *formula_for(NodeType(OpKind::SeqScan)));
    const Eigen::VectorXd c = solve_least_squares(dm.basis, dm.target);
    const Eigen::VectorXd g = dm.basis.transpose() * (dm.target - dm.basis * c);
    EXPECT_LE(g.lpNorm<Eigen::Infinity>(), 1e-6 * dm.target.lpNorm<Eigen::Infinity>()) << "seed " << seed;
  }
}

TEST(LeastSquares, MatchesIndependentQrSolve) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto ops = noisy_scans(seed, 40);
    const auto dm = design_matrix(ops, *formula_for(NodeType(OpKind::SeqScan)));
    const Eigen::VectorXd ours = solve_least_squares(dm.basis, dm.target);
    const Eigen::VectorXd qr = dm.basis.colPivHouseholderQr().solve(dm.target);
    EXPECT_LE((ours - qr).cwiseAbs().maxCoeff(), 1e-6 * qr.cwiseAbs().maxCoeff());
  }
}

TEST(FitSnapshot, ExactRecoveryForEveryFormula) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> card(2, 3000);
  for (OpKind kind : {OpKind::SeqScan, OpKind::IndexScan, OpKind::Sort, OpKind::Aggregate, OpKind::HashJoin,
                      OpKind::MergeJoin, OpKind::Materialize, OpKind::NestedLoop}) {
    const auto spec = *formula_for(NodeType(kind));
    std::vector<double> truth;
    for (std::size_t i = 0; i < spec.size(); ++i) truth.push_back(0.5 + static_cast<double>(i));
    std::vector<LabeledOperator> ops;
    for (int i = 0; i < 30; ++i) {
      LabeledOperator op = kind == OpKind::NestedLoop ? nested_loop(std::round(card(rng)), std::round(card(rng)), 0)
                                                      : unary(kind, std::round(card(rng)), 0);
      op.own_cost_ms = spec.cost(truth, cardinalities_of(op));
      ops.push_back(op);
    }
    const auto fit = fit_snapshot(OperatorsByType{{spec.node_type.tag(), ops}}, "e");
    const auto& c = fit.snapshot.coefficients.at(spec.node_type.tag());
    for (std::size_t i = 0; i < truth.size(); ++i)
      EXPECT_NEAR(c[i], truth[i], 1e-6 * std::abs(truth[i])) << spec.node_type.tag() << " c" << i;
  }
}

TEST(FitSnapshot, ScaleEquivariance) {
  auto ops = noisy_scans(3, 40);
  const auto base = fit_snapshot(OperatorsByType{{"SeqScan", ops}}, "e").snapshot.coefficients.at("SeqScan");
  for (auto& op : ops) op.own_cost_ms *= 7.5;
  const auto scaled = fit_snapshot(OperatorsByType{{"SeqScan", ops}}, "e").snapshot.coefficients.at("SeqScan");
  for (std::size_t i = 0; i < base.size(); ++i) EXPECT_NEAR(scaled[i], 7.5 * base[i], 1e-9 * std::abs(7.5 * base[i]));
}

TEST(FitSnapshot, Deterministic) {
  const auto plans = gen_plans(default_workload(80, 4), base_environment("e", 0.1));
  const auto a = fit_snapshot(plans, "e").snapshot;
  const auto b = fit_snapshot(plans, "e").snapshot;
  EXPECT_EQ(a.coefficients, b.coefficients);
}

TEST(FitSnapshot, DiagnosticsOnPerfectFit) {
  const auto plans = gen_plans(default_workload(80, 4), base_environment("e", 0.0));
  const auto snap = fit_snapshot(plans, "e").snapshot;
  for (const auto& [tag, d] : snap.diagnostics) {
    EXPECT_NEAR(d.r2, 1.0, 1e-9) << tag;
    EXPECT_GE(d.sample_count, snap.coefficients.at(tag).size());
  }
}

TEST(SnapshotJson, RoundTripAndLayout) {
  const auto plans = gen_plans(default_workload(50, 2), base_environment("e", 0.1));
  const auto snap = fit_snapshot(plans, "e").snapshot;
  const auto j = to_json(snap);
  EXPECT_EQ(j.at("env_id"), "e");
  EXPECT_TRUE(j.at("operators").contains("SeqScan"));
  EXPECT_TRUE(j.at("diagnostics").at("SeqScan").contains("n"));
  const auto back = snapshot_from_json(j);
  EXPECT_EQ(back.coefficients, snap.coefficients);

  qcfe::testing::TempDir dir("qcfe_snap");
  save_snapshot(dir.file("s.json"), snap);
  EXPECT_EQ(load_snapshot(dir.file("s.json")).coefficients, snap.coefficients);
}
