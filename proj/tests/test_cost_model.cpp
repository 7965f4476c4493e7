#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "qcfe/cost_model.hpp"
#include "qcfe/synth.hpp"
#include "test_util.hpp"

using namespace qcfe;
using namespace qcfe::testing;

namespace {

struct Fixture {
  std::vector<PlanTree> plans;
  FeatureSchema schema;
  std::vector<EncodedPlan> data;
};

Fixture synth_fixture(std::size_t n, std::uint64_t seed) {
  Fixture f;
  f.plans = gen_plans(default_workload(n, seed), base_environment("e", 0.1));
  f.schema = build_schema(f.plans, SchemaOptions{false});
  f.data = encode_plans(f.plans, f.schema);
  return f;
}

TrainConfig small_cfg(std::size_t iters, std::uint64_t seed = 1) {
  TrainConfig c;
  c.iterations = iters;
  c.batch_size = 16;
  c.learning_rate = 1e-2;
  c.seed = seed;
  c.hidden_sizes = {8, 4};
  c.hidden_width = 3;
  return c;
}

// Pushes every bias away from zero so relu kinks are unlikely at the probe points.
void jitter_biases(CostModel& m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.1, 0.5);
  for (auto& [tag, unit] : m.units)
    for (auto& l : unit.layers)
      for (Eigen::Index i = 0; i < l.b.size(); ++i) l.b(i) += u(rng);
}

double max_fd_error(CostModel model, const std::vector<EncodedPlan>& data, const TrainConfig& cfg) {
  std::vector<const EncodedPlan*> batch;
  for (const auto& p : data) batch.push_back(&p);
  const auto lg = loss_and_gradient(model, batch, cfg);
  const double eps = 1e-4;
  double worst = 0;
  for (auto& [tag, unit] : model.units) {
    for (std::size_t l = 0; l < unit.layers.size(); ++l) {
      auto& w = unit.layers[l].w;
      for (Eigen::Index i = 0; i < w.rows(); ++i) {
        for (Eigen::Index j = 0; j < w.cols(); j += 3) {
          const double keep = w(i, j);
          w(i, j) = keep + eps;
          const double up = mean_loss(model, data, cfg);
          w(i, j) = keep - eps;
          const double down = mean_loss(model, data, cfg);
          w(i, j) = keep;
          const double fd = (up - down) / (2 * eps);
          const double an = lg.grads.at(tag).w[l](i, j);
          if (std::abs(fd) < 1e-7 && std::abs(an) < 1e-7) continue;
          worst = std::max(worst, std::abs(fd - an) / std::max(std::abs(fd), std::abs(an)));
        }
      }
    }
  }
  return worst;
}

}  // namespace

TEST(CostModel, BackpropMatchesFiniteDifferencesFlat) {
  const auto f = synth_fixture(12, 3);
  auto cfg = small_cfg(1);
  CostModel m = init_model(ModelKind::Flat, f.schema, cfg);
  jitter_biases(m, 4);
  EXPECT_LE(max_fd_error(m, f.data, cfg), 1e-3);
  cfg.loss = Loss::Mse;
  EXPECT_LE(max_fd_error(m, f.data, cfg), 1e-3);
}

TEST(CostModel, BackpropMatchesFiniteDifferencesPlanStructured) {
  const auto f = synth_fixture(8, 5);
  auto cfg = small_cfg(1);
  CostModel m = init_model(ModelKind::PlanStructured, f.schema, cfg);
  jitter_biases(m, 6);
  EXPECT_LE(max_fd_error(m, f.data, cfg), 1e-3);
  cfg.supervise_all_nodes = true;
  EXPECT_LE(max_fd_error(m, f.data, cfg), 1e-3);
}

TEST(CostModel, SeededTrainingIsBitwiseDeterministic) {
  const auto f = synth_fixture(40, 7);
  for (auto kind : {ModelKind::Flat, ModelKind::PlanStructured}) {
    const auto a = train(f.data, f.schema, small_cfg(5, 9), kind);
    const auto b = train(f.data, f.schema, small_cfg(5, 9), kind);
    EXPECT_EQ(export_weights(a).at("units").dump(), export_weights(b).at("units").dump());
    EXPECT_EQ(a.meta.loss_curve, b.meta.loss_curve);
  }
}

TEST(CostModel, TrainingReducesLossWithMonotoneCurve) {
  const auto f = synth_fixture(200, 11);
  auto cfg = small_cfg(400);
  cfg.batch_size = 32;
  const auto m = train(f.data, f.schema, cfg, ModelKind::Flat);
  const auto& curve = m.meta.loss_curve;
  ASSERT_EQ(curve.size(), 401u);
  EXPECT_LT(curve.back(), curve.front());
  for (std::size_t i = 1; i < curve.size(); ++i) EXPECT_LE(curve[i], curve[i - 1]);
  EXPECT_NEAR(mean_loss(m, f.data, cfg), curve.back(), 1e-9 * (1 + curve.back()));
}

TEST(CostModel, PlanStructuredCurveIsMonotone) {
  const auto f = synth_fixture(40, 13);
  const auto m = train(f.data, f.schema, small_cfg(20), ModelKind::PlanStructured);
  for (std::size_t i = 1; i < m.meta.loss_curve.size(); ++i)
    EXPECT_LE(m.meta.loss_curve[i], m.meta.loss_curve[i - 1]);
}

TEST(CostModel, SingleNodePlanUsesOneUnit) {
  const auto f = synth_fixture(20, 2);
  const auto m = init_model(ModelKind::PlanStructured, f.schema, small_cfg(1));
  const auto plan = encode_plan(tree_of(scan_json("orders", 50, 3)), f.schema);
  ASSERT_EQ(plan.nodes.size(), 1u);
  const double direct = m.unit_for("SeqScan").forward(operator_input(m, plan.nodes[0].x))(0);
  EXPECT_EQ(raw_output(m, plan), direct);
  EXPECT_EQ(operator_raw_output(m, plan.nodes[0].x, "SeqScan"), direct);
}

TEST(CostModel, PredictionClampsAtFloor) {
  EXPECT_EQ(to_cost_ms(0.0), 1e-6);
  EXPECT_EQ(to_cost_ms(-5.0), 1e-6);
  EXPECT_NEAR(to_cost_ms(std::log1p(42.0)), 42.0, 1e-12);

  const auto f = synth_fixture(10, 2);
  CostModel m = init_model(ModelKind::Flat, f.schema, small_cfg(1));
  for (auto& l : m.units.at(CostModel::kFlatUnit).layers) {
    l.w.setZero();
    l.b.setZero();
  }
  FeatureVector zero{std::vector<double>(f.schema.dimension(), 0.0), f.schema.hash()};
  EXPECT_EQ(predict_operator(m, zero, "SeqScan"), 1e-6);
}

TEST(CostModel, HandSetLinearUnit) {
  const auto f = synth_fixture(10, 2);
  CostModel m = init_model(ModelKind::Flat, f.schema, small_cfg(1));
  DenseLayer l;
  l.w = Eigen::MatrixXd::Zero(1, static_cast<Eigen::Index>(f.schema.dimension()));
  l.w(0, 0) = 1;
  l.b = Eigen::VectorXd::Zero(1);
  l.act = Activation::Identity;
  m.units.at(CostModel::kFlatUnit).layers = {l};
  FeatureVector x{std::vector<double>(f.schema.dimension(), 0.0), f.schema.hash()};
  x.values[0] = 2;
  EXPECT_EQ(operator_raw_output(m, x, "SeqScan"), 2.0);
}

TEST(CostModel, ToyReluLayerEvaluatesToZero) {
  Mlp net;
  DenseLayer h1;
  h1.w = Eigen::RowVector4d(-3, 1, 6, -1);
  h1.b = Eigen::VectorXd::Constant(1, 5);
  h1.act = Activation::Relu;
  net.layers = {h1};
  EXPECT_EQ(net.forward(Eigen::Vector4d(1, 0, 0, 50))(0), 0.0);
  EXPECT_EQ(net.trace(Eigen::Vector4d(1, 0, 0, 50)).pre[0](0), -48.0);
}

TEST(CostModel, MemorizesASinglePoint) {
  const auto f = synth_fixture(10, 2);
  auto cfg = small_cfg(300);
  cfg.batch_size = 1;
  std::vector<EncodedPlan> one{single_operator_plan(f.data[0].nodes[0].x, f.data[0].nodes[0].tag, 37.0)};
  const auto m = train(one, f.schema, cfg, ModelKind::Flat);
  const double r = operator_raw_output(m, one[0].nodes[0].x, one[0].nodes[0].tag) - std::log1p(37.0);
  EXPECT_LE(r * r, m.meta.loss_curve.back() + 1e-12);
  EXPECT_LT(m.meta.loss_curve.back(), 1e-6);
}

TEST(CostModel, MaskedDimensionsHaveNoEffect) {
  auto f = synth_fixture(40, 17);
  const std::size_t k = f.schema.index_of("num:est_rows_log");
  f.schema.active_mask[k] = false;
  const auto data = encode_plans(f.plans, f.schema);
  const auto m = train(data, f.schema, small_cfg(10), ModelKind::Flat);
  auto tree = f.plans[0];
  const double before = predict(m, encode_plan(tree, f.schema));
  tree.root.est_rows *= 1000;
  EXPECT_EQ(predict(m, encode_plan(tree, f.schema)), before);
}

TEST(CostModel, ChildOrderInvariance) {
  const auto f = synth_fixture(40, 19);
  const auto m = train(f.data, f.schema, small_cfg(5), ModelKind::PlanStructured);
  for (const auto& p : f.data) {
    auto q = p;
    for (auto& n : q.nodes) std::reverse(n.children.begin(), n.children.end());
    EXPECT_NEAR(raw_output(m, q), raw_output(m, p), 1e-12 * (1 + std::abs(raw_output(m, p))));
  }
}

TEST(CostModel, Errors) {
  const auto f = synth_fixture(10, 2);
  auto data = f.data;
  data[0].label_ms = 0;
  EXPECT_THROW(train(data, f.schema, small_cfg(1), ModelKind::Flat), NonPositiveLabel);
  data = f.data;
  data[1].schema_hash = "x";
  EXPECT_THROW(train(data, f.schema, small_cfg(1), ModelKind::Flat), SchemaMismatch);
  auto cfg = small_cfg(1);
  cfg.learning_rate = 0;
  EXPECT_THROW(train(f.data, f.schema, cfg, ModelKind::Flat), InvalidArgument);
  EXPECT_THROW(train(f.data, f.schema, small_cfg(0), ModelKind::Flat), InvalidArgument);
  const auto m = init_model(ModelKind::Flat, f.schema, small_cfg(1));
  EXPECT_THROW(predict(m, data[1]), SchemaMismatch);
}

TEST(CostModel, FineTuneZeroIterationsKeepsWeights) {
  const auto f = synth_fixture(30, 23);
  const auto m = train(f.data, f.schema, small_cfg(3), ModelKind::Flat);
  EXPECT_EQ(export_weights(fine_tune(m, f.data, small_cfg(0))).dump(), export_weights(m).dump());
}

TEST(CostModel, FineTuneReparametrizationPreservesFunction) {
  // A vanishing step isolates the round trip through standardized input
  // coordinates: the function must come back unchanged.
  const auto f = synth_fixture(30, 29);
  const auto m = train(f.data, f.schema, small_cfg(3), ModelKind::PlanStructured);
  auto cfg = small_cfg(1);
  cfg.learning_rate = 1e-300;
  const auto t = fine_tune(m, f.data, cfg);
  for (const auto& p : f.data) EXPECT_NEAR(raw_output(t, p), raw_output(m, p), 1e-9);
}

TEST(WeightDocument, RoundTrip) {
  const auto f = synth_fixture(30, 31);
  for (auto kind : {ModelKind::Flat, ModelKind::PlanStructured}) {
    const auto m = train(f.data, f.schema, small_cfg(2), kind);
    const auto back = import_weights(export_weights(m));
    for (const auto& p : f.data) EXPECT_EQ(predict(back, p), predict(m, p));
    TempDir dir("qcfe_model");
    save_model(dir.file("m.json"), m);
    EXPECT_EQ(export_weights(load_model(dir.file("m.json"))), export_weights(m));
  }
}

TEST(WeightDocument, TruncatedMatrixAndFutureVersion) {
  const auto f = synth_fixture(10, 37);
  const auto doc = export_weights(init_model(ModelKind::Flat, f.schema, small_cfg(1)));
  EXPECT_EQ(doc.at("version"), 1);
  auto cut = doc;
  cut["units"]["flat"]["layers"][0]["w"][0].erase(0);
  EXPECT_THROW(import_weights(cut), ShapeMismatch);
  auto rows = doc;
  rows["units"]["flat"]["layers"][1]["w"].erase(0);
  EXPECT_THROW(import_weights(rows), ShapeMismatch);
  auto future = doc;
  future["version"] = 2;
  EXPECT_THROW(import_weights(future), VersionMismatch);
}
