#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "qcfe/featurize.hpp"
#include "qcfe/synth.hpp"
#include "test_util.hpp"

using namespace qcfe;
using namespace qcfe::testing;

namespace {

std::vector<PlanTree> small_workload() {
  return {tree_of(op_json("Sort", 5, 15, {scan_json("b", 5, 10)})),
          tree_of(op_json("Hash Join", 10, 30, {scan_json("a", 5, 10), scan_json("b", 7, 12)}))};
}

FeatureSnapshot snap_of(const std::string& env, std::map<std::string, std::vector<double>> c) {
  FeatureSnapshot s;
  s.env_id = env;
  s.coefficients = std::move(c);
  return s;
}

}  // namespace

TEST(BuildSchema, SortedVocabularies) {
  const auto s = build_schema(small_workload());
  EXPECT_EQ(s.tables, (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(s.node_types, (std::vector<std::string>{"HashJoin", "SeqScan", "Sort"}));
  EXPECT_EQ(s.active_mask.size(), s.dimension());
  for (bool b : s.active_mask) EXPECT_TRUE(b);
  EXPECT_EQ(s.snapshot_dims.size(), kSnapshotSlots);
}

TEST(BuildSchema, SeqScanOnlyWorkload) {
  const auto s = build_schema({tree_of(scan_json("a", 5, 10))});
  EXPECT_EQ(s.node_types, (std::vector<std::string>{"SeqScan"}));
}

TEST(BuildSchema, DeterministicHashAndEmptyError) {
  EXPECT_EQ(build_schema(small_workload()).hash(), build_schema(small_workload()).hash());
  EXPECT_NE(build_schema(small_workload()).hash(), build_schema(small_workload(), SchemaOptions{false}).hash());
  EXPECT_THROW(build_schema({}), EmptyWorkload);
}

TEST(BuildSchema, DimensionNamesAreUnique) {
  const auto plans = gen_plans(default_workload(50, 3, 4), base_environment("e"));
  const auto s = build_schema(plans);
  const auto names = s.dimension_names();
  ASSERT_EQ(names.size(), s.dimension());
  EXPECT_EQ(std::set<std::string>(names.begin(), names.end()).size(), names.size());
  EXPECT_EQ(names[s.index_of("num:extra:dead_00")], "num:extra:dead_00");
  EXPECT_THROW(s.index_of("num:nope"), DimensionMismatch);
}

TEST(EncodeOperator, OneHotTypeSection) {
  const auto s = build_schema(small_workload());
  const auto sort = parse_node(op_json("Sort", 5, 15, {scan_json("b", 5, 10)}));
  const auto v = encode_operator(sort, s);
  EXPECT_EQ(std::vector<double>(v.values.begin(), v.values.begin() + 3), (std::vector<double>{0, 0, 1}));
  EXPECT_DOUBLE_EQ(v.values[s.index_of("num:child1_rows_log")], std::log1p(5.0));
  EXPECT_DOUBLE_EQ(v.values[s.index_of("num:child2_rows_log")], 0.0);
}

TEST(EncodeOperator, ZeroRowsGivesZero) {
  const auto s = build_schema(small_workload());
  const auto v = encode_operator(parse_node(scan_json("a", 0, 1)), s);
  EXPECT_DOUBLE_EQ(v.values[s.index_of("num:est_rows_log")], 0.0);
}

TEST(EncodeOperator, UnseenTableWarnsAndStaysZero) {
  const auto s = build_schema(small_workload());
  Warnings w;
  const auto v = encode_operator(parse_node(scan_json("zzz", 5, 1)), s, &w);
  for (std::size_t k = s.table_offset(); k < s.index_offset(); ++k) EXPECT_EQ(v.values[k], 0.0);
  ASSERT_EQ(w.size(), 1u);
  EXPECT_NE(w[0].find("zzz"), std::string::npos);
}

TEST(EncodeOperator, PureFunction) {
  const auto plans = gen_plans(default_workload(20, 8), base_environment("e"));
  const auto s = build_schema(plans);
  for (const auto& t : plans) EXPECT_EQ(encode_operator(t.root, s), encode_operator(t.root, s));
}

TEST(ApplyMask, ZeroesInactiveAndIsIdempotent) {
  auto s = build_schema(small_workload());
  s.active_mask[0] = false;
  s.active_mask[s.index_of("num:est_rows_log")] = false;
  FeatureVector v{std::vector<double>(s.dimension(), 3.0), s.hash()};
  const auto once = apply_mask(v, s);
  EXPECT_EQ(once.values[0], 0.0);
  EXPECT_EQ(once.values[s.index_of("num:est_rows_log")], 0.0);
  EXPECT_EQ(once.values[1], 3.0);
  EXPECT_EQ(apply_mask(once, s), once);
}

TEST(ApplyMask, SchemaMismatch) {
  const auto s = build_schema(small_workload());
  FeatureVector v{std::vector<double>(s.dimension(), 0.0), "other"};
  EXPECT_THROW(apply_mask(v, s), SchemaMismatch);
  FeatureVector short_v{std::vector<double>(2, 0.0), s.hash()};
  EXPECT_THROW(apply_mask(short_v, s), DimensionMismatch);
}

TEST(ApplySnapshot, RawPlacementForSingleEnvironment) {
  const auto s = build_schema(small_workload());
  const auto node = parse_node(scan_json("a", 5, 1));
  const auto v = apply_snapshot(encode_operator(node, s), snap_of("e", {{"SeqScan", {2, 5}}}), node.node_type, s);
  const auto off = s.snapshot_offset();
  EXPECT_EQ(std::vector<double>(v.values.begin() + off, v.values.end()), (std::vector<double>{2, 5, 0, 0}));
}

TEST(ApplySnapshot, StandardizedAcrossEnvironments) {
  const auto s = build_schema(small_workload())
                     .with_snapshot_norm({snap_of("e1", {{"SeqScan", {2, 5}}}), snap_of("e2", {{"SeqScan", {4, 9}}})});
  const auto node = parse_node(scan_json("a", 5, 1));
  const auto v = apply_snapshot(encode_operator(node, s), snap_of("e1", {{"SeqScan", {2, 5}}}), node.node_type, s);
  const auto off = s.snapshot_offset();
  // Two values, population z-score: the lower one maps to -1.
  EXPECT_NEAR(v.values[off], -1.0, 1e-12);
  EXPECT_NEAR(v.values[off + 1], -1.0, 1e-12);
  EXPECT_EQ(v.values[off + 2], 0.0);
}

TEST(ApplySnapshot, SortInterceptGoesToSlotC2) {
  const auto s = build_schema(small_workload());
  const auto node = parse_node(op_json("Sort", 5, 15, {scan_json("b", 5, 10)}));
  const auto v = apply_snapshot(encode_operator(node, s), snap_of("e", {{"Sort", {3, 7}}}), node.node_type, s);
  const auto off = s.snapshot_offset();
  EXPECT_EQ(std::vector<double>(v.values.begin() + off, v.values.end()), (std::vector<double>{3, 0, 7, 0}));
}

TEST(ApplySnapshot, FallbackAndMissing) {
  const auto s = build_schema(small_workload());
  const auto node = parse_node(scan_json("a", 5, 1));
  const auto snap = snap_of("e", {{"Sort", {1, 1}}});
  EXPECT_THROW(apply_snapshot(encode_operator(node, s), snap, node.node_type, s), MissingOperatorSnapshot);
  const auto v = apply_snapshot(encode_operator(node, s), snap, node.node_type, s, SnapshotFallback::Zeros);
  for (std::size_t k = s.snapshot_offset(); k < s.dimension(); ++k) EXPECT_EQ(v.values[k], 0.0);
}

TEST(ApplySnapshot, EnvironmentsDifferOnlyInSnapshotDims) {
  const auto s = build_schema(small_workload());
  const auto node = parse_node(scan_json("a", 5, 1));
  const auto x = encode_operator(node, s);
  const auto a = apply_snapshot(x, snap_of("e1", {{"SeqScan", {2, 5}}}), node.node_type, s);
  const auto b = apply_snapshot(x, snap_of("e2", {{"SeqScan", {4, 10}}}), node.node_type, s);
  for (std::size_t k = 0; k < s.dimension(); ++k) {
    if (k < s.snapshot_offset()) EXPECT_EQ(a.values[k], b.values[k]);
  }
  EXPECT_NE(a.values[s.snapshot_offset()], b.values[s.snapshot_offset()]);
}

TEST(EncodePlan, PreorderWithChildIndices) {
  const auto plans = small_workload();
  const auto s = build_schema(plans);
  const auto e = encode_plan(plans[1], s);
  ASSERT_EQ(e.nodes.size(), 3u);
  EXPECT_EQ(e.nodes[0].tag, "HashJoin");
  EXPECT_EQ(e.nodes[0].children, (std::vector<std::size_t>{1, 2}));
  EXPECT_DOUBLE_EQ(e.label_ms, 30);
  EXPECT_DOUBLE_EQ(e.nodes[1].label_ms, 10);
}

TEST(EncodePlan, MissingEnvironmentSnapshot) {
  const auto plans = small_workload();
  const auto s = build_schema(plans);
  SnapshotSet none;
  Warnings w;
  encode_plan(plans[0], s, EncodeOptions{&none, SnapshotFallback::Zeros}, &w);
  EXPECT_EQ(w.size(), 1u);
  EXPECT_THROW(encode_plan(plans[0], s, EncodeOptions{&none, SnapshotFallback::None}), MissingOperatorSnapshot);
}

TEST(SchemaJson, RoundTripPreservesHashMaskAndNorm) {
  auto s = build_schema(small_workload())
               .with_snapshot_norm({snap_of("e1", {{"SeqScan", {2, 5}}}), snap_of("e2", {{"SeqScan", {4, 9}}})});
  s.active_mask[1] = false;
  const auto back = schema_from_json(to_json(s));
  EXPECT_EQ(back.hash(), s.hash());
  EXPECT_EQ(back.active_mask, s.active_mask);
  EXPECT_TRUE(back.snapshot_norm.enabled);
  EXPECT_EQ(back.snapshot_norm.mean, s.snapshot_norm.mean);

  auto j = to_json(s);
  j["hash"] = "deadbeef";
  EXPECT_THROW(schema_from_json(j), SchemaMismatch);
}
