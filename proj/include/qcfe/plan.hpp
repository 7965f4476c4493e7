#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "qcfe/errors.hpp"

namespace qcfe {

enum class OpKind {
  SeqScan,
  IndexScan,
  Sort,
  Aggregate,
  HashJoin,
  MergeJoin,
  NestedLoop,
  Materialize,
  Other,
};

/// Operator tag. Known kinds carry a canonical tag ("SeqScan", "HashJoin",
/// ...); Other keeps the raw "Node Type" string so nothing is lost.
class NodeType {
 public:
  NodeType() = default;
  explicit NodeType(OpKind kind);
  static NodeType other(std::string raw_tag);

  /// Maps a PostgreSQL "Node Type" string ("Seq Scan", "Hash Join", ...) or
  /// a canonical tag ("SeqScan") to a NodeType.
  static NodeType from_string(std::string_view s);

  OpKind kind() const { return kind_; }
  /// Canonical tag used as vocabulary entry and map key.
  const std::string& tag() const { return tag_; }
  /// String written back as "Node Type".
  std::string explain_name() const;

  bool is_join() const;
  bool is_leaf_scan() const;

  friend bool operator==(const NodeType&, const NodeType&) = default;

 private:
  OpKind kind_ = OpKind::Other;
  std::string tag_ = "Other";
};

struct PlanNode {
  NodeType node_type;
  double est_rows = 0;
  double est_width = 0;
  double est_startup_cost = 0;
  double est_total_cost = 0;
  std::optional<double> actual_total_time;  // ms, per loop
  std::optional<double> actual_loops;
  std::optional<double> actual_rows;
  std::optional<std::string> relation;
  std::optional<std::string> index;
  // Non-standard numeric attributes ("Extra Features" object). The synthetic
  // generator uses these to inject label-independent dimensions.
  std::map<std::string, double> extra;
  std::vector<PlanNode> children;

  /// actual_total_time * actual_loops; requires both actuals.
  double inclusive_time_ms() const;
  std::size_t node_count() const;

  friend bool operator==(const PlanNode&, const PlanNode&) = default;
};

struct PlanTree {
  PlanNode root;
  std::string env_id;
  std::string query_id;
  std::optional<double> total_time_ms;

  /// Plan-level cost label: total_time_ms if present, else the root's
  /// inclusive time.
  double label_ms() const;

  friend bool operator==(const PlanTree&, const PlanTree&) = default;
};

/// One operator instance with its own-cost label. raw_node points into the
/// PlanTree it was extracted from and is valid only while that tree lives.
struct LabeledOperator {
  NodeType node_type;
  std::vector<double> input_cards;
  double output_card = 0;
  double own_cost_ms = 0;
  std::string env_id;
  const PlanNode* raw_node = nullptr;
};

/// Accepts a bare node object, {"Plan": node, ...}, the EXPLAIN output array
/// [{"Plan": node, "Execution Time": t}], or a dataset record
/// {"env_id", "query_id", "plan", "total_time_ms"}.
PlanTree parse_plan(std::string_view json_text);
PlanTree parse_plan(const nlohmann::json& doc);

PlanNode parse_node(const nlohmann::json& node, const std::string& where = "$");
nlohmann::json node_to_json(const PlanNode& node);

/// Dataset JSONL record for one tree.
nlohmann::json to_record(const PlanTree& tree);
std::string to_record_line(const PlanTree& tree);

/// Pre-order; one record per node.
std::vector<LabeledOperator> extract_labeled_operators(const PlanTree& tree);

struct LoadOptions {
  bool skip_invalid = false;
};

struct LoadedDataset {
  std::vector<PlanTree> trees;
  std::vector<std::size_t> line_numbers;  // 1-based source line per tree
  Warnings warnings;
};

LoadedDataset load_dataset(const std::string& path, LoadOptions options = {});
LoadedDataset load_dataset_text(std::string_view text, const std::string& origin,
                                LoadOptions options = {});
void write_dataset(const std::string& path, const std::vector<PlanTree>& trees);

/// Visits nodes in pre-order.
template <typename F>
void for_each_node(const PlanNode& node, F&& f) {
  f(node);
  for (const auto& c : node.children) for_each_node(c, f);
}

}  // namespace qcfe
