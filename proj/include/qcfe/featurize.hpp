#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "qcfe/errors.hpp"
#include "qcfe/plan.hpp"
#include "qcfe/snapshot.hpp"

namespace qcfe {

inline constexpr std::size_t kSnapshotSlots = 4;

/// Per-(operator type, slot) z-score statistics for snapshot coefficients.
/// Disabled when the training workload covered a single environment.
struct SnapshotNorm {
  bool enabled = false;
  std::map<std::string, std::array<double, kSnapshotSlots>> mean;
  std::map<std::string, std::array<double, kSnapshotSlots>> stddev;
};

/// Layout of the operator encoding:
///   [node type one-hot | table one-hot | index one-hot | numeric | snapshot]
/// The hash covers the layout only, so a reduced schema (different mask)
/// stays compatible with models trained on the full one.
class FeatureSchema {
 public:
  std::vector<std::string> node_types;
  std::vector<std::string> tables;
  std::vector<std::string> indexes;
  std::vector<std::string> numeric_dims;
  std::vector<std::string> snapshot_dims;
  std::vector<bool> active_mask;
  SnapshotNorm snapshot_norm;
  std::vector<std::string> provenance;

  std::size_t dimension() const;
  std::size_t table_offset() const { return node_types.size(); }
  std::size_t index_offset() const { return table_offset() + tables.size(); }
  std::size_t numeric_offset() const { return index_offset() + indexes.size(); }
  std::size_t snapshot_offset() const { return numeric_offset() + numeric_dims.size(); }

  /// "type:SeqScan", "table:orders", "num:est_width", "snap:c0", ...
  std::vector<std::string> dimension_names() const;
  std::size_t index_of(const std::string& dimension_name) const;

  const std::string& hash() const { return hash_; }
  void rehash();

  /// Copy with z-score statistics over the given environments' snapshots.
  FeatureSchema with_snapshot_norm(const std::vector<FeatureSnapshot>& snapshots) const;

 private:
  std::string hash_;
};

struct SchemaOptions {
  bool snapshot_slots = true;
};

/// Fixed numeric dimensions, in order. Extra plan attributes follow as
/// "extra:<name>".
const std::vector<std::string>& base_numeric_dims();

FeatureSchema build_schema(const std::vector<PlanTree>& trees, SchemaOptions options = {});

nlohmann::json to_json(const FeatureSchema& schema);
FeatureSchema schema_from_json(const nlohmann::json& j);
FeatureSchema load_schema(const std::string& path);
void save_schema(const std::string& path, const FeatureSchema& schema);

struct FeatureVector {
  std::vector<double> values;
  std::string schema_hash;

  friend bool operator==(const FeatureVector&, const FeatureVector&) = default;
};

void require_schema(const FeatureVector& v, const FeatureSchema& schema);

/// Zeroes inactive dimensions. Idempotent.
FeatureVector apply_mask(FeatureVector v, const FeatureSchema& schema);

/// Snapshot slots are left at zero; see apply_snapshot.
FeatureVector encode_operator(const PlanNode& node, const FeatureSchema& schema, Warnings* warnings = nullptr);

enum class SnapshotFallback { None, Zeros };

FeatureVector apply_snapshot(FeatureVector v, const FeatureSnapshot& snap, const NodeType& node_type,
                             const FeatureSchema& schema, SnapshotFallback fallback = SnapshotFallback::None);

/// Snapshots keyed by env_id.
using SnapshotSet = std::map<std::string, FeatureSnapshot>;

struct EncodedNode {
  FeatureVector x;
  std::string tag;
  std::vector<std::size_t> children;  // indices into EncodedPlan::nodes
  double label_ms = 0;                // inclusive subtree time, 0 if unknown
};

/// Flattened plan tree; nodes[0] is the root, children always follow their
/// parent.
struct EncodedPlan {
  std::vector<EncodedNode> nodes;
  double label_ms = 0;
  std::string env_id;
  std::string schema_hash;
};

struct EncodeOptions {
  const SnapshotSet* snapshots = nullptr;
  SnapshotFallback fallback = SnapshotFallback::Zeros;
};

EncodedPlan encode_plan(const PlanTree& tree, const FeatureSchema& schema, EncodeOptions options = {},
                        Warnings* warnings = nullptr);

std::vector<EncodedPlan> encode_plans(const std::vector<PlanTree>& trees, const FeatureSchema& schema,
                                      EncodeOptions options = {}, Warnings* warnings = nullptr);

}  // namespace qcfe
