#include "qcfe/transfer.hpp"

#include <set>

namespace qcfe {

std::vector<EncodedPlan> encode_with_snapshot(const std::vector<PlanTree>& dataset, const FeatureSchema& schema,
                                              const FeatureSnapshot& snapshot, Warnings* warnings) {
  SnapshotSet set;
  for (const auto& t : dataset) set[t.env_id] = snapshot;
  EncodeOptions opts;
  opts.snapshots = &set;
  opts.fallback = SnapshotFallback::Zeros;
  return encode_plans(dataset, schema, opts, warnings);
}

CostModel transfer_snapshot(const std::vector<PlanTree>& dataset, const CostModel& old_model,
                            const FeatureSchema& schema, const FeatureSnapshot& new_snapshot,
                            std::size_t retrain_iters, TrainConfig cfg) {
  if (old_model.schema_hash != schema.hash())
    throw SchemaMismatch("model trained under schema " + old_model.schema_hash + ", transfer schema is " +
                         schema.hash());
  std::set<std::string> missing;
  for (const auto& t : dataset)
    for_each_node(t.root, [&](const PlanNode& n) {
      if (formula_for(n.node_type) && new_snapshot.find(n.node_type.tag()) == nullptr)
        missing.insert(n.node_type.tag());
    });
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw MissingOperatorSnapshot("new snapshot lacks coefficients for: " + list);
  }
  const auto data = encode_with_snapshot(dataset, schema, new_snapshot);
  cfg.iterations = retrain_iters;
  return fine_tune(old_model, data, cfg);
}

}  // namespace qcfe
