#pragma once

#include <vector>

#include "qcfe/cost_model.hpp"
#include "qcfe/featurize.hpp"
#include "qcfe/snapshot.hpp"

namespace qcfe {

/// Moves a trained model to a new environment: every plan of `dataset` is
/// re-encoded with `new_snapshot` in the snapshot slots, then the old
/// weights are fine-tuned for `retrain_iters` passes (cfg supplies the
/// remaining training parameters). Zero passes returns the old weights.
CostModel transfer_snapshot(const std::vector<PlanTree>& dataset, const CostModel& old_model,
                            const FeatureSchema& schema, const FeatureSnapshot& new_snapshot,
                            std::size_t retrain_iters, TrainConfig cfg = {});

/// Encodes `dataset` with `snapshot` applied to every plan regardless of its
/// env_id.
std::vector<EncodedPlan> encode_with_snapshot(const std::vector<PlanTree>& dataset, const FeatureSchema& schema,
                                              const FeatureSnapshot& snapshot, Warnings* warnings = nullptr);

}  // namespace qcfe
