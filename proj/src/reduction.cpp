#include "qcfe/reduction.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "qcfe/eval.hpp"

namespace qcfe {

using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

void check_dataset(const ReductionDataset& d, const CostModel& model, const FeatureSchema& schema) {
  if (model.schema_hash != schema.hash())
    throw SchemaMismatch("model trained under schema " + model.schema_hash + ", reduction schema is " + schema.hash());
  for (const auto& s : d.samples) require_schema(s.x, schema);
}

// Samples grouped by the model unit that scores them.
std::map<std::string, std::vector<std::size_t>> unit_groups(const ReductionDataset& d, const CostModel& model) {
  std::map<std::string, std::vector<std::size_t>> g;
  for (std::size_t i = 0; i < d.samples.size(); ++i)
    g[model.kind == ModelKind::Flat ? std::string(CostModel::kFlatUnit) : d.samples[i].tag].push_back(i);
  return g;
}

std::vector<bool> keep_rule(const std::vector<double>& scores) {
  std::vector<bool> kept(scores.size());
  for (std::size_t k = 0; k < scores.size(); ++k) kept[k] = scores[k] > kKeepThreshold;
  return kept;
}

}  // namespace

std::string to_string(ReductionMethod m) {
  switch (m) {
    case ReductionMethod::Greedy:
      return "greedy";
    case ReductionMethod::Gradient:
      return "grad";
    case ReductionMethod::Diff:
      return "diff";
  }
  return "diff";
}

ReductionMethod reduction_method_from_string(const std::string& s) {
  if (s == "greedy") return ReductionMethod::Greedy;
  if (s == "grad" || s == "gradient") return ReductionMethod::Gradient;
  if (s == "diff") return ReductionMethod::Diff;
  throw InvalidArgument("unknown reduction method '" + s + "'");
}

std::size_t ImportanceReport::dropped_count() const {
  return static_cast<std::size_t>(std::count(kept.begin(), kept.end(), false));
}

ReductionDataset build_reduction_dataset(const std::vector<PlanTree>& trees, const FeatureSchema& schema,
                                         EncodeOptions options, Warnings* warnings) {
  ReductionDataset d;
  d.schema_hash = schema.hash();
  for (const auto& t : trees) {
    const auto enc = encode_plan(t, schema, options, warnings);
    const auto ops = extract_labeled_operators(t);
    for (std::size_t i = 0; i < ops.size(); ++i)
      d.samples.push_back({enc.nodes[i].x, ops[i].own_cost_ms, enc.nodes[i].tag});
  }
  return d;
}

std::vector<EncodedPlan> operator_level_plans(const ReductionDataset& d) {
  std::vector<EncodedPlan> out;
  out.reserve(d.samples.size());
  for (const auto& s : d.samples) out.push_back(single_operator_plan(s.x, s.tag, s.y));
  return out;
}

json to_json(const ImportanceReport& r) {
  json kept = json::array();
  for (bool b : r.kept) kept.push_back(b);
  json j = {{"method", to_string(r.method)}, {"scores", r.scores},  {"kept", kept},
            {"refs", r.reference_ids},       {"seed", r.seed},      {"runtime_ms", r.runtime_ms}};
  if (r.method == ReductionMethod::Greedy) {
    j["qerror_trace"] = r.qerror_trace;
    j["drop_order"] = r.drop_order;
  }
  return j;
}

ImportanceReport importance_report_from_json(const json& j) {
  try {
    ImportanceReport r;
    r.method = reduction_method_from_string(j.at("method").get<std::string>());
    r.scores = j.at("scores").get<std::vector<double>>();
    r.kept = j.at("kept").get<std::vector<bool>>();
    r.reference_ids = j.value("refs", std::vector<std::size_t>{});
    r.seed = j.value("seed", std::uint64_t{0});
    r.runtime_ms = j.value("runtime_ms", 0.0);
    r.qerror_trace = j.value("qerror_trace", std::vector<double>{});
    r.drop_order = j.value("drop_order", std::vector<std::size_t>{});
    if (r.kept.size() != r.scores.size()) throw DimensionMismatch("report kept/scores length mismatch");
    return r;
  } catch (const json::exception& e) {
    throw Error(std::string("malformed importance report: ") + e.what());
  }
}

double operator_mean_qerror(const CostModel& model, const std::vector<OperatorSample>& samples) {
  if (samples.empty()) throw EmptyTestSet("no operator samples");
  double s = 0;
  for (const auto& x : samples) s += qerror(x.y, predict_operator(model, x.x, x.tag));
  return s / static_cast<double>(samples.size());
}

std::vector<OperatorSample> mean_mask(std::vector<OperatorSample> samples, std::size_t k) {
  if (samples.empty()) return samples;
  const double first = samples.front().x.values.at(k);
  bool constant = true;
  double sum = 0;
  for (const auto& s : samples) {
    sum += s.x.values[k];
    constant = constant && s.x.values[k] == first;
  }
  // A constant column is its own mean; skip the rounding of sum/n.
  const double mean = constant ? first : sum / static_cast<double>(samples.size());
  for (auto& s : samples) s.x.values[k] = mean;
  return samples;
}

ImportanceReport greedy_reduce(const ReductionDataset& d, const CostModel& model_in, const FeatureSchema& schema,
                               GreedyOptions options) {
  check_dataset(d, model_in, schema);
  const auto t0 = Clock::now();
  const std::size_t dims = schema.dimension();

  CostModel model = model_in;
  std::vector<OperatorSample> current = d.samples;
  std::vector<bool> dropped(dims, false);
  ImportanceReport r;
  r.method = ReductionMethod::Greedy;

  double best = operator_mean_qerror(model, current);
  r.qerror_trace.push_back(best);
  std::vector<double> last_pass(dims, 0.0);
  while (true) {
    std::optional<std::size_t> drop;
    double c = best;
    for (std::size_t f = 0; f < dims; ++f) {
      if (dropped[f] || !schema.active_mask[f]) continue;
      const double cf = operator_mean_qerror(model, mean_mask(current, f));
      last_pass[f] = cf;
      if (c > cf) {
        c = cf;
        drop = f;
      }
    }
    if (!drop) break;
    current = mean_mask(std::move(current), *drop);
    dropped[*drop] = true;
    r.drop_order.push_back(*drop);
    if (options.retrain_per_drop) {
      ReductionDataset masked{current, d.schema_hash};
      model = train(operator_level_plans(masked), schema, options.retrain_cfg, ModelKind::Flat);
      c = operator_mean_qerror(model, current);
    }
    best = c;
    r.qerror_trace.push_back(best);
  }

  r.scores.assign(dims, 0.0);
  r.kept.assign(dims, true);
  for (std::size_t f = 0; f < dims; ++f) {
    if (dropped[f] || !schema.active_mask[f]) {
      r.kept[f] = !dropped[f] && schema.active_mask[f];
      continue;
    }
    r.scores[f] = std::max(0.0, last_pass[f] - best);
  }
  r.runtime_ms = elapsed_ms(t0);
  return r;
}

ImportanceReport gradient_importance(const ReductionDataset& d, const CostModel& model, const FeatureSchema& schema) {
  check_dataset(d, model, schema);
  const auto t0 = Clock::now();
  const auto dims = static_cast<Eigen::Index>(schema.dimension());
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(dims);
  for (const auto& s : d.samples) {
    const Mlp& unit = model.unit_for(s.tag);
    const auto t = unit.trace(operator_input(model, s.x));
    Eigen::VectorXd e = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(unit.output_dim()));
    e(0) = 1.0;
    sum += unit.backward(t, e, nullptr).head(dims);
  }
  ImportanceReport r;
  r.method = ReductionMethod::Gradient;
  r.scores.resize(static_cast<std::size_t>(dims));
  const double n = d.samples.empty() ? 1.0 : static_cast<double>(d.samples.size());
  for (Eigen::Index k = 0; k < dims; ++k) r.scores[static_cast<std::size_t>(k)] = std::abs(sum(k) / n);
  r.kept = keep_rule(r.scores);
  r.runtime_ms = elapsed_ms(t0);
  return r;
}

std::vector<double> diff_scores(const Mlp& net, const std::vector<Eigen::VectorXd>& samples,
                                const std::vector<Eigen::VectorXd>& references, std::size_t output_index) {
  const std::size_t dims = net.input_dim();
  const std::size_t hidden_layers = net.layers.empty() ? 0 : net.layers.size() - 1;
  struct Forward {
    std::vector<Eigen::VectorXd> hidden;
    double out = 0;
  };
  auto run = [&](const Eigen::VectorXd& x) {
    auto t = net.trace(x);
    Forward f;
    f.hidden.assign(t.post.begin(), t.post.begin() + static_cast<std::ptrdiff_t>(hidden_layers));
    f.out = t.post.back()(static_cast<Eigen::Index>(output_index));
    return f;
  };
  std::vector<Forward> fs, fr;
  fs.reserve(samples.size());
  fr.reserve(references.size());
  for (const auto& x : samples) fs.push_back(run(x));
  for (const auto& x : references) fr.push_back(run(x));

  std::vector<double> sum(dims, 0.0);
  std::vector<std::size_t> count(dims, 0);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    for (std::size_t j = 0; j < references.size(); ++j) {
      // Path sum of products of difference ratios x^k -> h^1 -> ... -> M.
      // Propagating layer by layer, the running sum entering layer l is
      // T_l = T_{l-1} * live_l (each live unit u contributes
      // dh_u * T_{l-1} / dh_u); a unit with zero difference cuts its paths.
      // Hence the pair's score for k is |dM / dx^k| * prod_l live_l.
      double paths = 1.0;
      for (std::size_t l = 0; l < hidden_layers && paths != 0.0; ++l) {
        const auto& a = fs[i].hidden[l];
        const auto& b = fr[j].hidden[l];
        std::size_t live = 0;
        for (Eigen::Index u = 0; u < a.size(); ++u) live += (a(u) != b(u));
        paths *= static_cast<double>(live);
      }
      const double dm = fs[i].out - fr[j].out;
      const double num = dm * paths;
      const auto& xi = samples[i];
      const auto& xj = references[j];
      for (std::size_t k = 0; k < dims; ++k) {
        const double dx = xi(static_cast<Eigen::Index>(k)) - xj(static_cast<Eigen::Index>(k));
        if (dx == 0.0) continue;  // pair excluded for this dimension
        sum[k] += std::abs(num / dx);
        ++count[k];
      }
    }
  }
  std::vector<double> scores(dims, 0.0);
  for (std::size_t k = 0; k < dims; ++k)
    if (count[k] > 0) scores[k] = sum[k] / static_cast<double>(count[k]);
  return scores;
}

ImportanceReport diff_importance(const ReductionDataset& d, const CostModel& model, const FeatureSchema& schema,
                                 std::size_t refs, std::uint64_t seed) {
  check_dataset(d, model, schema);
  if (refs == 0 || d.samples.empty()) throw EmptyReference("difference propagation needs at least one reference");
  if (refs > d.samples.size())
    throw InvalidArgument("refs (" + std::to_string(refs) + ") exceeds dataset size (" +
                          std::to_string(d.samples.size()) + ")");
  const auto t0 = Clock::now();
  const std::size_t dims = schema.dimension();

  ImportanceReport r;
  r.method = ReductionMethod::Diff;
  r.seed = seed;
  r.scores.assign(dims, 0.0);

  std::mt19937_64 rng(seed);
  for (const auto& [unit_tag, members] : unit_groups(d, model)) {
    // Reference draw: partial Fisher-Yates over the group's indices.
    std::vector<std::size_t> pool = members;
    const std::size_t n_refs = std::min(refs, pool.size());
    for (std::size_t i = 0; i < n_refs; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
      std::swap(pool[i], pool[pick(rng)]);
    }
    pool.resize(n_refs);
    r.reference_ids.insert(r.reference_ids.end(), pool.begin(), pool.end());

    std::vector<Eigen::VectorXd> xs, xr;
    xs.reserve(members.size());
    for (auto i : members) xs.push_back(operator_input(model, d.samples[i].x));
    for (auto i : pool) xr.push_back(operator_input(model, d.samples[i].x));
    const auto scores = diff_scores(model.unit_for(unit_tag), xs, xr, 0);
    for (std::size_t k = 0; k < dims; ++k) r.scores[k] = std::max(r.scores[k], scores[k]);
  }
  r.kept = keep_rule(r.scores);
  r.runtime_ms = elapsed_ms(t0);
  return r;
}

FeatureSchema apply_reduction(const FeatureSchema& schema, const ImportanceReport& report) {
  if (report.kept.size() != schema.dimension())
    throw DimensionMismatch("report covers " + std::to_string(report.kept.size()) + " dims, schema has " +
                            std::to_string(schema.dimension()));
  FeatureSchema out = schema;
  std::size_t kept = 0;
  for (std::size_t k = 0; k < out.active_mask.size(); ++k) {
    out.active_mask[k] = out.active_mask[k] && report.kept[k];
    kept += out.active_mask[k];
  }
  std::string note = "reduce:" + to_string(report.method) + " seed=" + std::to_string(report.seed) +
                     " active=" + std::to_string(kept) + "/" + std::to_string(out.active_mask.size());
  if (out.provenance.empty() || out.provenance.back() != note) out.provenance.push_back(std::move(note));
  return out;
}

}  // namespace qcfe
