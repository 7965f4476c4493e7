#include "qcfe/synth.hpp"

#include <cmath>
#include <cstdio>
#include <random>

#include "qcfe/featurize.hpp"
#include "qcfe/snapshot.hpp"

namespace qcfe {

using nlohmann::json;

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t index, std::uint64_t salt) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                    static_cast<std::uint32_t>(salt), static_cast<std::uint32_t>(salt >> 32)};
  return std::mt19937_64(seq);
}

class PlanBuilder {
 public:
  PlanBuilder(const SynthWorkloadSpec& spec, const SynthEnvironment& env, std::size_t index)
      : spec_(spec),
        env_(env),
        shape_rng_(stream(spec.seed, index, 0x5EED)),
        noise_rng_(stream(spec.seed, index, fnv1a(env.env_id))) {
    for (std::size_t i = 0; i < spec.dead_feature_count; ++i) dead_.push_back(dead_value(i));
  }

  PlanNode build() {
    const auto& w = spec_.plan_shapes;
    std::discrete_distribution<int> shape({w.scan, w.scan_sort, w.join, w.join_agg});
    switch (shape(shape_rng_)) {
      case 0:
        return scan();
      case 1:
        return unary(NodeType(OpKind::Sort), scan(), /*keep_card=*/true);
      case 2:
        return join();
      default:
        return unary(NodeType(OpKind::Aggregate), join(), /*keep_card=*/false);
    }
  }

 private:
  double card() {
    std::uniform_real_distribution<double> u(std::log(spec_.card_min), std::log(spec_.card_max));
    return std::round(std::exp(u(shape_rng_)));
  }

  double estimate(double actual) {
    std::normal_distribution<double> z(0.0, 1.0);
    return std::max(1.0, std::round(actual * std::exp(spec_.estimate_sigma * z(shape_rng_))));
  }

  double dead_value(std::size_t i) const {
    // Constant per feature and workload seed.
    auto rng = stream(spec_.seed, i, 0xDEAD);
    std::uniform_int_distribution<int> v(1, 9);
    return static_cast<double>(v(rng));
  }

  void finish(PlanNode& n, const Cardinalities& c, double planner_unit) {
    const auto spec = formula_for(n.node_type);
    const auto& coeffs = env_.true_coefficients.at(n.node_type.tag());
    double own = spec->cost(coeffs, c);
    if (env_.noise_sigma > 0) {
      std::normal_distribution<double> z(0.0, env_.noise_sigma);
      own *= std::exp(z(noise_rng_));
    }
    double inclusive = own;
    double child_cost = 0;
    for (const auto& ch : n.children) {
      inclusive += *ch.actual_total_time;
      child_cost += ch.est_total_cost;
    }
    n.actual_total_time = inclusive;
    n.actual_loops = 1;
    n.actual_rows = c.n;
    n.est_rows = estimate(c.n);
    const bool blocking = n.node_type.kind() == OpKind::Sort || n.node_type.kind() == OpKind::Aggregate ||
                          n.node_type.kind() == OpKind::HashJoin;
    n.est_startup_cost = blocking ? child_cost : 0.0;
    n.est_total_cost = child_cost + planner_unit * n.est_rows + 0.25;
    for (std::size_t i = 0; i < dead_.size(); ++i) {
      char name[16];
      std::snprintf(name, sizeof name, "dead_%02zu", i);
      n.extra[name] = dead_[i];
    }
  }

  PlanNode scan() {
    std::uniform_int_distribution<std::size_t> pick(0, spec_.tables.size() - 1);
    const auto& t = spec_.tables[pick(shape_rng_)];
    std::bernoulli_distribution use_index(0.4);
    PlanNode n;
    if (!t.indexes.empty() && use_index(shape_rng_)) {
      std::uniform_int_distribution<std::size_t> ix(0, t.indexes.size() - 1);
      n.node_type = NodeType(OpKind::IndexScan);
      n.index = t.indexes[ix(shape_rng_)];
    } else {
      n.node_type = NodeType(OpKind::SeqScan);
    }
    n.relation = t.name;
    n.est_width = t.width;
    Cardinalities c;
    c.n = card();
    finish(n, c, n.node_type.kind() == OpKind::SeqScan ? 0.01 : 0.02);
    return n;
  }

  PlanNode unary(NodeType type, PlanNode child, bool keep_card) {
    PlanNode n;
    n.node_type = std::move(type);
    n.est_width = child.est_width;
    Cardinalities c;
    c.n = keep_card ? *child.actual_rows : card();
    n.children.push_back(std::move(child));
    finish(n, c, 0.015);
    return n;
  }

  PlanNode join() {
    std::uniform_int_distribution<int> kind(0, 2);
    const OpKind k = std::array{OpKind::HashJoin, OpKind::MergeJoin, OpKind::NestedLoop}[kind(shape_rng_)];
    PlanNode n;
    n.node_type = NodeType(k);
    PlanNode outer = scan();
    PlanNode inner = scan();
    std::bernoulli_distribution materialize(0.5);
    if (k == OpKind::NestedLoop && materialize(shape_rng_)) inner = unary(NodeType(OpKind::Materialize), std::move(inner), true);
    Cardinalities c;
    c.n1 = *outer.actual_rows;
    c.n2 = *inner.actual_rows;
    c.n = card();
    n.est_width = std::min(outer.est_width + inner.est_width, 400.0);
    n.children.push_back(std::move(outer));
    n.children.push_back(std::move(inner));
    finish(n, c, 0.01);
    return n;
  }

  const SynthWorkloadSpec& spec_;
  const SynthEnvironment& env_;
  std::mt19937_64 shape_rng_;
  std::mt19937_64 noise_rng_;
  std::vector<double> dead_;
};

}  // namespace

SynthEnvironment base_environment(std::string env_id, double noise_sigma) {
  SynthEnvironment e;
  e.env_id = std::move(env_id);
  e.noise_sigma = noise_sigma;
  // ms per row / fixed ms; intercepts are sized so that every coefficient is
  // identifiable over the 10..1e5 cardinality range.
  e.true_coefficients = {
      {"SeqScan", {0.002, 20.0}},    {"IndexScan", {0.004, 40.0}},     {"Materialize", {0.0005, 5.0}},
      {"Aggregate", {0.001, 10.0}},  {"HashJoin", {0.003, 60.0}},      {"MergeJoin", {0.0025, 50.0}},
      {"Sort", {0.0002, 20.0}},      {"NestedLoop", {1e-7, 0.002, 0.002, 20.0}},
  };
  return e;
}

SynthEnvironment gen_environment(const SynthEnvironment& base, double scale_factor, std::string env_id) {
  if (!(scale_factor > 0)) throw InvalidArgument("environment scale_factor must be > 0");
  SynthEnvironment e = base;
  if (env_id.empty() || env_id == base.env_id) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "*%g", scale_factor);
    env_id = base.env_id + buf;
  }
  e.env_id = std::move(env_id);
  for (auto& [tag, c] : e.true_coefficients)
    for (auto& v : c) v *= scale_factor;
  return e;
}

std::vector<SynthTable> default_tables() {
  return {
      {"customer", 160, {"customer_pkey"}},
      {"lineitem", 120, {"lineitem_pkey", "l_shipdate_idx"}},
      {"orders", 100, {"orders_pkey", "o_orderdate_idx"}},
      {"part", 130, {}},
  };
}

SynthWorkloadSpec default_workload(std::size_t n_plans, std::uint64_t seed, std::size_t dead_feature_count) {
  SynthWorkloadSpec s;
  s.tables = default_tables();
  s.n_plans = n_plans;
  s.seed = seed;
  s.dead_feature_count = dead_feature_count;
  return s;
}

std::vector<PlanTree> gen_plans(const SynthWorkloadSpec& spec, const SynthEnvironment& env) {
  if (spec.n_plans < 1) throw InvalidArgument("n_plans must be >= 1");
  if (spec.tables.empty()) throw InvalidArgument("synthetic workload needs at least one table");
  if (!(spec.card_min >= 1) || !(spec.card_max >= spec.card_min))
    throw InvalidArgument("invalid cardinality range");
  if (env.noise_sigma < 0) throw InvalidArgument("noise_sigma must be >= 0");
  if (spec.estimate_sigma < 0) throw InvalidArgument("estimate_sigma must be >= 0");
  for (const auto& tag : {"SeqScan", "IndexScan", "Materialize", "Aggregate", "HashJoin", "MergeJoin", "Sort",
                          "NestedLoop"}) {
    if (!env.true_coefficients.count(tag))
      throw InvalidArgument(std::string("environment lacks coefficients for ") + tag);
  }

  std::vector<PlanTree> out;
  out.reserve(spec.n_plans);
  for (std::size_t i = 0; i < spec.n_plans; ++i) {
    PlanBuilder b(spec, env, i);
    PlanTree t;
    t.root = b.build();
    t.env_id = env.env_id;
    char qid[32];
    std::snprintf(qid, sizeof qid, "q%06zu", i);
    t.query_id = qid;
    t.total_time_ms = *t.root.actual_total_time;
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<std::string> dead_feature_names(std::size_t count) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < count; ++i) {
    char name[16];
    std::snprintf(name, sizeof name, "dead_%02zu", i);
    names.emplace_back(name);
  }
  return names;
}

json to_json(const SynthEnvironment& env) {
  return {{"env_id", env.env_id}, {"noise_sigma", env.noise_sigma}, {"true_coefficients", env.true_coefficients}};
}

json synth_manifest(const SynthWorkloadSpec& spec, const SynthEnvironment& env, const std::vector<PlanTree>& plans) {
  const auto schema = build_schema(plans);
  std::vector<std::size_t> dims;
  std::vector<std::string> names;
  for (const auto& n : dead_feature_names(spec.dead_feature_count)) {
    names.push_back("num:extra:" + n);
    dims.push_back(schema.index_of(names.back()));
  }
  return {{"env", {{"env_id", env.env_id}, {"noise_sigma", env.noise_sigma}}},
          {"dead_dims", dims},
          {"dead_dim_names", names},
          {"true_coefficients", env.true_coefficients},
          {"seed", spec.seed},
          {"n_plans", spec.n_plans},
          {"schema_hash", schema.hash()}};
}

SynthJob synth_job_from_json(const json& j) {
  try {
    SynthJob job;
    const json env = j.value("env", json::object());
    const double noise = env.value("noise_sigma", 0.0);
    job.env = base_environment(env.value("env_id", std::string("base")), noise);
    if (auto it = env.find("true_coefficients"); it != env.end())
      for (const auto& [tag, c] : it->items()) job.env.true_coefficients[tag] = c.get<std::vector<double>>();
    const double scale = env.value("scale_factor", 1.0);
    if (scale != 1.0) {
      const std::string id = env.value("env_id", std::string());
      job.env.env_id = id.empty() ? "base" : "";
      job.env = gen_environment(job.env, scale, id);
    }

    const json w = j.value("workload", json::object());
    job.workload = default_workload(w.value("n_plans", std::size_t{100}), w.value("seed", std::uint64_t{42}),
                                    w.value("dead_feature_count", std::size_t{0}));
    job.workload.card_min = w.value("card_min", 10.0);
    job.workload.card_max = w.value("card_max", 1e5);
    job.workload.estimate_sigma = w.value("estimate_sigma", job.workload.estimate_sigma);
    if (auto it = w.find("tables"); it != w.end()) {
      job.workload.tables.clear();
      for (const auto& t : *it)
        job.workload.tables.push_back({t.at("name").get<std::string>(), t.value("width", 100.0),
                                       t.value("indexes", std::vector<std::string>{})});
    }
    if (auto it = w.find("plan_shapes"); it != w.end()) {
      auto& s = job.workload.plan_shapes;
      s.scan = it->value("scan", s.scan);
      s.scan_sort = it->value("scan_sort", s.scan_sort);
      s.join = it->value("join", s.join);
      s.join_agg = it->value("join_agg", s.join_agg);
    }
    return job;
  } catch (const json::exception& e) {
    throw Error(std::string("malformed synth spec: ") + e.what());
  }
}

}  // namespace qcfe
