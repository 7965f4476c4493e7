#include "qcfe/featurize.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

namespace qcfe {

using nlohmann::json;

namespace {

std::string fnv1a_hex(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

std::ptrdiff_t find_in(const std::vector<std::string>& vocab, const std::string& s) {
  auto it = std::find(vocab.begin(), vocab.end(), s);
  if (it == vocab.end()) return -1;
  return it - vocab.begin();
}

// Snapshot slot for a coefficient name ("c2" -> 2); positional otherwise.
std::vector<std::size_t> slot_layout(const NodeType& type, std::size_t n_coeffs) {
  std::vector<std::size_t> slots(n_coeffs);
  const auto spec = formula_for(type);
  for (std::size_t i = 0; i < n_coeffs; ++i) {
    slots[i] = i;
    if (spec && i < spec->coefficient_names.size()) slots[i] = std::stoul(spec->coefficient_names[i].substr(1));
  }
  return slots;
}

}  // namespace

const std::vector<std::string>& base_numeric_dims() {
  static const std::vector<std::string> dims{"est_rows_log",     "est_width",      "est_startup_cost",
                                             "est_total_cost",   "child1_rows_log", "child2_rows_log"};
  return dims;
}

std::size_t FeatureSchema::dimension() const {
  return node_types.size() + tables.size() + indexes.size() + numeric_dims.size() + snapshot_dims.size();
}

std::vector<std::string> FeatureSchema::dimension_names() const {
  std::vector<std::string> out;
  out.reserve(dimension());
  for (const auto& s : node_types) out.push_back("type:" + s);
  for (const auto& s : tables) out.push_back("table:" + s);
  for (const auto& s : indexes) out.push_back("index:" + s);
  for (const auto& s : numeric_dims) out.push_back("num:" + s);
  for (const auto& s : snapshot_dims) out.push_back("snap:" + s);
  return out;
}

std::size_t FeatureSchema::index_of(const std::string& name) const {
  const auto names = dimension_names();
  auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw DimensionMismatch("schema has no dimension " + name);
  return static_cast<std::size_t>(it - names.begin());
}

void FeatureSchema::rehash() {
  std::string canon;
  for (const auto& n : dimension_names()) {
    canon += n;
    canon += '\n';
  }
  hash_ = fnv1a_hex(canon);
}

FeatureSchema FeatureSchema::with_snapshot_norm(const std::vector<FeatureSnapshot>& snapshots) const {
  FeatureSchema out = *this;
  out.snapshot_norm = {};
  std::set<std::string> envs;
  for (const auto& s : snapshots) envs.insert(s.env_id);
  if (envs.size() < 2) return out;

  out.snapshot_norm.enabled = true;
  std::map<std::string, std::vector<std::array<double, kSnapshotSlots>>> per_type;
  for (const auto& snap : snapshots) {
    for (const auto& [tag, coeffs] : snap.coefficients) {
      std::array<double, kSnapshotSlots> row{};
      const auto slots = slot_layout(NodeType::from_string(tag), coeffs.size());
      for (std::size_t i = 0; i < coeffs.size() && i < kSnapshotSlots; ++i) row[slots[i]] = coeffs[i];
      per_type[tag].push_back(row);
    }
  }
  for (const auto& [tag, rows] : per_type) {
    std::array<double, kSnapshotSlots> mean{}, sd{};
    const double n = static_cast<double>(rows.size());
    for (std::size_t k = 0; k < kSnapshotSlots; ++k) {
      double s = 0;
      for (const auto& r : rows) s += r[k];
      mean[k] = s / n;
      double v = 0;
      for (const auto& r : rows) v += (r[k] - mean[k]) * (r[k] - mean[k]);
      sd[k] = std::sqrt(v / n);
    }
    out.snapshot_norm.mean[tag] = mean;
    out.snapshot_norm.stddev[tag] = sd;
  }
  return out;
}

FeatureSchema build_schema(const std::vector<PlanTree>& trees, SchemaOptions options) {
  if (trees.empty()) throw EmptyWorkload("cannot build a feature schema from an empty workload");
  std::set<std::string> types, tables, indexes, extras;
  for (const auto& t : trees) {
    for_each_node(t.root, [&](const PlanNode& n) {
      types.insert(n.node_type.tag());
      if (n.relation) tables.insert(*n.relation);
      if (n.index) indexes.insert(*n.index);
      for (const auto& [k, v] : n.extra) extras.insert(k);
    });
  }
  FeatureSchema s;
  s.node_types.assign(types.begin(), types.end());
  s.tables.assign(tables.begin(), tables.end());
  s.indexes.assign(indexes.begin(), indexes.end());
  s.numeric_dims = base_numeric_dims();
  for (const auto& e : extras) s.numeric_dims.push_back("extra:" + e);
  if (options.snapshot_slots)
    for (std::size_t k = 0; k < kSnapshotSlots; ++k) s.snapshot_dims.push_back("c" + std::to_string(k));
  s.active_mask.assign(s.dimension(), true);
  s.rehash();
  return s;
}

json to_json(const FeatureSchema& s) {
  json mask = json::array();
  for (bool b : s.active_mask) mask.push_back(b);
  json norm_types = json::array(), mean = json::array(), sd = json::array();
  for (const auto& [tag, m] : s.snapshot_norm.mean) {
    norm_types.push_back(tag);
    mean.push_back(m);
    sd.push_back(s.snapshot_norm.stddev.at(tag));
  }
  return {{"node_types", s.node_types},
          {"tables", s.tables},
          {"indexes", s.indexes},
          {"numeric_dims", s.numeric_dims},
          {"snapshot_dims", s.snapshot_dims},
          {"active_mask", mask},
          {"snapshot_norm",
           {{"enabled", s.snapshot_norm.enabled}, {"node_types", norm_types}, {"mean", mean}, {"std", sd}}},
          {"provenance", s.provenance},
          {"hash", s.hash()}};
}

FeatureSchema schema_from_json(const json& j) {
  FeatureSchema s;
  try {
    s.node_types = j.at("node_types").get<std::vector<std::string>>();
    s.tables = j.at("tables").get<std::vector<std::string>>();
    s.indexes = j.at("indexes").get<std::vector<std::string>>();
    s.numeric_dims = j.at("numeric_dims").get<std::vector<std::string>>();
    s.snapshot_dims = j.at("snapshot_dims").get<std::vector<std::string>>();
    s.active_mask = j.at("active_mask").get<std::vector<bool>>();
    if (auto it = j.find("snapshot_norm"); it != j.end()) {
      s.snapshot_norm.enabled = it->value("enabled", false);
      const auto types = it->value("node_types", std::vector<std::string>{});
      const auto mean = it->value("mean", std::vector<std::array<double, kSnapshotSlots>>{});
      const auto sd = it->value("std", std::vector<std::array<double, kSnapshotSlots>>{});
      if (mean.size() != types.size() || sd.size() != types.size())
        throw ShapeMismatch("snapshot_norm arrays do not match node_types");
      for (std::size_t i = 0; i < types.size(); ++i) {
        s.snapshot_norm.mean[types[i]] = mean[i];
        s.snapshot_norm.stddev[types[i]] = sd[i];
      }
    }
    s.provenance = j.value("provenance", std::vector<std::string>{});
  } catch (const json::exception& e) {
    throw Error(std::string("malformed schema document: ") + e.what());
  }
  if (s.active_mask.size() != s.dimension())
    throw DimensionMismatch("active_mask has " + std::to_string(s.active_mask.size()) + " entries for " +
                            std::to_string(s.dimension()) + " dimensions");
  s.rehash();
  if (auto it = j.find("hash"); it != j.end() && it->get<std::string>() != s.hash())
    throw SchemaMismatch("schema hash " + it->get<std::string>() + " does not match its layout (" + s.hash() + ")");
  return s;
}

FeatureSchema load_schema(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open schema " + path);
  try {
    return schema_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw Error(path + ": " + e.what());
  }
}

void save_schema(const std::string& path, const FeatureSchema& schema) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write schema " + path);
  out << to_json(schema).dump(2) << '\n';
}

void require_schema(const FeatureVector& v, const FeatureSchema& schema) {
  if (v.schema_hash != schema.hash())
    throw SchemaMismatch("feature vector bound to schema " + v.schema_hash + ", expected " + schema.hash());
  if (v.values.size() != schema.dimension())
    throw DimensionMismatch("feature vector has " + std::to_string(v.values.size()) + " dims, schema has " +
                            std::to_string(schema.dimension()));
}

FeatureVector apply_mask(FeatureVector v, const FeatureSchema& schema) {
  require_schema(v, schema);
  for (std::size_t k = 0; k < v.values.size(); ++k)
    if (!schema.active_mask[k]) v.values[k] = 0.0;
  return v;
}

FeatureVector encode_operator(const PlanNode& node, const FeatureSchema& schema, Warnings* warnings) {
  FeatureVector v;
  v.schema_hash = schema.hash();
  v.values.assign(schema.dimension(), 0.0);

  if (auto i = find_in(schema.node_types, node.node_type.tag()); i >= 0)
    v.values[static_cast<std::size_t>(i)] = 1.0;
  else
    warn(warnings, "node type " + node.node_type.tag() + " not in schema vocabulary");
  if (node.relation) {
    if (auto i = find_in(schema.tables, *node.relation); i >= 0)
      v.values[schema.table_offset() + static_cast<std::size_t>(i)] = 1.0;
    else
      warn(warnings, "table " + *node.relation + " not in schema vocabulary");
  }
  if (node.index) {
    if (auto i = find_in(schema.indexes, *node.index); i >= 0)
      v.values[schema.index_offset() + static_cast<std::size_t>(i)] = 1.0;
    else
      warn(warnings, "index " + *node.index + " not in schema vocabulary");
  }

  const std::size_t num = schema.numeric_offset();
  for (std::size_t k = 0; k < schema.numeric_dims.size(); ++k) {
    const auto& name = schema.numeric_dims[k];
    double x = 0;
    if (name == "est_rows_log") {
      x = std::log1p(node.est_rows);
    } else if (name == "est_width") {
      x = std::log1p(node.est_width);
    } else if (name == "est_startup_cost") {
      x = std::log1p(std::max(node.est_startup_cost, 0.0));
    } else if (name == "est_total_cost") {
      x = std::log1p(std::max(node.est_total_cost, 0.0));
    } else if (name == "child1_rows_log") {
      x = node.children.size() > 0 ? std::log1p(node.children[0].est_rows) : 0.0;
    } else if (name == "child2_rows_log") {
      x = node.children.size() > 1 ? std::log1p(node.children[1].est_rows) : 0.0;
    } else if (name.rfind("extra:", 0) == 0) {
      auto it = node.extra.find(name.substr(6));
      x = it == node.extra.end() ? 0.0 : it->second;
    }
    v.values[num + k] = x;
  }
  return apply_mask(std::move(v), schema);
}

FeatureVector apply_snapshot(FeatureVector v, const FeatureSnapshot& snap, const NodeType& node_type,
                             const FeatureSchema& schema, SnapshotFallback fallback) {
  require_schema(v, schema);
  const std::size_t off = schema.snapshot_offset();
  const std::size_t n_slots = schema.snapshot_dims.size();
  for (std::size_t k = 0; k < n_slots; ++k) v.values[off + k] = 0.0;
  if (n_slots == 0) return v;

  const auto* coeffs = snap.find(node_type.tag());
  if (coeffs == nullptr) {
    if (fallback == SnapshotFallback::None)
      throw MissingOperatorSnapshot("snapshot for " + snap.env_id + " has no coefficients for " + node_type.tag());
    return apply_mask(std::move(v), schema);
  }

  const auto slots = slot_layout(node_type, coeffs->size());
  const auto& norm = schema.snapshot_norm;
  const auto mean_it = norm.mean.find(node_type.tag());
  const bool standardize = norm.enabled && mean_it != norm.mean.end();
  for (std::size_t i = 0; i < coeffs->size(); ++i) {
    const std::size_t slot = slots[i];
    if (slot >= n_slots) continue;
    double c = (*coeffs)[i];
    if (standardize) {
      const double sd = norm.stddev.at(node_type.tag())[slot];
      c -= mean_it->second[slot];
      if (sd > 0) c /= sd;
    }
    v.values[off + slot] = c;
  }
  return apply_mask(std::move(v), schema);
}

namespace {

void encode_into(const PlanNode& node, const FeatureSchema& schema, const FeatureSnapshot* snap,
                 SnapshotFallback fallback, EncodedPlan& out, Warnings* warnings) {
  const std::size_t me = out.nodes.size();
  out.nodes.emplace_back();
  FeatureVector x = encode_operator(node, schema, warnings);
  if (snap != nullptr) x = apply_snapshot(std::move(x), *snap, node.node_type, schema, fallback);
  out.nodes[me].x = std::move(x);
  out.nodes[me].tag = node.node_type.tag();
  out.nodes[me].label_ms = (node.actual_total_time && node.actual_loops) ? node.inclusive_time_ms() : 0.0;
  for (const auto& c : node.children) {
    out.nodes[me].children.push_back(out.nodes.size());
    encode_into(c, schema, snap, fallback, out, warnings);
  }
}

}  // namespace

EncodedPlan encode_plan(const PlanTree& tree, const FeatureSchema& schema, EncodeOptions options,
                        Warnings* warnings) {
  const FeatureSnapshot* snap = nullptr;
  if (options.snapshots != nullptr && !schema.snapshot_dims.empty()) {
    auto it = options.snapshots->find(tree.env_id);
    if (it == options.snapshots->end()) {
      if (options.fallback == SnapshotFallback::None)
        throw MissingOperatorSnapshot("no snapshot for environment '" + tree.env_id + "'");
      warn(warnings, "no snapshot for environment '" + tree.env_id + "'; snapshot slots left at zero");
    } else {
      snap = &it->second;
    }
  }
  EncodedPlan p;
  p.env_id = tree.env_id;
  p.schema_hash = schema.hash();
  encode_into(tree.root, schema, snap, options.fallback, p, warnings);
  p.label_ms = (tree.total_time_ms || (tree.root.actual_total_time && tree.root.actual_loops)) ? tree.label_ms() : 0.0;
  return p;
}

std::vector<EncodedPlan> encode_plans(const std::vector<PlanTree>& trees, const FeatureSchema& schema,
                                      EncodeOptions options, Warnings* warnings) {
  std::vector<EncodedPlan> out;
  out.reserve(trees.size());
  for (const auto& t : trees) out.push_back(encode_plan(t, schema, options, warnings));
  return out;
}

}  // namespace qcfe
