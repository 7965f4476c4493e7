#include "qcfe/plan.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <sstream>
#include <utility>

namespace qcfe {

using nlohmann::json;

DatasetError::DatasetError(std::string path, std::vector<LineFailure> failures)
    : Error([&] {
        std::ostringstream os;
        os << path << ": " << failures.size() << " malformed line(s)";
        for (const auto& f : failures) os << "\n  line " << f.line << ": " << f.message;
        return os.str();
      }()),
      path_(std::move(path)),
      failures_(std::move(failures)) {}

namespace {

struct KindName {
  OpKind kind;
  const char* tag;
  const char* explain;
};

constexpr std::array<KindName, 8> kKinds{{
    {OpKind::SeqScan, "SeqScan", "Seq Scan"},
    {OpKind::IndexScan, "IndexScan", "Index Scan"},
    {OpKind::Sort, "Sort", "Sort"},
    {OpKind::Aggregate, "Aggregate", "Aggregate"},
    {OpKind::HashJoin, "HashJoin", "Hash Join"},
    {OpKind::MergeJoin, "MergeJoin", "Merge Join"},
    {OpKind::NestedLoop, "NestedLoop", "Nested Loop"},
    {OpKind::Materialize, "Materialize", "Materialize"},
}};

std::optional<double> opt_number(const json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return std::nullopt;
  if (!it->is_number()) throw MalformedPlan(where + ": \"" + key + "\" is not a number");
  return it->get<double>();
}

std::optional<std::string> opt_string(const json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) throw MalformedPlan(where + ": \"" + key + "\" is not a string");
  return it->get<std::string>();
}

}  // namespace

NodeType::NodeType(OpKind kind) : kind_(kind) {
  for (const auto& k : kKinds)
    if (k.kind == kind) tag_ = k.tag;
}

NodeType NodeType::other(std::string raw_tag) {
  NodeType t;
  t.kind_ = OpKind::Other;
  t.tag_ = std::move(raw_tag);
  return t;
}

NodeType NodeType::from_string(std::string_view s) {
  for (const auto& k : kKinds)
    if (s == k.tag || s == k.explain) return NodeType(k.kind);
  return other(std::string(s));
}

std::string NodeType::explain_name() const {
  for (const auto& k : kKinds)
    if (k.kind == kind_ && kind_ != OpKind::Other) return k.explain;
  return tag_;
}

bool NodeType::is_join() const {
  return kind_ == OpKind::HashJoin || kind_ == OpKind::MergeJoin || kind_ == OpKind::NestedLoop;
}

bool NodeType::is_leaf_scan() const {
  return kind_ == OpKind::SeqScan || kind_ == OpKind::IndexScan;
}

double PlanNode::inclusive_time_ms() const {
  if (!actual_total_time || !actual_loops)
    throw MissingActuals(node_type.tag() + " node lacks runtime statistics");
  return *actual_total_time * *actual_loops;
}

std::size_t PlanNode::node_count() const {
  std::size_t n = 1;
  for (const auto& c : children) n += c.node_count();
  return n;
}

double PlanTree::label_ms() const {
  if (total_time_ms) return *total_time_ms;
  return root.inclusive_time_ms();
}

PlanNode parse_node(const json& obj, const std::string& where) {
  if (!obj.is_object()) throw MalformedPlan(where + ": plan node is not an object");
  auto type = opt_string(obj, "Node Type", where);
  if (!type) throw MalformedPlan(where + ": missing \"Node Type\"");

  PlanNode n;
  n.node_type = NodeType::from_string(*type);
  n.est_rows = opt_number(obj, "Plan Rows", where).value_or(0.0);
  n.est_width = opt_number(obj, "Plan Width", where).value_or(0.0);
  n.est_startup_cost = opt_number(obj, "Startup Cost", where).value_or(0.0);
  n.est_total_cost = opt_number(obj, "Total Cost", where).value_or(0.0);
  n.actual_total_time = opt_number(obj, "Actual Total Time", where);
  n.actual_loops = opt_number(obj, "Actual Loops", where);
  n.actual_rows = opt_number(obj, "Actual Rows", where);
  n.relation = opt_string(obj, "Relation Name", where);
  n.index = opt_string(obj, "Index Name", where);

  if (n.est_rows < 0) throw MalformedPlan(where + ": negative \"Plan Rows\"");
  if (n.est_width < 0) throw MalformedPlan(where + ": negative \"Plan Width\"");
  if (n.actual_loops && *n.actual_loops < 1) throw MalformedPlan(where + ": \"Actual Loops\" < 1");

  if (auto it = obj.find("Extra Features"); it != obj.end()) {
    if (!it->is_object()) throw MalformedPlan(where + ": \"Extra Features\" is not an object");
    for (const auto& [k, v] : it->items()) {
      if (!v.is_number()) throw MalformedPlan(where + ": extra feature \"" + k + "\" is not a number");
      n.extra[k] = v.get<double>();
    }
  }

  if (auto it = obj.find("Plans"); it != obj.end()) {
    if (!it->is_array()) throw MalformedPlan(where + ": \"Plans\" is not an array");
    for (std::size_t i = 0; i < it->size(); ++i)
      n.children.push_back(parse_node((*it)[i], where + ".Plans[" + std::to_string(i) + "]"));
  }

  if (n.node_type.is_join() && n.children.size() > 2)
    throw MalformedPlan(where + ": join node with " + std::to_string(n.children.size()) + " children");
  if (n.node_type.is_leaf_scan() && !n.children.empty())
    throw MalformedPlan(where + ": scan node with children");
  return n;
}

json node_to_json(const PlanNode& n) {
  json j;
  j["Node Type"] = n.node_type.explain_name();
  j["Plan Rows"] = n.est_rows;
  j["Plan Width"] = n.est_width;
  j["Startup Cost"] = n.est_startup_cost;
  j["Total Cost"] = n.est_total_cost;
  if (n.actual_total_time) j["Actual Total Time"] = *n.actual_total_time;
  if (n.actual_loops) j["Actual Loops"] = *n.actual_loops;
  if (n.actual_rows) j["Actual Rows"] = *n.actual_rows;
  if (n.relation) j["Relation Name"] = *n.relation;
  if (n.index) j["Index Name"] = *n.index;
  if (!n.extra.empty()) j["Extra Features"] = n.extra;
  if (!n.children.empty()) {
    json kids = json::array();
    for (const auto& c : n.children) kids.push_back(node_to_json(c));
    j["Plans"] = std::move(kids);
  }
  return j;
}

PlanTree parse_plan(const json& doc_in) {
  const json* doc = &doc_in;
  if (doc->is_array()) {
    if (doc->size() != 1) throw MalformedPlan("$: expected a single-element EXPLAIN array");
    doc = &(*doc)[0];
  }
  if (!doc->is_object()) throw MalformedPlan("$: plan document is not an object");

  PlanTree tree;
  if (auto it = doc->find("plan"); it != doc->end()) {
    tree.root = parse_node(*it, "$.plan");
    tree.env_id = opt_string(*doc, "env_id", "$").value_or("");
    tree.query_id = opt_string(*doc, "query_id", "$").value_or("");
    tree.total_time_ms = opt_number(*doc, "total_time_ms", "$");
  } else if (auto p = doc->find("Plan"); p != doc->end()) {
    tree.root = parse_node(*p, "$.Plan");
    tree.total_time_ms = opt_number(*doc, "Execution Time", "$");
  } else {
    tree.root = parse_node(*doc, "$");
  }
  return tree;
}

PlanTree parse_plan(std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw MalformedPlan(std::string("invalid JSON at byte ") + std::to_string(e.byte) + ": " + e.what());
  }
  return parse_plan(doc);
}

json to_record(const PlanTree& tree) {
  json j;
  j["env_id"] = tree.env_id;
  j["query_id"] = tree.query_id;
  j["plan"] = node_to_json(tree.root);
  if (tree.total_time_ms) j["total_time_ms"] = *tree.total_time_ms;
  return j;
}

std::string to_record_line(const PlanTree& tree) { return to_record(tree).dump(); }

namespace {

void extract(const PlanNode& node, const std::string& env, std::vector<LabeledOperator>& out) {
  LabeledOperator op;
  op.node_type = node.node_type;
  op.env_id = env;
  op.raw_node = &node;
  if (!node.actual_rows) throw MissingActuals(node.node_type.tag() + " node lacks \"Actual Rows\"");
  op.output_card = *node.actual_rows;
  double own = node.inclusive_time_ms();
  for (const auto& c : node.children) {
    own -= c.inclusive_time_ms();
    if (!c.actual_rows) throw MissingActuals(c.node_type.tag() + " node lacks \"Actual Rows\"");
    op.input_cards.push_back(*c.actual_rows);
  }
  op.own_cost_ms = std::max(own, 0.0);
  out.push_back(std::move(op));
  for (const auto& c : node.children) extract(c, env, out);
}

}  // namespace

std::vector<LabeledOperator> extract_labeled_operators(const PlanTree& tree) {
  std::vector<LabeledOperator> out;
  out.reserve(tree.root.node_count());
  extract(tree.root, tree.env_id, out);
  return out;
}

LoadedDataset load_dataset_text(std::string_view text, const std::string& origin, LoadOptions options) {
  LoadedDataset out;
  std::vector<LineFailure> failures;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(pos, end - pos);
    ++line_no;
    pos = end + 1;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) {
      if (end == text.size()) break;
      continue;
    }
    try {
      out.trees.push_back(parse_plan(line));
      out.line_numbers.push_back(line_no);
    } catch (const MalformedPlan& e) {
      failures.push_back({line_no, e.what()});
    }
    if (end == text.size()) break;
  }
  if (!failures.empty()) {
    if (!options.skip_invalid) throw DatasetError(origin, std::move(failures));
    for (const auto& f : failures)
      out.warnings.push_back(origin + ":" + std::to_string(f.line) + ": skipped: " + f.message);
  }
  return out;
}

LoadedDataset load_dataset(const std::string& path, LoadOptions options) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open dataset " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return load_dataset_text(ss.str(), path, options);
}

void write_dataset(const std::string& path, const std::vector<PlanTree>& trees) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write dataset " + path);
  for (const auto& t : trees) out << to_record_line(t) << '\n';
}

}  // namespace qcfe
