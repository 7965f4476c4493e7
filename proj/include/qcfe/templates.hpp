#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "qcfe/errors.hpp"

namespace qcfe {

struct TableColumn {
  std::string table;
  std::string column;
  auto operator<=>(const TableColumn&) const = default;
  std::string qualified() const { return table + "." + column; }
};

/// Equality predicate between two tables; stored with left < right.
struct JoinEdge {
  TableColumn left;
  TableColumn right;
  auto operator<=>(const JoinEdge&) const = default;
};

JoinEdge make_join_edge(TableColumn a, TableColumn b);

struct OperatorTableColumnInfo {
  std::map<std::string, std::set<TableColumn>> entries;
  std::map<std::string, std::set<JoinEdge>> join_edges;

  bool empty() const;
  std::size_t pair_count() const;
  void add(const std::string& op, const TableColumn& tc);
  void add_join(const JoinEdge& e);
  /// Every entry and join edge of *this also appears in `other`.
  bool subset_of(const OperatorTableColumnInfo& other) const;
};

nlohmann::json to_json(const OperatorTableColumnInfo& info);

enum class ColumnType { Numeric, Text, Date };

struct ColumnStats {
  ColumnType type = ColumnType::Numeric;
  double min = 0;  // epoch days for dates
  double max = 0;
  std::vector<std::string> distinct_sample;  // text columns; ordered types keep their literal form
  std::uint64_t row_count = 0;
};

/// Per table, per column summary used to fill predicates.
struct DataAbstract {
  std::map<std::string, std::map<std::string, ColumnStats>> tables;

  const ColumnStats* find(const TableColumn& tc) const;
  bool has_column(const std::string& table, const std::string& column) const;
};

/// {"<table>": {"<column>": {"type", "min", "max", "distinct_sample", "row_count"}}}
/// Date bounds are "YYYY-MM-DD" strings. Throws InvalidArgument when min > max
/// or a sample of an ordered column falls outside [min, max].
DataAbstract data_abstract_from_json(const nlohmann::json& j);
DataAbstract load_data_abstract(const std::string& path);

/// Days since 1970-01-01 for "YYYY-MM-DD", and back.
long days_from_iso_date(std::string_view s);
std::string iso_date_from_days(long days);

/// Splits a script on ';' outside quotes and comments; drops empty statements.
std::vector<std::string> split_statements(std::string_view script);

/// Keyword matching over the top-level WHERE / JOIN ON / ORDER BY / GROUP BY
/// clauses. Unqualified columns resolve against the FROM tables through the
/// abstract when one is given.
OperatorTableColumnInfo parse_templates(const std::vector<std::string>& templates,
                                        const DataAbstract* abstract = nullptr, Warnings* warnings = nullptr);

struct SimplifiedTemplate {
  std::string op;  // operator tag; "SeqScan" also stands for IndexScan, "HashJoin" for all joins
  std::vector<std::string> tables;
  std::vector<TableColumn> columns;  // columns[0] is the operator's own column(s)
  std::string template_text;         // placeholder "[col]" / "[table.col]" marks the condition
};

/// One template per scan pair (shared by both scan operators), per Sort pair,
/// per Aggregate pair, and two per join edge (shared by the three joins).
/// Tags without a parent template are skipped with a warning.
std::vector<SimplifiedTemplate> gen_simplified_templates(const OperatorTableColumnInfo& info,
                                                         Warnings* warnings = nullptr);

struct GeneratedQuery {
  std::string sql;
  std::size_t template_id = 0;
  std::string op;
  std::uint64_t seed = 0;
  std::size_t round = 0;
};

/// scale queries per template, template-major. The generator for
/// (template t, round r) is seeded from (seed, t, r) only.
std::vector<GeneratedQuery> instantiate_queries(const std::vector<SimplifiedTemplate>& templates,
                                                const DataAbstract& abstract, std::size_t scale, std::uint64_t seed);

nlohmann::json queries_manifest(const std::vector<GeneratedQuery>& queries);

}  // namespace qcfe
