#include "qcfe/templates.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>

namespace qcfe {

using nlohmann::json;

namespace {

const char* const kScanOps[] = {"SeqScan", "IndexScan"};
const char* const kJoinOps[] = {"HashJoin", "MergeJoin", "NestedLoop"};

std::string upper(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

// --- tokenizer ---------------------------------------------------------------

enum class Tok { Ident, Number, String, Param, Op, Punct };

struct Token {
  Tok kind;
  std::string text;  // identifiers are lower-cased
  std::string up;
};

bool ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '$'; }

std::vector<Token> tokenize(std::string_view s) {
  std::vector<Token> out;
  std::size_t i = 0;
  auto push = [&](Tok k, std::string t) {
    std::string u = upper(t);
    out.push_back({k, std::move(t), std::move(u)});
  };
  while (i < s.size()) {
    const char c = s[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
    } else if (c == '-' && i + 1 < s.size() && s[i + 1] == '-') {
      while (i < s.size() && s[i] != '\n') ++i;
    } else if (c == '/' && i + 1 < s.size() && s[i + 1] == '*') {
      const auto end = s.find("*/", i + 2);
      i = end == std::string_view::npos ? s.size() : end + 2;
    } else if (c == '\'') {
      std::string lit;
      ++i;
      while (i < s.size()) {
        if (s[i] == '\'' && i + 1 < s.size() && s[i + 1] == '\'') {
          lit += '\'';
          i += 2;
        } else if (s[i] == '\'') {
          ++i;
          break;
        } else {
          lit += s[i++];
        }
      }
      out.push_back({Tok::String, lit, lit});
    } else if (c == '[') {
      const auto end = s.find(']', i);
      const std::size_t stop = end == std::string_view::npos ? s.size() : end + 1;
      push(Tok::Param, std::string(s.substr(i, stop - i)));
      i = stop;
    } else if (ident_start(c) || c == '"') {
      // dotted names are one token
      std::string name;
      while (i < s.size()) {
        if (s[i] == '"') {
          const auto end = s.find('"', i + 1);
          const std::size_t stop = end == std::string_view::npos ? s.size() : end;
          name += s.substr(i + 1, stop - i - 1);
          i = std::min(stop + 1, s.size());
        } else if (ident_start(s[i])) {
          while (i < s.size() && ident_char(s[i])) name += s[i++];
        } else {
          break;
        }
        if (i + 1 < s.size() && s[i] == '.' && (ident_start(s[i + 1]) || s[i + 1] == '"' || s[i + 1] == '*')) {
          name += '.';
          ++i;
          if (s[i] == '*') {
            name += '*';
            ++i;
            break;
          }
        } else {
          break;
        }
      }
      push(Tok::Ident, lower(name));
    } else if (std::isdigit(static_cast<unsigned char>(c)) ||
               (c == '.' && i + 1 < s.size() && std::isdigit(static_cast<unsigned char>(s[i + 1])))) {
      const std::size_t start = i;
      while (i < s.size() && (std::isalnum(static_cast<unsigned char>(s[i])) || s[i] == '.')) ++i;
      push(Tok::Number, std::string(s.substr(start, i - start)));
    } else if ((c == ':' || c == '$') && i + 1 < s.size() && ident_char(s[i + 1])) {
      const std::size_t start = i++;
      while (i < s.size() && ident_char(s[i])) ++i;
      push(Tok::Param, std::string(s.substr(start, i - start)));
    } else if (c == '?') {
      push(Tok::Param, "?");
      ++i;
    } else if (c == '(' || c == ')' || c == ',' || c == ';') {
      push(Tok::Punct, std::string(1, c));
      ++i;
    } else {
      static const char* const two[] = {"<=", ">=", "<>", "!=", "||", "::"};
      bool matched = false;
      for (const char* t : two) {
        if (s.substr(i, 2) == t) {
          push(Tok::Op, t);
          i += 2;
          matched = true;
          break;
        }
      }
      if (!matched) {
        push(Tok::Op, std::string(1, c));
        ++i;
      }
    }
  }
  return out;
}

const std::set<std::string>& keywords() {
  static const std::set<std::string> k = {
      "SELECT", "FROM",   "WHERE",    "GROUP",     "BY",      "ORDER",    "HAVING",  "LIMIT",   "OFFSET",
      "AND",    "OR",     "NOT",      "IN",        "LIKE",    "ILIKE",    "BETWEEN", "IS",      "NULL",
      "TRUE",   "FALSE",  "AS",       "ON",        "JOIN",    "INNER",    "LEFT",    "RIGHT",   "FULL",
      "OUTER",  "CROSS",  "NATURAL",  "DATE",      "INTERVAL", "TIMESTAMP", "TIME",   "DAY",     "MONTH",
      "YEAR",   "ASC",    "DESC",     "DISTINCT",  "CASE",    "WHEN",     "THEN",    "ELSE",    "END",
      "EXISTS", "ANY",    "ALL",      "SOME",      "UNION",   "EXCEPT",   "INTERSECT", "WITH",  "USING",
      "NULLS",  "FIRST",  "LAST",     "EXTRACT",   "SUBSTRING", "CAST",   "FETCH",   "ROWS",    "ONLY"};
  return k;
}

bool is_kw(const Token& t, std::string_view kw) { return t.kind == Tok::Ident && t.up == kw; }
bool is_punct(const Token& t, char c) { return t.kind == Tok::Punct && t.text.size() == 1 && t.text[0] == c; }

using Span = std::vector<Token>;

// --- statement structure ---------------------------------------------------

struct FromTable {
  std::string table;
  std::string alias;
};

struct Statement {
  std::vector<FromTable> from;
  std::vector<Span> predicates;  // WHERE and every ON clause
  Span order_by;
  Span group_by;
};

std::size_t skip_parens(const Span& t, std::size_t i) {
  int depth = 0;
  for (; i < t.size(); ++i) {
    if (is_punct(t[i], '(')) ++depth;
    if (is_punct(t[i], ')') && --depth == 0) return i + 1;
  }
  return t.size();
}

bool is_join_word(const Token& t) {
  return is_kw(t, "JOIN") || is_kw(t, "INNER") || is_kw(t, "LEFT") || is_kw(t, "RIGHT") || is_kw(t, "FULL") ||
         is_kw(t, "OUTER") || is_kw(t, "CROSS") || is_kw(t, "NATURAL");
}

void parse_from(const Span& t, Statement& st) {
  std::size_t i = 0;
  while (i < t.size()) {
    while (i < t.size() && (is_punct(t[i], ',') || is_join_word(t[i]))) ++i;
    if (i >= t.size()) break;
    if (is_punct(t[i], '(')) {
      i = skip_parens(t, i);  // derived table, not scanned
    } else if (t[i].kind == Tok::Ident && !keywords().count(t[i].up)) {
      FromTable ft;
      ft.table = t[i].text;
      ++i;
      if (i < t.size() && is_kw(t[i], "AS")) ++i;
      if (i < t.size() && t[i].kind == Tok::Ident && !keywords().count(t[i].up)) ft.alias = t[i++].text;
      st.from.push_back(ft);
    } else {
      ++i;
    }
    if (i < t.size() && is_kw(t[i], "AS")) i += 2;
    if (i < t.size() && t[i].kind == Tok::Ident && !keywords().count(t[i].up)) ++i;  // alias of a derived table
    if (i < t.size() && is_kw(t[i], "ON")) {
      Span on;
      ++i;
      while (i < t.size() && !is_punct(t[i], ',') && !is_join_word(t[i])) {
        if (is_punct(t[i], '(')) {
          const std::size_t end = skip_parens(t, i);
          on.insert(on.end(), t.begin() + static_cast<std::ptrdiff_t>(i), t.begin() + static_cast<std::ptrdiff_t>(end));
          i = end;
        } else {
          on.push_back(t[i++]);
        }
      }
      st.predicates.push_back(std::move(on));
    } else if (i < t.size() && is_kw(t[i], "USING")) {
      ++i;
      if (i < t.size() && is_punct(t[i], '(')) i = skip_parens(t, i);
    }
  }
}

Statement split_clauses(const Span& t, const std::string& sql) {
  std::size_t i = 0;
  while (i < t.size() && is_punct(t[i], '(')) ++i;
  if (i >= t.size() || !is_kw(t[i], "SELECT"))
    throw UnparsableTemplate("not a SELECT statement: " + sql.substr(0, 60));

  enum class Clause { None, Select, From, Where, Group, Having, Order, Other };
  Clause cur = Clause::None;
  Span from, where, group, order;
  int depth = 0;
  for (; i < t.size(); ++i) {
    const Token& tok = t[i];
    if (depth == 0) {
      std::optional<Clause> next;
      if (is_kw(tok, "SELECT")) next = cur == Clause::None ? Clause::Select : Clause::Other;
      else if (is_kw(tok, "FROM") && cur == Clause::Select) next = Clause::From;
      else if (is_kw(tok, "WHERE")) next = Clause::Where;
      else if (is_kw(tok, "GROUP") && i + 1 < t.size() && is_kw(t[i + 1], "BY")) next = Clause::Group, ++i;
      else if (is_kw(tok, "ORDER") && i + 1 < t.size() && is_kw(t[i + 1], "BY")) next = Clause::Order, ++i;
      else if (is_kw(tok, "HAVING")) next = Clause::Having;
      else if (is_kw(tok, "LIMIT") || is_kw(tok, "OFFSET") || is_kw(tok, "FETCH") || is_kw(tok, "UNION") ||
               is_kw(tok, "EXCEPT") || is_kw(tok, "INTERSECT"))
        next = Clause::Other;
      if (next) {
        // set operations end the top-level query
        if (*next == Clause::Other && cur != Clause::None) {
          if (is_kw(tok, "UNION") || is_kw(tok, "EXCEPT") || is_kw(tok, "INTERSECT")) break;
        }
        cur = *next;
        continue;
      }
    }
    if (is_punct(tok, '(')) ++depth;
    if (is_punct(tok, ')')) --depth;
    if (is_punct(tok, ';') && depth == 0) break;
    switch (cur) {
      case Clause::From: from.push_back(tok); break;
      case Clause::Where: where.push_back(tok); break;
      case Clause::Group: group.push_back(tok); break;
      case Clause::Order: order.push_back(tok); break;
      default: break;
    }
  }
  Statement st;
  parse_from(from, st);
  if (!where.empty()) st.predicates.push_back(std::move(where));
  st.group_by = std::move(group);
  st.order_by = std::move(order);
  return st;
}

// --- keyword matching ------------------------------------------------------

class Matcher {
 public:
  Matcher(const Statement& st, const DataAbstract* abstract, Warnings* warnings, OperatorTableColumnInfo& info)
      : st_(st), abstract_(abstract), warnings_(warnings), info_(info) {}

  void run() {
    for (const auto& p : st_.predicates) predicates(p);
    for (const auto& tc : items(st_.order_by, "ORDER BY")) info_.add("Sort", tc);
    for (const auto& tc : items(st_.group_by, "GROUP BY")) info_.add("Aggregate", tc);
  }

 private:
  bool column_token(const Span& t, std::size_t j) const {
    if (j >= t.size() || t[j].kind != Tok::Ident || keywords().count(t[j].up)) return false;
    if (t[j].text.ends_with(".*")) return false;
    return !(j + 1 < t.size() && is_punct(t[j + 1], '('));  // function call
  }

  std::optional<TableColumn> resolve(const std::string& name) const {
    if (const auto dot = name.rfind('.'); dot != std::string::npos) {
      const std::string q = name.substr(0, dot), c = name.substr(dot + 1);
      for (const auto& f : st_.from)
        if (f.alias == q || (f.alias.empty() && f.table == q) || f.table == q) return TableColumn{f.table, c};
      if (abstract_ && abstract_->tables.count(q)) return TableColumn{q, c};
      warn(warnings_, "unresolvable qualifier in '" + name + "', skipped");
      return std::nullopt;
    }
    if (!abstract_) {
      if (st_.from.size() == 1) return TableColumn{st_.from.front().table, name};
      warn(warnings_, "column '" + name + "' is ambiguous without a data abstract, skipped");
      return std::nullopt;
    }
    std::vector<std::string> hits;
    for (const auto& f : st_.from)
      if (abstract_->has_column(f.table, name) &&
          std::find(hits.begin(), hits.end(), f.table) == hits.end())
        hits.push_back(f.table);
    if (hits.size() == 1) return TableColumn{hits.front(), name};
    warn(warnings_, "column '" + name + (hits.empty() ? "' not found in FROM tables" : "' is ambiguous") +
                        ", skipped");
    return std::nullopt;
  }

  std::optional<TableColumn> column_at(const Span& t, std::size_t j) const {
    if (!column_token(t, j)) return std::nullopt;
    return resolve(t[j].text);
  }

  void scan(const TableColumn& tc) {
    for (const char* op : kScanOps) info_.add(op, tc);
  }

  void predicates(const Span& t) {
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (is_punct(t[i], '(') && i + 1 < t.size() && is_kw(t[i + 1], "SELECT")) {
        i = skip_parens(t, i) - 1;  // subquery: not scanned
        continue;
      }
      const Token& tok = t[i];
      const bool comparison =
          tok.kind == Tok::Op && (tok.text == "=" || tok.text == "<" || tok.text == ">" || tok.text == "<=" ||
                                  tok.text == ">=" || tok.text == "<>" || tok.text == "!=");
      if (comparison) {
        const auto lhs = i > 0 ? column_at(t, i - 1) : std::nullopt;
        // an operand preceded by DATE/INTERVAL etc. is a literal
        const auto rhs = column_at(t, i + 1);
        if (lhs && rhs && tok.text == "=" && lhs->table != rhs->table) {
          info_.add_join(make_join_edge(*lhs, *rhs));
        } else {
          if (lhs) scan(*lhs);
          if (rhs) scan(*rhs);
        }
      } else if (is_kw(tok, "LIKE") || is_kw(tok, "ILIKE") || is_kw(tok, "IN") || is_kw(tok, "BETWEEN")) {
        std::size_t j = i;
        if (j > 0 && is_kw(t[j - 1], "NOT")) --j;
        if (j > 0)
          if (const auto c = column_at(t, j - 1)) scan(*c);
      }
    }
  }

  std::vector<TableColumn> items(const Span& t, const char* clause) const {
    std::vector<TableColumn> out;
    std::vector<Span> parts(1);
    int depth = 0;
    for (const auto& tok : t) {
      if (is_punct(tok, '(')) ++depth;
      if (is_punct(tok, ')')) --depth;
      if (depth == 0 && is_punct(tok, ',')) {
        parts.emplace_back();
        continue;
      }
      parts.back().push_back(tok);
    }
    for (auto& p : parts) {
      while (!p.empty() && (is_kw(p.back(), "ASC") || is_kw(p.back(), "DESC") || is_kw(p.back(), "FIRST") ||
                            is_kw(p.back(), "LAST") || is_kw(p.back(), "NULLS")))
        p.pop_back();
      if (p.empty()) continue;
      if (p.size() == 1 && column_token(p, 0)) {
        if (auto c = resolve(p[0].text)) out.push_back(*c);
      } else {
        warn(warnings_, std::string(clause) + " item '" + p[0].text + (p.size() > 1 ? " ...'" : "'") +
                            " is not a plain column, skipped");
      }
    }
    return out;
  }

  const Statement& st_;
  const DataAbstract* abstract_;
  Warnings* warnings_;
  OperatorTableColumnInfo& info_;
};

// --- instantiation ---------------------------------------------------------

std::string quote(const std::string& v) {
  std::string out = "'";
  for (char c : v) {
    out += c;
    if (c == '\'') out += '\'';
  }
  return out + "'";
}

std::string format_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string fill_condition(const std::string& column_text, const ColumnStats& stats, std::mt19937_64& rng) {
  if (stats.type == ColumnType::Text) {
    if (stats.distinct_sample.empty())
      throw MissingAbstractEntry("text column " + column_text + " has no distinct sample");
    std::uniform_int_distribution<int> op(0, 2);
    std::uniform_int_distribution<std::size_t> pick(0, stats.distinct_sample.size() - 1);
    switch (op(rng)) {
      case 0:
        return column_text + " = " + quote(stats.distinct_sample[pick(rng)]);
      case 1:
        return column_text + " LIKE " + quote(stats.distinct_sample[pick(rng)].substr(0, 3) + "%");
      default: {
        const std::size_t max_k = std::min<std::size_t>(5, stats.distinct_sample.size());
        std::uniform_int_distribution<std::size_t> k_dist(1, max_k);
        const std::size_t k = k_dist(rng);
        std::vector<std::size_t> idx(stats.distinct_sample.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        std::string list;
        for (std::size_t i = 0; i < k; ++i) {
          std::uniform_int_distribution<std::size_t> d(i, idx.size() - 1);
          std::swap(idx[i], idx[d(rng)]);
          if (i) list += ", ";
          list += quote(stats.distinct_sample[idx[i]]);
        }
        return column_text + " IN (" + list + ")";
      }
    }
  }
  static const char* const ops[] = {"<", ">", "=", "<=", ">="};
  std::uniform_int_distribution<int> op(0, 4);
  const std::string o = ops[op(rng)];
  const bool integral = stats.type == ColumnType::Date ||
                        (std::floor(stats.min) == stats.min && std::floor(stats.max) == stats.max &&
                         std::abs(stats.max - stats.min) < 9e15);
  std::string value;
  if (integral) {
    std::uniform_int_distribution<long long> d(static_cast<long long>(stats.min), static_cast<long long>(stats.max));
    const long long v = d(rng);
    value = stats.type == ColumnType::Date ? "DATE '" + iso_date_from_days(static_cast<long>(v)) + "'"
                                           : std::to_string(v);
  } else {
    std::uniform_real_distribution<double> d(stats.min, stats.max);
    value = format_number(std::clamp(d(rng), stats.min, stats.max));
  }
  return column_text + " " + o + " " + value;
}

TableColumn placeholder_column(const SimplifiedTemplate& t, const std::string& inner) {
  if (const auto dot = inner.find('.'); dot != std::string::npos)
    return {inner.substr(0, dot), inner.substr(dot + 1)};
  return {t.tables.front(), inner};
}

double ordered_bound(const json& v, ColumnType type, const std::string& where) {
  if (type == ColumnType::Date) {
    if (!v.is_string()) throw InvalidArgument(where + ": date bound must be a YYYY-MM-DD string");
    return static_cast<double>(days_from_iso_date(v.get<std::string>()));
  }
  if (!v.is_number()) throw InvalidArgument(where + ": numeric bound expected");
  return v.get<double>();
}

}  // namespace

JoinEdge make_join_edge(TableColumn a, TableColumn b) {
  if (b < a) std::swap(a, b);
  return {std::move(a), std::move(b)};
}

bool OperatorTableColumnInfo::empty() const { return entries.empty() && join_edges.empty(); }

std::size_t OperatorTableColumnInfo::pair_count() const {
  std::size_t n = 0;
  for (const auto& [op, s] : entries) n += s.size();
  return n;
}

void OperatorTableColumnInfo::add(const std::string& op, const TableColumn& tc) { entries[op].insert(tc); }

void OperatorTableColumnInfo::add_join(const JoinEdge& e) {
  for (const char* op : kJoinOps) {
    join_edges[op].insert(e);
    entries[op].insert(e.left);
    entries[op].insert(e.right);
  }
}

bool OperatorTableColumnInfo::subset_of(const OperatorTableColumnInfo& other) const {
  for (const auto& [op, s] : entries) {
    auto it = other.entries.find(op);
    if (it == other.entries.end()) return false;
    if (!std::includes(it->second.begin(), it->second.end(), s.begin(), s.end())) return false;
  }
  for (const auto& [op, s] : join_edges) {
    auto it = other.join_edges.find(op);
    if (it == other.join_edges.end()) return false;
    if (!std::includes(it->second.begin(), it->second.end(), s.begin(), s.end())) return false;
  }
  return true;
}

json to_json(const OperatorTableColumnInfo& info) {
  json entries = json::object();
  for (const auto& [op, s] : info.entries) {
    json arr = json::array();
    for (const auto& tc : s) arr.push_back({tc.table, tc.column});
    entries[op] = arr;
  }
  json joins = json::object();
  for (const auto& [op, s] : info.join_edges) {
    json arr = json::array();
    for (const auto& e : s) arr.push_back({e.left.qualified(), e.right.qualified()});
    joins[op] = arr;
  }
  return {{"entries", entries}, {"join_edges", joins}};
}

const ColumnStats* DataAbstract::find(const TableColumn& tc) const {
  auto t = tables.find(tc.table);
  if (t == tables.end()) return nullptr;
  auto c = t->second.find(tc.column);
  return c == t->second.end() ? nullptr : &c->second;
}

bool DataAbstract::has_column(const std::string& table, const std::string& column) const {
  return find({table, column}) != nullptr;
}

long days_from_iso_date(std::string_view s) {
  int y = 0;
  unsigned m = 0, d = 0;
  if (s.size() != 10 || s[4] != '-' || s[7] != '-' ||
      std::from_chars(s.data(), s.data() + 4, y).ec != std::errc{} ||
      std::from_chars(s.data() + 5, s.data() + 7, m).ec != std::errc{} ||
      std::from_chars(s.data() + 8, s.data() + 10, d).ec != std::errc{})
    throw InvalidArgument("bad date '" + std::string(s) + "', expected YYYY-MM-DD");
  const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
  if (!ymd.ok()) throw InvalidArgument("invalid calendar date '" + std::string(s) + "'");
  return std::chrono::sys_days(ymd).time_since_epoch().count();
}

std::string iso_date_from_days(long days) {
  const std::chrono::year_month_day ymd{std::chrono::sys_days{std::chrono::days{days}}};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                static_cast<unsigned>(ymd.day()));
  return buf;
}

DataAbstract data_abstract_from_json(const json& j) {
  if (!j.is_object()) throw InvalidArgument("data abstract must be a JSON object");
  DataAbstract a;
  for (const auto& [table, cols] : j.items()) {
    if (!cols.is_object()) throw InvalidArgument("data abstract: table '" + table + "' must map columns");
    for (const auto& [column, c] : cols.items()) {
      const std::string where = table + "." + column;
      try {
        ColumnStats s;
        const std::string type = c.at("type").get<std::string>();
        if (type == "numeric") s.type = ColumnType::Numeric;
        else if (type == "text") s.type = ColumnType::Text;
        else if (type == "date") s.type = ColumnType::Date;
        else throw InvalidArgument(where + ": unknown column type '" + type + "'");
        s.row_count = c.value("row_count", std::uint64_t{0});
        const json sample = c.value("distinct_sample", json::array());
        if (sample.size() > 100) throw InvalidArgument(where + ": distinct_sample holds more than 100 values");
        if (s.type != ColumnType::Text) {
          s.min = ordered_bound(c.at("min"), s.type, where);
          s.max = ordered_bound(c.at("max"), s.type, where);
          if (s.min > s.max) throw InvalidArgument(where + ": min > max");
          for (const auto& v : sample) {
            const double x = ordered_bound(v, s.type, where);
            if (x < s.min || x > s.max) throw InvalidArgument(where + ": distinct_sample value outside [min, max]");
            s.distinct_sample.push_back(v.is_string() ? v.get<std::string>() : v.dump());
          }
        } else {
          for (const auto& v : sample) s.distinct_sample.push_back(v.is_string() ? v.get<std::string>() : v.dump());
        }
        a.tables[lower(table)][lower(column)] = std::move(s);
      } catch (const json::exception& e) {
        throw InvalidArgument(where + ": " + e.what());
      }
    }
  }
  return a;
}

DataAbstract load_data_abstract(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open data abstract " + path);
  try {
    return data_abstract_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw InvalidArgument(path + ": " + e.what());
  }
}

std::vector<std::string> split_statements(std::string_view script) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    const auto b = cur.find_first_not_of(" \t\r\n");
    if (b != std::string::npos) {
      const auto e = cur.find_last_not_of(" \t\r\n");
      out.push_back(cur.substr(b, e - b + 1));
    }
    cur.clear();
  };
  bool quoted = false;  // a doubled quote toggles twice
  for (std::size_t i = 0; i < script.size(); ++i) {
    const char c = script[i];
    if (c == '\'') {
      quoted = !quoted;
      cur += c;
    } else if (quoted) {
      cur += c;
    } else if (c == '-' && i + 1 < script.size() && script[i + 1] == '-') {
      while (i < script.size() && script[i] != '\n') ++i;
      cur += '\n';
    } else if (c == ';') {
      flush();
    } else {
      cur += c;
    }
  }
  flush();
  return out;
}

OperatorTableColumnInfo parse_templates(const std::vector<std::string>& templates, const DataAbstract* abstract,
                                        Warnings* warnings) {
  OperatorTableColumnInfo info;
  for (const auto& sql : templates) {
    const auto tokens = tokenize(sql);
    if (tokens.empty()) continue;
    const Statement st = split_clauses(tokens, sql);
    Matcher(st, abstract, warnings, info).run();
  }
  return info;
}

std::vector<SimplifiedTemplate> gen_simplified_templates(const OperatorTableColumnInfo& info, Warnings* warnings) {
  std::vector<SimplifiedTemplate> out;
  auto get = [&](const char* op) -> const std::set<TableColumn>& {
    static const std::set<TableColumn> none;
    auto it = info.entries.find(op);
    return it == info.entries.end() ? none : it->second;
  };

  std::set<TableColumn> scans = get("SeqScan");
  scans.insert(get("IndexScan").begin(), get("IndexScan").end());
  // condition column for a table: its first scan pair, if any
  auto condition_on = [&](const std::string& table) -> std::optional<TableColumn> {
    for (const auto& tc : scans)
      if (tc.table == table) return tc;
    return std::nullopt;
  };
  auto where_clause = [&](const std::string& table, bool qualified, std::vector<TableColumn>& cols) {
    const auto c = condition_on(table);
    if (!c) return std::string();
    cols.push_back(*c);
    return " WHERE [" + (qualified ? c->qualified() : c->column) + "]";
  };

  for (const auto& tc : scans)
    out.push_back({get("SeqScan").count(tc) ? "SeqScan" : "IndexScan", {tc.table}, {tc},
                   "SELECT * FROM " + tc.table + " WHERE [" + tc.column + "]"});

  for (const auto& tc : get("Sort")) {
    SimplifiedTemplate t{"Sort", {tc.table}, {tc}, ""};
    t.template_text = "SELECT * FROM " + tc.table + where_clause(tc.table, false, t.columns) + " ORDER BY " +
                      tc.qualified();
    out.push_back(std::move(t));
  }

  for (const auto& tc : get("Aggregate")) {
    SimplifiedTemplate t{"Aggregate", {tc.table}, {tc}, ""};
    t.template_text = "SELECT COUNT(*) FROM " + tc.table + where_clause(tc.table, false, t.columns) + " GROUP BY " +
                      tc.column;
    out.push_back(std::move(t));
  }

  std::set<JoinEdge> edges;
  for (const char* op : kJoinOps)
    if (auto it = info.join_edges.find(op); it != info.join_edges.end()) edges.insert(it->second.begin(), it->second.end());
  for (const auto& e : edges) {
    const std::string& t1 = e.left.table;
    const std::string& t2 = e.right.table;
    if (t1 == t2) {
      warn(warnings, "self-join edge on " + t1 + " has no parent template, skipped");
      continue;
    }
    std::vector<TableColumn> cols{e.left, e.right};
    std::string where = where_clause(t1, true, cols);
    if (where.empty()) where = where_clause(t2, true, cols);
    const std::string base =
        "SELECT * FROM " + t1 + " JOIN " + t2 + " ON " + e.left.qualified() + " = " + e.right.qualified() + where;
    out.push_back({"HashJoin", {t1, t2}, cols, base});

    // prefer an ORDER BY column the workload already sorts on
    TableColumn order = e.left;
    for (const auto& tc : get("Sort"))
      if (tc.table == t1 || tc.table == t2) {
        order = tc;
        break;
      }
    auto ordered_cols = cols;
    ordered_cols.push_back(order);
    out.push_back({"HashJoin", {t1, t2}, ordered_cols, base + " ORDER BY " + order.qualified()});
  }

  static const std::set<std::string> known = {"SeqScan", "IndexScan", "Sort", "Aggregate",
                                              "HashJoin", "MergeJoin", "NestedLoop"};
  for (const auto& [op, s] : info.entries)
    if (!known.count(op)) warn(warnings, "operator '" + op + "' has no parent template, skipped");
  return out;
}

std::vector<GeneratedQuery> instantiate_queries(const std::vector<SimplifiedTemplate>& templates,
                                                const DataAbstract& abstract, std::size_t scale, std::uint64_t seed) {
  if (scale < 1) throw InvalidArgument("scale must be >= 1");
  // every referenced column must be covered before anything is generated
  for (const auto& t : templates)
    for (const auto& tc : t.columns)
      if (!abstract.find(tc)) throw MissingAbstractEntry("data abstract has no entry for " + tc.qualified());

  std::vector<GeneratedQuery> out;
  out.reserve(templates.size() * scale);
  for (std::size_t ti = 0; ti < templates.size(); ++ti) {
    const auto& t = templates[ti];
    for (std::size_t r = 0; r < scale; ++r) {
      std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                        static_cast<std::uint32_t>(ti), static_cast<std::uint32_t>(r)};
      std::mt19937_64 rng(seq);
      std::string sql;
      const std::string& text = t.template_text;
      std::size_t pos = 0;
      while (pos < text.size()) {
        const auto open = text.find('[', pos);
        if (open == std::string::npos) {
          sql += text.substr(pos);
          break;
        }
        const auto close = text.find(']', open);
        if (close == std::string::npos) throw InvalidArgument("unterminated placeholder in template " + text);
        sql += text.substr(pos, open - pos);
        const std::string inner = text.substr(open + 1, close - open - 1);
        const TableColumn tc = placeholder_column(t, inner);
        const ColumnStats* stats = abstract.find(tc);
        if (!stats) throw MissingAbstractEntry("data abstract has no entry for " + tc.qualified());
        sql += fill_condition(inner, *stats, rng);
        pos = close + 1;
      }
      out.push_back({sql, ti, t.op, seed, r});
    }
  }
  return out;
}

json queries_manifest(const std::vector<GeneratedQuery>& queries) {
  json rows = json::array();
  for (std::size_t i = 0; i < queries.size(); ++i) {
    const auto& q = queries[i];
    rows.push_back({{"query", i}, {"template_id", q.template_id}, {"operator", q.op}, {"seed", q.seed},
                    {"round", q.round}});
  }
  return {{"queries", rows}};
}

}  // namespace qcfe
