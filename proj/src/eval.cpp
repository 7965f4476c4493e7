#include "qcfe/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <iomanip>
#include <sstream>

namespace qcfe {

using nlohmann::json;

double qerror(double actual_ms, double predicted_ms) {
  const double a = std::max(actual_ms, kQErrorFloorMs);
  const double p = std::max(predicted_ms, kQErrorFloorMs);
  return std::max(a / p, p / a);
}

double pearson(std::span<const double> a, std::span<const double> p, Warnings* warnings) {
  if (a.size() != p.size())
    throw LengthMismatch("pearson: " + std::to_string(a.size()) + " actuals vs " + std::to_string(p.size()) +
                         " predictions");
  if (a.size() < 2) throw InvalidArgument("pearson needs at least two points");
  const double n = static_cast<double>(a.size());
  double ma = 0, mp = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mp += p[i];
  }
  ma /= n;
  mp /= n;
  double cov = 0, va = 0, vp = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    cov += (a[i] - ma) * (p[i] - mp);
    va += (a[i] - ma) * (a[i] - ma);
    vp += (p[i] - mp) * (p[i] - mp);
  }
  if (va == 0 || vp == 0) {
    warn(warnings, "pearson: constant input, correlation defined as 0");
    return 0;
  }
  // population moments: the 1/n factors cancel
  return std::clamp(cov / std::sqrt(va * vp), -1.0, 1.0);
}

double percentile_nearest_rank(std::vector<double> values, double p) {
  if (values.empty()) throw InvalidArgument("percentile of an empty set");
  std::sort(values.begin(), values.end());
  auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(values.size())));
  rank = std::clamp<std::size_t>(rank, 1, values.size());
  return values[rank - 1];
}

double mean_qerror(std::span<const double> actuals, std::span<const double> predicts) {
  if (actuals.size() != predicts.size()) throw LengthMismatch("mean_qerror: length mismatch");
  if (actuals.empty()) throw EmptyTestSet("mean_qerror of an empty set");
  double s = 0;
  for (std::size_t i = 0; i < actuals.size(); ++i) s += qerror(actuals[i], predicts[i]);
  return s / static_cast<double>(actuals.size());
}

namespace {

std::string fingerprint(std::span<const double> labels) {
  std::uint64_t h = 1469598103934665603ULL;
  for (double d : labels) {
    unsigned char bytes[sizeof(double)];
    std::memcpy(bytes, &d, sizeof(double));
    for (unsigned char c : bytes) {
      h ^= c;
      h *= 1099511628211ULL;
    }
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h << "-" << std::dec << labels.size();
  return os.str();
}

}  // namespace

EvalReport report_from_predictions(std::span<const double> actuals, std::span<const double> predicts,
                                   const std::string& variant_label) {
  if (actuals.empty()) throw EmptyTestSet("no test examples");
  if (actuals.size() != predicts.size()) throw LengthMismatch("report: length mismatch");
  EvalReport r;
  r.variant_label = variant_label;
  r.n_examples = actuals.size();
  std::vector<double> q(actuals.size());
  for (std::size_t i = 0; i < q.size(); ++i) q[i] = qerror(actuals[i], predicts[i]);
  r.mean_qerror = mean_qerror(actuals, predicts);
  r.qerror_p50 = percentile_nearest_rank(q, 50);
  r.qerror_p90 = percentile_nearest_rank(q, 90);
  r.qerror_p95 = percentile_nearest_rank(q, 95);
  r.pearson = actuals.size() >= 2 ? pearson(actuals, predicts, &r.warnings) : 0.0;
  r.test_set_id = fingerprint(actuals);
  return r;
}

EvalReport evaluate(const CostModel& model, const std::vector<EncodedPlan>& test, EvalOptions options) {
  if (test.empty()) throw EmptyTestSet("evaluation set is empty");
  std::vector<double> actual, pred;
  actual.reserve(test.size());
  pred.reserve(test.size());
  for (const auto& p : test) {
    actual.push_back(p.label_ms);
    pred.push_back(predict(model, p));
  }
  EvalReport r = report_from_predictions(actual, pred, options.variant_label);
  r.train_time_s = model.meta.train_time_s;

  std::vector<double> rates;
  volatile double sink = 0;
  for (std::size_t pass = 0; pass < std::max<std::size_t>(options.timed_passes, 3); ++pass) {
    const auto t0 = std::chrono::steady_clock::now();
    for (const auto& p : test) sink = sink + predict(model, p);
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rates.push_back(static_cast<double>(test.size()) / std::max(s, 1e-9));
  }
  std::sort(rates.begin(), rates.end());
  r.inference_throughput_per_s = rates[rates.size() / 2];
  return r;
}

json to_json(const EvalReport& r) {
  return {{"variant_label", r.variant_label},
          {"mean_qerror", r.mean_qerror},
          {"qerror_p50", r.qerror_p50},
          {"qerror_p90", r.qerror_p90},
          {"qerror_p95", r.qerror_p95},
          {"pearson", r.pearson},
          {"n_examples", r.n_examples},
          {"train_time_s", r.train_time_s},
          {"inference_throughput_per_s", r.inference_throughput_per_s},
          {"test_set_id", r.test_set_id},
          {"warnings", r.warnings}};
}

EvalReport eval_report_from_json(const json& j) {
  try {
    EvalReport r;
    r.variant_label = j.at("variant_label").get<std::string>();
    r.mean_qerror = j.at("mean_qerror").get<double>();
    r.qerror_p50 = j.at("qerror_p50").get<double>();
    r.qerror_p90 = j.at("qerror_p90").get<double>();
    r.qerror_p95 = j.at("qerror_p95").get<double>();
    r.pearson = j.at("pearson").get<double>();
    r.n_examples = j.at("n_examples").get<std::size_t>();
    r.train_time_s = j.value("train_time_s", 0.0);
    r.inference_throughput_per_s = j.value("inference_throughput_per_s", 0.0);
    r.test_set_id = j.value("test_set_id", std::string{});
    r.warnings = j.value("warnings", Warnings{});
    return r;
  } catch (const json::exception& e) {
    throw Error(std::string("malformed eval report: ") + e.what());
  }
}

ComparisonTable compare(const std::vector<EvalReport>& reports) {
  if (reports.size() < 2) throw InvalidArgument("compare needs at least two reports");
  const double base = reports.front().mean_qerror;
  const std::string& base_label = reports.front().variant_label;

  std::vector<const EvalReport*> rows;
  for (const auto& r : reports) rows.push_back(&r);
  std::stable_sort(rows.begin(), rows.end(),
                   [](const EvalReport* a, const EvalReport* b) { return a->variant_label < b->variant_label; });

  ComparisonTable t;
  for (const auto& r : reports)
    if (r.test_set_id != reports.front().test_set_id) t.comparable = false;

  std::ostringstream csv;
  csv << std::setprecision(10);
  csv << "variant,pearson,mean_qerror,p50,p90,p95,train_s,throughput\n";
  json jrows = json::array();
  for (const EvalReport* r : rows) {
    csv << r->variant_label << ',' << r->pearson << ',' << r->mean_qerror << ',' << r->qerror_p50 << ','
        << r->qerror_p90 << ',' << r->qerror_p95 << ',' << r->train_time_s << ',' << r->inference_throughput_per_s
        << '\n';
    json row = to_json(*r);
    row["delta_mean_qerror"] = base > 0 ? (r->mean_qerror - base) / base : 0.0;
    jrows.push_back(std::move(row));
  }
  static const std::string kFootnote = "reports were computed on different test sets; deltas are not comparable";
  if (!t.comparable) csv << "# " << kFootnote << '\n';
  t.csv = csv.str();
  t.json = {{"baseline", base_label}, {"rows", jrows}, {"comparable", t.comparable}};
  if (!t.comparable) t.json["footnote"] = kFootnote;
  return t;
}

}  // namespace qcfe
