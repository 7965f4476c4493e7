#include "qcfe/cost_model.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

namespace qcfe {

using nlohmann::json;

namespace {

constexpr double kMinCostMs = 1e-6;

Eigen::VectorXd activate(const Eigen::VectorXd& z, Activation act) {
  return act == Activation::Relu ? Eigen::VectorXd(z.cwiseMax(0.0)) : z;
}

Eigen::VectorXd as_vector(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::string act_name(Activation a) { return a == Activation::Relu ? "relu" : "identity"; }

Activation act_from(const std::string& s) {
  if (s == "relu") return Activation::Relu;
  if (s == "identity") return Activation::Identity;
  throw ShapeMismatch("unknown activation tag '" + s + "'");
}

Mlp make_mlp(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out, std::mt19937_64& rng) {
  Mlp m;
  std::size_t fan_in = in;
  auto add = [&](std::size_t fan_out, Activation act) {
    DenseLayer l;
    const double r = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> u(-r, r);
    l.w.resize(static_cast<Eigen::Index>(fan_out), static_cast<Eigen::Index>(fan_in));
    for (Eigen::Index i = 0; i < l.w.rows(); ++i)
      for (Eigen::Index j = 0; j < l.w.cols(); ++j) l.w(i, j) = u(rng);
    l.b = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(fan_out));
    l.act = act;
    m.layers.push_back(std::move(l));
    fan_in = fan_out;
  };
  for (auto h : hidden) add(h, Activation::Relu);
  add(out, Activation::Identity);
  return m;
}

void check_plan(const CostModel& model, const EncodedPlan& plan) {
  if (plan.schema_hash != model.schema_hash)
    throw SchemaMismatch("plan encoded under schema " + plan.schema_hash + ", model expects " + model.schema_hash);
  if (plan.nodes.empty()) throw InvalidArgument("encoded plan has no nodes");
}

// Per-node forward state for the plan-structured kind.
struct NodeState {
  const Mlp* unit = nullptr;
  MlpTrace trace;
  Eigen::VectorXd out;
};

std::vector<NodeState> forward_plan(const CostModel& model, const EncodedPlan& plan) {
  const auto h = static_cast<Eigen::Index>(model.hidden_width);
  const auto d = static_cast<Eigen::Index>(model.input_dim);
  std::vector<NodeState> st(plan.nodes.size());
  for (std::size_t i = plan.nodes.size(); i-- > 0;) {
    const auto& node = plan.nodes[i];
    Eigen::VectorXd in(d + h);
    in.head(d) = as_vector(node.x.values);
    Eigen::VectorXd child_sum = Eigen::VectorXd::Zero(h);
    for (auto c : node.children) child_sum += st[c].out.tail(h);
    in.tail(h) = child_sum;
    st[i].unit = &model.unit_for(node.tag);
    st[i].trace = st[i].unit->trace(in);
    st[i].out = st[i].trace.post.back();
  }
  return st;
}

Eigen::VectorXd mean_pool(const EncodedPlan& plan, std::size_t dim) {
  Eigen::VectorXd s = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim));
  for (const auto& n : plan.nodes) s += as_vector(n.x.values);
  return s / static_cast<double>(plan.nodes.size());
}

// Loss value and d(loss)/d(raw) for one prediction.
std::pair<double, double> point_loss(double raw, double label_ms, Loss loss) {
  if (loss == Loss::Msle) {
    const double r = raw - std::log1p(label_ms);
    return {r * r, 2.0 * r};
  }
  const double pred = std::expm1(raw);
  const double r = pred - label_ms;
  return {r * r, 2.0 * r * std::exp(raw)};
}

void apply_update(CostModel& model, const std::map<std::string, MlpGrad>& grads, double lr) {
  for (auto& [tag, unit] : model.units) {
    auto it = grads.find(tag);
    if (it == grads.end()) continue;
    for (std::size_t l = 0; l < unit.layers.size(); ++l) {
      unit.layers[l].w -= lr * it->second.w[l];
      unit.layers[l].b -= lr * it->second.b[l];
    }
  }
}

void check_labels(const std::vector<EncodedPlan>& data, const std::string& schema_hash) {
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data[i].schema_hash != schema_hash)
      throw SchemaMismatch("training plan " + std::to_string(i) + " encoded under schema " + data[i].schema_hash);
    if (!(data[i].label_ms > 0))
      throw NonPositiveLabel("training plan " + std::to_string(i) + " has label " + std::to_string(data[i].label_ms));
  }
}

// Per-dim affine map of the feature inputs: z = (x - shift) / scale.
struct InputStandardizer {
  Eigen::VectorXd shift;
  Eigen::VectorXd scale;
};

// Statistics of what the first layer actually sees: pooled vectors for the
// flat kind, every node vector for the plan-structured kind.
InputStandardizer input_stats(const CostModel& model, const std::vector<EncodedPlan>& data) {
  const auto d = static_cast<Eigen::Index>(model.input_dim);
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(d), sq = Eigen::VectorXd::Zero(d);
  double n = 0;
  auto add = [&](const Eigen::VectorXd& x) {
    sum += x;
    sq += x.cwiseProduct(x);
    n += 1;
  };
  for (const auto& p : data) {
    if (model.kind == ModelKind::Flat) {
      add(mean_pool(p, model.input_dim));
    } else {
      for (const auto& node : p.nodes) add(as_vector(node.x.values));
    }
  }
  InputStandardizer s{Eigen::VectorXd::Zero(d), Eigen::VectorXd::Ones(d)};
  if (n == 0) return s;
  for (Eigen::Index k = 0; k < d; ++k) {
    const double mean = sum(k) / n;
    const double sd = std::sqrt(std::max(sq(k) / n - mean * mean, 0.0));
    // Constant dims (including masked ones) keep the identity map.
    if (sd > 1e-9) {
      s.shift(k) = mean;
      s.scale(k) = sd;
    }
  }
  return s;
}

// Rewrites each unit's first layer so that it consumes standardized inputs
// while computing the same function: W' = W diag(scale), b' = b + W shift.
void to_standardized(CostModel& model, const InputStandardizer& s) {
  const auto d = static_cast<Eigen::Index>(model.input_dim);
  for (auto& [tag, unit] : model.units) {
    auto& l = unit.layers.front();
    l.b += l.w.leftCols(d) * s.shift;
    l.w.leftCols(d) = l.w.leftCols(d) * s.scale.asDiagonal();
  }
}

// Inverse of to_standardized.
void from_standardized(CostModel& model, const InputStandardizer& s) {
  const auto d = static_cast<Eigen::Index>(model.input_dim);
  for (auto& [tag, unit] : model.units) {
    auto& l = unit.layers.front();
    l.w.leftCols(d) = l.w.leftCols(d) * s.scale.cwiseInverse().asDiagonal();
    l.b -= l.w.leftCols(d) * s.shift;
  }
}

std::vector<EncodedPlan> standardized_copy(const std::vector<EncodedPlan>& data, const InputStandardizer& s) {
  std::vector<EncodedPlan> out = data;
  for (auto& p : out)
    for (auto& node : p.nodes)
      for (std::size_t k = 0; k < node.x.values.size(); ++k) {
        const auto i = static_cast<Eigen::Index>(k);
        node.x.values[k] = (node.x.values[k] - s.shift(i)) / s.scale(i);
      }
  return out;
}

// Gradient descent runs in standardized input coordinates so that log-scale
// dims do not dictate the usable step size; the returned weights act on raw
// inputs. A fresh model's initial weights are taken as already standardized.
CostModel run_training(CostModel model, const std::vector<EncodedPlan>& raw_data, const TrainConfig& cfg,
                       bool fresh) {
  if (cfg.learning_rate <= 0) throw InvalidArgument("learning_rate must be > 0");
  if (cfg.batch_size == 0) throw InvalidArgument("batch_size must be >= 1");
  if (raw_data.empty()) throw InvalidArgument("empty training set");
  check_labels(raw_data, model.schema_hash);
  const InputStandardizer stdz = input_stats(model, raw_data);
  const std::vector<EncodedPlan> data = standardized_copy(raw_data, stdz);
  if (!fresh) to_standardized(model, stdz);

  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);

  double lr = cfg.learning_rate;
  double best = mean_loss(model, data, cfg);
  model.meta.loss_curve = {best};
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    const auto before = model.units;
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<const EncodedPlan*> batch;
      for (std::size_t i = start; i < end; ++i) batch.push_back(&data[order[i]]);
      const auto lg = loss_and_gradient(model, batch, cfg);
      apply_update(model, lg.grads, lr);
    }
    const double loss = mean_loss(model, data, cfg);
    if (!(loss <= best)) {
      // Regressing pass: roll back and halve the step.
      model.units = before;
      lr *= 0.5;
    } else {
      best = loss;
    }
    model.meta.loss_curve.push_back(best);
  }
  from_standardized(model, stdz);
  model.meta.iters += cfg.iterations;
  model.meta.seed = cfg.seed;
  model.meta.final_learning_rate = lr;
  model.meta.train_time_s +=
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return model;
}

}  // namespace

std::size_t Mlp::input_dim() const { return layers.empty() ? 0 : static_cast<std::size_t>(layers.front().w.cols()); }
std::size_t Mlp::output_dim() const { return layers.empty() ? 0 : static_cast<std::size_t>(layers.back().w.rows()); }

Eigen::VectorXd Mlp::forward(const Eigen::VectorXd& x) const {
  Eigen::VectorXd a = x;
  for (const auto& l : layers) a = activate(l.w * a + l.b, l.act);
  return a;
}

MlpTrace Mlp::trace(const Eigen::VectorXd& x) const {
  MlpTrace t;
  Eigen::VectorXd a = x;
  for (const auto& l : layers) {
    t.inputs.push_back(a);
    Eigen::VectorXd z = l.w * a + l.b;
    a = activate(z, l.act);
    t.pre.push_back(std::move(z));
    t.post.push_back(a);
  }
  return t;
}

Eigen::VectorXd Mlp::backward(const MlpTrace& t, const Eigen::VectorXd& grad_out, MlpGrad* acc) const {
  Eigen::VectorXd g = grad_out;
  for (std::size_t l = layers.size(); l-- > 0;) {
    const auto& layer = layers[l];
    if (layer.act == Activation::Relu) g = g.cwiseProduct((t.pre[l].array() > 0.0).cast<double>().matrix());
    if (acc != nullptr) {
      acc->w[l] += g * t.inputs[l].transpose();
      acc->b[l] += g;
    }
    g = layer.w.transpose() * g;
  }
  return g;
}

MlpGrad Mlp::zero_grad() const {
  MlpGrad g;
  for (const auto& l : layers) {
    g.w.push_back(Eigen::MatrixXd::Zero(l.w.rows(), l.w.cols()));
    g.b.push_back(Eigen::VectorXd::Zero(l.b.size()));
  }
  return g;
}

std::string to_string(ModelKind kind) { return kind == ModelKind::Flat ? "flat" : "plan_structured"; }

ModelKind model_kind_from_string(const std::string& s) {
  if (s == "flat") return ModelKind::Flat;
  if (s == "plan" || s == "plan_structured") return ModelKind::PlanStructured;
  throw InvalidArgument("unknown model kind '" + s + "'");
}

const Mlp& CostModel::unit_for(const std::string& tag) const {
  if (kind == ModelKind::Flat) return units.at(kFlatUnit);
  auto it = units.find(tag);
  if (it == units.end()) throw SchemaMismatch("model has no unit for operator " + tag);
  return it->second;
}

CostModel init_model(ModelKind kind, const FeatureSchema& schema, const TrainConfig& cfg) {
  CostModel m;
  m.kind = kind;
  m.schema_hash = schema.hash();
  m.input_dim = schema.dimension();
  std::mt19937_64 rng(cfg.seed);
  if (kind == ModelKind::Flat) {
    m.units.emplace(CostModel::kFlatUnit, make_mlp(m.input_dim, cfg.hidden_sizes, 1, rng));
  } else {
    m.hidden_width = cfg.hidden_width;
    for (const auto& tag : schema.node_types)
      m.units.emplace(tag, make_mlp(m.input_dim + m.hidden_width, cfg.hidden_sizes, 1 + m.hidden_width, rng));
  }
  m.meta.seed = cfg.seed;
  return m;
}

double raw_output(const CostModel& model, const EncodedPlan& plan) {
  check_plan(model, plan);
  if (model.kind == ModelKind::Flat)
    return model.units.at(CostModel::kFlatUnit).forward(mean_pool(plan, model.input_dim))(0);
  return forward_plan(model, plan).front().out(0);
}

double to_cost_ms(double raw) { return std::max(std::expm1(raw), kMinCostMs); }

double predict(const CostModel& model, const EncodedPlan& plan) { return to_cost_ms(raw_output(model, plan)); }

Eigen::VectorXd operator_input(const CostModel& model, const FeatureVector& x) {
  if (x.schema_hash != model.schema_hash)
    throw SchemaMismatch("operator vector bound to schema " + x.schema_hash + ", model expects " + model.schema_hash);
  if (x.values.size() != model.input_dim)
    throw DimensionMismatch("operator vector has " + std::to_string(x.values.size()) + " dims, model expects " +
                            std::to_string(model.input_dim));
  Eigen::VectorXd in = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(model.unit_input_dim()));
  in.head(static_cast<Eigen::Index>(model.input_dim)) = as_vector(x.values);
  return in;
}

double operator_raw_output(const CostModel& model, const FeatureVector& x, const std::string& tag) {
  return model.unit_for(tag).forward(operator_input(model, x))(0);
}

double predict_operator(const CostModel& model, const FeatureVector& x, const std::string& tag) {
  return to_cost_ms(operator_raw_output(model, x, tag));
}

LossGradient loss_and_gradient(const CostModel& model, const std::vector<const EncodedPlan*>& batch,
                               const TrainConfig& cfg) {
  LossGradient out;
  for (const auto& [tag, unit] : model.units) out.grads.emplace(tag, unit.zero_grad());
  if (batch.empty()) return out;
  const double inv = 1.0 / static_cast<double>(batch.size());
  const auto h = static_cast<Eigen::Index>(model.hidden_width);

  for (const EncodedPlan* plan : batch) {
    check_plan(model, *plan);
    if (model.kind == ModelKind::Flat) {
      const auto& unit = model.units.at(CostModel::kFlatUnit);
      const auto t = unit.trace(mean_pool(*plan, model.input_dim));
      const auto [l, dl] = point_loss(t.post.back()(0), plan->label_ms, cfg.loss);
      out.loss += l * inv;
      Eigen::VectorXd g(1);
      g(0) = dl * inv;
      unit.backward(t, g, &out.grads.at(CostModel::kFlatUnit));
      continue;
    }

    auto st = forward_plan(model, *plan);
    const std::size_t n = plan->nodes.size();
    std::vector<Eigen::VectorXd> grad_out(n, Eigen::VectorXd::Zero(1 + h));

    // Supervised nodes: the root, plus every labelled node when requested.
    std::vector<std::size_t> supervised{0};
    if (cfg.supervise_all_nodes)
      for (std::size_t i = 1; i < n; ++i)
        if (plan->nodes[i].label_ms > 0) supervised.push_back(i);
    const double w = inv / static_cast<double>(supervised.size());
    for (auto i : supervised) {
      const double label = i == 0 ? plan->label_ms : plan->nodes[i].label_ms;
      const auto [l, dl] = point_loss(st[i].out(0), label, cfg.loss);
      out.loss += l * w;
      grad_out[i](0) += dl * w;
    }
    // Parents precede children, so a forward sweep sees complete gradients.
    for (std::size_t i = 0; i < n; ++i) {
      const auto& node = plan->nodes[i];
      const Eigen::VectorXd gin = st[i].unit->backward(st[i].trace, grad_out[i], &out.grads.at(node.tag));
      for (auto c : node.children) grad_out[c].tail(h) += gin.tail(h);
    }
  }
  return out;
}

double mean_loss(const CostModel& model, const std::vector<EncodedPlan>& data, const TrainConfig& cfg) {
  if (data.empty()) return 0;
  double s = 0;
  for (const auto& p : data) {
    if (model.kind == ModelKind::Flat || !cfg.supervise_all_nodes) {
      s += point_loss(raw_output(model, p), p.label_ms, cfg.loss).first;
      continue;
    }
    auto st = forward_plan(model, p);
    double ls = point_loss(st[0].out(0), p.label_ms, cfg.loss).first;
    std::size_t cnt = 1;
    for (std::size_t i = 1; i < p.nodes.size(); ++i) {
      if (!(p.nodes[i].label_ms > 0)) continue;
      ls += point_loss(st[i].out(0), p.nodes[i].label_ms, cfg.loss).first;
      ++cnt;
    }
    s += ls / static_cast<double>(cnt);
  }
  return s / static_cast<double>(data.size());
}

CostModel train(const std::vector<EncodedPlan>& data, const FeatureSchema& schema, const TrainConfig& cfg,
                ModelKind kind) {
  if (cfg.iterations < 1) throw InvalidArgument("iterations must be >= 1");
  CostModel model = init_model(kind, schema, cfg);
  // Start the cost output at the mean log label so early passes fit shape,
  // not the offset.
  double offset = 0;
  for (const auto& p : data) offset += std::log1p(std::max(p.label_ms, 0.0));
  if (!data.empty()) offset /= static_cast<double>(data.size());
  for (auto& [tag, unit] : model.units) unit.layers.back().b(0) = offset;
  return run_training(std::move(model), data, cfg, true);
}

CostModel fine_tune(CostModel start, const std::vector<EncodedPlan>& data, const TrainConfig& cfg) {
  if (cfg.iterations == 0) return start;
  return run_training(std::move(start), data, cfg, false);
}

EncodedPlan single_operator_plan(FeatureVector x, const std::string& tag, double label_ms) {
  EncodedPlan p;
  p.schema_hash = x.schema_hash;
  p.label_ms = label_ms;
  EncodedNode n;
  n.x = std::move(x);
  n.tag = tag;
  n.label_ms = label_ms;
  p.nodes.push_back(std::move(n));
  return p;
}

json export_weights(const CostModel& model) {
  json units = json::object();
  for (const auto& [tag, unit] : model.units) {
    json layers = json::array();
    for (const auto& l : unit.layers) {
      json w = json::array();
      for (Eigen::Index i = 0; i < l.w.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < l.w.cols(); ++j) row.push_back(l.w(i, j));
        w.push_back(std::move(row));
      }
      layers.push_back({{"w", w}, {"b", std::vector<double>(l.b.data(), l.b.data() + l.b.size())}, {"act", act_name(l.act)}});
    }
    units[tag] = {{"layers", layers}};
  }
  return {{"version", kWeightFormatVersion},
          {"kind", to_string(model.kind)},
          {"schema_hash", model.schema_hash},
          {"input_dim", model.input_dim},
          {"hidden_width", model.hidden_width},
          {"units", units},
          {"meta",
           {{"iters", model.meta.iters},
            {"seed", model.meta.seed},
            {"loss_curve", model.meta.loss_curve},
            {"final_learning_rate", model.meta.final_learning_rate},
            {"train_time_s", model.meta.train_time_s}}}};
}

CostModel import_weights(const json& doc) {
  try {
    const int version = doc.at("version").get<int>();
    if (version != kWeightFormatVersion)
      throw VersionMismatch("weight document version " + std::to_string(version) + ", supported " +
                            std::to_string(kWeightFormatVersion));
    CostModel m;
    m.kind = model_kind_from_string(doc.at("kind").get<std::string>());
    m.schema_hash = doc.at("schema_hash").get<std::string>();
    m.input_dim = doc.at("input_dim").get<std::size_t>();
    m.hidden_width = doc.at("hidden_width").get<std::size_t>();
    const std::size_t unit_in = m.unit_input_dim();
    const std::size_t unit_out = m.kind == ModelKind::Flat ? 1 : 1 + m.hidden_width;

    for (const auto& [tag, u] : doc.at("units").items()) {
      Mlp mlp;
      std::size_t fan_in = unit_in;
      for (const auto& lj : u.at("layers")) {
        const auto& wj = lj.at("w");
        const auto b = lj.at("b").get<std::vector<double>>();
        if (wj.size() != b.size())
          throw ShapeMismatch(tag + ": weight matrix has " + std::to_string(wj.size()) + " rows, bias has " +
                              std::to_string(b.size()));
        DenseLayer l;
        l.w.resize(static_cast<Eigen::Index>(b.size()), static_cast<Eigen::Index>(fan_in));
        for (std::size_t i = 0; i < wj.size(); ++i) {
          const auto row = wj[i].get<std::vector<double>>();
          if (row.size() != fan_in)
            throw ShapeMismatch(tag + ": weight row " + std::to_string(i) + " has " + std::to_string(row.size()) +
                                " columns, expected " + std::to_string(fan_in));
          for (std::size_t j = 0; j < fan_in; ++j)
            l.w(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = row[j];
        }
        l.b = as_vector(b);
        l.act = act_from(lj.at("act").get<std::string>());
        fan_in = b.size();
        mlp.layers.push_back(std::move(l));
      }
      if (mlp.layers.empty() || fan_in != unit_out)
        throw ShapeMismatch(tag + ": unit output width " + std::to_string(fan_in) + ", expected " +
                            std::to_string(unit_out));
      m.units.emplace(tag, std::move(mlp));
    }
    if (m.kind == ModelKind::Flat && !m.units.count(CostModel::kFlatUnit))
      throw ShapeMismatch("flat model document has no 'flat' unit");
    if (auto it = doc.find("meta"); it != doc.end()) {
      m.meta.iters = it->value("iters", std::size_t{0});
      m.meta.seed = it->value("seed", std::uint64_t{0});
      m.meta.loss_curve = it->value("loss_curve", std::vector<double>{});
      m.meta.final_learning_rate = it->value("final_learning_rate", 0.0);
      m.meta.train_time_s = it->value("train_time_s", 0.0);
    }
    return m;
  } catch (const json::exception& e) {
    throw ShapeMismatch(std::string("malformed weight document: ") + e.what());
  }
}

void save_model(const std::string& path, const CostModel& model) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write model " + path);
  out << export_weights(model).dump() << '\n';
}

CostModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open model " + path);
  try {
    return import_weights(json::parse(in));
  } catch (const json::parse_error& e) {
    throw Error(path + ": " + e.what());
  }
}

}  // namespace qcfe
