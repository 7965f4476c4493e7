#include "qcfe/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "qcfe/cost_model.hpp"
#include "qcfe/eval.hpp"
#include "qcfe/featurize.hpp"
#include "qcfe/plan.hpp"
#include "qcfe/reduction.hpp"
#include "qcfe/snapshot.hpp"
#include "qcfe/synth.hpp"
#include "qcfe/templates.hpp"
#include "qcfe/transfer.hpp"

namespace qcfe {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const std::string& path, const std::string& text) {
  if (const auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out << text;
}

json read_json(const std::string& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw Error(path + ": " + e.what());
  }
}

std::vector<std::string> sorted_files(const std::string& dir, const std::string& ext) {
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ext) files.push_back(e.path().string());
  std::sort(files.begin(), files.end());
  return files;
}

SnapshotSet load_snapshots(const std::vector<std::string>& paths) {
  SnapshotSet set;
  for (const auto& p : paths) {
    FeatureSnapshot s = load_snapshot(p);
    set[s.env_id] = std::move(s);
  }
  return set;
}

std::vector<FeatureSnapshot> values_of(const SnapshotSet& set) {
  std::vector<FeatureSnapshot> v;
  for (const auto& [id, s] : set) v.push_back(s);
  return v;
}

EncodeOptions encode_options(const SnapshotSet& set) {
  EncodeOptions o;
  if (!set.empty()) o.snapshots = &set;
  return o;
}

struct TrainFlags {
  std::string model = "flat";
  std::size_t iters = 200;
  std::uint64_t seed = 42;
  double lr = 1e-3;
  std::size_t batch = 32;
  std::string loss = "msle";
  bool all_nodes = false;

  TrainConfig config() const {
    TrainConfig c;
    c.iterations = iters;
    c.seed = seed;
    c.learning_rate = lr;
    c.batch_size = batch;
    if (loss == "msle") c.loss = Loss::Msle;
    else if (loss == "mse") c.loss = Loss::Mse;
    else throw InvalidArgument("unknown loss '" + loss + "'");
    c.supervise_all_nodes = all_nodes;
    return c;
  }
};

void add_train_flags(CLI::App* cmd, TrainFlags& f, bool with_model) {
  if (with_model) cmd->add_option("--model", f.model, "flat | plan")->check(CLI::IsMember({"flat", "plan", "plan_structured"}));
  cmd->add_option("--iters", f.iters, "training passes");
  cmd->add_option("--seed", f.seed, "random seed");
  cmd->add_option("--lr", f.lr, "learning rate");
  cmd->add_option("--batch", f.batch, "mini-batch size");
  cmd->add_option("--loss", f.loss, "msle | mse")->check(CLI::IsMember({"msle", "mse"}));
  cmd->add_flag("--all-nodes", f.all_nodes, "plan model: supervise every node");
}

// Shell-quotes for POSIX sh.
std::string sh_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') out += "'\\''";
    else out += c;
  }
  return out + "'";
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Feature engineering toolkit for learned query cost estimation", "qcfe"};
  app.require_subcommand(1);
  std::function<json()> action;

  // ingest
  std::string plans_dir, dataset_out, env_id;
  bool skip_invalid = false;
  auto* ingest = app.add_subcommand("ingest", "EXPLAIN ANALYZE JSON files -> dataset.jsonl");
  ingest->add_option("--plans", plans_dir, "directory of *.json plans")->required()->check(CLI::ExistingDirectory);
  ingest->add_option("--out", dataset_out, "output dataset")->required();
  ingest->add_option("--env", env_id, "env_id for plans that carry none")->required();
  ingest->add_flag("--skip-invalid", skip_invalid, "skip malformed files with a warning");
  ingest->callback([&] {
    action = [&] {
      std::vector<PlanTree> trees;
      Warnings warnings;
      for (const auto& f : sorted_files(plans_dir, ".json")) {
        try {
          PlanTree t = parse_plan(std::string_view(read_file(f)));
          if (t.env_id.empty()) t.env_id = env_id;
          if (t.query_id.empty()) t.query_id = fs::path(f).stem().string();
          trees.push_back(std::move(t));
        } catch (const Error& e) {
          if (!skip_invalid) throw Error(f + ": " + e.what());
          warnings.push_back(f + ": " + e.what());
        }
      }
      if (trees.empty()) throw EmptyWorkload("no plans ingested from " + plans_dir);
      write_dataset(dataset_out, trees);
      return json{{"command", "ingest"}, {"plans", trees.size()}, {"skipped", warnings.size()}, {"out", dataset_out}};
    };
  });

  // snapshot fit
  std::string dataset, snapshot_out;
  auto* snapshot = app.add_subcommand("snapshot", "feature snapshots");
  snapshot->require_subcommand(1);
  auto* fit = snapshot->add_subcommand("fit", "fit per-operator cost formulas");
  fit->add_option("--dataset", dataset, "dataset.jsonl")->required()->check(CLI::ExistingFile);
  fit->add_option("--env", env_id, "environment to fit (default: the dataset's only env)");
  fit->add_option("--out", snapshot_out, "snapshot.json")->required();
  fit->callback([&] {
    action = [&] {
      const auto loaded = load_dataset(dataset);
      std::string env = env_id;
      if (env.empty()) {
        std::set<std::string> envs;
        for (const auto& t : loaded.trees) envs.insert(t.env_id);
        if (envs.size() != 1) throw InvalidArgument(dataset + ": holds " + std::to_string(envs.size()) +
                                                    " environments; pass --env");
        env = *envs.begin();
      }
      Warnings warnings;
      const auto result = fit_snapshot(loaded.trees, env, &warnings);
      save_snapshot(snapshot_out, result.snapshot);
      double min_r2 = 1;
      for (const auto& [tag, d] : result.snapshot.diagnostics) min_r2 = std::min(min_r2, d.r2);
      return json{{"command", "snapshot fit"},  {"env_id", env},
                  {"operators", result.snapshot.coefficients.size()},
                  {"omitted", result.omitted}, {"min_r2", min_r2}, {"out", snapshot_out}};
    };
  });

  // templates gen
  std::string queries_in, abstract_in, sql_out, manifest_out;
  std::size_t scale = 1;
  std::uint64_t seed = 42;
  auto* templates = app.add_subcommand("templates", "simplified workload templates");
  templates->require_subcommand(1);
  auto* gen = templates->add_subcommand("gen", "parse, simplify and instantiate templates");
  gen->add_option("--queries", queries_in, "';'-separated SQL templates")->required()->check(CLI::ExistingFile);
  gen->add_option("--abstract", abstract_in, "data abstract JSON")->required()->check(CLI::ExistingFile);
  gen->add_option("--scale", scale, "queries per simplified template")->check(CLI::PositiveNumber);
  gen->add_option("--seed", seed, "random seed");
  gen->add_option("--out", sql_out, "generated queries.sql")->required();
  gen->add_option("--manifest", manifest_out, "manifest JSON (default: <out>.manifest.json)");
  gen->callback([&] {
    action = [&] {
      const DataAbstract abstract = load_data_abstract(abstract_in);
      Warnings warnings;
      const auto info = parse_templates(split_statements(read_file(queries_in)), &abstract, &warnings);
      const auto simplified = gen_simplified_templates(info, &warnings);
      const auto queries = instantiate_queries(simplified, abstract, scale, seed);
      std::string text;
      for (const auto& q : queries) text += q.sql + ";\n";
      write_file(sql_out, text);
      json manifest = queries_manifest(queries);
      json tjson = json::array();
      for (const auto& t : simplified) tjson.push_back({{"operator", t.op}, {"template", t.template_text}});
      manifest["templates"] = tjson;
      manifest["info"] = to_json(info);
      const std::string mpath = manifest_out.empty() ? sql_out + ".manifest.json" : manifest_out;
      write_file(mpath, manifest.dump(2) + "\n");
      for (const auto& w : warnings) err << "warning: " << w << "\n";
      return json{{"command", "templates gen"}, {"templates", simplified.size()}, {"queries", queries.size()},
                  {"warnings", warnings.size()}, {"out", sql_out}, {"manifest", mpath}};
    };
  });

  // run
  std::string sql_in, replay_dir, host = "localhost", database = "postgres", user, password_var;
  int port = 5432;
  auto* run = app.add_subcommand("run", "execute EXPLAIN ANALYZE per statement and collect plans");
  run->add_option("--sql", sql_in, "statements to run")->required()->check(CLI::ExistingFile);
  run->add_option("--out", dataset_out, "output dataset")->required();
  run->add_option("--env", env_id, "env_id recorded for every plan")->required();
  run->add_option("--replay", replay_dir, "read pre-collected plan files instead of connecting")
      ->check(CLI::ExistingDirectory);
  run->add_option("--host", host);
  run->add_option("--port", port);
  run->add_option("--database", database);
  run->add_option("--user", user);
  run->add_option("--password-var", password_var,
                  "name of the environment variable holding the password (default: $QCFE_DB_PASSWORD_VAR)");
  run->callback([&] {
    action = [&] {
      const auto statements = split_statements(read_file(sql_in));
      std::vector<PlanTree> trees;
      if (!replay_dir.empty()) {
        const auto files = sorted_files(replay_dir, ".json");
        if (files.size() != statements.size())
          throw InvalidArgument(replay_dir + ": " + std::to_string(files.size()) + " plan files for " +
                                std::to_string(statements.size()) + " statements");
        for (const auto& f : files) trees.push_back(parse_plan(std::string_view(read_file(f))));
      } else {
        std::string var = password_var;
        if (var.empty())
          if (const char* v = std::getenv("QCFE_DB_PASSWORD_VAR")) var = v;
        if (!var.empty()) {
          const char* pw = std::getenv(var.c_str());
          if (!pw) throw InvalidArgument("password variable " + var + " is not set");
          ::setenv("PGPASSWORD", pw, 1);
        }
        for (const auto& stmt : statements) {  // sequential for timing fidelity
          std::string cmd = "psql -X -q -A -t -v ON_ERROR_STOP=1 -h " + sh_quote(host) +
                            " -p " + std::to_string(port) + " -d " + sh_quote(database);
          if (!user.empty()) cmd += " -U " + sh_quote(user);
          cmd += " -c " + sh_quote("EXPLAIN (ANALYZE, FORMAT JSON) " + stmt);
          FILE* pipe = ::popen(cmd.c_str(), "r");
          if (!pipe) throw Error("cannot start psql");
          std::string text;
          char buf[4096];
          while (std::size_t n = std::fread(buf, 1, sizeof buf, pipe)) text.append(buf, n);
          if (::pclose(pipe) != 0) throw Error("psql failed for statement: " + stmt.substr(0, 80));
          trees.push_back(parse_plan(std::string_view(text)));
        }
      }
      for (std::size_t i = 0; i < trees.size(); ++i) {
        trees[i].env_id = env_id;
        char qid[32];
        std::snprintf(qid, sizeof qid, "s%05zu", i);
        if (trees[i].query_id.empty()) trees[i].query_id = qid;
      }
      write_dataset(dataset_out, trees);
      return json{{"command", "run"}, {"plans", trees.size()}, {"replay", !replay_dir.empty()}, {"out", dataset_out}};
    };
  });

  // train
  std::string schema_in, schema_out, model_out;
  std::vector<std::string> snapshot_paths;
  bool no_snapshot_dims = false;
  TrainFlags tf;
  auto* trn = app.add_subcommand("train", "train a cost model");
  trn->add_option("--dataset", dataset, "training dataset.jsonl")->required()->check(CLI::ExistingFile);
  trn->add_option("--schema", schema_in, "existing schema (default: build from the dataset)")->check(CLI::ExistingFile);
  trn->add_option("--schema-out", schema_out, "where to write a built schema (default: <out>.schema.json)");
  trn->add_option("--snapshots", snapshot_paths, "snapshot files, one per environment")->check(CLI::ExistingFile);
  trn->add_flag("--no-snapshot-dims", no_snapshot_dims, "build the schema without snapshot slots");
  trn->add_option("--out", model_out, "model.json")->required();
  add_train_flags(trn, tf, true);
  trn->callback([&] {
    action = [&] {
      const auto loaded = load_dataset(dataset);
      const SnapshotSet snaps = load_snapshots(snapshot_paths);
      FeatureSchema schema;
      std::string written;
      if (!schema_in.empty()) {
        schema = load_schema(schema_in);
      } else {
        schema = build_schema(loaded.trees, SchemaOptions{!no_snapshot_dims});
        if (snaps.size() >= 2) schema = schema.with_snapshot_norm(values_of(snaps));
        written = schema_out.empty() ? model_out + ".schema.json" : schema_out;
        save_schema(written, schema);
      }
      Warnings warnings;
      const auto data = encode_plans(loaded.trees, schema, encode_options(snaps), &warnings);
      const auto model = train(data, schema, tf.config(), model_kind_from_string(tf.model));
      save_model(model_out, model);
      json s{{"command", "train"},
             {"model", to_string(model.kind)},
             {"plans", data.size()},
             {"final_loss", model.meta.loss_curve.empty() ? 0.0 : model.meta.loss_curve.back()},
             {"out", model_out}};
      if (!written.empty()) s["schema"] = written;
      return s;
    };
  });

  // reduce
  std::string model_in, report_out, method = "diff";
  std::size_t refs = 100;
  bool retrain = false;
  auto* red = app.add_subcommand("reduce", "score input dimensions and prune ineffective ones");
  red->add_option("--dataset", dataset, "dataset.jsonl")->required()->check(CLI::ExistingFile);
  red->add_option("--schema", schema_in, "schema.json")->required()->check(CLI::ExistingFile);
  red->add_option("--model", model_in, "trained model")->required()->check(CLI::ExistingFile);
  red->add_option("--snapshots", snapshot_paths, "snapshot files")->check(CLI::ExistingFile);
  red->add_option("--method", method, "diff | greedy | grad")->check(CLI::IsMember({"diff", "greedy", "grad"}));
  red->add_option("--refs", refs, "reference points for diff");
  red->add_option("--seed", seed, "random seed");
  red->add_flag("--retrain", retrain, "greedy: retrain after every accepted drop");
  red->add_option("--out", report_out, "importance report JSON")->required();
  red->add_option("--schema-out", schema_out, "reduced schema (default: <out>.schema.json)");
  red->callback([&] {
    action = [&] {
      const auto loaded = load_dataset(dataset);
      const SnapshotSet snaps = load_snapshots(snapshot_paths);
      const FeatureSchema schema = load_schema(schema_in);
      const CostModel model = load_model(model_in);
      const auto d = build_reduction_dataset(loaded.trees, schema, encode_options(snaps));
      ImportanceReport r;
      switch (reduction_method_from_string(method)) {
        case ReductionMethod::Diff:
          r = diff_importance(d, model, schema, refs, seed);
          break;
        case ReductionMethod::Gradient:
          r = gradient_importance(d, model, schema);
          break;
        case ReductionMethod::Greedy: {
          GreedyOptions g;
          g.retrain_per_drop = retrain;
          g.retrain_cfg.seed = seed;
          r = greedy_reduce(d, model, schema, g);
          break;
        }
      }
      const FeatureSchema reduced = apply_reduction(schema, r);
      const std::string spath = schema_out.empty() ? report_out + ".schema.json" : schema_out;
      write_file(report_out, to_json(r).dump(2) + "\n");
      save_schema(spath, reduced);
      const auto active = static_cast<std::size_t>(std::count(reduced.active_mask.begin(), reduced.active_mask.end(), true));
      return json{{"command", "reduce"}, {"method", method},      {"dimensions", schema.dimension()},
                  {"dropped", r.dropped_count()}, {"active", active}, {"out", report_out},
                  {"schema", spath}};
    };
  });

  // eval
  std::string label;
  auto* ev = app.add_subcommand("eval", "evaluate a model on a test set");
  ev->add_option("--dataset", dataset, "test dataset.jsonl")->required()->check(CLI::ExistingFile);
  ev->add_option("--schema", schema_in, "schema.json")->required()->check(CLI::ExistingFile);
  ev->add_option("--model", model_in, "trained model")->required()->check(CLI::ExistingFile);
  ev->add_option("--snapshots", snapshot_paths, "snapshot files")->check(CLI::ExistingFile);
  ev->add_option("--label", label, "variant label");
  ev->add_option("--out", report_out, "report JSON")->required();
  ev->callback([&] {
    action = [&] {
      const auto loaded = load_dataset(dataset);
      const SnapshotSet snaps = load_snapshots(snapshot_paths);
      const FeatureSchema schema = load_schema(schema_in);
      const CostModel model = load_model(model_in);
      const auto data = encode_plans(loaded.trees, schema, encode_options(snaps));
      EvalOptions o;
      o.variant_label = label.empty() ? fs::path(model_in).stem().string() : label;
      const EvalReport r = evaluate(model, data, o);
      write_file(report_out, to_json(r).dump(2) + "\n");
      return json{{"command", "eval"},           {"variant", r.variant_label}, {"mean_qerror", r.mean_qerror},
                  {"pearson", r.pearson},        {"n", r.n_examples},          {"out", report_out}};
    };
  });

  // compare
  std::vector<std::string> reports;
  std::string csv_out, json_out;
  auto* cmp = app.add_subcommand("compare", "tabulate evaluation reports");
  cmp->add_option("--reports", reports, "report files; the first is the baseline")->required()->check(CLI::ExistingFile);
  cmp->add_option("--csv", csv_out, "comparison CSV")->required();
  cmp->add_option("--json", json_out, "comparison JSON (default: <csv>.json)");
  cmp->callback([&] {
    action = [&] {
      std::vector<EvalReport> rs;
      for (const auto& p : reports) rs.push_back(eval_report_from_json(read_json(p)));
      const auto t = compare(rs);
      const std::string jpath = json_out.empty() ? csv_out + ".json" : json_out;
      write_file(csv_out, t.csv);
      write_file(jpath, t.json.dump(2) + "\n");
      return json{{"command", "compare"}, {"rows", rs.size()}, {"comparable", t.comparable}, {"csv", csv_out},
                  {"json", jpath}};
    };
  });

  // transfer
  std::string new_snapshot;
  TrainFlags xf;
  xf.iters = 50;
  auto* xfer = app.add_subcommand("transfer", "swap in a new snapshot and fine-tune");
  xfer->add_option("--dataset", dataset, "target-environment dataset.jsonl")->required()->check(CLI::ExistingFile);
  xfer->add_option("--schema", schema_in, "schema.json")->required()->check(CLI::ExistingFile);
  xfer->add_option("--model", model_in, "source model")->required()->check(CLI::ExistingFile);
  xfer->add_option("--snapshot", new_snapshot, "target-environment snapshot")->required()->check(CLI::ExistingFile);
  xfer->add_option("--out", model_out, "fine-tuned model")->required();
  add_train_flags(xfer, xf, false);
  xfer->callback([&] {
    action = [&] {
      const auto loaded = load_dataset(dataset);
      const FeatureSchema schema = load_schema(schema_in);
      const CostModel model = load_model(model_in);
      const FeatureSnapshot snap = load_snapshot(new_snapshot);
      const auto tuned = transfer_snapshot(loaded.trees, model, schema, snap, xf.iters, xf.config());
      save_model(model_out, tuned);
      return json{{"command", "transfer"}, {"env_id", snap.env_id}, {"iters", xf.iters}, {"out", model_out}};
    };
  });

  // synth
  std::string spec_in;
  auto* syn = app.add_subcommand("synth", "generate a synthetic workload with known cost laws");
  syn->add_option("--spec", spec_in, "synth spec JSON")->required()->check(CLI::ExistingFile);
  syn->add_option("--out", dataset_out, "output dataset.jsonl")->required();
  syn->add_option("--manifest", manifest_out, "manifest JSON (default: <out>.manifest.json)");
  syn->callback([&] {
    action = [&] {
      const SynthJob job = synth_job_from_json(read_json(spec_in));
      const auto plans = gen_plans(job.workload, job.env);
      write_dataset(dataset_out, plans);
      const std::string mpath = manifest_out.empty() ? dataset_out + ".manifest.json" : manifest_out;
      write_file(mpath, synth_manifest(job.workload, job.env, plans).dump(2) + "\n");
      return json{{"command", "synth"}, {"env_id", job.env.env_id}, {"plans", plans.size()},
                  {"out", dataset_out}, {"manifest", mpath}};
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    if (code != 0) err << app.help();
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    out << action().dump() << "\n";
    return kExitOk;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
}

}  // namespace qcfe
