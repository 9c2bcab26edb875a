// simopt_cli: end-to-end pipeline driver.
//
//   sample-data -> discover -> learn-oar -> build-dataset -> baselines -> meta-opt
//   run-benchmark -> report
//
// Exit codes: 0 success, 1 error, 2 skeleton discovery truncated or incomplete.

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "simopt/benchmarks.hpp"
#include "simopt/ensemble.hpp"
#include "simopt/llm_revision.hpp"
#include "simopt/meta_optimizer.hpp"
#include "simopt/oar_learning.hpp"
#include "simopt/remote_advisor.hpp"
#include "simopt/schedule.hpp"
#include "simopt/skeleton.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace simopt;

namespace {

constexpr int kArtifactSchema = 1;

struct CliError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::uint64_t seed = 0;
  unsigned jobs = 1;
  bool force = false;
  std::string config;
  bool verbose = false;
  bool quiet = false;
  json pipeline = json::object();
  fs::path config_dir = ".";
};

Globals g;

// ---- artifacts ---------------------------------------------------------------

void check_schema(const json& j, const std::string& what) {
  if (!j.is_object() || !j.contains("schema_version")) throw SchemaError(what + " has no schema_version");
  const int v = j.at("schema_version").get<int>();
  if (v != kArtifactSchema) throw SchemaError(what + " has unsupported schema_version " + std::to_string(v));
}

void require_input(const std::string& path, const std::string& stage) {
  if (path.empty()) throw CliError("no " + stage + " artifact given");
  if (!fs::exists(path)) {
    static const std::set<std::string> stages{"sample-data", "discover",  "learn-oar",     "build-dataset",
                                              "baselines",   "meta-opt",  "run-benchmark"};
    std::string msg = "missing " + stage + " artifact '" + path + "'";
    if (stages.count(stage)) msg += " (run the '" + stage + "' stage first)";
    throw CliError(msg);
  }
}

json read_artifact(const std::string& path, const std::string& stage) {
  require_input(path, stage);
  std::ifstream in(path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw SchemaError(path + ": " + e.what());
  }
}

void claim_output(const std::string& path) {
  if (path.empty()) throw CliError("an output path is required");
  if (fs::exists(path) && !g.force) throw CliError("refusing to overwrite '" + path + "' (pass --force)");
  const auto parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CliError("cannot write '" + path + "'");
  out << text;
}

void write_json(const std::string& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

std::uint64_t stage_seed(const std::string& stage) { return Rng(g.seed).split(stage).key(); }

// ---- pipeline configuration --------------------------------------------------

const json& block(const std::string& name) {
  static const json empty = json::object();
  return g.pipeline.contains(name) ? g.pipeline.at(name) : empty;
}

template <typename T>
T setting(const std::string& blk, const std::string& key, T fallback) {
  const auto& b = block(blk);
  return b.contains(key) ? b.at(key).get<T>() : fallback;
}

std::string config_path(const std::string& blk, const std::string& key) {
  const auto v = setting<std::string>(blk, key, "");
  if (v.empty()) return v;
  const fs::path p(v);
  return p.is_absolute() ? v : (g.config_dir / p).string();
}

void load_pipeline_config() {
  if (g.config.empty()) return;
  g.pipeline = read_artifact(g.config, "pipeline config");
  check_schema(g.pipeline, "pipeline config");
  g.config_dir = fs::path(g.config).parent_path();
}

TrainConfig train_config_from(const json& j) {
  TrainConfig c;
  c.lambda = j.value("lambda", c.lambda);
  c.gamma = j.value("gamma", c.gamma);
  c.rounds = j.value("rounds", c.rounds);
  c.starts = j.value("starts", c.starts);
  c.e_steps = j.value("e_steps", c.e_steps);
  c.patience = j.value("patience", c.patience);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.e_learning_rate = j.value("e_learning_rate", c.e_learning_rate);
  c.stage0_steps = j.value("stage0_steps", c.stage0_steps);
  c.m_steps = j.value("m_steps", c.m_steps);
  c.check_every = j.value("check_every", c.check_every);
  c.check_patience = j.value("check_patience", c.check_patience);
  c.train_ratio = j.value("train_ratio", c.train_ratio);
  c.val_ratio = j.value("val_ratio", c.val_ratio);
  c.test_ratio = j.value("test_ratio", c.test_ratio);
  c.hidden_sizes = j.value("hidden_sizes", c.hidden_sizes);
  c.min_samples = j.value("min_samples", c.min_samples);
  if (j.contains("family")) c.family = parse_family(j.at("family").get<std::string>());
  if (j.contains("activation")) c.activation = parse_activation(j.at("activation").get<std::string>());
  c.validate();
  return c;
}

EndpointConfig endpoint_config(const std::string& model_flag) {
  EndpointConfig c;
  c.endpoint = setting<std::string>("advisor", "endpoint", "");
  c.model = model_flag.empty() ? setting<std::string>("advisor", "model", "") : model_flag;
  if (c.resolved_endpoint().empty()) {
    throw AdvisorUnavailable("no endpoint configured (set ADVISOR_ENDPOINT or advisor.endpoint)");
  }
  return c;
}

// ---- benchmark systems -------------------------------------------------------

struct Benchmark {
  std::string kind;
  std::shared_ptr<const StochasticSystem> system;
  std::optional<WarehouseConfig> warehouse;
};

Benchmark load_benchmark(const std::string& path) {
  const json j = read_artifact(path, "benchmark config");
  Benchmark b;
  if (j.contains("products")) {
    b.kind = "warehouse";
    b.warehouse = warehouse_config_from_json(j);
    b.system = std::make_shared<WarehouseSystem>(*b.warehouse);
  } else if (j.contains("n_stations")) {
    b.kind = "queue";
    b.system = std::make_shared<QueueNetworkSystem>(queue_config_from_json(j));
  } else {
    throw SchemaError(path + " is neither a warehouse nor a queue-network config");
  }
  return b;
}

std::string resolve_benchmark(const std::string& flag) {
  const auto p = flag.empty() ? config_path("pipeline", "benchmark") : flag;
  if (p.empty()) throw CliError("no benchmark config given (--benchmark or pipeline.benchmark)");
  return p;
}

// ---- ensemble loading --------------------------------------------------------

struct Ensemble {
  OarSet members;  // the selected top-K, ascending MSE
  Domain domain;
};

Ensemble load_ensemble(const std::string& manifest_path) {
  const json m = read_artifact(manifest_path, "learn-oar");
  check_schema(m, "ensemble manifest");
  const fs::path dir = fs::path(manifest_path).parent_path();
  Ensemble e;
  e.domain = domain_from_json(m.at("domain"));
  const auto selected = m.at("selected").get<std::vector<std::string>>();
  for (const auto& id : selected) {
    const auto it = std::find_if(m.at("members").begin(), m.at("members").end(),
                                 [&](const json& x) { return x.at("id") == id; });
    if (it == m.at("members").end()) throw SchemaError("manifest selects unknown member " + id);
    const auto file = (dir / it->at("file").get<std::string>()).string();
    auto model = std::make_shared<StructuralModel>(model_from_json(read_artifact(file, "learn-oar")));
    e.members.push_back({id, std::make_shared<ReplicaSystem>(model, e.domain), it->at("mse").get<double>()});
  }
  return e;
}

MetaDataset load_dataset(const std::string& path) {
  const json j = read_artifact(path, "build-dataset");
  return meta_dataset_from_json(j);
}

std::vector<std::size_t> all_indices(const MetaDataset& ds) {
  std::vector<std::size_t> out(ds.points.size());
  std::iota(out.begin(), out.end(), std::size_t{0});
  return out;
}

ScoringOptions scoring_options() {
  ScoringOptions opt;
  opt.jobs = g.jobs;
  if (block("meta").contains("weights")) {
    const auto w = block("meta").at("weights").get<std::vector<double>>();
    if (w.size() != 4) throw SchemaError("meta.weights needs four entries");
    for (std::size_t i = 0; i < 4; ++i) opt.weights.lambda[i] = w[i];
  }
  if (setting<std::string>("meta", "handoff", "warm") == "cold") opt.handoff = HandoffPolicy::Cold;
  return opt;
}

std::uint64_t scoring_seed() { return stage_seed("scoring"); }

// ---- commands ----------------------------------------------------------------

struct SampleArgs {
  std::string benchmark, out;
  int n = 0;
};

int cmd_sample_data(const SampleArgs& a) {
  const auto bench = load_benchmark(resolve_benchmark(a.benchmark));
  const int n = a.n > 0 ? a.n : setting<int>("sample_data", "n", 200);
  claim_output(a.out);
  Rng rng = Rng(stage_seed("sample-data"));
  const auto& dom = bench.system->domain();
  std::ostringstream os;
  for (std::size_t k = 0; k < dom.dimension(); ++k) os << 'x' << (k + 1) << ',';
  if (bench.warehouse) os << "holding,backorder,";
  os << "y\n";
  for (int i = 0; i < n; ++i) {
    const auto x = dom.project(dom.sample_uniform(rng));
    Rng sim = rng.split(static_cast<std::uint64_t>(i));
    for (double v : x) os << format_number(v) << ',';
    if (bench.warehouse) {
      WarehouseTrace trace;
      const double y = warehouse_evaluate(x, *bench.warehouse, sim, &trace);
      os << format_number(trace.mean_holding) << ',' << format_number(trace.mean_backorder) << ','
         << format_number(y) << '\n';
    } else {
      os << format_number(bench.system->evaluate(x, sim)) << '\n';
    }
  }
  write_text(a.out, os.str());
  spdlog::info("wrote {} {} samples to {}", n, bench.kind, a.out);
  return 0;
}

struct DiscoverArgs {
  std::string catalog, advisor = "remote", out, data, model;
  double noise = -1.0;
};

int cmd_discover(const DiscoverArgs& a) {
  const json cj = read_artifact(a.catalog.empty() ? config_path("discovery", "catalog") : a.catalog, "catalog");
  const auto catalog = catalog_from_json(cj);
  claim_output(a.out);

  std::unique_ptr<Advisor> advisor;
  if (a.advisor.rfind("scripted:", 0) == 0) {
    const auto truth_path = a.advisor.substr(9);
    auto truth = skeleton_from_json(read_artifact(truth_path, "truth skeleton"));
    const double noise = a.noise >= 0 ? a.noise : setting<double>("discovery", "noise", 0.0);
    advisor = std::make_unique<ScriptedAdvisor>(std::move(truth), noise, Rng(stage_seed("discover")));
  } else if (a.advisor == "remote") {
    advisor = std::make_unique<RemoteAdvisor>(endpoint_config(a.model));
  } else {
    throw CliError("--advisor must be 'scripted:<truth-file>' or 'remote'");
  }

  DiscoveryOptions opt;
  opt.max_turns = setting<int>("discovery", "max_turns", 0);
  opt.char_budget = setting<std::size_t>("discovery", "char_budget", opt.char_budget);
  std::optional<Table> table;
  if (!a.data.empty()) {
    require_input(a.data, "sample-data");
    table = read_csv(a.data);
    opt.data = &*table;
  }
  const auto result = discover_skeleton(catalog, *advisor, opt);
  json out = to_json(result.skeleton);
  out["schema_version"] = kArtifactSchema;
  out["status"] = result.status == DiscoveryStatus::Complete ? "complete" : "truncated";
  out["objective_reachable"] = result.objective_reachable;
  out["expand_calls"] = result.expand_calls;
  write_json(a.out, out);
  spdlog::info("skeleton with {} edges written to {}", result.skeleton.edges().size(), a.out);
  if (result.incomplete()) {
    spdlog::error("discovery incomplete: {}", result.status == DiscoveryStatus::Truncated
                                                  ? "turn budget exhausted"
                                                  : "objective unreachable from the inputs");
    return 2;
  }
  return 0;
}

struct LearnArgs {
  std::string skeleton, data, out_dir;
  int repeats = 0, top_k = 0;
};

int cmd_learn_oar(const LearnArgs& a) {
  const json sj = read_artifact(a.skeleton, "discover");
  const auto skel = skeleton_from_json(sj);
  require_input(a.data, "sample-data");
  const Table table = read_csv(a.data);
  const Dataset data = dataset_from_table(table, skel);
  const int J = a.repeats > 0 ? a.repeats : setting<int>("oar", "repeats", 3);
  const int K = a.top_k > 0 ? a.top_k : setting<int>("oar", "top_k", std::min(J, 2));
  if (K > J) throw InvalidK("top-k " + std::to_string(K) + " exceeds repeats " + std::to_string(J));
  const TrainConfig cfg = train_config_from(block("oar").value("train", json::object()));
  if (a.out_dir.empty()) throw CliError("--out-dir is required");
  const fs::path dir(a.out_dir);
  const auto manifest_path = (dir / "manifest.json").string();
  claim_output(manifest_path);
  for (int j = 1; j <= J; ++j) claim_output((dir / ("model_" + std::to_string(j) + ".json")).string());

  std::vector<std::optional<StructuralModel>> models(static_cast<std::size_t>(J));
  const std::uint64_t base = stage_seed("learn-oar");
  detail::parallel_for(static_cast<std::size_t>(J), g.jobs, [&](std::size_t j) {
    auto r = learn_oar(data, skel, cfg, Rng(base).split(static_cast<std::uint64_t>(j)).key());
    spdlog::info("repeat {}: test MSE {:.6g}", j + 1, r.model.mse_test);
    models[j] = std::move(r.model);
  });

  OarSet set;
  json members = json::array();
  for (int j = 0; j < J; ++j) {
    const auto& m = *models[static_cast<std::size_t>(j)];
    const std::string file = "model_" + std::to_string(j + 1) + ".json";
    write_json((dir / file).string(), to_json(m));
    set.push_back({"oar-" + std::to_string(j + 1), nullptr, m.mse_test});
  }
  const auto top = select_top_k(set, static_cast<std::size_t>(K));
  auto ordered = select_top_k(set, set.size());
  for (const auto& m : ordered) {
    members.push_back({{"id", m.id}, {"file", "model_" + m.id.substr(4) + ".json"}, {"mse", m.mse}});
  }
  std::vector<double> mses;
  std::vector<std::string> ids;
  for (const auto& m : top) {
    mses.push_back(m.mse);
    ids.push_back(m.id);
  }
  auto relative_to = [](const std::string& p, const fs::path& base) {
    return fs::absolute(p).lexically_normal().lexically_relative(fs::absolute(base).lexically_normal()).generic_string();
  };
  Domain dom;
  for (Eigen::Index r = 0; r < data.x.rows(); ++r) dom.bounds.push_back({data.x.row(r).minCoeff(), data.x.row(r).maxCoeff()});
  const json manifest = {{"schema_version", kArtifactSchema},
                         {"skeleton", relative_to(a.skeleton, dir)},
                         {"data", relative_to(a.data, dir)},
                         {"domain", to_json(dom)},
                         {"members", members},
                         {"top_k", K},
                         {"selected", ids},
                         {"w_star", optimal_weights(mses, setting<double>("dataset", "eps", 1e-6))}};
  write_json(manifest_path, manifest);
  spdlog::info("{} models and manifest written to {}", J, a.out_dir);
  return 0;
}

struct DatasetArgs {
  std::string manifest, out;
  int M = 0;
};

int cmd_build_dataset(const DatasetArgs& a) {
  const json m = read_artifact(a.manifest, "learn-oar");
  check_schema(m, "ensemble manifest");
  SamplerParams p = sampler_params_from_json(block("dataset"));
  if (a.M > 0) p.M = a.M;
  claim_output(a.out);
  std::vector<double> mses;
  std::vector<std::string> ids = m.at("selected").get<std::vector<std::string>>();
  for (const auto& id : ids) {
    for (const auto& x : m.at("members")) {
      if (x.at("id") == id) mses.push_back(x.at("mse").get<double>());
    }
  }
  const auto ds = build_meta_dataset(mses, p, stage_seed("build-dataset"), ids);
  write_json(a.out, to_json(ds));
  spdlog::info("meta-dataset with {} points (train {}, val {}, test {}) written to {}", ds.points.size(),
               ds.train.size(), ds.val.size(), ds.test.size(), a.out);
  return 0;
}

std::int64_t resolve_budget(std::int64_t flag) {
  const auto b = flag > 0 ? flag : setting<std::int64_t>("meta", "budget", 100);
  if (b < 1) throw InvalidInput("budget must be >= 1");
  return b;
}

std::vector<std::string> baseline_ids() {
  return block("meta").contains("baselines") ? block("meta").at("baselines").get<std::vector<std::string>>()
                                             : builtin_algorithms();
}

struct BaselinesArgs {
  std::string manifest, dataset, out;
  std::int64_t budget = 0;
};

int cmd_baselines(const BaselinesArgs& a) {
  const auto ens = load_ensemble(a.manifest);
  const auto ds = load_dataset(a.dataset);
  const auto B = resolve_budget(a.budget);
  const int mult = setting<int>("meta", "reference_multiplier", 10);
  claim_output(a.out);

  auto cache = std::make_shared<ReferenceCache>();
  EnsembleScorer scorer(scoring_points(ens.members, ds, all_indices(ds), ens.domain), scoring_seed(), B,
                        scoring_options(), mult, cache);
  std::vector<std::size_t> pool(ds.train);
  pool.insert(pool.end(), ds.val.begin(), ds.val.end());
  std::sort(pool.begin(), pool.end());
  spdlog::info("computing reference optima for {} points ({} evaluations each)", ds.points.size(), mult * B);
  scorer.score(Schedule{{{builtin_algorithms().front(), B}}}, all_indices(ds));

  json scores = json::array();
  for (const auto& id : baseline_ids()) {
    const Schedule s{{{canonical_algorithm_id(id), B}}};
    const double s_pool = scorer.score(s, pool).S;
    const double s_test = scorer.score(s, ds.test).S;
    spdlog::info("baseline {}: S(train+val) {:.4f}, S(test) {:.4f}", s.to_string(), s_pool, s_test);
    scores.push_back({{"algorithm", canonical_algorithm_id(id)},
                      {"schedule", s.to_string()},
                      {"S_train_val", s_pool},
                      {"S_test", s_test}});
  }
  const json out = {{"schema_version", kArtifactSchema},
                    {"budget", B},
                    {"reference_multiplier", mult},
                    {"scores", scores},
                    {"references", cache->to_json()}};
  write_json(a.out, out);
  return 0;
}

struct MetaArgs {
  std::string manifest, dataset, baselines, out, history, op, move, model;
  std::int64_t budget = 0;
  int runs = 0, epochs = 0, revisions = -1;
};

int cmd_meta_opt(const MetaArgs& a) {
  const auto ens = load_ensemble(a.manifest);
  const auto ds = load_dataset(a.dataset);
  const json base = read_artifact(a.baselines, "baselines");
  check_schema(base, "baselines artifact");
  const auto B = resolve_budget(a.budget);
  if (base.at("budget").get<std::int64_t>() != B) {
    throw CliError("baselines were computed for budget " + base.at("budget").dump() + ", not " + std::to_string(B));
  }
  const int mult = base.at("reference_multiplier").get<int>();
  claim_output(a.out);
  if (!a.history.empty()) {
    const auto parent = fs::path(a.history).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
  }

  auto cache = std::make_shared<ReferenceCache>();
  cache->load_json(base.at("references"));
  EnsembleScorer scorer(scoring_points(ens.members, ds, all_indices(ds), ens.domain), scoring_seed(), B,
                        scoring_options(), mult, cache);

  MetaConfig cfg;
  cfg.budget = B;
  cfg.seed = stage_seed("meta-opt");
  cfg.runs = a.runs > 0 ? a.runs : setting<int>("meta", "runs", cfg.runs);
  cfg.epochs = a.epochs > 0 ? a.epochs : setting<int>("meta", "epochs", cfg.epochs);
  cfg.revisions = a.revisions >= 0 ? a.revisions : setting<int>("meta", "revisions", cfg.revisions);
  cfg.eps_gap = setting<double>("meta", "eps_gap", cfg.eps_gap);
  cfg.early_stop = setting<bool>("meta", "early_stop", cfg.early_stop);
  cfg.early_stop_patience = setting<int>("meta", "patience", cfg.early_stop_patience);
  cfg.strata = setting<int>("meta", "strata", cfg.strata);
  cfg.baselines = baseline_ids();

  const std::string op_kind = a.op.empty() ? setting<std::string>("meta", "operator", "scripted") : a.op;
  std::unique_ptr<RevisionOperator> op;
  if (op_kind == "scripted") {
    const auto move = a.move.empty() ? setting<std::string>("meta", "move", "mixed") : a.move;
    op = std::make_unique<ScriptedRevisionOperator>(scripted_move_from_string(move), stage_seed("operator"));
  } else if (op_kind == "llm") {
    op = std::make_unique<LlmRevisionOperator>(endpoint_config(a.model));
  } else {
    throw CliError("--operator must be 'scripted' or 'llm'");
  }

  std::ofstream history;
  if (!a.history.empty()) {
    history.open(a.history, std::ios::app | std::ios::binary);
    if (!history) throw CliError("cannot open history log '" + a.history + "'");
  }
  HistorySink sink = [&](const json& ev) {
    if (history) history << ev.dump() << '\n' << std::flush;
  };
  const auto result = learn_schedule(ds, scorer, cfg, *op, sink);
  json out = to_json(result.report);
  out["schema_version"] = kArtifactSchema;
  out["budget"] = B;
  out["operator"] = op_kind;
  write_json(a.out, out);
  spdlog::info("best schedule {} (S_test {:.4f})", result.report.best_schedule, result.report.best_S_test);
  return 0;
}

struct RunArgs {
  std::string benchmark, out, schedule_from;
  std::vector<std::string> methods;
  int seeds = 0;
  std::int64_t budget = 0;
};

Schedule method_schedule(const std::string& m, std::int64_t B) {
  if (m.find('(') == std::string::npos) return Schedule{{{canonical_algorithm_id(m), B}}};
  auto s = parse_schedule(m);
  validate_schedule(s, B);
  return s;
}

int cmd_run_benchmark(const RunArgs& a) {
  const auto bench = load_benchmark(resolve_benchmark(a.benchmark));
  const int seeds = a.seeds > 0 ? a.seeds : setting<int>("runs", "seeds", 10);
  const std::int64_t B = a.budget > 0 ? a.budget : setting<std::int64_t>("runs", "budget", 100);
  std::vector<std::string> methods = a.methods;
  if (!a.schedule_from.empty()) {
    const json rep = read_artifact(a.schedule_from, "meta-opt");
    check_schema(rep, "meta-opt report");
    methods.push_back(rep.at("best_schedule").get<std::string>());
  }
  if (methods.empty() && block("runs").contains("methods")) {
    methods = block("runs").at("methods").get<std::vector<std::string>>();
  }
  if (methods.empty()) throw CliError("no methods given (--method or --schedule)");
  std::vector<Schedule> schedules;
  for (const auto& m : methods) {
    auto s = method_schedule(m, B);
    if (std::find(schedules.begin(), schedules.end(), s) == schedules.end()) schedules.push_back(std::move(s));
  }
  claim_output(a.out);

  const std::uint64_t base = stage_seed("run-benchmark");
  const std::size_t n_runs = schedules.size() * static_cast<std::size_t>(seeds);
  std::vector<std::string> rows(n_runs);
  std::vector<double> finals(n_runs);
  const AlgoConfigs algo_cfg;
  detail::parallel_for(n_runs, g.jobs, [&](std::size_t k) {
    const auto& s = schedules[k / static_cast<std::size_t>(seeds)];
    const auto seed = static_cast<std::uint64_t>(k % static_cast<std::size_t>(seeds));
    const auto run = execute_schedule(*bench.system, s, Rng(base).split(seed).key(), algo_cfg);
    const auto b = best_so_far(run.trajectory);
    std::ostringstream os;
    for (std::size_t t = 0; t < b.size(); ++t) {
      os << s.to_string() << ',' << seed << ',' << (t + 1) << ',' << format_number(run.trajectory.observations[t].y)
         << ',' << format_number(b[t]) << '\n';
    }
    rows[k] = os.str();
    finals[k] = b.back();
  });
  std::string text = "method,seed,step,y,best_so_far\n";
  for (const auto& r : rows) text += r;
  write_text(a.out, text);
  for (std::size_t i = 0; i < schedules.size(); ++i) {
    double sum = 0.0;
    for (int s = 0; s < seeds; ++s) sum += finals[i * static_cast<std::size_t>(seeds) + static_cast<std::size_t>(s)];
    spdlog::info("{}: mean best cost {:.4f} over {} seeds", schedules[i].to_string(), sum / seeds, seeds);
  }
  return 0;
}

struct ReportArgs {
  std::string meta, out_dir;
  std::vector<std::string> runs;
};

std::string file_stem_for(const std::string& method) {
  std::string out;
  for (char c : method) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      out += c;
    } else if (!out.empty() && out.back() != '_') {
      out += '_';
    }
  }
  while (!out.empty() && out.back() == '_') out.pop_back();
  return out;
}

std::pair<double, double> mean_std(const std::vector<double>& v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0};
}

int cmd_report(const ReportArgs& a) {
  if (a.meta.empty() && a.runs.empty()) throw CliError("report needs --meta and/or --runs");
  if (a.out_dir.empty()) throw CliError("--out-dir is required");
  const fs::path dir(a.out_dir);
  const auto summary_md = (dir / "report.md").string();
  claim_output(summary_md);
  std::ostringstream md;
  md << "# Schedule report\n\n";

  if (!a.runs.empty()) {
    // method -> seed -> best-so-far curve
    std::map<std::string, std::map<long, std::vector<double>>> curves;
    std::vector<std::string> order;
    for (const auto& path : a.runs) {
      require_input(path, "run-benchmark");
      std::ifstream in(path);
      std::string line;
      std::getline(in, line);
      if (line != "method,seed,step,y,best_so_far") throw SchemaError(path + ": unexpected run header");
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
        if (cells.size() != 5) throw SchemaError(path + ": malformed row '" + line + "'");
        if (!curves.count(cells[0])) order.push_back(cells[0]);
        auto& curve = curves[cells[0]][std::stol(cells[1])];
        if (std::stoul(cells[2]) != curve.size() + 1) {
          throw SchemaError(path + ": duplicate or out-of-order step for " + cells[0] + " seed " + cells[1]);
        }
        curve.push_back(std::stod(cells[4]));
      }
    }
    const auto summary_csv = (dir / "summary.csv").string();
    claim_output(summary_csv);
    std::ostringstream sum;
    sum << "method,mean,std,n_seeds\n";
    md << "## Benchmark runs\n\n| method | mean ± std | seeds |\n|---|---|---|\n";
    for (const auto& method : order) {
      const auto& by_seed = curves.at(method);
      std::vector<double> finals;
      std::size_t T = std::numeric_limits<std::size_t>::max();
      for (const auto& [seed, c] : by_seed) {
        finals.push_back(c.back());
        T = std::min(T, c.size());
      }
      const auto [m, s] = mean_std(finals);
      sum << method << ',' << format_number(m) << ',' << format_number(s) << ',' << finals.size() << '\n';
      md << "| " << method << " | " << format_number(m) << " ± " << format_number(s) << " | " << finals.size()
         << " |\n";

      const auto curve_csv = (dir / ("best_so_far_" + file_stem_for(method) + ".csv")).string();
      claim_output(curve_csv);
      std::ostringstream cs;
      cs << "step,mean,std\n";
      for (std::size_t t = 0; t < T; ++t) {
        std::vector<double> at;
        for (const auto& [seed, c] : by_seed) at.push_back(c[t]);
        const auto [cm, csd] = mean_std(at);
        cs << (t + 1) << ',' << format_number(cm) << ',' << format_number(csd) << '\n';
      }
      write_text(curve_csv, cs.str());
    }
    write_text(summary_csv, sum.str());
    md << '\n';
  }

  if (!a.meta.empty()) {
    const json rep = read_artifact(a.meta, "meta-opt");
    check_schema(rep, "meta-opt report");
    const auto epochs_csv = (dir / "meta_epochs.csv").string();
    claim_output(epochs_csv);
    std::ostringstream ec;
    ec << "run,epoch,S_train,S_val,accepted,schedule\n";
    md << "## Meta-optimisation\n\nBest schedule: `" << rep.at("best_schedule").get<std::string>()
       << "` (S_test " << format_number(rep.at("best_S_test").get<double>()) << ")\n\n"
       << "| run | final schedule | S_test |\n|---|---|---|\n";
    for (const auto& run : rep.at("runs")) {
      for (const auto& e : run.at("epochs")) {
        ec << run.at("run").get<int>() << ',' << e.at("epoch").get<int>() << ','
           << format_number(e.at("S_train").get<double>()) << ',' << format_number(e.at("S_val").get<double>())
           << ',' << (e.at("accepted").get<bool>() ? 1 : 0) << ',' << e.at("schedule").get<std::string>() << '\n';
      }
      md << "| " << run.at("run").get<int>() << " | `" << run.at("final_schedule").get<std::string>() << "` | "
         << format_number(run.at("S_test").get<double>()) << " |\n";
    }
    md << "\n| baseline | S_test |\n|---|---|\n";
    for (const auto& [k, v] : rep.at("baselines_test").items()) {
      md << "| " << k << " | " << format_number(v.get<double>()) << " |\n";
    }
    write_text(epochs_csv, ec.str());
  }
  write_text(summary_md, md.str());
  spdlog::info("report written to {}", a.out_dir);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Simulation-optimisation schedule learning pipeline"};
  app.require_subcommand(1);
  app.add_option("--seed", g.seed, "Root seed for every stage");
  app.add_option("--jobs", g.jobs, "Worker threads")->check(CLI::PositiveNumber);
  app.add_flag("--force", g.force, "Overwrite existing outputs");
  app.add_option("--config", g.config, "Pipeline config (JSON)");
  app.add_flag("-v,--verbose", g.verbose, "Debug logging");
  app.add_flag("-q,--quiet", g.quiet, "Warnings and errors only");

  SampleArgs sample;
  auto* c_sample = app.add_subcommand("sample-data", "Simulate historical observations of a benchmark");
  c_sample->add_option("--benchmark", sample.benchmark, "Benchmark config");
  c_sample->add_option("--n", sample.n, "Number of samples");
  c_sample->add_option("--out", sample.out, "Output CSV")->required();

  DiscoverArgs disc;
  auto* c_disc = app.add_subcommand("discover", "Discover the causal skeleton");
  c_disc->add_option("--catalog", disc.catalog, "Variable catalog");
  c_disc->add_option("--advisor", disc.advisor, "scripted:<truth-file> or remote");
  c_disc->add_option("--noise", disc.noise, "Flip rate of the scripted advisor");
  c_disc->add_option("--data", disc.data, "Observed data for correlation hints");
  c_disc->add_option("--model", disc.model, "Remote model name");
  c_disc->add_option("--out", disc.out, "Output skeleton")->required();

  LearnArgs learn;
  auto* c_learn = app.add_subcommand("learn-oar", "Train replica models and write the ensemble manifest");
  c_learn->add_option("--skeleton", learn.skeleton, "Skeleton JSON")->required();
  c_learn->add_option("--data", learn.data, "Historical CSV")->required();
  c_learn->add_option("--repeats", learn.repeats, "Independent trainings J");
  c_learn->add_option("--top-k", learn.top_k, "Ensemble size K");
  c_learn->add_option("--out-dir", learn.out_dir, "Output directory")->required();

  DatasetArgs dset;
  auto* c_dset = app.add_subcommand("build-dataset", "Sample the meta-dataset of ensemble points");
  c_dset->add_option("--manifest", dset.manifest, "Ensemble manifest")->required();
  c_dset->add_option("--M", dset.M, "Number of points");
  c_dset->add_option("--out", dset.out, "Output JSON")->required();

  BaselinesArgs base;
  auto* c_base = app.add_subcommand("baselines", "Reference optima and single-algorithm scores");
  c_base->add_option("--manifest", base.manifest, "Ensemble manifest")->required();
  c_base->add_option("--dataset", base.dataset, "Meta-dataset")->required();
  c_base->add_option("--budget", base.budget, "Evaluation budget B");
  c_base->add_option("--out", base.out, "Output JSON")->required();

  MetaArgs meta;
  auto* c_meta = app.add_subcommand("meta-opt", "Learn a hybrid schedule");
  c_meta->add_option("--manifest", meta.manifest, "Ensemble manifest")->required();
  c_meta->add_option("--dataset", meta.dataset, "Meta-dataset")->required();
  c_meta->add_option("--baselines", meta.baselines, "Baselines artifact")->required();
  c_meta->add_option("--budget", meta.budget, "Evaluation budget B");
  c_meta->add_option("--operator", meta.op, "scripted or llm");
  c_meta->add_option("--move", meta.move, "Scripted move: swap, shift, splice, mixed");
  c_meta->add_option("--model", meta.model, "Remote model name");
  c_meta->add_option("--runs", meta.runs, "Outer runs");
  c_meta->add_option("--epochs", meta.epochs, "Epochs per run");
  c_meta->add_option("--revisions", meta.revisions, "Revisions per epoch");
  c_meta->add_option("--history", meta.history, "Append-only JSON-lines log");
  c_meta->add_option("--out", meta.out, "Report JSON")->required();

  RunArgs runa;
  auto* c_run = app.add_subcommand("run-benchmark", "Run methods on a benchmark over several seeds");
  c_run->add_option("--benchmark", runa.benchmark, "Benchmark config");
  c_run->add_option("--method,--schedule", runa.methods, "Algorithm id or schedule, e.g. BO-EI(50)->GA(50)");
  c_run->add_option("--schedule-from", runa.schedule_from, "Add the best schedule of a meta-opt report");
  c_run->add_option("--seeds", runa.seeds, "Number of seeds");
  c_run->add_option("--budget", runa.budget, "Evaluation budget");
  c_run->add_option("--out", runa.out, "Output CSV")->required();

  ReportArgs rep;
  auto* c_rep = app.add_subcommand("report", "Summaries and best-so-far curves");
  c_rep->add_option("--meta", rep.meta, "meta-opt report");
  c_rep->add_option("--runs", rep.runs, "run-benchmark CSV files");
  c_rep->add_option("--out-dir", rep.out_dir, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  auto logger = spdlog::stderr_color_mt("simopt_cli");
  spdlog::set_default_logger(logger);
  spdlog::set_level(g.verbose ? spdlog::level::debug : g.quiet ? spdlog::level::warn : spdlog::level::info);

  try {
    load_pipeline_config();
    if (c_sample->parsed()) return cmd_sample_data(sample);
    if (c_disc->parsed()) return cmd_discover(disc);
    if (c_learn->parsed()) return cmd_learn_oar(learn);
    if (c_dset->parsed()) return cmd_build_dataset(dset);
    if (c_base->parsed()) return cmd_baselines(base);
    if (c_meta->parsed()) return cmd_meta_opt(meta);
    if (c_run->parsed()) return cmd_run_benchmark(runa);
    if (c_rep->parsed()) return cmd_report(rep);
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 1;
}
