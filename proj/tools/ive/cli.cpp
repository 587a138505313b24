#include "ive/cli.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ive/activeness.hpp"
#include "ive/modulation.hpp"
#include "ive/parallel.hpp"
#include "ive/simulator.hpp"
#include "ive/stats.hpp"
#include "ive/trace_io.hpp"

namespace ive::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

class UsageError : public std::runtime_error {
 public:
  UsageError(const std::string& flag, const std::string& problem)
      : std::runtime_error("invalid " + flag + ": " + problem) {}
};

void require(bool ok, const std::string& flag, const std::string& problem) {
  if (!ok) throw UsageError(flag, problem);
}

struct Options {
  std::uint64_t seed = 0;
  std::string out = ".";
  std::string format = "json";

  double gamma = 0.1;
  double tau = 3.0;
  double kappa = 3.0;
  double epsilon = 1e-6;
  double alpha = 0.10;
  bool observe_modulated = false;

  std::string ot = "auto";
  double reg = 0.01;
  double ot_tol = 1e-6;
  std::size_t ot_max_iter = 10000;

  std::size_t steps = 100;
  std::string grid = "24x24";
  double beta = 0.6;
  double lambda = 0.0;
  double amplify = 1.0;
  std::string ive = "off";
  std::size_t seeds_count = 1;
  std::size_t layers = 1;
  std::size_t heads = 8;

  std::string input;
  std::string output;
};

void add_ive_flags(CLI::App& cmd, Options& o) {
  cmd.add_option("--gamma", o.gamma, "EMA coefficient on history, in (0,1)")->capture_default_str();
  cmd.add_option("--tau", o.tau, "emergent-score threshold")->capture_default_str();
  cmd.add_option("--kappa", o.kappa, "inertia threshold as a multiple of 1/N_v")
      ->capture_default_str();
  cmd.add_option("--epsilon", o.epsilon, "score stabilizer")->capture_default_str();
  cmd.add_option("--alpha", o.alpha, "penalty intensity, in [0,1]")->capture_default_str();
  cmd.add_flag("--observe-modulated", o.observe_modulated,
               "feed post-modulation attention into the running statistics");
}

void add_ot_flags(CLI::App& cmd, Options& o) {
  cmd.add_option("--ot", o.ot, "transport solver: auto, exact or sinkhorn")
      ->check(CLI::IsMember({"auto", "exact", "exact-flow", "sinkhorn"}))
      ->capture_default_str();
  cmd.add_option("--reg", o.reg, "sinkhorn regularization")->capture_default_str();
  cmd.add_option("--ot-tol", o.ot_tol, "sinkhorn marginal tolerance")->capture_default_str();
  cmd.add_option("--ot-max-iter", o.ot_max_iter, "sinkhorn iteration cap")->capture_default_str();
}

IveConfig resolve_ive(const Options& o) {
  IveConfig cfg;
  cfg.trend = {o.gamma, o.tau, o.kappa, o.epsilon};
  cfg.penalty.alpha = o.alpha;
  cfg.observe_modulated = o.observe_modulated;
  require(o.gamma > 0.0 && o.gamma < 1.0, "--gamma", "must lie in (0, 1)");
  require(o.tau >= 0.0 && std::isfinite(o.tau), "--tau", "must be >= 0");
  require(o.kappa >= 0.0 && std::isfinite(o.kappa), "--kappa", "must be >= 0");
  require(o.epsilon > 0.0, "--epsilon", "must be > 0");
  require(o.alpha >= 0.0 && o.alpha <= 1.0, "--alpha", "must lie in [0, 1]");
  cfg.validate();
  return cfg;
}

OtConfig resolve_ot(const Options& o) {
  OtConfig cfg;
  cfg.method = parse_ot_method(o.ot);
  cfg.sinkhorn_regularization = o.reg;
  cfg.sinkhorn_tolerance = o.ot_tol;
  cfg.sinkhorn_max_iterations = o.ot_max_iter;
  require(o.reg > 0.0 && std::isfinite(o.reg), "--reg", "must be > 0");
  require(o.ot_tol > 0.0, "--ot-tol", "must be > 0");
  require(o.ot_max_iter > 0, "--ot-max-iter", "must be > 0");
  cfg.validate();
  return cfg;
}

SimConfig resolve_sim(const Options& o) {
  SimConfig cfg;
  try {
    cfg.grid = parse_grid(o.grid);
  } catch (const std::invalid_argument& e) {
    throw UsageError("--grid", e.what());
  }
  require(o.steps >= 2, "--steps", "must be >= 2");
  require(o.beta >= 0.0 && o.beta < 1.0, "--beta", "must lie in [0, 1)");
  require(o.lambda >= 0.0 && std::isfinite(o.lambda), "--lambda", "must be >= 0");
  require(o.amplify >= 1.0 && std::isfinite(o.amplify), "--amplify", "must be >= 1");
  require(o.seeds_count >= 1, "--seeds-count", "must be >= 1");
  require(o.layers >= 1, "--layers", "must be >= 1");
  require(o.heads >= 1, "--heads", "must be >= 1");
  cfg.steps = o.steps;
  cfg.inertia_beta = o.beta;
  cfg.lambda_inject = o.lambda;
  cfg.amplify_factor = o.amplify;
  cfg.ive_enabled = o.ive == "on";
  cfg.layers = o.layers;
  cfg.heads = o.heads;
  cfg.seed = o.seed;
  cfg.ive = resolve_ive(o);
  cfg.validate();
  return cfg;
}

json base_config(const std::string& command, const Options& o) {
  return json{{"command", command}, {"seed", o.seed}, {"format", o.format}};
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

void write_json(const fs::path& path, const json& doc) { write_text(path, doc.dump(2) + "\n"); }

std::string csv_report(const ActivenessReport& report, const json& config) {
  std::ostringstream csv;
  csv << "# config=" << config.dump() << '\n';
  write_csv(csv, report);
  return csv.str();
}

fs::path prepare_out_dir(const Options& o) {
  fs::path dir(o.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create output directory " + dir.string());
  return dir;
}

AttentionTrace load_trace(const std::string& path, std::ostream& err) {
  std::vector<TraceWarning> warnings;
  auto trace = read_trace(fs::path(path), &warnings);
  for (const auto& w : warnings) {
    err << "warning: step " << w.step << " layer " << w.layer << " head " << w.head
        << " row sum deviates by " << w.deviation << " (offset " << w.offset << ")\n";
  }
  return trace;
}

void echo_into_meta(AttentionTrace& trace, const std::string& command, const json& config) {
  trace.meta["ive.command"] = command;
  trace.meta["ive.config"] = config.dump();
}

// --- simulate -------------------------------------------------------------

int cmd_simulate(const Options& o, std::ostream& out) {
  const SimConfig base = resolve_sim(o);
  const OtConfig ot = resolve_ot(o);
  const fs::path dir = prepare_out_dir(o);

  json config = base_config("simulate", o);
  config["seeds_count"] = o.seeds_count;
  config["sim"] = base;
  config["sim"].erase("seed");
  config["ot"] = ot;

  struct SeedResult {
    std::uint64_t seed = 0;
    ActivenessReport report;
    double mean_lag = 0.0;
  };
  std::vector<SeedResult> results(o.seeds_count);

  parallel_for(o.seeds_count, [&](std::size_t i) {
    SimConfig cfg = base;
    cfg.seed = o.seed + i;
    const SimRun run = run_decode(cfg);
    SeedResult& r = results[i];
    r.seed = cfg.seed;
    r.report = activeness_report(run.trace, ot);
    const auto lag = relevance_lag(run, ot);
    r.mean_lag = mean(lag);

    const std::string stem = std::to_string(cfg.seed);
    write_trace(run.trace, dir / ("trace_" + stem + ".ivtr"));
    json seed_config = config;
    seed_config["seed"] = cfg.seed;
    if (o.format == "csv") {
      write_text(dir / ("report_" + stem + ".csv"), csv_report(r.report, seed_config));
    } else {
      json report{{"config", seed_config},
                  {"mode", "closed-loop"},
                  {"activeness", r.report},
                  {"relevance_lag", lag},
                  {"mean_relevance_lag", r.mean_lag}};
      if (cfg.ive_enabled) report["outcomes"] = run.outcomes;
      write_json(dir / ("report_" + stem + ".json"), report);
    }
  });

  json runs = json::array();
  std::vector<double> means;
  for (const auto& r : results) {
    runs.push_back({{"seed", r.seed},
                    {"trace", "trace_" + std::to_string(r.seed) + ".ivtr"},
                    {"activeness_mean", r.report.overall_mean},
                    {"per_layer_mean", r.report.per_layer_mean},
                    {"mean_relevance_lag", r.mean_lag}});
    means.push_back(r.report.overall_mean);
    out << "seed " << r.seed << " activeness " << std::setprecision(17) << r.report.overall_mean
        << '\n';
  }
  json summary{{"config", config},
               {"mode", "closed-loop"},
               {"note", "attention dynamics are synthetic; see README"},
               {"runs", runs},
               {"activeness_mean_over_seeds", mean(means)},
               {"activeness_median_over_seeds", median(means)}};
  write_json(dir / "summary.json", summary);
  return kSuccess;
}

// --- activeness -----------------------------------------------------------

int cmd_activeness(const Options& o, std::ostream& out, std::ostream& err) {
  const OtConfig ot = resolve_ot(o);
  const AttentionTrace trace = load_trace(o.input, err);
  const fs::path dir = prepare_out_dir(o);
  json config = base_config("activeness", o);
  config["trace"] = o.input;
  config["ot"] = ot;

  const ActivenessReport report = activeness_report(trace, ot, worker_count());
  if (o.format == "csv") {
    write_text(dir / "activeness.csv", csv_report(report, config));
  } else {
    write_json(dir / "activeness.json", json{{"config", config}, {"activeness", report}});
  }
  out << std::setprecision(17) << report.overall_mean << '\n';
  return kSuccess;
}

// --- modulate -------------------------------------------------------------

int cmd_modulate(const Options& o, std::ostream& out, std::ostream& err) {
  const IveConfig cfg = resolve_ive(o);
  AttentionTrace trace = load_trace(o.input, err);
  const fs::path dir = prepare_out_dir(o);
  json config = base_config("modulate", o);
  config["trace"] = o.input;
  config["ive"] = cfg;

  IveProcessor processor(trace.layout, cfg);
  json outcomes = json::array();
  std::size_t applied = 0;
  for (auto& step : trace.steps) {
    auto result = processor.process(step);
    for (const auto& oc : result.outcomes) applied += oc.applied ? 1 : 0;
    outcomes.push_back(result.outcomes);
    step = std::move(result.attention);
  }
  echo_into_meta(trace, "modulate", config);
  trace.meta["ive.mode"] = "open-loop";
  write_trace(trace, dir / "modulated.ivtr");
  write_json(dir / "modulation.json",
             json{{"config", config},
                  {"mode", "open-loop"},
                  {"note", "modulated attention was not fed back into the model"},
                  {"outcomes", outcomes}});
  out << "modulated " << trace.steps.size() << " steps, " << applied
      << " layer-steps changed (open-loop)\n";
  return kSuccess;
}

// --- inject ---------------------------------------------------------------

int cmd_inject(const Options& o, std::ostream& out, std::ostream& err) {
  require(o.lambda >= 0.0 && std::isfinite(o.lambda), "--lambda", "must be >= 0");
  const AttentionTrace original = load_trace(o.input, err);
  const fs::path dir = prepare_out_dir(o);
  json config = base_config("inject", o);
  config["trace"] = o.input;
  config["lambda"] = o.lambda;

  AttentionTrace injected = original;
  if (o.lambda > 0.0) {
    for (std::size_t t = 1; t < original.steps.size(); ++t) {
      auto& step = injected.steps[t];
      const auto& prev = original.steps[t - 1];
      for (std::size_t l = 0; l < step.n_layers(); ++l) {
        for (std::size_t h = 0; h < step.n_heads(); ++h) {
          const auto mixed = inject_inertia(original.steps[t].row(l, h), prev.row(l, h), o.lambda);
          std::copy(mixed.begin(), mixed.end(), step.row(l, h).begin());
        }
      }
    }
  }
  echo_into_meta(injected, "inject", config);
  write_trace(injected, dir / "injected.ivtr");
  out << "injected lambda " << o.lambda << " into " << injected.steps.size() << " steps\n";
  return kSuccess;
}

// --- json debug mirror ------------------------------------------------------

int cmd_export_json(const Options& o, std::ostream& err) {
  const AttentionTrace trace = load_trace(o.input, err);
  write_text(o.output, export_json_debug(trace).dump(1) + "\n");
  return kSuccess;
}

int cmd_import_json(const Options& o) {
  std::ifstream in(o.input, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + o.input);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw TraceError(TraceErrorKind::invalid_json, 0, e.what());
  }
  write_trace(import_json_debug(doc), fs::path(o.output));
  return kSuccess;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Inertia-aware visual excitation toolkit", "ive"};
  app.require_subcommand(1);
  app.add_option("--seed", o.seed, "base seed")->capture_default_str();
  app.add_option("--out", o.out, "output directory")->capture_default_str();
  app.add_option("--format", o.format, "report format")
      ->check(CLI::IsMember({"json", "csv"}))
      ->capture_default_str();

  auto* simulate = app.add_subcommand("simulate", "run the toy attention simulator");
  simulate->fallthrough();
  simulate->add_option("--steps", o.steps, "decoding steps T")->capture_default_str();
  simulate->add_option("--grid", o.grid, "patch grid HxW")->capture_default_str();
  simulate->add_option("--beta", o.beta, "attention inertia in [0,1)")->capture_default_str();
  simulate->add_option("--lambda", o.lambda, "manual inertia injection, >= 0")
      ->capture_default_str();
  simulate->add_option("--amplify", o.amplify, "naive amplification factor, >= 1")
      ->capture_default_str();
  simulate->add_option("--ive", o.ive, "closed-loop modulation on|off")
      ->check(CLI::IsMember({"on", "off"}))
      ->capture_default_str();
  simulate->add_option("--seeds-count", o.seeds_count, "number of consecutive seeds")
      ->capture_default_str();
  simulate->add_option("--layers", o.layers, "simulated layers")->capture_default_str();
  simulate->add_option("--heads", o.heads, "simulated heads")->capture_default_str();
  add_ive_flags(*simulate, o);
  add_ot_flags(*simulate, o);

  auto* activeness = app.add_subcommand("activeness", "visual activeness report for a trace");
  activeness->fallthrough();
  activeness->add_option("trace", o.input, "trace file")->required();
  add_ot_flags(*activeness, o);

  auto* modulate = app.add_subcommand("modulate", "replay IVE over a recorded trace");
  modulate->fallthrough();
  modulate->add_option("trace", o.input, "trace file")->required();
  add_ive_flags(*modulate, o);

  auto* inject = app.add_subcommand("inject", "blend each step with its predecessor");
  inject->fallthrough();
  inject->add_option("trace", o.input, "trace file")->required();
  inject->add_option("--lambda", o.lambda, "injection strength, >= 0")->required();

  auto* export_json = app.add_subcommand("export-json", "write the JSON debug mirror of a trace");
  export_json->fallthrough();
  export_json->add_option("trace", o.input, "trace file")->required();
  export_json->add_option("output", o.output, "JSON file to write")->required();

  auto* import_json = app.add_subcommand("import-json", "rebuild a binary trace from JSON");
  import_json->fallthrough();
  import_json->add_option("json", o.input, "JSON debug file")->required();
  import_json->add_option("output", o.output, "trace file to write")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  if (!reversed.empty()) reversed.pop_back();  // program name
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kSuccess;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kSuccess;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kUsageError;
  }

  try {
    if (*simulate) return cmd_simulate(o, out);
    if (*activeness) return cmd_activeness(o, out, err);
    if (*modulate) return cmd_modulate(o, out, err);
    if (*inject) return cmd_inject(o, out, err);
    if (*export_json) return cmd_export_json(o, err);
    if (*import_json) return cmd_import_json(o);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return kUsageError;
}

}  // namespace ive::cli
