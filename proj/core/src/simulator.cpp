#include "ive/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

namespace ive {

namespace {

constexpr std::uint64_t kFieldStream = 0x6669656c64ULL;     // "field"
constexpr std::uint64_t kDynamicsStream = 0x64796e616dULL;  // "dynam"

void require_same_size(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("attention vectors differ in length");
}

std::vector<double> normalized_copy(std::vector<double> v) {
  normalize_in_place(v);
  return v;
}

}  // namespace

void SimConfig::validate() const {
  if (grid.rows == 0 || grid.cols == 0) throw std::invalid_argument("grid sides must be positive");
  if (steps < 2) throw std::invalid_argument("steps must be >= 2");
  if (layers == 0) throw std::invalid_argument("layers must be >= 1");
  if (heads == 0) throw std::invalid_argument("heads must be >= 1");
  if (!(inertia_beta >= 0.0 && inertia_beta < 1.0)) {
    throw std::invalid_argument("beta must lie in [0, 1)");
  }
  if (relevance_bumps == 0) throw std::invalid_argument("relevance bumps must be >= 1");
  if (!(bump_sigma >= 0.0)) throw std::invalid_argument("bump sigma must be >= 0");
  if (switch_period == 0) throw std::invalid_argument("switch period must be >= 1");
  if (!(noise_scale >= 0.0)) throw std::invalid_argument("noise scale must be >= 0");
  if (!(head_jitter >= 0.0)) throw std::invalid_argument("head jitter must be >= 0");
  if (!(lambda_inject >= 0.0) || !std::isfinite(lambda_inject)) {
    throw std::invalid_argument("lambda must be >= 0");
  }
  if (!(amplify_factor >= 1.0) || !std::isfinite(amplify_factor)) {
    throw std::invalid_argument("amplify factor must be >= 1");
  }
  if (!(text_share >= 0.0 && text_share < 1.0)) {
    throw std::invalid_argument("text share must lie in [0, 1)");
  }
  if (text_share > 0.0 && system_tokens + instruction_tokens == 0) {
    throw std::invalid_argument("a positive text share needs at least one non-visual token");
  }
  ive.validate();
}

TokenLayout SimConfig::layout() const {
  TokenLayout layout;
  layout.visual_start = system_tokens;
  layout.visual_end = system_tokens + grid.cells();
  layout.total_tokens = layout.visual_end + instruction_tokens;
  layout.grid = grid;
  layout.n_heads = heads;
  layout.n_layers = layers;
  return layout;
}

void to_json(nlohmann::json& j, const SimConfig& cfg) {
  j = nlohmann::json{{"grid", to_string(cfg.grid)},
                     {"steps", cfg.steps},
                     {"layers", cfg.layers},
                     {"heads", cfg.heads},
                     {"inertia_beta", cfg.inertia_beta},
                     {"relevance_bumps", cfg.relevance_bumps},
                     {"bump_sigma", cfg.bump_sigma},
                     {"switch_period", cfg.switch_period},
                     {"noise_scale", cfg.noise_scale},
                     {"head_jitter", cfg.head_jitter},
                     {"lambda_inject", cfg.lambda_inject},
                     {"ive_enabled", cfg.ive_enabled},
                     {"amplify_factor", cfg.amplify_factor},
                     {"text_share", cfg.text_share},
                     {"system_tokens", cfg.system_tokens},
                     {"instruction_tokens", cfg.instruction_tokens},
                     {"seed", cfg.seed},
                     {"ive", cfg.ive}};
}

std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

std::vector<GridCell> relevance_centers(const SimConfig& cfg, std::size_t t) {
  if (t == 0) throw std::invalid_argument("steps are 1-based");
  const std::size_t epoch = (t - 1) / cfg.switch_period;
  auto rng = make_rng(cfg.seed, kFieldStream, epoch);
  std::uniform_int_distribution<std::size_t> row(0, cfg.grid.rows - 1);
  std::uniform_int_distribution<std::size_t> col(0, cfg.grid.cols - 1);
  std::vector<GridCell> centers(cfg.relevance_bumps);
  for (auto& c : centers) {
    c.row = row(rng);
    c.col = col(rng);
  }
  return centers;
}

GridDistribution relevance_field(const SimConfig& cfg, std::size_t t) {
  const auto centers = relevance_centers(cfg, t);
  const GridShape grid = cfg.grid;
  std::vector<double> mass(grid.cells(), 0.0);
  const double two_var = 2.0 * cfg.bump_sigma * cfg.bump_sigma;
  for (const auto& c : centers) {
    if (two_var == 0.0) {
      mass[c.row * grid.cols + c.col] += 1.0;
      continue;
    }
    // Each bump carries equal mass regardless of how much of it the grid clips.
    std::vector<double> bump(grid.cells());
    double total = 0.0;
    for (std::size_t k = 0; k < grid.cells(); ++k) {
      const GridCell cell = cell_of(grid, k);
      const double dr = static_cast<double>(cell.row) - static_cast<double>(c.row);
      const double dc = static_cast<double>(cell.col) - static_cast<double>(c.col);
      bump[k] = std::exp(-(dr * dr + dc * dc) / two_var);
      total += bump[k];
    }
    for (std::size_t k = 0; k < grid.cells(); ++k) mass[k] += bump[k] / total;
  }
  return GridDistribution::normalized(grid, std::move(mass));
}

std::vector<double> synth_attention_step(std::optional<std::span<const double>> prev,
                                         const GridDistribution& field, const SimConfig& cfg,
                                         std::mt19937_64& rng) {
  const auto target = field.mass();
  std::vector<double> clean(target.begin(), target.end());
  if (prev) {
    require_same_size(*prev, target);
    const double beta = cfg.inertia_beta;
    for (std::size_t k = 0; k < clean.size(); ++k) {
      clean[k] = beta * (*prev)[k] + (1.0 - beta) * target[k];
    }
  }
  if (cfg.noise_scale > 0.0) {
    std::normal_distribution<double> z(0.0, 1.0);
    for (double& v : clean) v = std::max(0.0, v + cfg.noise_scale * v * z(rng));
  }
  return normalized_copy(std::move(clean));
}

std::vector<double> inject_inertia(std::span<const double> current,
                                   std::span<const double> previous, double lambda) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be >= 0");
  require_same_size(current, previous);
  std::vector<double> out(current.size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = current[k] + lambda * previous[k];
  return normalized_copy(std::move(out));
}

std::vector<double> amplify_visual(std::span<const double> visual, double factor) {
  std::vector<double> out(visual.begin(), visual.end());
  if (factor == 1.0) return out;
  for (double& v : out) v = std::pow(v, factor);
  return normalized_copy(std::move(out));
}

std::vector<std::vector<double>> spread_heads(std::span<const double> shared, std::size_t heads,
                                              double jitter, std::mt19937_64& rng) {
  std::normal_distribution<double> z(0.0, 1.0);
  std::vector<std::vector<double>> out(heads);
  for (auto& head : out) {
    head.assign(shared.begin(), shared.end());
    if (jitter > 0.0) {
      for (double& v : head) v *= std::max(0.0, 1.0 + jitter * z(rng));
    }
    double total = 0.0;
    for (double v : head) total += v;
    if (!(total > 0.0)) head.assign(shared.begin(), shared.end());
    normalize_in_place(head);
  }
  return out;
}

SimRun run_decode(const SimConfig& cfg) {
  cfg.validate();
  const TokenLayout layout = cfg.layout();
  const std::size_t n_visual = layout.visual_count();
  const std::size_t n_text = layout.total_tokens - n_visual;
  const double text_each = n_text > 0 ? cfg.text_share / static_cast<double>(n_text) : 0.0;
  const double visual_share = n_text > 0 ? 1.0 - cfg.text_share : 1.0;

  SimRun run;
  run.trace.layout = layout;
  run.trace.meta = {{"source", "simulator"},
                    {"seed", std::to_string(cfg.seed)},
                    {"config", nlohmann::json(cfg).dump()}};
  run.trace.steps.reserve(cfg.steps);
  run.relevance_trace.reserve(cfg.steps);

  auto rng = make_rng(cfg.seed, kDynamicsStream, 0);
  std::optional<IveProcessor> ive;
  if (cfg.ive_enabled) ive.emplace(layout, cfg.ive);
  std::vector<std::vector<double>> prev(cfg.layers);

  for (std::size_t t = 1; t <= cfg.steps; ++t) {
    auto field = relevance_field(cfg, t);
    StepAttention step(t, cfg.layers, cfg.heads, layout.total_tokens);
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      std::optional<std::span<const double>> last;
      if (!prev[l].empty()) last = std::span<const double>(prev[l]);
      auto visual = synth_attention_step(last, field, cfg, rng);
      if (last && cfg.lambda_inject > 0.0) visual = inject_inertia(visual, *last, cfg.lambda_inject);
      visual = amplify_visual(visual, cfg.amplify_factor);
      const auto heads = spread_heads(visual, cfg.heads, cfg.head_jitter, rng);
      for (std::size_t h = 0; h < cfg.heads; ++h) {
        auto row = step.row(l, h);
        for (std::size_t j = 0; j < row.size(); ++j) row[j] = text_each;
        for (std::size_t k = 0; k < n_visual; ++k) {
          row[layout.visual_start + k] = visual_share * heads[h][k];
        }
      }
    }
    if (ive) {
      auto result = ive->process(step);
      step = std::move(result.attention);
      run.outcomes.push_back(std::move(result.outcomes));
    }
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      const auto final_visual = visual_slice_normalized(step, layout, l);
      prev[l].assign(final_visual.mass().begin(), final_visual.mass().end());
    }
    run.trace.steps.push_back(std::move(step));
    run.relevance_trace.push_back(std::move(field));
  }
  return run;
}

std::vector<double> relevance_lag(const SimRun& run, const OtConfig& cfg) {
  const auto& trace = run.trace;
  if (trace.steps.size() != run.relevance_trace.size()) {
    throw std::invalid_argument("trace and relevance trace lengths differ");
  }
  std::vector<double> lag(trace.steps.size(), 0.0);
  const double layers = static_cast<double>(trace.layout.n_layers);
  for (std::size_t i = 0; i < trace.steps.size(); ++i) {
    double total = 0.0;
    for (std::size_t l = 0; l < trace.layout.n_layers; ++l) {
      total += wasserstein1(visual_slice_normalized(trace.steps[i], trace.layout, l),
                            run.relevance_trace[i], cfg);
    }
    lag[i] = total / layers;
  }
  return lag;
}

RunComparison compare_runs(std::span<const SimRun> runs, const OtConfig& cfg) {
  RunComparison out;
  for (const auto& run : runs) {
    if (run.trace.layout.grid != runs.front().trace.layout.grid ||
        run.trace.steps.size() != runs.front().trace.steps.size()) {
      throw std::invalid_argument("runs must share grid and step count");
    }
  }
  for (const auto& run : runs) {
    out.reports.push_back(activeness_report(run.trace, cfg));
    auto lag = relevance_lag(run, cfg);
    double total = 0.0;
    for (double v : lag) total += v;
    out.mean_lag.push_back(lag.empty() ? 0.0 : total / static_cast<double>(lag.size()));
    out.relevance_lag.push_back(std::move(lag));
  }
  return out;
}

void to_json(nlohmann::json& j, const RunComparison& comparison) {
  j = nlohmann::json{{"reports", comparison.reports},
                     {"relevance_lag", comparison.relevance_lag},
                     {"mean_lag", comparison.mean_lag},
                     {"lag_note", "relevance lag is a simulator diagnostic"}};
}

}  // namespace ive
