// Seeded toy model of autoregressive visual attention.
//
// There is no language model here. Each decoding step draws a ground-truth
// "relevance field" over the patch grid (a mixture of Gaussian bumps whose
// centres jump every `switch_period` steps) and produces attention that mixes
// the previous step's final attention with that field. The mixing weight
// `inertia_beta` is the knob that makes attention sticky. Manual inertia
// injection, a naive visual-amplification baseline and closed-loop IVE
// modulation can be switched on per run. All of these dynamics are
// constructed for this toolkit; none are measured from a real model.

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "ive/activeness.hpp"
#include "ive/attention.hpp"
#include "ive/modulation.hpp"
#include "ive/transport.hpp"

namespace ive {

struct SimConfig {
  GridShape grid{24, 24};
  std::size_t steps = 100;
  std::size_t layers = 1;
  std::size_t heads = 8;
  /// Weight of the previous step's attention in the next step's attention.
  double inertia_beta = 0.6;
  std::size_t relevance_bumps = 3;
  /// Standard deviation of each relevance bump, in patch units.
  double bump_sigma = 1.5;
  std::size_t switch_period = 12;
  /// Relative per-cell noise: additive Gaussian with standard deviation
  /// noise_scale times the cell's clean mass, truncated at zero.
  double noise_scale = 0.01;
  /// Relative per-head multiplicative jitter around the shared row.
  double head_jitter = 0.1;
  double lambda_inject = 0.0;
  bool ive_enabled = false;
  /// Naive amplification baseline: visual attention logits are scaled by this
  /// factor, i.e. visual weights are raised to this power and renormalized.
  double amplify_factor = 1.0;
  /// Share of each row spread uniformly over non-visual tokens.
  double text_share = 0.2;
  std::size_t system_tokens = 35;
  std::size_t instruction_tokens = 89;
  std::uint64_t seed = 0;
  IveConfig ive;

  void validate() const;
  TokenLayout layout() const;
};

void to_json(nlohmann::json& j, const SimConfig& cfg);

struct SimRun {
  AttentionTrace trace;
  std::vector<GridDistribution> relevance_trace;
  /// outcomes[t - 1][layer]; empty when IVE is off.
  std::vector<std::vector<ModulationOutcome>> outcomes;
};

/// Deterministic engine for (seed, stream, index); independent per run so
/// batches can run in parallel and stay bit-reproducible.
std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index);

/// Relevance bump centres in effect at step t (1-based).
std::vector<GridCell> relevance_centers(const SimConfig& cfg, std::size_t t);

/// Normalized mixture of isotropic Gaussian bumps; a function of (seed, t) only.
GridDistribution relevance_field(const SimConfig& cfg, std::size_t t);

/// normalize(beta * prev + (1 - beta) * field + noise), or normalize(field +
/// noise) without a previous step. Returns a distribution over visual tokens.
std::vector<double> synth_attention_step(std::optional<std::span<const double>> prev,
                                         const GridDistribution& field, const SimConfig& cfg,
                                         std::mt19937_64& rng);

/// normalize(current + lambda * previous). Throws std::invalid_argument for
/// lambda < 0 or mismatched lengths.
std::vector<double> inject_inertia(std::span<const double> current,
                                   std::span<const double> previous, double lambda);

/// Raises weights to `factor` and renormalizes (logit scaling).
std::vector<double> amplify_visual(std::span<const double> visual, double factor);

/// Splits a shared visual distribution into per-head distributions.
std::vector<std::vector<double>> spread_heads(std::span<const double> shared, std::size_t heads,
                                              double jitter, std::mt19937_64& rng);

SimRun run_decode(const SimConfig& cfg);

struct RunComparison {
  std::vector<ActivenessReport> reports;
  /// relevance_lag[run][t - 1]: W1 between the step's normalized visual
  /// attention (averaged over layers) and the relevance field.
  std::vector<std::vector<double>> relevance_lag;
  std::vector<double> mean_lag;
};

/// Throws std::invalid_argument when runs differ in grid or length.
RunComparison compare_runs(std::span<const SimRun> runs, const OtConfig& cfg = {});

/// Lag series of a single run.
std::vector<double> relevance_lag(const SimRun& run, const OtConfig& cfg = {});

void to_json(nlohmann::json& j, const RunComparison& comparison);

}  // namespace ive
