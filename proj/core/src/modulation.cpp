#include "ive/modulation.hpp"

#include <stdexcept>

#include <nlohmann/json.hpp>

namespace ive {

void to_json(nlohmann::json& j, const IveConfig& cfg) {
  j = nlohmann::json{{"trend", cfg.trend},
                     {"penalty", cfg.penalty},
                     {"observe_modulated", cfg.observe_modulated}};
}

void to_json(nlohmann::json& j, const ModulationOutcome& outcome) {
  std::vector<double> emergent_scores;
  for (std::size_t e : outcome.partition.emergent) {
    emergent_scores.push_back(outcome.partition.scores[e]);
  }
  std::vector<double> factors;
  for (std::size_t i : outcome.partition.inertia) factors.push_back(outcome.attenuation[i]);
  j = nlohmann::json{{"step", outcome.step},
                     {"layer", outcome.layer},
                     {"applied", outcome.applied},
                     {"emergent", outcome.partition.emergent},
                     {"emergent_scores", emergent_scores},
                     {"inertia", outcome.partition.inertia},
                     {"attenuation", factors},
                     {"penalized_mass", outcome.penalized_mass}};
}

namespace {

void check_dimensions(const StepAttention& step, const TokenLayout& layout,
                      const TrendState& trend, const PenaltyState& penalty) {
  if (step.n_layers() != layout.n_layers || step.n_heads() != layout.n_heads ||
      step.n_tokens() != layout.total_tokens) {
    throw std::invalid_argument("step dimensions do not match the token layout");
  }
  if (trend.n_layers() != layout.n_layers || trend.n_visual() != layout.visual_count() ||
      penalty.n_layers() != layout.n_layers || penalty.n_visual() != layout.visual_count()) {
    throw std::invalid_argument("modulation state does not match the token layout");
  }
}

// Scales every head's visual entries toward the per-token target, then
// restores each row's original sum.
void broadcast_to_heads(StepAttention& step, const TokenLayout& layout, std::size_t layer,
                        const std::vector<double>& original, const std::vector<double>& target) {
  for (std::size_t h = 0; h < step.n_heads(); ++h) {
    auto row = step.row(layer, h);
    double before = 0.0;
    for (double w : row) before += w;
    for (std::size_t j = 0; j < original.size(); ++j) {
      if (original[j] > 0.0) row[layout.visual_start + j] *= target[j] / original[j];
    }
    double after = 0.0;
    for (double w : row) after += w;
    if (after > 0.0) {
      const double scale = before / after;
      for (double& w : row) w *= scale;
    }
  }
}

}  // namespace

IveStepResult ive_step(const StepAttention& step, const TokenLayout& layout, TrendState& trend,
                       PenaltyState& penalty, const IveConfig& cfg) {
  check_dimensions(step, layout, trend, penalty);
  const std::size_t t = penalty.step();
  const std::size_t n_visual = layout.visual_count();

  IveStepResult result{step, {}};
  std::vector<TokenPartition> partitions(layout.n_layers);
  std::vector<std::vector<double>> observed(layout.n_layers);

  for (std::size_t l = 0; l < layout.n_layers; ++l) {
    const auto full = head_average(step, l);
    ModulationOutcome outcome;
    outcome.step = t;
    outcome.layer = l;
    outcome.original.assign(full.begin() + static_cast<std::ptrdiff_t>(layout.visual_start),
                            full.begin() + static_cast<std::ptrdiff_t>(layout.visual_end));
    outcome.attenuation.assign(n_visual, 1.0);
    outcome.modulated = outcome.original;

    if (trend.observations(l) > 0) {
      const auto scores = excitation_scores(trend, l, outcome.original);
      outcome.partition = partition_tokens(scores, trend, l);
      if (!outcome.partition.emergent.empty() && t >= 2) {
        const auto attenuated = attenuate(outcome.original, outcome.partition,
                                          penalty.counts(l), cfg.penalty, t);
        outcome.penalized_mass = penalized_mass(outcome.original, attenuated, outcome.partition);
        const auto weights = reallocation_weights(scores, outcome.partition.emergent);
        outcome.modulated = apply_reallocation(attenuated, weights, outcome.penalized_mass,
                                               outcome.partition.emergent);
        for (std::size_t j : outcome.partition.inertia) {
          outcome.attenuation[j] =
              outcome.original[j] > 0.0 ? attenuated[j] / outcome.original[j] : 1.0;
        }
        outcome.applied = true;
        broadcast_to_heads(result.attention, layout, l, outcome.original, outcome.modulated);
      }
    }
    partitions[l] = outcome.partition;
    observed[l] = cfg.observe_modulated ? outcome.modulated : outcome.original;
    result.outcomes.push_back(std::move(outcome));
  }

  for (std::size_t l = 0; l < layout.n_layers; ++l) trend.observe(l, observed[l]);
  penalty.record(partitions);
  return result;
}

IveProcessor::IveProcessor(const TokenLayout& layout, IveConfig cfg)
    : layout_(layout),
      cfg_(cfg),
      trend_(cfg.trend, layout.n_layers, layout.visual_count()),
      penalty_(layout.n_layers, layout.visual_count()) {
  layout_.validate();
  cfg_.validate();
}

}  // namespace ive
