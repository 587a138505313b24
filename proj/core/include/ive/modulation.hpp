// One decoding step of inertia-aware visual excitation.
//
// Per layer: head-average the step's attention, score the visual tokens
// against their history, partition them, attenuate inertia tokens and move
// the removed mass to emergent tokens. The per-token target is pushed back
// into every head by scaling each head's visual entry by a''_j / a_j, and each
// row is rescaled to its original sum. With no emergent token the step passes
// through untouched.

#pragma once

#include <cstddef>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "ive/attention.hpp"
#include "ive/penalty.hpp"
#include "ive/trend.hpp"

namespace ive {

struct IveConfig {
  TrendConfig trend;
  PenaltyConfig penalty;
  /// Feed the EMA / running mean with post-modulation attention instead of
  /// the raw observation.
  bool observe_modulated = false;

  void validate() const {
    trend.validate();
    penalty.validate();
  }
};

void to_json(nlohmann::json& j, const IveConfig& cfg);

struct ModulationOutcome {
  std::size_t step = 0;
  std::size_t layer = 0;
  /// False for warm-up steps and steps without emergent tokens.
  bool applied = false;
  TokenPartition partition;
  /// Per visual token; 1 outside the inertia set.
  std::vector<double> attenuation;
  double penalized_mass = 0.0;
  /// Head-averaged visual attention before and after modulation.
  std::vector<double> original;
  std::vector<double> modulated;
};

/// Compact JSON: partition sets, emergent scores, inertia attenuation factors
/// and R_t. Full per-token vectors are omitted.
void to_json(nlohmann::json& j, const ModulationOutcome& outcome);

struct IveStepResult {
  StepAttention attention;
  std::vector<ModulationOutcome> outcomes;  // one per layer
};

/// Processes one step and advances both states. Throws std::invalid_argument
/// on dimension mismatches between step, layout and states.
IveStepResult ive_step(const StepAttention& step, const TokenLayout& layout, TrendState& trend,
                       PenaltyState& penalty, const IveConfig& cfg);

/// Owns the trend and penalty state for one trajectory.
class IveProcessor {
 public:
  IveProcessor(const TokenLayout& layout, IveConfig cfg);

  IveStepResult process(const StepAttention& step) {
    return ive_step(step, layout_, trend_, penalty_, cfg_);
  }

  const TrendState& trend() const { return trend_; }
  const PenaltyState& penalty() const { return penalty_; }
  const IveConfig& config() const { return cfg_; }

 private:
  TokenLayout layout_;
  IveConfig cfg_;
  TrendState trend_;
  PenaltyState penalty_;
};

}  // namespace ive
