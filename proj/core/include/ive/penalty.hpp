// Inertia-aware attention penalty.
//
// Tokens that keep landing in the inertia set accumulate a persistence count
// C. At step t their attention is scaled by (1 - alpha * C / (t - 1)); the mass
// removed (R_t) is handed to emergent tokens in proportion to their
// excitation scores, so the visual mass is conserved.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "ive/trend.hpp"

namespace ive {

struct PenaltyConfig {
  double alpha = 0.10;

  void validate() const;
};

void to_json(nlohmann::json& j, const PenaltyConfig& cfg);

class PenaltyState {
 public:
  PenaltyState(std::size_t n_layers, std::size_t n_visual);

  /// 1-based index of the step about to be processed.
  std::size_t step() const { return step_; }
  std::size_t n_layers() const { return counts_.size(); }
  std::size_t n_visual() const { return n_visual_; }
  std::span<const std::uint32_t> counts(std::size_t layer) const;

  /// Adds one to C for every inertia token of each layer's partition, then
  /// advances the step. `per_layer` must hold one partition per layer.
  void record(std::span<const TokenPartition> per_layer);

 private:
  std::size_t n_visual_;
  std::size_t step_ = 1;
  std::vector<std::vector<std::uint32_t>> counts_;
};

/// Free-function form of PenaltyState::record.
inline void update_persistence(PenaltyState& state, std::span<const TokenPartition> per_layer) {
  state.record(per_layer);
}

/// a'_j = a_j (1 - alpha C_j / (t - 1)) on inertia tokens, a_j elsewhere.
/// Throws std::domain_error("penalty undefined before step 2") when t < 2.
std::vector<double> attenuate(std::span<const double> attention, const TokenPartition& partition,
                              std::span<const std::uint32_t> counts, const PenaltyConfig& cfg,
                              std::size_t t);

/// R_t: total mass removed from inertia tokens.
double penalized_mass(std::span<const double> attention, std::span<const double> attenuated,
                      const TokenPartition& partition);

/// w_j = S_j / sum_{k in E} S_k, aligned with `emergent`. Throws
/// std::invalid_argument for an empty set or a non-positive score total.
std::vector<double> reallocation_weights(std::span<const double> scores,
                                         std::span<const std::size_t> emergent);

/// a''_j = a'_j + w_j R_t on emergent tokens, a'_j elsewhere.
std::vector<double> apply_reallocation(std::span<const double> attenuated,
                                       std::span<const double> weights, double penalized,
                                       std::span<const std::size_t> emergent);

}  // namespace ive
