#include "ive/penalty.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

namespace ive {

void PenaltyConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("alpha must lie in [0, 1]");
}

void to_json(nlohmann::json& j, const PenaltyConfig& cfg) {
  j = nlohmann::json{{"alpha", cfg.alpha}};
}

PenaltyState::PenaltyState(std::size_t n_layers, std::size_t n_visual)
    : n_visual_(n_visual), counts_(n_layers, std::vector<std::uint32_t>(n_visual, 0)) {
  if (n_layers == 0 || n_visual == 0) {
    throw std::invalid_argument("penalty state needs at least one layer and one visual token");
  }
}

std::span<const std::uint32_t> PenaltyState::counts(std::size_t layer) const {
  if (layer >= counts_.size()) throw std::out_of_range("layer out of range");
  return counts_[layer];
}

void PenaltyState::record(std::span<const TokenPartition> per_layer) {
  if (per_layer.size() != counts_.size()) {
    throw std::invalid_argument("expected one partition per layer");
  }
  for (std::size_t l = 0; l < counts_.size(); ++l) {
    for (std::size_t j : per_layer[l].inertia) {
      if (j >= n_visual_) throw std::out_of_range("inertia token index out of range");
      ++counts_[l][j];
    }
  }
  ++step_;
}

std::vector<double> attenuate(std::span<const double> attention, const TokenPartition& partition,
                              std::span<const std::uint32_t> counts, const PenaltyConfig& cfg,
                              std::size_t t) {
  if (t < 2) throw std::domain_error("penalty undefined before step 2");
  if (counts.size() != attention.size()) {
    throw std::invalid_argument("persistence counts do not match attention length");
  }
  std::vector<double> out(attention.begin(), attention.end());
  const double denom = static_cast<double>(t - 1);
  for (std::size_t j : partition.inertia) {
    if (j >= attention.size()) throw std::out_of_range("inertia token index out of range");
    const double factor = 1.0 - cfg.alpha * static_cast<double>(counts[j]) / denom;
    out.at(j) = attention[j] * std::max(0.0, factor);
  }
  return out;
}

double penalized_mass(std::span<const double> attention, std::span<const double> attenuated,
                      const TokenPartition& partition) {
  if (attention.size() != attenuated.size()) {
    throw std::invalid_argument("attention and attenuated vectors are misaligned");
  }
  double total = 0.0;
  for (std::size_t j : partition.inertia) total += attention[j] - attenuated[j];
  return total;
}

std::vector<double> reallocation_weights(std::span<const double> scores,
                                         std::span<const std::size_t> emergent) {
  if (emergent.empty()) throw std::invalid_argument("no emergent tokens to reallocate to");
  double total = 0.0;
  for (std::size_t j : emergent) total += scores[j];
  if (!(total > 0.0)) throw std::invalid_argument("emergent scores must sum to a positive value");
  std::vector<double> weights;
  weights.reserve(emergent.size());
  for (std::size_t j : emergent) weights.push_back(scores[j] / total);
  return weights;
}

std::vector<double> apply_reallocation(std::span<const double> attenuated,
                                       std::span<const double> weights, double penalized,
                                       std::span<const std::size_t> emergent) {
  if (weights.size() != emergent.size()) {
    throw std::invalid_argument("one weight per emergent token expected");
  }
  std::vector<double> out(attenuated.begin(), attenuated.end());
  for (std::size_t k = 0; k < emergent.size(); ++k) out.at(emergent[k]) += weights[k] * penalized;
  return out;
}

}  // namespace ive
