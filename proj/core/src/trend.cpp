#include "ive/trend.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

namespace ive {

void TrendConfig::validate() const {
  if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("gamma must lie in (0, 1)");
  if (!(tau >= 0.0) || !std::isfinite(tau)) throw std::invalid_argument("tau must be >= 0");
  if (!(kappa >= 0.0) || !std::isfinite(kappa)) throw std::invalid_argument("kappa must be >= 0");
  if (!(epsilon > 0.0)) throw std::invalid_argument("epsilon must be > 0");
}

void to_json(nlohmann::json& j, const TrendConfig& cfg) {
  j = nlohmann::json{
      {"gamma", cfg.gamma}, {"tau", cfg.tau}, {"kappa", cfg.kappa}, {"epsilon", cfg.epsilon}};
}

TrendState::TrendState(TrendConfig cfg, std::size_t n_layers, std::size_t n_visual)
    : cfg_(cfg), n_visual_(n_visual), layers_(n_layers) {
  cfg_.validate();
  if (n_layers == 0 || n_visual == 0) {
    throw std::invalid_argument("trend state needs at least one layer and one visual token");
  }
  for (auto& layer : layers_) {
    layer.ema.assign(n_visual, 0.0);
    layer.sum.assign(n_visual, 0.0);
  }
}

const TrendState::Layer& TrendState::layer_at(std::size_t layer) const {
  if (layer >= layers_.size()) {
    throw std::out_of_range("layer " + std::to_string(layer) + " out of range");
  }
  return layers_[layer];
}

std::vector<double> TrendState::running_mean(std::size_t layer) const {
  const Layer& l = layer_at(layer);
  std::vector<double> mean(n_visual_, 0.0);
  if (l.count == 0) return mean;
  for (std::size_t j = 0; j < n_visual_; ++j) mean[j] = l.sum[j] / static_cast<double>(l.count);
  return mean;
}

void TrendState::observe(std::size_t layer, std::span<const double> observed) {
  layer_at(layer);
  if (observed.size() != n_visual_) {
    throw std::invalid_argument("observation has " + std::to_string(observed.size()) +
                                " tokens, state tracks " + std::to_string(n_visual_));
  }
  for (double a : observed) {
    if (!(a >= 0.0 && a <= 1.0)) throw std::invalid_argument("observed attention outside [0, 1]");
  }
  Layer& l = layers_[layer];
  const double g = cfg_.gamma;
  for (std::size_t j = 0; j < n_visual_; ++j) {
    l.ema[j] = l.count == 0 ? observed[j] : g * l.ema[j] + (1.0 - g) * observed[j];
    l.sum[j] += observed[j];
  }
  ++l.count;
}

std::vector<double> excitation_scores(const TrendState& state, std::size_t layer,
                                      std::span<const double> current) {
  if (state.observations(layer) == 0) {
    throw std::logic_error("score undefined at first step");
  }
  if (current.size() != state.n_visual()) {
    throw std::invalid_argument("current attention does not match tracked token count");
  }
  const auto ema = state.ema(layer);
  const double eps = state.config().epsilon;
  std::vector<double> scores(current.size());
  for (std::size_t j = 0; j < current.size(); ++j) {
    const double spread = std::sqrt(std::max(0.0, ema[j] * (1.0 - ema[j])));
    scores[j] = (current[j] - ema[j]) / (spread + eps);
  }
  return scores;
}

TokenPartition partition_tokens(std::span<const double> scores, const TrendState& state,
                                std::size_t layer) {
  if (scores.size() != state.n_visual()) {
    throw std::invalid_argument("score vector does not match tracked token count");
  }
  const auto mean = state.running_mean(layer);
  const double tau = state.config().tau;
  const double inertia_threshold =
      state.config().kappa / static_cast<double>(state.n_visual());
  TokenPartition partition;
  partition.scores.assign(scores.begin(), scores.end());
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (scores[j] > tau) {
      partition.emergent.push_back(j);
    } else if (mean[j] > inertia_threshold) {
      partition.inertia.push_back(j);
    }
  }
  return partition;
}

void to_json(nlohmann::json& j, const TokenPartition& partition) {
  j = nlohmann::json{{"emergent", partition.emergent},
                     {"inertia", partition.inertia},
                     {"scores", partition.scores}};
}

}  // namespace ive
