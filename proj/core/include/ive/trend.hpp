// Trend-guided token selection.
//
// Per layer and per visual token the state keeps an exponential moving average
// of observed attention plus a running mean. A token's excitation score is its
// current attention's deviation from the EMA, standardized by the Bernoulli
// spread sqrt(ema * (1 - ema)). High scorers are "emergent"; tokens whose
// long-run mean is well above the uniform share but which are not emergent are
// "inertia" tokens.

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace ive {

struct TrendConfig {
  /// Weight of the previous EMA value: ema <- gamma * ema + (1 - gamma) * observed.
  double gamma = 0.1;
  /// Emergent threshold on the excitation score.
  double tau = 3.0;
  /// Inertia threshold as a multiple of the uniform share 1 / N_v.
  double kappa = 3.0;
  double epsilon = 1e-6;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrendConfig& cfg);

class TrendState {
 public:
  TrendState(TrendConfig cfg, std::size_t n_layers, std::size_t n_visual);

  const TrendConfig& config() const { return cfg_; }
  std::size_t n_layers() const { return layers_.size(); }
  std::size_t n_visual() const { return n_visual_; }

  std::span<const double> ema(std::size_t layer) const { return layer_at(layer).ema; }
  /// Mean of all observations so far for a layer.
  std::vector<double> running_mean(std::size_t layer) const;
  std::size_t observations(std::size_t layer) const { return layer_at(layer).count; }

  /// Folds in one step of per-visual-token attention. The first observation
  /// initializes the EMA to the observed values. Entries must lie in [0, 1].
  void observe(std::size_t layer, std::span<const double> observed);

 private:
  struct Layer {
    std::vector<double> ema;
    std::vector<double> sum;
    std::size_t count = 0;
  };
  const Layer& layer_at(std::size_t layer) const;

  TrendConfig cfg_;
  std::size_t n_visual_;
  std::vector<Layer> layers_;
};

/// S_j = (a_j - ema_j) / (sqrt(ema_j (1 - ema_j)) + epsilon).
/// Throws std::logic_error("score undefined at first step") without history.
std::vector<double> excitation_scores(const TrendState& state, std::size_t layer,
                                      std::span<const double> current);

struct TokenPartition {
  std::vector<std::size_t> emergent;  // ascending visual offsets
  std::vector<std::size_t> inertia;   // ascending visual offsets
  std::vector<double> scores;

  bool operator==(const TokenPartition&) const = default;
};

void to_json(nlohmann::json& j, const TokenPartition& partition);

/// Emergent: S > tau. Inertia: running mean > kappa / N_v and S <= tau.
TokenPartition partition_tokens(std::span<const double> scores, const TrendState& state,
                                std::size_t layer);

}  // namespace ive
