// Visual activeness: how far the normalized visual attention moves between
// consecutive decoding steps, measured as the mean W1 distance over the
// patch grid. Reported per layer and averaged over layers.

#pragma once

#include <cstddef>
#include <iosfwd>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "ive/attention.hpp"
#include "ive/transport.hpp"

namespace ive {

struct LayerActiveness {
  std::vector<double> series;  // W(p_i, p_{i+1}) for i = 1..T-1
  double mean = 0.0;
};

struct ActivenessReport {
  std::vector<std::vector<double>> per_layer_series;
  std::vector<double> per_layer_mean;
  double overall_mean = 0.0;
  OtConfig config;
};

/// Throws std::invalid_argument for traces with fewer than two steps;
/// DegenerateAttention from any step propagates. The T-1 pair distances are
/// independent and may be spread over `workers` threads; the mean is summed in
/// pair order either way.
LayerActiveness visual_activeness(const AttentionTrace& trace, std::size_t layer,
                                  const OtConfig& cfg = {}, std::size_t workers = 1);

ActivenessReport activeness_report(const AttentionTrace& trace, const OtConfig& cfg = {},
                                   std::size_t workers = 1);

void to_json(nlohmann::json& j, const ActivenessReport& report);

/// Writes `layer,step,distance` rows (step is the 1-based index of the first
/// step of the pair). Lines starting with '#' carry the configuration.
void write_csv(std::ostream& out, const ActivenessReport& report);

}  // namespace ive
