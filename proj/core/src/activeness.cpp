#include "ive/activeness.hpp"

#include <ostream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "ive/parallel.hpp"

namespace ive {

LayerActiveness visual_activeness(const AttentionTrace& trace, std::size_t layer,
                                  const OtConfig& cfg, std::size_t workers) {
  cfg.validate();
  if (trace.steps.size() < 2) {
    throw std::invalid_argument("activeness needs at least 2 steps, trace has " +
                                std::to_string(trace.steps.size()));
  }
  if (layer >= trace.layout.n_layers) {
    throw std::out_of_range("layer " + std::to_string(layer) + " out of range");
  }
  const std::size_t steps = trace.steps.size();
  std::vector<GridDistribution> dists;
  dists.reserve(steps);
  for (const auto& step : trace.steps) {
    dists.push_back(visual_slice_normalized(step, trace.layout, layer));
  }

  LayerActiveness out;
  out.series.assign(steps - 1, 0.0);
  parallel_for(
      steps - 1, [&](std::size_t i) { out.series[i] = wasserstein1(dists[i], dists[i + 1], cfg); },
      workers);
  double total = 0.0;
  for (double d : out.series) total += d;
  out.mean = total / static_cast<double>(out.series.size());
  return out;
}

ActivenessReport activeness_report(const AttentionTrace& trace, const OtConfig& cfg,
                                   std::size_t workers) {
  ActivenessReport report;
  report.config = cfg;
  double total = 0.0;
  for (std::size_t l = 0; l < trace.layout.n_layers; ++l) {
    auto layer = visual_activeness(trace, l, cfg, workers);
    total += layer.mean;
    report.per_layer_mean.push_back(layer.mean);
    report.per_layer_series.push_back(std::move(layer.series));
  }
  report.overall_mean = total / static_cast<double>(trace.layout.n_layers);
  return report;
}

void to_json(nlohmann::json& j, const ActivenessReport& report) {
  j = nlohmann::json{{"per_layer_series", report.per_layer_series},
                     {"per_layer_mean", report.per_layer_mean},
                     {"overall_mean", report.overall_mean},
                     {"config", report.config}};
}

void write_csv(std::ostream& out, const ActivenessReport& report) {
  const nlohmann::json cfg = report.config;
  out << "# ot_config=" << cfg.dump() << '\n';
  out << "layer,step,distance\n";
  const auto old_precision = out.precision(17);
  for (std::size_t l = 0; l < report.per_layer_series.size(); ++l) {
    const auto& series = report.per_layer_series[l];
    for (std::size_t i = 0; i < series.size(); ++i) {
      out << l << ',' << i + 1 << ',' << series[i] << '\n';
    }
  }
  out.precision(old_precision);
}

}  // namespace ive
