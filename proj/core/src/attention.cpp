#include "ive/attention.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>

namespace ive {

GridShape parse_grid(const std::string& text) {
  const auto sep = text.find_first_of("xX");
  if (sep == std::string::npos || sep == 0 || sep + 1 >= text.size()) {
    throw std::invalid_argument("grid must look like HxW, got '" + text + "'");
  }
  GridShape grid;
  const char* begin = text.data();
  const char* mid = begin + sep;
  const char* end = begin + text.size();
  auto r = std::from_chars(begin, mid, grid.rows);
  auto c = std::from_chars(mid + 1, end, grid.cols);
  if (r.ec != std::errc{} || r.ptr != mid || c.ec != std::errc{} || c.ptr != end ||
      grid.rows == 0 || grid.cols == 0) {
    throw std::invalid_argument("grid must look like HxW with positive sides, got '" + text +
                                "'");
  }
  return grid;
}

std::string to_string(GridShape grid) {
  return std::to_string(grid.rows) + "x" + std::to_string(grid.cols);
}

void TokenLayout::validate() const {
  if (!(visual_start < visual_end)) {
    throw std::invalid_argument("visual span must be non-empty (start < end)");
  }
  if (visual_end > total_tokens) {
    throw std::invalid_argument("visual span end exceeds total token count");
  }
  if (grid.rows == 0 || grid.cols == 0) {
    throw std::invalid_argument("grid sides must be positive");
  }
  if (grid.cells() != visual_count()) {
    throw std::invalid_argument("grid " + to_string(grid) + " does not cover visual span of " +
                                std::to_string(visual_count()) + " tokens");
  }
  if (n_heads == 0) throw std::invalid_argument("head count must be positive");
  if (n_layers == 0) throw std::invalid_argument("layer count must be positive");
}

StepAttention::StepAttention(std::size_t step_index, std::size_t n_layers, std::size_t n_heads,
                             std::size_t n_tokens)
    : StepAttention(step_index, n_layers, n_heads, n_tokens,
                    std::vector<double>(n_layers * n_heads * n_tokens, 0.0)) {}

StepAttention::StepAttention(std::size_t step_index, std::size_t n_layers, std::size_t n_heads,
                             std::size_t n_tokens, std::vector<double> weights)
    : step_index_(step_index),
      n_layers_(n_layers),
      n_heads_(n_heads),
      n_tokens_(n_tokens),
      weights_(std::move(weights)) {
  if (weights_.size() != n_layers_ * n_heads_ * n_tokens_) {
    throw std::invalid_argument("weight buffer size does not match layers x heads x tokens");
  }
}

std::span<const double> StepAttention::row(std::size_t layer, std::size_t head) const {
  if (layer >= n_layers_ || head >= n_heads_) throw std::out_of_range("row index out of range");
  return {weights_.data() + (layer * n_heads_ + head) * n_tokens_, n_tokens_};
}

std::span<double> StepAttention::row(std::size_t layer, std::size_t head) {
  if (layer >= n_layers_ || head >= n_heads_) throw std::out_of_range("row index out of range");
  return {weights_.data() + (layer * n_heads_ + head) * n_tokens_, n_tokens_};
}

void AttentionTrace::validate() const {
  layout.validate();
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const auto& s = steps[i];
    if (s.step_index() != i + 1) {
      throw std::invalid_argument("step indices must run 1..T contiguously; position " +
                                  std::to_string(i) + " has index " +
                                  std::to_string(s.step_index()));
    }
    if (s.n_layers() != layout.n_layers || s.n_heads() != layout.n_heads ||
        s.n_tokens() != layout.total_tokens) {
      throw std::invalid_argument("step " + std::to_string(i + 1) +
                                  " does not match the trace layout dimensions");
    }
  }
}

GridDistribution::GridDistribution(GridShape grid, std::vector<double> mass)
    : grid_(grid), mass_(std::move(mass)) {
  if (mass_.size() != grid_.cells() || mass_.empty()) {
    throw std::invalid_argument("distribution size does not match grid " + to_string(grid_));
  }
  double total = 0.0;
  for (double m : mass_) {
    if (!(m >= 0.0) || !std::isfinite(m)) {
      throw std::invalid_argument("distribution entries must be finite and nonnegative");
    }
    total += m;
  }
  if (std::abs(total - 1.0) > kDistributionTolerance) {
    throw std::invalid_argument("distribution must sum to 1, got " + std::to_string(total));
  }
}

GridDistribution GridDistribution::normalized(GridShape grid, std::vector<double> weights) {
  double total = 0.0;
  for (double& w : weights) {
    if (!(w >= 0.0)) w = 0.0;
    total += w;
  }
  if (!(total > 0.0) || !std::isfinite(total)) {
    throw DegenerateAttention("degenerate visual attention");
  }
  for (double& w : weights) w /= total;
  return GridDistribution(grid, std::move(weights));
}

GridDistribution GridDistribution::point_mass(GridShape grid, GridCell cell) {
  std::vector<double> mass(grid.cells(), 0.0);
  mass.at(cell.row * grid.cols + cell.col) = 1.0;
  return GridDistribution(grid, std::move(mass));
}

GridDistribution GridDistribution::uniform(GridShape grid) {
  return normalized(grid, std::vector<double>(grid.cells(), 1.0));
}

std::vector<double> head_average(const StepAttention& step, std::size_t layer) {
  if (layer >= step.n_layers()) {
    throw std::out_of_range("layer " + std::to_string(layer) + " out of range (" +
                            std::to_string(step.n_layers()) + " layers)");
  }
  std::vector<double> out(step.n_tokens(), 0.0);
  for (std::size_t h = 0; h < step.n_heads(); ++h) {
    const auto row = step.row(layer, h);
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += row[j];
  }
  const double inv = 1.0 / static_cast<double>(step.n_heads());
  for (double& v : out) v *= inv;
  return out;
}

GridDistribution visual_slice_normalized(const StepAttention& step, const TokenLayout& layout,
                                         std::size_t layer) {
  if (layer >= step.n_layers()) {
    throw std::out_of_range("layer " + std::to_string(layer) + " out of range");
  }
  if (layout.visual_end > step.n_tokens()) {
    throw std::invalid_argument("visual span exceeds step token count");
  }
  std::vector<double> visual(layout.visual_count(), 0.0);
  for (std::size_t h = 0; h < step.n_heads(); ++h) {
    const auto row = step.row(layer, h);
    for (std::size_t k = 0; k < visual.size(); ++k) visual[k] += row[layout.visual_start + k];
  }
  return GridDistribution::normalized(layout.grid, std::move(visual));
}

void normalize_in_place(std::span<double> values) {
  const double total = std::accumulate(values.begin(), values.end(), 0.0);
  if (!(total > 0.0) || !std::isfinite(total)) {
    throw DegenerateAttention("cannot normalize a row with non-positive sum");
  }
  for (double& v : values) v /= total;
}

StepAttention renormalize_rows(const StepAttention& step) {
  StepAttention out = step;
  for (std::size_t l = 0; l < out.n_layers(); ++l) {
    for (std::size_t h = 0; h < out.n_heads(); ++h) normalize_in_place(out.row(l, h));
  }
  return out;
}

RowCheckResult check_rows(const StepAttention& step) {
  RowCheckResult result;
  for (std::size_t l = 0; l < step.n_layers(); ++l) {
    for (std::size_t h = 0; h < step.n_heads(); ++h) {
      double sum = 0.0;
      for (double w : step.row(l, h)) {
        if (!std::isfinite(w) || w < 0.0 || w > 1.0) result.invalid_weight = true;
        sum += w;
      }
      const double dev = std::isfinite(sum) ? std::abs(sum - 1.0) : HUGE_VAL;
      if (dev > result.worst_deviation) {
        result.worst_deviation = dev;
        result.worst_layer = l;
        result.worst_head = h;
      }
    }
  }
  if (result.invalid_weight || result.worst_deviation > kRowSumRejectTolerance) {
    result.status = RowCheck::reject;
  } else if (result.worst_deviation > kRowSumWarnTolerance) {
    result.status = RowCheck::warn;
  }
  return result;
}

}  // namespace ive
