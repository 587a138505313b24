// Attention data model shared by every other part of the toolkit.
//
// A decoding step carries one attention row per (layer, head) over all N input
// tokens. A contiguous sub-range of those tokens is the image: it maps onto an
// h x w patch grid in row-major order. Weights are held as doubles no matter
// what precision they were recorded at.

#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ive {

/// Rows whose sum drifts further than this from 1 produce an ingest warning.
inline constexpr double kRowSumWarnTolerance = 1e-4;
/// Rows whose sum drifts further than this from 1 are rejected.
inline constexpr double kRowSumRejectTolerance = 1e-2;
/// Tolerance used when checking that a GridDistribution sums to one.
inline constexpr double kDistributionTolerance = 1e-9;

/// Raised when the visual slice of an attention row carries no mass.
class DegenerateAttention : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GridShape {
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t cells() const { return rows * cols; }
  bool operator==(const GridShape&) const = default;
};

/// Parses "HxW" (e.g. "24x24"). Throws std::invalid_argument on malformed input.
GridShape parse_grid(const std::string& text);
std::string to_string(GridShape grid);

struct GridCell {
  std::size_t row = 0;
  std::size_t col = 0;
  bool operator==(const GridCell&) const = default;
};

inline GridCell cell_of(GridShape grid, std::size_t offset) {
  return {offset / grid.cols, offset % grid.cols};
}

struct TokenLayout {
  std::size_t total_tokens = 0;
  std::size_t visual_start = 0;
  std::size_t visual_end = 0;
  GridShape grid;
  std::size_t n_heads = 1;
  std::size_t n_layers = 1;

  std::size_t visual_count() const { return visual_end - visual_start; }

  /// Throws std::invalid_argument naming the first violated constraint.
  void validate() const;

  bool operator==(const TokenLayout&) const = default;
};

/// Attention of one decoding step: weights[layer][head][token], flattened.
class StepAttention {
 public:
  StepAttention() = default;
  StepAttention(std::size_t step_index, std::size_t n_layers, std::size_t n_heads,
                std::size_t n_tokens);
  StepAttention(std::size_t step_index, std::size_t n_layers, std::size_t n_heads,
                std::size_t n_tokens, std::vector<double> weights);

  std::size_t step_index() const { return step_index_; }
  void set_step_index(std::size_t t) { step_index_ = t; }
  std::size_t n_layers() const { return n_layers_; }
  std::size_t n_heads() const { return n_heads_; }
  std::size_t n_tokens() const { return n_tokens_; }

  std::span<const double> row(std::size_t layer, std::size_t head) const;
  std::span<double> row(std::size_t layer, std::size_t head);

  const std::vector<double>& weights() const { return weights_; }
  std::vector<double>& weights() { return weights_; }

  bool same_shape(const StepAttention& other) const {
    return n_layers_ == other.n_layers_ && n_heads_ == other.n_heads_ &&
           n_tokens_ == other.n_tokens_;
  }

  bool operator==(const StepAttention&) const = default;

 private:
  std::size_t step_index_ = 1;
  std::size_t n_layers_ = 0;
  std::size_t n_heads_ = 0;
  std::size_t n_tokens_ = 0;
  std::vector<double> weights_;
};

struct AttentionTrace {
  TokenLayout layout;
  std::vector<StepAttention> steps;
  std::map<std::string, std::string> meta;

  /// Checks layout, step numbering and per-step dimensions. Row sums are not
  /// inspected here; see check_rows().
  void validate() const;

  bool operator==(const AttentionTrace&) const = default;
};

/// Nonnegative mass over a patch grid summing to one.
class GridDistribution {
 public:
  GridDistribution() = default;
  /// Takes mass as-is; throws std::invalid_argument unless it is a valid
  /// distribution within kDistributionTolerance.
  GridDistribution(GridShape grid, std::vector<double> mass);

  /// Divides by the total. Throws DegenerateAttention if the total is not positive.
  static GridDistribution normalized(GridShape grid, std::vector<double> weights);
  static GridDistribution point_mass(GridShape grid, GridCell cell);
  static GridDistribution uniform(GridShape grid);

  GridShape grid() const { return grid_; }
  std::span<const double> mass() const { return mass_; }
  double at(GridCell cell) const { return mass_[cell.row * grid_.cols + cell.col]; }
  std::size_t size() const { return mass_.size(); }

  bool operator==(const GridDistribution&) const = default;

 private:
  GridShape grid_;
  std::vector<double> mass_;
};

/// Mean over heads of one layer's rows; result spans all N tokens.
std::vector<double> head_average(const StepAttention& step, std::size_t layer);

/// Head-summed attention restricted to the visual span and renormalized.
/// Throws DegenerateAttention("degenerate visual attention") on zero mass.
GridDistribution visual_slice_normalized(const StepAttention& step, const TokenLayout& layout,
                                         std::size_t layer);

/// Divides every (layer, head) row by its sum. Throws DegenerateAttention on a
/// row that sums to zero.
StepAttention renormalize_rows(const StepAttention& step);

/// In-place counterpart of renormalize_rows for one row.
void normalize_in_place(std::span<double> values);

enum class RowCheck { ok, warn, reject };

struct RowCheckResult {
  RowCheck status = RowCheck::ok;
  double worst_deviation = 0.0;  // max |sum - 1| over rows
  std::size_t worst_layer = 0;
  std::size_t worst_head = 0;
  bool invalid_weight = false;  // negative, > 1 or non-finite entry seen
};

/// Classifies row sums against kRowSumWarnTolerance / kRowSumRejectTolerance.
RowCheckResult check_rows(const StepAttention& step);

}  // namespace ive
