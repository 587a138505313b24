// Min-cost flow with real-valued supplies and capacities.
//
// Primal-dual method: a Dijkstra pass over reduced costs updates node
// potentials, then a blocking flow (Dinic) saturates the zero-reduced-cost
// subgraph. Every augmentation follows a shortest residual path, so this is
// successive shortest paths with whole layers of paths pushed per phase. When
// arc costs are integers the number of phases is bounded by the longest
// shortest path.

#pragma once

#include <cstddef>
#include <limits>
#include <stdexcept>
#include <vector>

namespace ive {

class InfeasibleFlow : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class MinCostFlow {
 public:
  static constexpr double kUnbounded = std::numeric_limits<double>::infinity();

  explicit MinCostFlow(std::size_t nodes);

  std::size_t node_count() const { return supply_.size(); }

  /// Adds a directed arc; cost must be nonnegative. Returns the arc id.
  std::size_t add_arc(std::size_t from, std::size_t to, double capacity, double cost);

  /// Positive supply is a source, negative a sink. Supplies must balance to
  /// within the slack passed to solve().
  void set_supply(std::size_t node, double supply);

  struct Result {
    double cost = 0.0;
    double routed = 0.0;
    std::size_t phases = 0;
  };

  /// Routes all supply at minimum cost. Single use. Throws InfeasibleFlow if more than
  /// `slack` units of supply cannot reach a sink.
  Result solve(double slack = 1e-9);

  /// Flow on an arc returned by add_arc, valid after solve().
  double flow(std::size_t arc) const;

 private:
  struct Arc {
    std::size_t to;
    double residual;
    double cost;
  };

  std::size_t push_arc(std::size_t from, std::size_t to, double capacity, double cost);
  bool shortest_paths(std::size_t source, std::size_t sink);
  bool build_levels(std::size_t source, std::size_t sink);
  double augment(std::size_t node, std::size_t sink, double limit);
  bool admissible(std::size_t from, const Arc& arc) const;

  std::vector<double> supply_;
  std::vector<Arc> arcs_;  // arc 2k is forward, 2k+1 its reverse
  std::vector<std::vector<std::size_t>> adjacency_;
  std::size_t user_arcs_ = 0;

  std::vector<double> potential_;
  std::vector<double> distance_;
  std::vector<int> level_;
  std::vector<std::size_t> cursor_;
  double residual_epsilon_ = 0.0;
  bool solved_ = false;
};

}  // namespace ive
