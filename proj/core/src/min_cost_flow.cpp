#include "ive/min_cost_flow.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <queue>
#include <string>
#include <utility>

namespace ive {

namespace {
// Reduced costs within this of zero count as admissible. Costs used by the
// transport code are small integers, so this only absorbs potential rounding.
constexpr double kCostTolerance = 1e-9;
}  // namespace

MinCostFlow::MinCostFlow(std::size_t nodes) : supply_(nodes, 0.0), adjacency_(nodes) {}

std::size_t MinCostFlow::push_arc(std::size_t from, std::size_t to, double capacity,
                                  double cost) {
  const std::size_t id = arcs_.size();
  arcs_.push_back({to, capacity, cost});
  arcs_.push_back({from, 0.0, -cost});
  adjacency_[from].push_back(id);
  adjacency_[to].push_back(id + 1);
  return id / 2;
}

std::size_t MinCostFlow::add_arc(std::size_t from, std::size_t to, double capacity,
                                 double cost) {
  if (from >= node_count() || to >= node_count()) {
    throw std::out_of_range("arc endpoint out of range");
  }
  if (!(cost >= 0.0)) throw std::invalid_argument("arc costs must be nonnegative");
  if (!(capacity >= 0.0)) throw std::invalid_argument("arc capacity must be nonnegative");
  ++user_arcs_;
  return push_arc(from, to, capacity, cost);
}

void MinCostFlow::set_supply(std::size_t node, double supply) {
  if (node >= node_count()) throw std::out_of_range("supply node out of range");
  supply_[node] = supply;
}

double MinCostFlow::flow(std::size_t arc) const {
  if (arc >= user_arcs_) throw std::out_of_range("arc id out of range");
  return arcs_[2 * arc + 1].residual;
}

bool MinCostFlow::admissible(std::size_t from, const Arc& arc) const {
  return arc.residual > residual_epsilon_ &&
         arc.cost + potential_[from] - potential_[arc.to] <= kCostTolerance;
}

bool MinCostFlow::shortest_paths(std::size_t source, std::size_t sink) {
  const std::size_t n = adjacency_.size();
  distance_.assign(n, kUnbounded);
  using Item = std::pair<double, std::size_t>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
  distance_[source] = 0.0;
  heap.emplace(0.0, source);
  while (!heap.empty()) {
    const auto [d, u] = heap.top();
    heap.pop();
    if (d > distance_[u]) continue;
    for (std::size_t id : adjacency_[u]) {
      const Arc& arc = arcs_[id];
      if (arc.residual <= residual_epsilon_) continue;
      const double reduced = std::max(0.0, arc.cost + potential_[u] - potential_[arc.to]);
      const double nd = d + reduced;
      if (nd < distance_[arc.to]) {
        distance_[arc.to] = nd;
        heap.emplace(nd, arc.to);
      }
    }
  }
  if (distance_[sink] == kUnbounded) return false;
  const double cap = distance_[sink];
  for (std::size_t v = 0; v < n; ++v) potential_[v] += std::min(distance_[v], cap);
  return true;
}

bool MinCostFlow::build_levels(std::size_t source, std::size_t sink) {
  level_.assign(adjacency_.size(), -1);
  std::queue<std::size_t> queue;
  level_[source] = 0;
  queue.push(source);
  while (!queue.empty()) {
    const std::size_t u = queue.front();
    queue.pop();
    for (std::size_t id : adjacency_[u]) {
      const Arc& arc = arcs_[id];
      if (level_[arc.to] < 0 && admissible(u, arc)) {
        level_[arc.to] = level_[u] + 1;
        queue.push(arc.to);
      }
    }
  }
  return level_[sink] >= 0;
}

double MinCostFlow::augment(std::size_t node, std::size_t sink, double limit) {
  if (node == sink) return limit;
  auto& edges = adjacency_[node];
  for (std::size_t& i = cursor_[node]; i < edges.size(); ++i) {
    const std::size_t id = edges[i];
    Arc& arc = arcs_[id];
    if (level_[arc.to] != level_[node] + 1 || !admissible(node, arc)) continue;
    const double pushed = augment(arc.to, sink, std::min(limit, arc.residual));
    if (pushed > 0.0) {
      arc.residual -= pushed;
      arcs_[id ^ 1].residual += pushed;
      return pushed;
    }
  }
  return 0.0;
}

MinCostFlow::Result MinCostFlow::solve(double slack) {
  if (solved_) throw std::logic_error("MinCostFlow::solve may only be called once");
  solved_ = true;
  const std::size_t user_nodes = node_count();
  const std::size_t source = user_nodes;
  const std::size_t sink = user_nodes + 1;
  adjacency_.resize(user_nodes + 2);

  double total_supply = 0.0;
  double total_demand = 0.0;
  for (std::size_t v = 0; v < user_nodes; ++v) {
    if (supply_[v] > 0.0) {
      total_supply += supply_[v];
      push_arc(source, v, supply_[v], 0.0);
    } else if (supply_[v] < 0.0) {
      total_demand -= supply_[v];
      push_arc(v, sink, -supply_[v], 0.0);
    }
  }
  if (std::abs(total_supply - total_demand) > slack) {
    throw InfeasibleFlow("supplies do not balance: " + std::to_string(total_supply) + " vs " +
                         std::to_string(total_demand));
  }

  residual_epsilon_ = 1e-15 * std::max(1.0, total_supply);
  potential_.assign(adjacency_.size(), 0.0);
  Result result;
  while (total_supply - result.routed > slack && shortest_paths(source, sink)) {
    ++result.phases;
    while (build_levels(source, sink)) {
      cursor_.assign(adjacency_.size(), 0);
      for (;;) {
        const double pushed = augment(source, sink, kUnbounded);
        result.routed += pushed;
        if (!(pushed > residual_epsilon_)) break;
      }
    }
  }
  if (total_supply - result.routed > slack) {
    throw InfeasibleFlow("could not route " + std::to_string(total_supply - result.routed) +
                         " units of supply");
  }
  for (std::size_t k = 0; k < user_arcs_; ++k) {
    result.cost += arcs_[2 * k + 1].residual * arcs_[2 * k].cost;
  }
  return result;
}

}  // namespace ive
