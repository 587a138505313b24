#include "ive/transport.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "ive/min_cost_flow.hpp"

namespace ive {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
// Feasibility slack of the flow solver, in units of probability mass.
constexpr double kFlowSlack = 1e-9;
constexpr double kOverRelaxation = 1.65;
constexpr double kEpsDecay = 0.8;
// A final stage whose best violation has not halved within this many
// iterations switches to Newton steps.
constexpr std::size_t kStallWindow = 50;
// Largest potential change per Newton step, in units of eps.
constexpr double kNewtonMaxStep = 30.0;
// Scaled Hessian eigenvalues below this are treated as numerically null.
constexpr double kNewtonNullEigen = 1e-10;
// The dense eigensolve is only attempted up to this many potentials.
constexpr std::size_t kNewtonMaxVariables = 1600;

void require_same_grid(const GridDistribution& p, const GridDistribution& q) {
  if (p.grid() != q.grid()) {
    throw std::invalid_argument("distributions live on different grids: " + to_string(p.grid()) +
                                " vs " + to_string(q.grid()));
  }
}

std::vector<double> floored(const GridDistribution& d, double floor) {
  std::vector<double> mass(d.mass().begin(), d.mass().end());
  double total = 0.0;
  for (double& m : mass) {
    if (m < floor) m = 0.0;
    total += m;
  }
  if (!(total > 0.0)) {
    throw DegenerateAttention("all mass fell below the transport mass floor");
  }
  for (double& m : mass) m /= total;
  return mass;
}

// log(sum_i exp(v_i)) over a strided sequence, tolerant of -inf entries.
template <typename Get>
double log_sum_exp(std::size_t n, Get&& get) {
  double top = kNegInf;
  for (std::size_t i = 0; i < n; ++i) top = std::max(top, get(i));
  if (top == kNegInf) return kNegInf;
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += std::exp(get(i) - top);
  return top + std::log(sum);
}

// out[cell] = log sum_{cell'} exp(in[cell'] - C(cell, cell') / eps), using the
// row/column factorization of the Manhattan kernel.
class SeparableKernel {
 public:
  SeparableKernel(GridShape grid, double eps) : grid_(grid) {
    const std::size_t span = std::max(grid.rows, grid.cols);
    step_cost_.resize(span);
    for (std::size_t d = 0; d < span; ++d) step_cost_[d] = static_cast<double>(d) / eps;
    scratch_.resize(grid.cells());
  }

  void apply(const std::vector<double>& in, std::vector<double>& out) {
    const std::size_t h = grid_.rows;
    const std::size_t w = grid_.cols;
    for (std::size_t r = 0; r < h; ++r) {
      const double* row = in.data() + r * w;
      for (std::size_t c = 0; c < w; ++c) {
        scratch_[r * w + c] = log_sum_exp(w, [&](std::size_t c2) {
          return row[c2] - step_cost_[c > c2 ? c - c2 : c2 - c];
        });
      }
    }
    out.resize(in.size());
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t c = 0; c < w; ++c) {
        out[r * w + c] = log_sum_exp(h, [&](std::size_t r2) {
          return scratch_[r2 * w + c] - step_cost_[r > r2 ? r - r2 : r2 - r];
        });
      }
    }
  }

 private:
  GridShape grid_;
  std::vector<double> step_cost_;
  std::vector<double> scratch_;
};

// One damped Newton step on the entropic dual, with potentials in units of
// eps: maximizes sum p f + sum q g - sum exp(f_a + g_b - C_ab / eps). At small
// eps the plan splits into blocks that are coupled only through entries of
// size ~exp(-1/eps); Sinkhorn moves their relative potentials at that rate.
// Those directions form a numerically null eigenspace of the Hessian, so the
// step is Newton on the resolved eigenspace plus a long gradient step on the
// null one, capped and then backtracked on the dual objective. Returns false
// when no ascent step was found.
bool newton_step(GridShape grid, double eps, const std::vector<double>& pm,
                 const std::vector<double>& qm, std::vector<double>& f, std::vector<double>& g) {
  const std::size_t n = grid.cells();
  std::vector<std::size_t> rows, cols;
  for (std::size_t k = 0; k < n; ++k) {
    if (f[k] != kNegInf) rows.push_back(k);
    if (g[k] != kNegInf) cols.push_back(k);
  }
  const auto nr = static_cast<Eigen::Index>(rows.size());
  const auto nc = static_cast<Eigen::Index>(cols.size());
  if (nr == 0 || nc == 0 || rows.size() + cols.size() > kNewtonMaxVariables) return false;

  Eigen::MatrixXd cost(nr, nc);
  for (Eigen::Index i = 0; i < nr; ++i) {
    const GridCell ca = cell_of(grid, rows[i]);
    for (Eigen::Index j = 0; j < nc; ++j) cost(i, j) = manhattan_distance(ca, cell_of(grid, cols[j])) / eps;
  }
  Eigen::VectorXd x(nr + nc), mass(nr + nc);
  for (Eigen::Index i = 0; i < nr; ++i) {
    x(i) = f[rows[i]];
    mass(i) = pm[rows[i]];
  }
  for (Eigen::Index j = 0; j < nc; ++j) {
    x(nr + j) = g[cols[j]];
    mass(nr + j) = qm[cols[j]];
  }
  auto plan = [&](const Eigen::VectorXd& v) -> Eigen::MatrixXd {
    return ((v.head(nr).replicate(1, nc) + v.tail(nc).transpose().replicate(nr, 1)) - cost)
        .array()
        .exp()
        .matrix();
  };
  auto dual = [&](const Eigen::VectorXd& v) { return mass.dot(v) - plan(v).sum(); };

  const Eigen::MatrixXd P = plan(x);
  Eigen::VectorXd marginals(nr + nc);
  marginals.head(nr) = P.rowwise().sum();
  marginals.tail(nc) = P.colwise().sum().transpose();
  if (!(marginals.array() > 0.0).all()) return false;
  const Eigen::VectorXd grad = mass - marginals;

  // Jacobi-scaled Hessian of the negated dual.
  const Eigen::VectorXd scale = marginals.cwiseSqrt().cwiseInverse();
  Eigen::MatrixXd hessian = Eigen::MatrixXd::Zero(nr + nc, nr + nc);
  hessian.diagonal().setOnes();
  hessian.topRightCorner(nr, nc) = scale.head(nr).asDiagonal() * P * scale.tail(nc).asDiagonal();
  hessian.bottomLeftCorner(nc, nr) = hessian.topRightCorner(nr, nc).transpose();
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(hessian);
  if (eig.info() != Eigen::Success) return false;
  const Eigen::VectorXd scaled_grad = scale.cwiseProduct(grad);
  const Eigen::VectorXd coeff = eig.eigenvectors().transpose() * scaled_grad;
  Eigen::VectorXd weights(coeff.size());
  for (Eigen::Index k = 0; k < coeff.size(); ++k) {
    const double lambda = eig.eigenvalues()(k);
    weights(k) = coeff(k) / std::max(lambda, kNewtonNullEigen);
  }
  Eigen::VectorXd step = scale.cwiseProduct(eig.eigenvectors() * weights);
  if (!step.allFinite()) return false;
  const double largest = step.cwiseAbs().maxCoeff();
  if (largest > kNewtonMaxStep) step *= kNewtonMaxStep / largest;
  const double slope = grad.dot(step);
  if (!(slope > 0.0)) return false;

  const double base = dual(x);
  for (double t = 1.0; t > 1e-12; t *= 0.5) {
    const Eigen::VectorXd trial = x + t * step;
    const double value = dual(trial);
    if (std::isfinite(value) && value >= base + 1e-4 * t * slope) {
      for (Eigen::Index i = 0; i < nr; ++i) f[rows[i]] = trial(i);
      for (Eigen::Index j = 0; j < nc; ++j) g[cols[j]] = trial(nr + j);
      return true;
    }
  }
  return false;
}

}  // namespace

std::string to_string(OtMethod method) {
  switch (method) {
    case OtMethod::automatic: return "auto";
    case OtMethod::exact_flow: return "exact-flow";
    case OtMethod::sinkhorn: return "sinkhorn";
  }
  return "unknown";
}

OtMethod parse_ot_method(const std::string& text) {
  if (text == "auto") return OtMethod::automatic;
  if (text == "exact" || text == "exact-flow") return OtMethod::exact_flow;
  if (text == "sinkhorn") return OtMethod::sinkhorn;
  throw std::invalid_argument("unknown transport method '" + text + "'");
}

void OtConfig::validate() const {
  if (!(sinkhorn_regularization > 0.0) || !std::isfinite(sinkhorn_regularization)) {
    throw std::invalid_argument("sinkhorn regularization must be positive");
  }
  if (!(sinkhorn_tolerance > 0.0)) throw std::invalid_argument("sinkhorn tolerance must be positive");
  if (sinkhorn_max_iterations == 0) {
    throw std::invalid_argument("sinkhorn iteration cap must be positive");
  }
  if (!(mass_floor >= 0.0) || mass_floor >= 1.0) {
    throw std::invalid_argument("mass floor must lie in [0, 1)");
  }
}

OtMethod OtConfig::method_for(GridShape grid) const {
  if (method != OtMethod::automatic) return method;
  return grid.cells() <= kExactCellLimit ? OtMethod::exact_flow : OtMethod::sinkhorn;
}

void to_json(nlohmann::json& j, const OtConfig& cfg) {
  j = nlohmann::json{{"method", to_string(cfg.method)},
                     {"sinkhorn_regularization", cfg.sinkhorn_regularization},
                     {"sinkhorn_tolerance", cfg.sinkhorn_tolerance},
                     {"sinkhorn_max_iterations", cfg.sinkhorn_max_iterations},
                     {"mass_floor", cfg.mass_floor}};
}

SinkhornDidNotConverge::SinkhornDidNotConverge(std::size_t iterations, double violation)
    : std::runtime_error("sinkhorn did not converge after " + std::to_string(iterations) +
                         " iterations (marginal violation " + std::to_string(violation) + ")"),
      iterations_(iterations),
      violation_(violation) {}

CostMatrix manhattan_cost(GridShape grid) {
  CostMatrix cost;
  cost.cells = grid.cells();
  cost.values.resize(cost.cells * cost.cells);
  for (std::size_t a = 0; a < cost.cells; ++a) {
    for (std::size_t b = 0; b < cost.cells; ++b) {
      cost.values[a * cost.cells + b] = manhattan_distance(cell_of(grid, a), cell_of(grid, b));
    }
  }
  return cost;
}

double w1_exact(const GridDistribution& p, const GridDistribution& q, const OtConfig& cfg) {
  require_same_grid(p, q);
  const GridShape grid = p.grid();
  const auto pm = floored(p, cfg.mass_floor);
  const auto qm = floored(q, cfg.mass_floor);

  MinCostFlow flow(grid.cells());
  bool any = false;
  for (std::size_t k = 0; k < grid.cells(); ++k) {
    const double s = pm[k] - qm[k];
    if (s != 0.0) {
      flow.set_supply(k, s);
      any = true;
    }
  }
  if (!any) return 0.0;

  for (std::size_t r = 0; r < grid.rows; ++r) {
    for (std::size_t c = 0; c < grid.cols; ++c) {
      const std::size_t k = r * grid.cols + c;
      if (c + 1 < grid.cols) {
        flow.add_arc(k, k + 1, MinCostFlow::kUnbounded, 1.0);
        flow.add_arc(k + 1, k, MinCostFlow::kUnbounded, 1.0);
      }
      if (r + 1 < grid.rows) {
        flow.add_arc(k, k + grid.cols, MinCostFlow::kUnbounded, 1.0);
        flow.add_arc(k + grid.cols, k, MinCostFlow::kUnbounded, 1.0);
      }
    }
  }
  return flow.solve(kFlowSlack).cost;
}

double w1_sinkhorn(const GridDistribution& p, const GridDistribution& q, const OtConfig& cfg) {
  cfg.validate();
  require_same_grid(p, q);
  const GridShape grid = p.grid();
  const std::size_t n = grid.cells();
  const auto pm = floored(p, cfg.mass_floor);
  const auto qm = floored(q, cfg.mass_floor);

  std::vector<double> log_p(n), log_q(n);
  for (std::size_t k = 0; k < n; ++k) {
    log_p[k] = pm[k] > 0.0 ? std::log(pm[k]) : kNegInf;
    log_q[k] = qm[k] > 0.0 ? std::log(qm[k]) : kNegInf;
  }

  // Potentials are stored as f/eps, g/eps of the current stage and rescaled
  // when eps shrinks, so the warm start carries over between stages.
  // Updates are over-relaxed; a stage drops back to plain Sinkhorn once the
  // marginal violation doubles its best value. Intermediate stages only need a
  // rough warm start, so they stop at a loose tolerance.
  std::vector<double> f(n, 0.0), g(n, 0.0), lse(n);
  const double target = cfg.sinkhorn_regularization;
  double eps = std::max(target, static_cast<double>(std::max(grid.rows, grid.cols)));
  std::size_t iterations = 0;
  double violation = std::numeric_limits<double>::infinity();

  auto relax = [](double old, double fresh, double omega) {
    if (fresh == kNegInf) return kNegInf;
    return old == kNegInf ? fresh : (1.0 - omega) * old + omega * fresh;
  };

  for (;;) {
    const bool final_stage = eps <= target;
    const double stage_tolerance = final_stage ? cfg.sinkhorn_tolerance
                                               : std::max(cfg.sinkhorn_tolerance, 1e-3);
    SeparableKernel kernel(grid, eps);
    double omega = kOverRelaxation;
    double best = std::numeric_limits<double>::infinity();
    double checkpoint = best;
    bool newton = false;
    for (std::size_t stage_iterations = 1;; ++stage_iterations) {
      if (iterations >= cfg.sinkhorn_max_iterations) {
        throw SinkhornDidNotConverge(iterations, violation);
      }
      ++iterations;
      if (final_stage && stage_iterations % kStallWindow == 0) {
        newton = newton || best > 0.5 * checkpoint;
        checkpoint = best;
      }
      if (newton) {
        omega = 1.0;
        if (!newton_step(grid, eps, pm, qm, f, g)) newton = false;
      }
      kernel.apply(g, lse);
      for (std::size_t k = 0; k < n; ++k) {
        f[k] = relax(f[k], log_p[k] == kNegInf ? kNegInf : log_p[k] - lse[k], omega);
      }
      // Column marginals of the current plan, then the g-update.
      kernel.apply(f, lse);
      violation = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        const double col = g[k] == kNegInf ? 0.0 : std::exp(g[k] + lse[k]);
        violation += std::abs(col - qm[k]);
      }
      if (violation > 2.0 * best) omega = 1.0;
      best = std::min(best, violation);
      for (std::size_t k = 0; k < n; ++k) {
        g[k] = relax(g[k], log_q[k] == kNegInf ? kNegInf : log_q[k] - lse[k], omega);
      }
      if (violation < stage_tolerance) break;
    }
    if (final_stage) break;
    const double next = std::max(target, eps * kEpsDecay);
    const double ratio = eps / next;
    for (std::size_t k = 0; k < n; ++k) {
      if (f[k] != kNegInf) f[k] *= ratio;
      if (g[k] != kNegInf) g[k] *= ratio;
    }
    eps = next;
  }

  // Evaluate the converged plan on the unregularized cost.
  double cost = 0.0;
  const double inv_eps = 1.0 / eps;
  for (std::size_t a = 0; a < n; ++a) {
    if (f[a] == kNegInf) continue;
    const GridCell ca = cell_of(grid, a);
    for (std::size_t b = 0; b < n; ++b) {
      if (g[b] == kNegInf) continue;
      const double c = manhattan_distance(ca, cell_of(grid, b));
      cost += std::exp(f[a] + g[b] - c * inv_eps) * c;
    }
  }
  return cost;
}

double wasserstein1(const GridDistribution& p, const GridDistribution& q, const OtConfig& cfg) {
  return cfg.method_for(p.grid()) == OtMethod::sinkhorn ? w1_sinkhorn(p, q, cfg)
                                                        : w1_exact(p, q, cfg);
}

}  // namespace ive
