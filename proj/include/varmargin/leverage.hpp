#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "varmargin/error.hpp"
#include "varmargin/linalg.hpp"
#include "varmargin/normal.hpp"
#include "varmargin/risk.hpp"
#include "varmargin/scenario.hpp"

namespace varmargin {

// A client puts a fraction w_k of own capital into asset k and borrows so the
// position is l_k * w_k. With R the vector of one-period simple returns, the
// end-of-period net value per lent unit is Delta = (l_w' R + 1) / (l_w' 1),
// l_w = (l_k w_k). Every bound below keeps Delta's downside under control.

enum class BoundStatus { bounded, rejected, unbounded };

constexpr std::string_view to_string(BoundStatus s) {
  switch (s) {
    case BoundStatus::bounded: return "bounded";
    case BoundStatus::rejected: return "rejected";
    case BoundStatus::unbounded: return "unbounded";
  }
  return "bounded";
}

/// Maximum leverage factor verdict. `value` holds the computed bound for
/// bounded and rejected verdicts (a rejected bound is below 1) and +inf when
/// unbounded.
struct LeverageBound {
  BoundStatus status = BoundStatus::bounded;
  double value = 0.0;

  static LeverageBound from_value(double l) {
    if (!std::isfinite(l)) return {BoundStatus::unbounded, std::numeric_limits<double>::infinity()};
    return {l >= 1.0 ? BoundStatus::bounded : BoundStatus::rejected, l};
  }
  static LeverageBound unbounded() { return {BoundStatus::unbounded, std::numeric_limits<double>::infinity()}; }
};

struct LeveragedPortfolio {
  std::vector<std::string> asset_ids;
  Vector w;  // fractions of own capital, each > 0
  Vector l;  // leverage factors, each >= 1

  void validate() const {
    require(w.size() == asset_ids.size() && l.size() == asset_ids.size(), ErrorCode::DimensionMismatch,
            "portfolio vectors differ in length");
    for (std::size_t k = 0; k < w.size(); ++k) {
      require(w[k] > 0.0, ErrorCode::InvalidArgument, "weight of " + asset_ids[k] + " must be > 0");
      require(l[k] >= 1.0, ErrorCode::InvalidArgument, "leverage of " + asset_ids[k] + " must be >= 1");
    }
  }

  Vector leveraged_weights() const {
    Vector lw(w.size());
    for (std::size_t k = 0; k < w.size(); ++k) lw[k] = l[k] * w[k];
    return lw;
  }
};

// ---------------------------------------------------------------------------
// Single asset

/// l_max = 1 / (w (h + VaR_alpha(R))).
inline LeverageBound max_leverage_single(const NormalParams& r, double w, TailLevel alpha, double h = 0.0,
                                         std::optional<double> z_override = std::nullopt) {
  require(w > 0.0, ErrorCode::InvalidArgument, "weight must be > 0");
  const double denominator = w * (h + var_normal(r, alpha, z_override));
  if (denominator <= 0.0) return LeverageBound::unbounded();
  return LeverageBound::from_value(1.0 / denominator);
}

/// g(x) = ES_x(R) - VaR_x(R) = sigma (phi(q_{1-x}) / x - q_{1-x}); the drift cancels.
inline double es_var_gap(double sigma, double x) {
  const double z = -normal::quantile(x);
  return sigma * (normal::pdf(z) / x - z);
}

inline constexpr double es_bracket_low = 1e-12;
inline constexpr double es_bracket_high = 0.5;

namespace detail {

/// The bisection below relies on g increasing in x on the bracket.
inline void check_gap_monotone() {
  static const bool ok = [] {
    double previous = es_var_gap(1.0, es_bracket_low);
    for (int i = 1; i <= 96; ++i) {
      const double x = es_bracket_low * std::pow(es_bracket_high / es_bracket_low, i / 96.0);
      const double g = es_var_gap(1.0, x);
      if (!(g > previous)) return false;
      previous = g;
    }
    return true;
  }();
  require(ok, ErrorCode::NoRoot, "ES-VaR gap is not monotone on the bisection bracket");
}

}  // namespace detail

/// Tail probability x* with ES_x*(R) - VaR_x*(R) = h, by bisection on
/// [1e-12, 0.5].
inline double es_tail_probability(double sigma, double h) {
  detail::check_gap_monotone();
  const double g_lo = es_var_gap(sigma, es_bracket_low);
  const double g_hi = es_var_gap(sigma, es_bracket_high);
  if (!(h >= g_lo && h <= g_hi)) {
    throw Error(ErrorCode::NoRoot, "ES-VaR gap spans [" + std::to_string(g_lo) + ", " + std::to_string(g_hi) +
                                       "] on x in [1e-12, 0.5]; threshold " + std::to_string(h) + " is outside");
  }
  double lo = es_bracket_low, hi = es_bracket_high;
  for (int i = 0; i < 200 && hi - lo > 2.0 * std::numeric_limits<double>::epsilon() * hi; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (es_var_gap(sigma, mid) < h) lo = mid;
    else hi = mid;
  }
  return 0.5 * (lo + hi);
}

/// ES-style bound: keep the average loss per lent unit, given a shortfall,
/// at most h. Equivalent to the VaR-style bound at tail level x*.
inline LeverageBound max_leverage_es_single(const NormalParams& r, double w, double h) {
  require(w > 0.0, ErrorCode::InvalidArgument, "weight must be > 0");
  require(h > 0.0, ErrorCode::InvalidArgument, "average-loss threshold must be > 0");
  validate(r);
  if (r.sigma == 0.0) return LeverageBound::unbounded();
  const double x = es_tail_probability(r.sigma, h);
  const double var_x = -normal::quantile(x) * r.sigma - r.mu;
  if (var_x <= 0.0) return LeverageBound::unbounded();
  return LeverageBound::from_value(1.0 / (w * var_x));
}

// ---------------------------------------------------------------------------
// Sequential bound inside a portfolio

namespace detail {

/// Mean and variance of l_w' R as functions of the unknown factor l of one
/// asset: mean(l) = a0 + a1 l, var(l) = c0 + c1 l + c2 l^2; lent(l) = b0 + b1 l
/// is l_w' 1.
struct OneFactorMoments {
  double a0, a1, c0, c1, c2, b0, b1;

  double mean(double l) const { return a0 + a1 * l; }
  double stdev(double l) const { return std::sqrt(std::max(0.0, c0 + l * (c1 + l * c2))); }
  double lent(double l) const { return b0 + b1 * l; }
};

inline OneFactorMoments one_factor_moments(const NormalModel& model, const LeveragedPortfolio& p, std::size_t k) {
  const std::size_t n = model.size();
  require(p.w.size() == n && p.l.size() == n, ErrorCode::DimensionMismatch, "portfolio and model sizes differ");
  require(k < n, ErrorCode::DimensionMismatch, "unknown asset index out of range");
  Vector fixed(n);
  for (std::size_t j = 0; j < n; ++j) fixed[j] = j == k ? 0.0 : p.l[j] * p.w[j];
  const Vector sigma_fixed = model.sigma * fixed;
  const double wk = p.w[k];
  double lent_fixed = 0.0;
  for (double v : fixed) lent_fixed += v;
  return {dot(fixed, model.mu), wk * model.mu[k], dot(fixed, sigma_fixed), 2.0 * wk * sigma_fixed[k],
          wk * wk * model.sigma(k, k), lent_fixed, wk};
}

/// Real roots of a x^2 + b x + c = 0, numerically stable.
inline std::vector<double> quadratic_roots(double a, double b, double c) {
  const double scale = std::max({std::fabs(a), std::fabs(b), std::fabs(c)});
  if (scale == 0.0) return {};
  if (std::fabs(a) <= 1e-14 * scale) {
    if (b == 0.0) return {};
    return {-c / b};
  }
  double disc = b * b - 4.0 * a * c;
  if (disc < 0.0) {
    if (disc > -1e-12 * b * b) disc = 0.0;
    else return {};
  }
  const double t = -0.5 * (b + std::copysign(std::sqrt(disc), b));
  if (t == 0.0) return {0.0};
  return {t / a, c / t};
}

}  // namespace detail

/// Largest factor l for asset `k` such that P(Delta < h) <= alpha with every
/// other factor held at its value in `p`. For h = 0 this is
/// VaR_alpha(l_w' R) <= 1. The constraint is quadratic in l after squaring and
/// is solved exactly.
inline LeverageBound max_leverage_sequential(const NormalModel& model, const LeveragedPortfolio& p, std::size_t k,
                                             TailLevel alpha, double h = 0.0,
                                             std::optional<double> z_override = std::nullopt) {
  validate(model);
  const auto mom = detail::one_factor_moments(model, p, k);
  const double q = upper_quantile(alpha, z_override);
  // Constraint: phi(l) = q s(l) - (1 + mean(l) - h lent(l)) <= 0, convex in l.
  const double rhs0 = 1.0 + mom.a0 - h * mom.b0;
  const double rhs1 = mom.a1 - h * mom.b1;
  auto phi = [&](double l) { return q * mom.stdev(l) - (rhs0 + rhs1 * l); };

  const double slope_at_infinity = q * std::sqrt(std::max(0.0, mom.c2)) - rhs1;
  if (slope_at_infinity < 0.0 || (slope_at_infinity == 0.0 && phi(1e12) <= 0.0)) return LeverageBound::unbounded();

  // q^2 var(l) = (rhs0 + rhs1 l)^2 with rhs0 + rhs1 l >= 0.
  const double qq = q * q;
  const auto roots = detail::quadratic_roots(qq * mom.c2 - rhs1 * rhs1, qq * mom.c1 - 2.0 * rhs0 * rhs1,
                                             qq * mom.c0 - rhs0 * rhs0);
  std::optional<double> upper;
  for (double r : roots) {
    if (!std::isfinite(r) || rhs0 + rhs1 * r < -1e-12 * std::max(1.0, std::fabs(rhs0))) continue;
    if (!upper || r > *upper) upper = r;
  }
  if (!upper) return {BoundStatus::rejected, std::numeric_limits<double>::quiet_NaN()};

  // Newton polish of the root of phi; phi is increasing there.
  double l = *upper;
  for (int i = 0; i < 4; ++i) {
    const double s = mom.stdev(l);
    if (s <= 0.0) break;
    const double slope = q * (0.5 * mom.c1 + mom.c2 * l) / s - rhs1;
    if (!(slope > 0.0)) break;
    const double step = phi(l) / slope;
    if (!std::isfinite(step)) break;
    l -= step;
  }
  return LeverageBound::from_value(l);
}

namespace detail {

/// phi(z)/Phi(z) + z for z = -u, stable for large u.
inline double tail_excess(double z) {
  if (z > -25.0) return normal::pdf(z) / normal::cdf(z) + z;
  const double u = -z, u2 = u * u;
  return (1.0 - (2.0 - (10.0 - (74.0 - 706.0 / u2) / u2) / u2) / u2) / u;
}

/// -E[Delta | Delta < 0] * (l_w' 1) - h (l_w' 1) for the one-factor family.
inline double es_constraint(const OneFactorMoments& mom, double l, double h) {
  const double s = mom.stdev(l);
  const double cushion = 1.0 + mom.mean(l);
  double shortfall;
  if (s == 0.0) shortfall = std::max(0.0, -cushion);
  else shortfall = s * tail_excess(-cushion / s);
  return shortfall - h * mom.lent(l);
}

}  // namespace detail

/// ES-style sequential bound: largest l for asset `k` with
/// -E[Delta | Delta < 0] <= h. Assumes the admissible set is an interval
/// starting at l = 1, which holds whenever the conditional shortfall per lent
/// unit grows with leverage (always for a single asset).
inline LeverageBound max_leverage_es_sequential(const NormalModel& model, const LeveragedPortfolio& p, std::size_t k,
                                                double h) {
  require(h > 0.0, ErrorCode::InvalidArgument, "average-loss threshold must be > 0");
  validate(model);
  const auto mom = detail::one_factor_moments(model, p, k);
  auto violated = [&](double l) { return detail::es_constraint(mom, l, h) > 0.0; };
  if (violated(1.0)) {
    double lo = 0.0, hi = 1.0;
    for (int i = 0; i < 200; ++i) {
      const double mid = 0.5 * (lo + hi);
      (violated(mid) ? hi : lo) = mid;
    }
    return {BoundStatus::rejected, lo};
  }
  double lo = 1.0, hi = 2.0;
  while (!violated(hi)) {
    lo = hi;
    hi *= 2.0;
    if (hi > 1e12) return LeverageBound::unbounded();
  }
  for (int i = 0; i < 200 && hi - lo > 4.0 * std::numeric_limits<double>::epsilon() * hi; ++i) {
    const double mid = 0.5 * (lo + hi);
    (violated(mid) ? hi : lo) = mid;
  }
  return LeverageBound::from_value(lo);
}

// ---------------------------------------------------------------------------
// Joint optimization of all factors

enum class LeverageObjective { max_mean, max_min };

constexpr std::string_view to_string(LeverageObjective o) {
  return o == LeverageObjective::max_mean ? "max_mean" : "max_min";
}

inline LeverageObjective parse_leverage_objective(std::string_view s) {
  if (s == "max_mean") return LeverageObjective::max_mean;
  if (s == "max_min") return LeverageObjective::max_min;
  throw Error(ErrorCode::InvalidArgument, "objective must be max_mean or max_min");
}

struct OptimizeOptions {
  double var_budget = 1.0;  // VaR_alpha(l_w' R) <= var_budget
  std::optional<double> z_override;
};

struct OptimizationResult {
  Vector leverage;
  double objective = 0.0;           // l_w' mu for max_mean, min_k l_k for max_min
  double portfolio_var = 0.0;       // VaR_alpha(l_w' R) at the solution
  double constraint_residual = 0.0; // portfolio_var - var_budget, <= 0 when feasible
  double kkt_residual = 0.0;        // scaled stationarity residual of the last centering step
  double duality_gap = 0.0;         // barrier gap bound at termination
  int newton_steps = 0;
};

namespace detail {

/// f(l) = q sqrt(l' M l) - c' l with M = D Sigma D, c = D mu, D = diag(w):
/// the VaR of l_w' R as a function of the factors.
struct LeverageVar {
  Matrix m;
  Vector c;
  double q;

  LeverageVar(const NormalModel& model, const Vector& w, double q_) : m(model.size(), model.size()), c(model.size()), q(q_) {
    for (std::size_t i = 0; i < w.size(); ++i) {
      c[i] = w[i] * model.mu[i];
      for (std::size_t j = 0; j < w.size(); ++j) m(i, j) = w[i] * model.sigma(i, j) * w[j];
    }
  }

  double operator()(const Vector& l) const { return q * std::sqrt(std::max(0.0, quadratic_form(m, l))) - dot(c, l); }

  /// Adds weight * grad and weight * hessian of f into g and h.
  void accumulate(const Vector& l, double weight_grad, double weight_hess, double weight_outer, Vector& g, Matrix& h) const {
    const std::size_t n = l.size();
    const Vector ml = m * l;
    const double s = std::sqrt(std::max(0.0, dot(l, ml)));
    Vector grad(n);
    for (std::size_t i = 0; i < n; ++i) grad[i] = (s > 0.0 ? q * ml[i] / s : 0.0) - c[i];
    for (std::size_t i = 0; i < n; ++i) {
      g[i] += weight_grad * grad[i];
      for (std::size_t j = 0; j < n; ++j) {
        double hij = weight_outer * grad[i] * grad[j];
        if (s > 0.0) hij += weight_hess * q * (m(i, j) / s - ml[i] * ml[j] / (s * s * s));
        h(i, j) += hij;
      }
    }
  }
};

/// Log-barrier Newton method for
///   maximize c' l  s.t.  f(l) <= budget, l >= lower       (maximize_mean)
///   minimize f(l)  s.t.  l >= lower                        (otherwise)
/// from a strictly feasible start. Deterministic iteration schedule.
class BarrierSolver {
 public:
  BarrierSolver(const LeverageVar& f, Vector lower, double budget, bool maximize_mean)
      : f_(f), lower_(std::move(lower)), budget_(budget), maximize_mean_(maximize_mean) {}

  OptimizationResult run(Vector l) {
    const std::size_t n = l.size();
    const double constraints = static_cast<double>(n + (maximize_mean_ ? 1 : 0));
    double t = 1.0 / std::max(1e-12, std::fabs(objective(l)) + 1e-3);
    int steps = 0;
    double kkt = 0.0;
    for (int outer = 0; outer < 60; ++outer) {
      kkt = center(l, t, steps);
      const double gap = constraints / t;
      if (gap <= 1e-11 * std::max(1.0, std::fabs(objective(l)))) break;
      t *= 10.0;
    }
    OptimizationResult r;
    r.leverage = l;
    r.portfolio_var = f_(l);
    r.constraint_residual = r.portfolio_var - budget_;
    r.kkt_residual = kkt;
    r.duality_gap = constraints / t;
    r.newton_steps = steps;
    return r;
  }

 private:
  double objective(const Vector& l) const { return maximize_mean_ ? dot(f_.c, l) : f_(l); }

  bool strictly_feasible(const Vector& l) const {
    for (std::size_t i = 0; i < l.size(); ++i)
      if (!(l[i] > lower_[i])) return false;
    return !maximize_mean_ || f_(l) < budget_;
  }

  /// Barrier function value; +inf outside the domain.
  double value(const Vector& l, double t) const {
    if (!strictly_feasible(l)) return std::numeric_limits<double>::infinity();
    double v = maximize_mean_ ? -t * dot(f_.c, l) - std::log(budget_ - f_(l)) : t * f_(l);
    for (std::size_t i = 0; i < l.size(); ++i) v -= std::log(l[i] - lower_[i]);
    return v;
  }

  /// Newton centering; returns the scaled gradient norm at exit.
  double center(Vector& l, double t, int& steps) {
    const std::size_t n = l.size();
    double grad_norm = 0.0;
    for (int iter = 0; iter < 200; ++iter) {
      Vector g(n, 0.0);
      Matrix h(n, n);
      if (maximize_mean_) {
        const double slack = budget_ - f_(l);
        for (std::size_t i = 0; i < n; ++i) g[i] -= t * f_.c[i];
        f_.accumulate(l, 1.0 / slack, 1.0 / slack, 1.0 / (slack * slack), g, h);
      } else {
        f_.accumulate(l, t, t, 0.0, g, h);
      }
      for (std::size_t i = 0; i < n; ++i) {
        const double d = l[i] - lower_[i];
        g[i] -= 1.0 / d;
        h(i, i) += 1.0 / (d * d);
      }
      grad_norm = 0.0;
      for (double v : g) grad_norm = std::max(grad_norm, std::fabs(v));
      grad_norm /= t;

      Vector minus_g(n);
      for (std::size_t i = 0; i < n; ++i) minus_g[i] = -g[i];
      auto step = solve_spd(h, minus_g);
      if (!step) break;
      const double decrement = -dot(g, *step);
      if (decrement / 2.0 <= 1e-12) break;

      const double current = value(l, t);
      double tau = 1.0;
      Vector trial(n);
      bool moved = false;
      for (int ls = 0; ls < 80; ++ls, tau *= 0.5) {
        for (std::size_t i = 0; i < n; ++i) trial[i] = l[i] + tau * (*step)[i];
        const double v = value(trial, t);
        if (v <= current - 0.25 * tau * decrement) {
          moved = true;
          break;
        }
      }
      if (!moved) break;
      l = trial;
      ++steps;
      for (double v : l)
        if (std::fabs(v) > 1e10) throw Error(ErrorCode::UnboundedObjective, "leverage grows without bound");
    }
    return grad_norm;
  }

  const LeverageVar& f_;
  Vector lower_;
  double budget_;
  bool maximize_mean_;
};

inline OptimizationResult maximize_mean(const LeverageVar& f, const Vector& lower, double budget, Vector start) {
  auto r = BarrierSolver(f, lower, budget, true).run(std::move(start));
  // f is positively homogeneous, so a positive-mean solution that leaves slack
  // can be scaled up to the budget; the result stays above `lower`.
  const double var = f(r.leverage);
  if (var > 0.0 && var < budget && dot(f.c, r.leverage) > 0.0) {
    for (double& v : r.leverage) v *= budget / var;
  }
  r.portfolio_var = f(r.leverage);
  r.constraint_residual = r.portfolio_var - budget;
  r.objective = dot(f.c, r.leverage);
  return r;
}

}  // namespace detail

/// Chooses all leverage factors at once subject to VaR_alpha(l_w' R) <= 1 and
/// l >= 1. max_mean maximizes l_w' mu; max_min maximizes min_k l_k and breaks
/// ties by l_w' mu.
inline OptimizationResult optimize_leverage(const NormalModel& model, const Vector& w, TailLevel alpha,
                                            LeverageObjective objective, const OptimizeOptions& options = {}) {
  validate(model);
  const std::size_t n = model.size();
  require(w.size() == n, ErrorCode::DimensionMismatch, "weights and model sizes differ");
  for (double v : w) require(v > 0.0, ErrorCode::InvalidArgument, "weights must be > 0");
  const double budget = options.var_budget;
  require(budget > 0.0, ErrorCode::InvalidArgument, "VaR budget must be > 0");
  cholesky(model);  // PSD check

  const detail::LeverageVar f(model, w, upper_quantile(alpha, options.z_override));
  const Vector ones(n, 1.0);
  const double var_at_one = f(ones);
  require(var_at_one <= budget, ErrorCode::Infeasible,
          "unlevered portfolio already breaches the VaR budget (VaR = " + std::to_string(var_at_one) + ")");

  if (objective == LeverageObjective::max_mean) {
    if (var_at_one >= budget * (1.0 - 1e-12)) {
      OptimizationResult r;
      r.leverage = ones;
      r.objective = dot(f.c, ones);
      r.portfolio_var = var_at_one;
      r.constraint_residual = var_at_one - budget;
      return r;
    }
    const double grow = var_at_one > 0.0 ? std::min(0.5, 0.5 * (budget / var_at_one - 1.0)) : 0.5;
    Vector start(n, 1.0 + grow);
    return detail::maximize_mean(f, ones, budget, start);
  }

  // max_min: f is positively homogeneous, so the best common floor is
  // t* = budget / min_{u >= 1} f(u), attained by l = t* u*.
  auto floor_fit = detail::BarrierSolver(f, ones, budget, false).run(Vector(n, 2.0));
  const double fmin = f(floor_fit.leverage);
  if (fmin <= 0.0) throw Error(ErrorCode::UnboundedObjective, "a direction of zero risk lets every factor grow");
  const double t_star = budget / fmin;
  require(t_star >= 1.0, ErrorCode::Infeasible, "no factors >= 1 satisfy the VaR budget");
  Vector best = floor_fit.leverage;
  for (double& v : best) v *= t_star;

  OptimizationResult result = floor_fit;
  result.leverage = best;

  // Tie-break: among factors keeping the floor, prefer the largest mean.
  const double eps = 1e-9;
  Vector lower(n, t_star * (1.0 - 2.0 * eps));
  Vector start = best;
  for (double& v : start) v *= 1.0 - eps;
  try {
    auto refined = detail::maximize_mean(f, lower, budget, start);
    const double refined_floor = *std::min_element(refined.leverage.begin(), refined.leverage.end());
    if (refined_floor >= t_star * (1.0 - 1e-8) && refined.constraint_residual <= 1e-9 * budget &&
        refined.objective >= dot(f.c, best)) {
      result = refined;
    }
  } catch (const Error&) {
    // keep the floor solution
  }
  result.portfolio_var = f(result.leverage);
  result.constraint_residual = result.portfolio_var - budget;
  result.objective = *std::min_element(result.leverage.begin(), result.leverage.end());
  return result;
}

// ---------------------------------------------------------------------------
// Backtest diagnostic

/// Order-statistic alpha-quantile of l_w' R across the scenarios. Under a
/// saturated VaR constraint it should sit near -1.
inline double delta_quantile_check(const LeveragedPortfolio& portfolio, const ScenarioSet& scenarios, TailLevel alpha) {
  portfolio.validate();
  for (const auto& id : portfolio.asset_ids) {
    require(std::find(scenarios.asset_ids.begin(), scenarios.asset_ids.end(), id) != scenarios.asset_ids.end(),
            ErrorCode::DimensionMismatch, "scenarios do not cover asset " + id);
  }
  const auto set = restrict(scenarios, portfolio.asset_ids);
  const auto returns = portfolio_scenarios(set, portfolio.leveraged_weights());
  return empirical_quantile(returns, alpha);
}

}  // namespace varmargin
