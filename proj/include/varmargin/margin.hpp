#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "varmargin/black_scholes.hpp"
#include "varmargin/error.hpp"
#include "varmargin/risk.hpp"
#include "varmargin/scenario.hpp"

namespace varmargin {

// ---------------------------------------------------------------------------
// Formulas

/// Smallest margin factor keeping P(M <= -h C) <= alpha for a fully invested
/// account: a = VaR / (h + VaR).
inline double margin_factor(double var, double h) {
  require(h > 0.0, ErrorCode::InvalidArgument, "availability threshold h must be > 0");
  require(var >= 0.0, ErrorCode::NegativeVar, "portfolio VaR is negative; clamp before margining");
  if (std::isinf(var)) return 1.0;
  return var / (h + var);
}

/// M = C - a W
inline double availability(double capital, double invested, double a) { return capital - a * invested; }

/// Amount-weighted average of single-asset factors a_k = VaR_k / (h + VaR_k).
inline double per_asset_margin(std::span<const double> vars, std::span<const double> amounts, double h) {
  require(vars.size() == amounts.size() && !vars.empty(), ErrorCode::DimensionMismatch, "need one amount per VaR");
  double total = 0.0, weighted = 0.0;
  for (std::size_t k = 0; k < vars.size(); ++k) {
    require(amounts[k] > 0.0, ErrorCode::InvalidArgument, "amounts must be > 0");
    total += amounts[k];
    weighted += amounts[k] * margin_factor(std::max(0.0, vars[k]), h);
  }
  return weighted / total;
}

// ---------------------------------------------------------------------------
// Accounts

/// Option terms as entered on a trade ticket. A missing strike means "last
/// observed price of the underlying"; a missing volatility means the fitted
/// daily volatility annualized over 252 trading days.
struct OptionTerms {
  std::string underlying_id;
  OptionKind kind = OptionKind::put;
  std::optional<double> strike;
  double expiry_years = 0.0;
  double rate = 0.0;
  std::optional<double> vol_annual;
};

struct Position {
  std::string asset_id;               // underlying id for options
  std::optional<OptionSpec> option;   // resolved at trade time
  double amount = 0.0;                // invested currency
  std::optional<double> leverage;     // used by leverage tooling only

  /// Positions with equal keys are merged when trades add to them.
  /// Identity used to merge trades: the ticker, or every option term written
  /// in shortest round-trip form.
  std::string key() const {
    if (!option) return asset_id;
    std::string out = std::string(to_string(option->kind)) + ":" + asset_id;
    for (double v : {option->strike, option->expiry_years, option->rate, option->vol_annual}) {
      char buf[32];
      auto res = std::to_chars(buf, buf + sizeof buf, v);
      out += ':';
      out.append(buf, res.ptr);
    }
    return out;
  }
};

struct Trade {
  std::string asset_id;
  std::optional<OptionTerms> option;
  double amount = 0.0;
};

struct MarginAccount {
  double capital = 0.0;
  std::vector<Position> positions;
  double margin_factor = 0.0;
  double availability = 0.0;

  double invested() const {
    double w = 0.0;
    for (const auto& p : positions) w += p.amount;
    return w;
  }
};

struct MarginPolicy {
  double alpha = 0.01;
  double h = 0.2;
  RiskMethod method = RiskMethod::normal;
  std::uint64_t seed = 0;
  std::size_t scenarios = 100000;  // Monte Carlo draws
  std::size_t window = 0;          // most recent joint returns used; 0 = all

  void validate() const {
    static_cast<void>(TailLevel{alpha});
    require(h > 0.0, ErrorCode::InvalidArgument, "h must be > 0");
    require(scenarios >= 1, ErrorCode::InvalidArgument, "need at least one Monte Carlo scenario");
  }
};

/// Monte Carlo draws already generated against one fixed model. Draws depend
/// only on the assets, horizon, count and seed, so views that share a memo can
/// reuse them instead of sampling again. Thread safe.
class ScenarioMemo {
 public:
  template <class Make>
  std::shared_ptr<const ScenarioSet> get(const std::string& key, Make&& make) {
    {
      std::lock_guard lock(mutex_);
      auto it = sets_.find(key);
      if (it != sets_.end()) return it->second;
    }
    auto made = std::make_shared<const ScenarioSet>(make());
    std::lock_guard lock(mutex_);
    if (sets_.size() >= capacity) sets_.clear();
    return sets_.emplace(key, std::move(made)).first->second;
  }

  static constexpr std::size_t capacity = 16;

 private:
  std::mutex mutex_;
  std::map<std::string, std::shared_ptr<const ScenarioSet>> sets_;
};

/// Everything the engine needs to know about the market on the valuation date.
struct MarketView {
  std::optional<NormalModel> model;           // fitted one-day model
  std::optional<ScenarioSet> historical;      // joint historical simple returns
  std::map<std::string, double> spots;        // last closes
  std::shared_ptr<ScenarioMemo> memo;         // optional reuse of Monte Carlo draws

  double spot(const std::string& id) const {
    auto it = spots.find(id);
    require(it != spots.end(), ErrorCode::UnknownAsset, "no spot price for '" + id + "'");
    return it->second;
  }

  const NormalModel& require_model() const {
    require(model.has_value(), ErrorCode::ScenarioUnavailable, "no fitted model available");
    return *model;
  }
};

inline OptionSpec resolve_option(const OptionTerms& terms, const MarketView& market) {
  OptionSpec spec;
  spec.underlying_id = terms.underlying_id;
  spec.kind = terms.kind;
  spec.strike = terms.strike ? *terms.strike : market.spot(terms.underlying_id);
  spec.expiry_years = terms.expiry_years;
  spec.rate = terms.rate;
  if (terms.vol_annual) {
    spec.vol_annual = *terms.vol_annual;
  } else {
    const auto& model = market.require_model();
    const auto k = model.index_of(terms.underlying_id);
    spec.vol_annual = annualized_vol(std::sqrt(model.sigma(k, k)));
  }
  spec.validate();
  return spec;
}

/// Positions after the trade; zero-amount trades leave the book untouched.
inline std::vector<Position> apply_trade(const std::vector<Position>& book, const Trade& trade, const MarketView& market) {
  require(trade.amount >= 0.0 && std::isfinite(trade.amount), ErrorCode::InvalidArgument, "trade amount must be >= 0");
  std::vector<Position> out = book;
  if (trade.amount == 0.0) return out;
  Position p;
  p.asset_id = trade.option ? trade.option->underlying_id : trade.asset_id;
  require(!p.asset_id.empty(), ErrorCode::InvalidArgument, "trade names no instrument");
  if (trade.option) p.option = resolve_option(*trade.option, market);
  p.amount = trade.amount;
  const auto key = p.key();
  auto it = std::find_if(out.begin(), out.end(), [&](const Position& q) { return q.key() == key; });
  if (it == out.end()) out.push_back(std::move(p));
  else it->amount += trade.amount;
  return out;
}

// ---------------------------------------------------------------------------
// Portfolio risk

struct PortfolioRisk {
  RiskReport report;
  Vector weights;                      // x_k = w_k / W, position order
  std::optional<std::string> warning;
};

namespace detail {

inline std::vector<std::string> underlyings(const std::vector<Position>& positions) {
  std::vector<std::string> ids;
  for (const auto& p : positions)
    if (std::find(ids.begin(), ids.end(), p.asset_id) == ids.end()) ids.push_back(p.asset_id);
  return ids;
}

inline bool has_options(const std::vector<Position>& positions) {
  return std::any_of(positions.begin(), positions.end(), [](const Position& p) { return p.option.has_value(); });
}

/// Scenario set over the book's underlyings for the requested method.
inline ScenarioSet risk_scenarios(const std::vector<Position>& positions, const MarginPolicy& policy,
                                  const MarketView& market, int horizon_days) {
  const auto ids = underlyings(positions);
  if (policy.method == RiskMethod::historical) {
    require(market.historical.has_value(), ErrorCode::ScenarioUnavailable, "no historical returns loaded");
    return restrict(*market.historical, ids);
  }
  auto draw = [&] {
    auto model = restrict(market.require_model(), ids);
    if (horizon_days > 1) {
      for (auto& v : model.mu) v *= horizon_days;
      for (std::size_t i = 0; i < model.size(); ++i)
        for (std::size_t j = 0; j < model.size(); ++j) model.sigma(i, j) *= horizon_days;
    }
    return sample(model, policy.scenarios, policy.seed);
  };
  if (!market.memo) return draw();
  std::string key = std::to_string(horizon_days) + "/" + std::to_string(policy.scenarios) + "/" + std::to_string(policy.seed);
  for (const auto& id : ids) key += "/" + id;
  return *market.memo->get(key, draw);
}

}  // namespace detail

/// Per-scenario simple return of every position: equity columns as given,
/// options by full Black-Scholes revaluation over `holding_days`.
inline std::vector<Vector> position_returns(const std::vector<Position>& positions, const ScenarioSet& scenarios,
                                            const MarketView& market, int holding_days) {
  std::vector<Vector> out;
  for (const auto& p : positions) {
    const auto column = scenarios.column(scenarios.index_of(p.asset_id));
    if (p.option) out.push_back(option_return_scenarios(*p.option, market.spot(p.asset_id), column, holding_days));
    else out.push_back(column);
  }
  return out;
}

/// Weighted sum of position returns per scenario.
inline Vector combine(const std::vector<Vector>& returns, std::span<const double> weights) {
  require(returns.size() == weights.size(), ErrorCode::DimensionMismatch, "one weight per position");
  const std::size_t m = returns.empty() ? 0 : returns.front().size();
  Vector out(m, 0.0);
  for (std::size_t k = 0; k < returns.size(); ++k)
    for (std::size_t i = 0; i < m; ++i) out[i] += weights[k] * returns[k][i];
  return out;
}

/// Portfolio VaR and ES of R_P = x' R. The normal method is analytic for
/// equity-only books; books holding options are simulated from the fitted
/// model because their returns are not linear in R. Historical VaR over more
/// than one day uses the square-root-of-time rule.
inline PortfolioRisk portfolio_risk(const std::vector<Position>& positions, const MarginPolicy& policy,
                                    const MarketView& market, int horizon_days = 1,
                                    std::optional<double> z_override = std::nullopt) {
  require(!positions.empty(), ErrorCode::InvalidArgument, "portfolio has no positions");
  require(horizon_days >= 1, ErrorCode::InvalidArgument, "horizon must be at least one day");
  const TailLevel alpha{policy.alpha};
  double total = 0.0;
  for (const auto& p : positions) total += p.amount;
  require(total > 0.0, ErrorCode::InvalidArgument, "portfolio has no invested amount");
  PortfolioRisk out;
  for (const auto& p : positions) out.weights.push_back(p.amount / total);

  if (policy.method == RiskMethod::normal && !detail::has_options(positions)) {
    const auto& model = market.require_model();
    Vector exposure(model.size(), 0.0);
    for (std::size_t k = 0; k < positions.size(); ++k) exposure[model.index_of(positions[k].asset_id)] += out.weights[k];
    out.report = normal_report(model.portfolio(exposure), alpha, horizon_days, z_override);
    return out;
  }

  const bool sqrt_time = policy.method == RiskMethod::historical && horizon_days > 1;
  const int simulated_days = sqrt_time ? 1 : horizon_days;
  const auto scenarios = detail::risk_scenarios(positions, policy, market, simulated_days);
  const auto returns = combine(position_returns(positions, scenarios, market, simulated_days), out.weights);
  out.report = empirical_report(returns, alpha, horizon_days,
                                policy.method == RiskMethod::normal ? RiskMethod::monte_carlo : policy.method);
  if (sqrt_time) {
    const double scale = std::sqrt(static_cast<double>(horizon_days));
    out.report.var *= scale;
    out.report.es *= scale;
  }
  out.warning = tail_sample_warning(returns.size(), alpha);
  return out;
}

// ---------------------------------------------------------------------------
// Trade approval

struct TradeVerdict {
  bool allowed = false;
  double margin_factor = 0.0;
  double availability = 0.0;
  double portfolio_var = 0.0;
  Vector weights;
  std::vector<std::string> instruments;
  MarginAccount account;  // state that would be committed if allowed
  std::optional<std::string> warning;
};

/// Margin state of an arbitrary book at the current market.
inline TradeVerdict assess(double capital, const std::vector<Position>& positions, const MarginPolicy& policy,
                           const MarketView& market) {
  policy.validate();
  TradeVerdict v;
  v.account.capital = capital;
  v.account.positions = positions;
  const double invested = v.account.invested();
  if (positions.empty() || invested == 0.0) {
    v.account.margin_factor = 0.0;
    v.account.availability = capital;
    v.allowed = capital >= 0.0;
    v.availability = capital;
    return v;
  }
  const auto risk = portfolio_risk(positions, policy, market);
  v.portfolio_var = risk.report.var;
  v.weights = risk.weights;
  v.warning = risk.warning;
  if (v.portfolio_var < 0.0) v.warning = "portfolio VaR is negative; margin factor clamped to 0";
  v.margin_factor = margin_factor(std::max(0.0, v.portfolio_var), policy.h);
  v.availability = availability(capital, invested, v.margin_factor);
  v.allowed = v.availability >= 0.0;
  for (const auto& p : positions) v.instruments.push_back(p.key());
  v.account.margin_factor = v.margin_factor;
  v.account.availability = v.availability;
  return v;
}

/// Re-margins the book with the proposed trade added. Pure: the caller decides
/// whether to commit `verdict.account`.
inline TradeVerdict evaluate_trade(const MarginAccount& account, const Trade& trade, const MarginPolicy& policy,
                                   const MarketView& market) {
  return assess(account.capital, apply_trade(account.positions, trade, market), policy, market);
}

// ---------------------------------------------------------------------------
// End-of-day distribution

/// Availability at the end of one day for every scenario:
/// M = (1 - a) w' R + C - a w' 1, which reduces to C (1 - a)/a x' R for a fully
/// invested account. Options are revalued per scenario.
inline Vector eod_availability_scenarios(const MarginAccount& account, const ScenarioSet& scenarios,
                                         const MarketView& market) {
  require(account.availability >= 0.0, ErrorCode::InvalidArgument, "account is not in a committed state (M0 < 0)");
  const double a = account.margin_factor;
  const double invested = account.invested();
  Vector amounts;
  for (const auto& p : account.positions) amounts.push_back(p.amount);
  for (const auto& p : account.positions)
    require(std::find(scenarios.asset_ids.begin(), scenarios.asset_ids.end(), p.asset_id) != scenarios.asset_ids.end(),
            ErrorCode::DimensionMismatch, "scenario set lacks asset '" + p.asset_id + "'");
  const auto pnl = combine(position_returns(account.positions, scenarios, market, 1), amounts);
  Vector m(pnl.size());
  for (std::size_t i = 0; i < pnl.size(); ++i) m[i] = (1.0 - a) * pnl[i] + account.capital - a * invested;
  return m;
}

/// End-of-day portfolio value C + w' R per scenario.
inline Vector eod_value_scenarios(const MarginAccount& account, const ScenarioSet& scenarios, const MarketView& market) {
  Vector amounts;
  for (const auto& p : account.positions) amounts.push_back(p.amount);
  auto v = combine(position_returns(account.positions, scenarios, market, 1), amounts);
  for (double& x : v) x += account.capital;
  return v;
}

/// -q_alpha(M) / C; close to h when the account is saturated.
inline double empirical_threshold(std::span<const double> availability_scenarios, double capital, TailLevel alpha) {
  return -empirical_quantile(availability_scenarios, alpha) / capital;
}

/// End-of-day commit: capital becomes C + w' R and every position grows by its
/// realized return. Option positions need the realized option return.
inline MarginAccount mark_to_market(const MarginAccount& account, const std::map<std::string, double>& realized) {
  MarginAccount out = account;
  for (auto& p : out.positions) {
    const auto key = p.key();
    auto it = realized.find(key);
    require(it != realized.end(), ErrorCode::UnknownAsset, "no realized return for '" + key + "'");
    out.capital += p.amount * it->second;
    p.amount *= 1.0 + it->second;
  }
  return out;
}

}  // namespace varmargin
