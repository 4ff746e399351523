#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "varmargin/app/json_codec.hpp"
#include "varmargin/leverage.hpp"
#include "varmargin/margin.hpp"
#include "varmargin/market_data.hpp"
#include "varmargin/scenario.hpp"

// Computations shared by the command line and the HTTP service. Both front
// ends call these functions, so equal inputs give byte-equal JSON.

namespace varmargin::app {

using PriceBook = std::map<std::string, PriceSeries>;

struct MarketSlice {
  MarketView view;
  std::size_t window_rows = 0;  // joint return rows behind the fitted model
  std::optional<std::string> warning;
};

/// Fitted model, historical scenarios and spots over `ids`, using the most
/// recent `window` joint simple returns (all when 0).
inline MarketSlice market_from_prices(const PriceBook& prices, const std::vector<std::string>& ids,
                                      std::size_t window) {
  MarketSlice out;
  if (ids.empty()) return out;
  std::vector<ReturnSeries> returns;
  for (const auto& id : ids) {
    auto it = prices.find(id);
    require(it != prices.end(), ErrorCode::UnknownAsset, "no prices loaded for asset '" + id + "'");
    returns.push_back(simple_returns(it->second));
    out.view.spots[id] = it->second.last_close();
  }
  const auto panel = tail(align(returns), window);
  out.window_rows = panel.num_rows();
  out.view.historical = historical_scenarios(panel);
  if (panel.num_rows() >= 2) {
    out.view.model = fit_normal(panel);
    out.warning = fit_warning(panel);
  }
  return out;
}

/// Market described by a model file with "spots".
inline MarketSlice market_from_model(const json& j) {
  MarketSlice out;
  out.view.model = model_from_json(j);
  if (j.contains("spots")) {
    for (const auto& [id, v] : j.at("spots").items()) {
      require(v.is_number() && v.get<double>() > 0.0, ErrorCode::InvalidArgument, "spot of " + id + " must be > 0");
      out.view.spots[id] = v.get<double>();
    }
  }
  return out;
}

/// Assets a book and an optional trade depend on, in first-seen order.
inline std::vector<std::string> assets_of(const std::vector<Position>& book, const std::vector<Trade>& trades = {}) {
  std::vector<std::string> ids;
  auto add = [&](const std::string& id) {
    if (!id.empty() && std::find(ids.begin(), ids.end(), id) == ids.end()) ids.push_back(id);
  };
  for (const auto& p : book) add(p.asset_id);
  for (const auto& t : trades) add(t.option ? t.option->underlying_id : t.asset_id);
  return ids;
}

inline json weights_json(const std::vector<Position>& book, const Vector& weights) {
  json out = json::array();
  for (std::size_t k = 0; k < weights.size() && k < book.size(); ++k)
    out.push_back(json{{"instrument", book[k].key()}, {"weight", weights[k]}});
  return out;
}

// ---------------------------------------------------------------------------
// Risk report

struct RiskQuery {
  std::optional<double> alpha;
  std::optional<RiskMethod> method;
  int horizon_days = 1;
  std::optional<std::uint64_t> seed;
  std::optional<double> z_override;
};

inline json risk_report(const std::vector<Position>& book, MarginPolicy policy, const MarketSlice& market,
                        const RiskQuery& query) {
  if (query.alpha) policy.alpha = *query.alpha;
  if (query.method) policy.method = *query.method;
  if (query.seed) policy.seed = *query.seed;
  policy.validate();
  const auto risk = portfolio_risk(book, policy, market.view, query.horizon_days, query.z_override);
  double invested = 0.0;
  for (const auto& p : book) invested += p.amount;
  json j{{"schema", schema_version},
         {"alpha", risk.report.alpha},
         {"horizon_days", risk.report.horizon_days},
         {"method", to_string(risk.report.method)},
         {"var", risk.report.var},
         {"es", risk.report.es},
         {"var_currency", money(risk.report.var * invested)},
         {"es_currency", money(risk.report.es * invested)},
         {"invested", money(invested)},
         {"model_window", market.window_rows},
         {"weights", weights_json(book, risk.weights)}};
  if (risk.report.method == RiskMethod::monte_carlo) j["seed"] = policy.seed;
  if (query.z_override) j["z_override"] = *query.z_override;
  const auto warning = risk.warning ? risk.warning : market.warning;
  if (warning) j["warning"] = *warning;
  return j;
}

// ---------------------------------------------------------------------------
// Trade verdicts

/// What-if view: the state the trade would produce next to the current one.
inline json whatif_json(const TradeVerdict& v, const MarginAccount& current) {
  json j{{"schema", schema_version},
         {"allowed", v.allowed},
         {"verdict", v.allowed ? "allowed" : "denied"},
         {"portfolio_var", v.portfolio_var},
         {"new_margin_factor", v.margin_factor},
         {"new_availability", money(v.availability)},
         {"capital", money(v.account.capital)},
         {"invested", money(v.account.invested())},
         {"weights", weights_json(v.account.positions, v.weights)},
         {"current", json{{"margin_factor", current.margin_factor}, {"availability", money(current.availability)}}}};
  if (v.warning) j["warning"] = *v.warning;
  return j;
}

/// Command-line margin check view of the same verdict.
inline json margin_check_json(const TradeVerdict& v) {
  json j{{"schema", schema_version},
         {"var", v.portfolio_var},
         {"a_star", v.margin_factor},
         {"availability", money(v.availability)},
         {"verdict", v.allowed ? "allowed" : "denied"},
         {"capital", money(v.account.capital)},
         {"invested", money(v.account.invested())},
         {"weights", weights_json(v.account.positions, v.weights)}};
  if (v.warning) j["warning"] = *v.warning;
  return j;
}

// ---------------------------------------------------------------------------
// Leverage

/// Equity positions expressed as fractions of own capital: amount = C w l.
struct LeverageInputs {
  std::vector<std::string> asset_ids;
  Vector w;
  Vector l;
  std::vector<bool> chosen;  // factor set on the position rather than defaulted
};

inline LeverageInputs leverage_inputs(const std::vector<Position>& book, double capital) {
  require(capital > 0.0, ErrorCode::InvalidArgument, "capital must be > 0");
  LeverageInputs in;
  for (const auto& p : book) {
    if (p.option) continue;
    const double l = p.leverage.value_or(1.0);
    const double w = p.amount / (capital * l);
    auto it = std::find(in.asset_ids.begin(), in.asset_ids.end(), p.asset_id);
    if (it == in.asset_ids.end()) {
      in.asset_ids.push_back(p.asset_id);
      in.w.push_back(w);
      in.l.push_back(l);
      in.chosen.push_back(p.leverage.has_value());
    } else {
      const auto k = static_cast<std::size_t>(it - in.asset_ids.begin());
      in.w[k] += w;
    }
  }
  return in;
}

enum class LeverageMeasure { var, es };

inline LeverageMeasure parse_leverage_measure(std::string_view s) {
  if (s == "var") return LeverageMeasure::var;
  if (s == "es") return LeverageMeasure::es;
  throw Error(ErrorCode::InvalidArgument, "leverage method must be var or es");
}

inline json bound_json(const LeverageBound& b) {
  json j{{"status", to_string(b.status)}};
  j["l_max"] = std::isfinite(b.value) ? json(b.value) : json(nullptr);
  return j;
}

struct LeverageRequest {
  double alpha = 0.01;
  double h = 0.0;
  LeverageMeasure measure = LeverageMeasure::var;
};

namespace detail {

inline LeverageBound sequential_bound(const NormalModel& model, const LeveragedPortfolio& p, std::size_t k,
                                      const LeverageRequest& req) {
  if (req.measure == LeverageMeasure::es) return max_leverage_es_sequential(model, p, k, req.h);
  return max_leverage_sequential(model, p, k, TailLevel{req.alpha}, req.h);
}

}  // namespace detail

/// Each asset on its own.
inline json leverage_single(const LeverageInputs& in, const NormalModel& model, const LeverageRequest& req) {
  json rows = json::array();
  for (std::size_t k = 0; k < in.asset_ids.size(); ++k) {
    const auto i = model.index_of(in.asset_ids[k]);
    const NormalParams r{model.mu[i], std::sqrt(model.sigma(i, i))};
    json row{{"asset", in.asset_ids[k]}, {"w", in.w[k]}};
    try {
      const auto b = req.measure == LeverageMeasure::es ? max_leverage_es_single(r, in.w[k], req.h)
                                                         : max_leverage_single(r, in.w[k], TailLevel{req.alpha}, req.h);
      row.update(bound_json(b));
    } catch (const Error& e) {
      // An ES gap that never reaches h has no tail level to map to; the
      // other rows are still meaningful.
      if (e.code() != ErrorCode::NoRoot) throw;
      row["status"] = "no_root";
      row["l_max"] = nullptr;
      row["detail"] = e.what();
    }
    rows.push_back(row);
  }
  return rows;
}

/// Assets enter one at a time in book order. The bound for asset k holds the
/// earlier assets at the leverage in use: the position's own factor when
/// given, else the bound just computed (1 when there is none).
inline json leverage_sequential(const LeverageInputs& in, const NormalModel& model, const LeverageRequest& req) {
  json rows = json::array();
  std::vector<double> used;
  for (std::size_t k = 0; k < in.asset_ids.size(); ++k) {
    const std::vector<std::string> prefix(in.asset_ids.begin(), in.asset_ids.begin() + static_cast<std::ptrdiff_t>(k + 1));
    const auto sub = restrict(model, prefix);
    LeveragedPortfolio p{prefix, Vector(in.w.begin(), in.w.begin() + static_cast<std::ptrdiff_t>(k + 1)), used};
    p.l.push_back(1.0);
    const auto b = detail::sequential_bound(sub, p, k, req);
    double l_used = 1.0;
    if (in.chosen[k]) l_used = in.l[k];
    else if (b.status == BoundStatus::bounded) l_used = b.value;
    used.push_back(l_used);
    json row{{"asset", in.asset_ids[k]}, {"w", in.w[k]}};
    row.update(bound_json(b));
    row["l_used"] = l_used;
    rows.push_back(row);
  }
  return rows;
}

/// Bound for one asset with every other factor held at its current value.
/// An asset outside the book enters with weight `w_new`.
inline json leverage_max(LeverageInputs in, const NormalModel& model, const std::string& asset,
                         std::optional<double> w_new, const LeverageRequest& req) {
  auto it = std::find(in.asset_ids.begin(), in.asset_ids.end(), asset);
  if (it == in.asset_ids.end()) {
    require(w_new.has_value(), ErrorCode::InvalidArgument, "asset '" + asset + "' is not held; pass its weight w");
    in.asset_ids.push_back(asset);
    in.w.push_back(*w_new);
    in.l.push_back(1.0);
    in.chosen.push_back(false);
    it = in.asset_ids.end() - 1;
  } else if (w_new) {
    in.w[static_cast<std::size_t>(it - in.asset_ids.begin())] = *w_new;
  }
  const auto k = static_cast<std::size_t>(it - in.asset_ids.begin());
  const auto sub = restrict(model, in.asset_ids);
  LeveragedPortfolio p{in.asset_ids, in.w, in.l};
  p.l[k] = 1.0;
  const auto b = detail::sequential_bound(sub, p, k, req);
  json j{{"schema", schema_version}, {"asset", asset}, {"w", in.w[k]}, {"alpha", req.alpha}, {"h", req.h},
         {"method", req.measure == LeverageMeasure::es ? "es" : "var"}};
  j.update(bound_json(b));
  return j;
}

inline json leverage_optimize(const LeverageInputs& in, const NormalModel& model, double alpha,
                              LeverageObjective objective) {
  require(!in.asset_ids.empty(), ErrorCode::InvalidArgument, "no equity positions to lever");
  const auto r = optimize_leverage(restrict(model, in.asset_ids), in.w, TailLevel{alpha}, objective);
  json rows = json::array();
  for (std::size_t k = 0; k < in.asset_ids.size(); ++k)
    rows.push_back(json{{"asset", in.asset_ids[k]}, {"w", in.w[k]}, {"l", r.leverage[k]}});
  return json{{"schema", schema_version},
              {"objective", to_string(objective)},
              {"alpha", alpha},
              {"leverage", rows},
              {"objective_value", r.objective},
              {"portfolio_var", r.portfolio_var},
              {"constraint_residual", r.constraint_residual},
              {"kkt_residual", r.kkt_residual},
              {"duality_gap", r.duality_gap}};
}

/// Table of single or sequential maxima, shared by the CLI and the service.
inline json leverage_table(std::string_view mode, const LeverageInputs& in, const NormalModel& model,
                           const LeverageRequest& req) {
  require(mode == "single" || mode == "sequential", ErrorCode::InvalidArgument, "mode must be single or sequential");
  require(!in.asset_ids.empty(), ErrorCode::InvalidArgument, "no equity positions to lever");
  auto rows = mode == "single" ? leverage_single(in, model, req) : leverage_sequential(in, model, req);
  return json{{"schema", schema_version}, {"mode", mode}, {"alpha", req.alpha}, {"h", req.h},
              {"method", req.measure == LeverageMeasure::es ? "es" : "var"}, {"rows", rows}};
}

// ---------------------------------------------------------------------------
// End-of-day simulation

inline constexpr std::size_t histogram_bins = 101;

inline json histogram_json(const Vector& values) {
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const double min = *lo, max = *hi;
  const double width = max > min ? (max - min) / histogram_bins : 0.0;
  std::vector<std::size_t> counts(histogram_bins, 0);
  for (double v : values) {
    std::size_t b = width > 0.0 ? static_cast<std::size_t>((v - min) / width) : 0;
    counts[std::min(b, histogram_bins - 1)]++;
  }
  return json{{"bins", histogram_bins}, {"min", money(min)}, {"max", money(max)}, {"bin_width", money(width)},
              {"counts", counts}};
}

inline std::string alpha_key(double a) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, a);
  return std::string(buf, res.ptr);
}

struct SimulationRequest {
  RiskMethod method = RiskMethod::monte_carlo;
  std::size_t scenarios = 100000;
  std::uint64_t seed = 0;
};

inline json simulate_eod(const MarginAccount& account, const MarginPolicy& policy, const MarketSlice& market,
                         const SimulationRequest& req) {
  require(!account.positions.empty(), ErrorCode::InvalidArgument, "portfolio has no positions");
  require(req.scenarios >= 1, ErrorCode::InvalidArgument, "need at least one scenario");
  const auto ids = assets_of(account.positions);
  ScenarioSet scenarios;
  if (req.method == RiskMethod::historical) {
    require(market.view.historical.has_value(), ErrorCode::ScenarioUnavailable, "no historical returns loaded");
    scenarios = restrict(*market.view.historical, ids);
  } else {
    scenarios = sample(restrict(market.view.require_model(), ids), req.scenarios, req.seed);
  }
  const auto m = eod_availability_scenarios(account, scenarios, market.view);
  const auto v = eod_value_scenarios(account, scenarios, market.view);

  json quantiles = json::object();
  std::vector<double> levels{policy.alpha, 0.01, 0.05};
  std::sort(levels.begin(), levels.end());
  levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
  for (double a : levels) quantiles[alpha_key(a)] = money(empirical_quantile(m, TailLevel{a}));

  const double threshold = -policy.h * account.capital;
  std::size_t breaches = 0;
  for (double x : m)
    if (x <= threshold) ++breaches;

  json j{{"schema", schema_version},
         {"method", to_string(req.method)},
         {"scenarios", m.size()},
         {"availability", histogram_json(m)},
         {"portfolio_value", histogram_json(v)},
         {"empirical_quantiles", quantiles},
         {"threshold", money(threshold)},
         {"breach_probability", static_cast<double>(breaches) / static_cast<double>(m.size())},
         {"h", policy.h},
         {"h_emp", empirical_threshold(m, account.capital, TailLevel{policy.alpha})}};
  if (req.method != RiskMethod::historical) j["seed"] = req.seed;
  return j;
}

// ---------------------------------------------------------------------------
// Backtest

struct BacktestRequest {
  std::size_t window = 0;  // most recent joint returns used; 0 = all
  double split = 0.5;      // calibration share of the window
};

namespace detail {

inline AlignedReturnPanel rows_between(const AlignedReturnPanel& panel, std::size_t first, std::size_t last) {
  AlignedReturnPanel out{panel.asset_ids, panel.kind, {}, {}};
  out.dates.assign(panel.dates.begin() + static_cast<std::ptrdiff_t>(first),
                   panel.dates.begin() + static_cast<std::ptrdiff_t>(last));
  out.rows.assign(panel.rows.begin() + static_cast<std::ptrdiff_t>(first),
                  panel.rows.begin() + static_cast<std::ptrdiff_t>(last));
  return out;
}

inline double close_on(const PriceSeries& p, Date d) {
  for (const auto& o : p.observations)
    if (o.date == d) return o.close;
  throw Error(ErrorCode::NoCommonDates, "no close of " + p.asset_id + " on " + format_date(d));
}

inline json period_json(const AlignedReturnPanel& panel) {
  return json{{"from", format_date(panel.dates.front())}, {"to", format_date(panel.dates.back())},
              {"rows", panel.num_rows()}};
}

}  // namespace detail

/// Calibrates the margin factor on the first part of the window and replays
/// the account through the remaining days, one independent day at a time.
/// Leveraged return is the day's P&L over own capital; an availability breach
/// is an end-of-day M at or below -h C.
inline json backtest(const PriceBook& prices, const PortfolioInput& in, MarginPolicy policy,
                     const BacktestRequest& req) {
  policy.validate();
  require(req.split > 0.0 && req.split < 1.0, ErrorCode::InvalidArgument, "split must lie in (0, 1)");
  require(!in.entries.empty(), ErrorCode::InvalidArgument, "portfolio has no positions");
  const auto ids = referenced_assets(in.entries);
  std::vector<ReturnSeries> returns;
  for (const auto& id : ids) {
    auto it = prices.find(id);
    require(it != prices.end(), ErrorCode::UnknownAsset, "no prices loaded for asset '" + id + "'");
    returns.push_back(simple_returns(it->second));
  }
  const auto panel = tail(align(returns), req.window);
  const auto n = panel.num_rows();
  const auto n_cal = static_cast<std::size_t>(std::floor(req.split * static_cast<double>(n)));
  require(n_cal >= 2 && n > n_cal, ErrorCode::InsufficientData,
          "window of " + std::to_string(n) + " returns is too short to split");
  const auto cal = detail::rows_between(panel, 0, n_cal);
  const auto test = detail::rows_between(panel, n_cal, n);

  MarketView market;
  market.model = fit_normal(cal);
  market.historical = historical_scenarios(cal);
  for (const auto& id : ids) market.spots[id] = detail::close_on(prices.at(id), cal.dates.back());
  const auto book = build_positions(in, market);
  const auto verdict = assess(in.capital, book, policy, market);
  const double a = verdict.margin_factor;
  const double invested = verdict.account.invested();

  Vector amounts;
  for (const auto& p : book) amounts.push_back(p.amount);
  const auto pnl = combine(position_returns(book, historical_scenarios(test), market, 1), amounts);
  Vector leveraged(pnl.size()), m(pnl.size());
  std::size_t wiped = 0, breaches = 0;
  const double threshold = -policy.h * in.capital;
  for (std::size_t t = 0; t < pnl.size(); ++t) {
    leveraged[t] = pnl[t] / in.capital;
    m[t] = (1.0 - a) * pnl[t] + in.capital - a * invested;
    if (leveraged[t] <= -1.0) ++wiped;
    if (m[t] <= threshold) ++breaches;
  }
  const TailLevel alpha{policy.alpha};
  json j{{"schema", schema_version},
         {"alpha", policy.alpha},
         {"h", policy.h},
         {"method", to_string(policy.method)},
         {"calibration", detail::period_json(cal)},
         {"backtest", detail::period_json(test)},
         {"calibrated_var", verdict.portfolio_var},
         {"margin_factor", a},
         {"availability", money(verdict.availability)},
         {"leveraged_return_quantile", empirical_quantile(leveraged, alpha)},
         {"capital_wipeouts", wiped},
         {"availability_breaches", breaches},
         {"breach_rate", static_cast<double>(breaches) / static_cast<double>(m.size())},
         {"expected_breaches", policy.alpha * static_cast<double>(m.size())},
         {"h_emp", empirical_threshold(m, in.capital, alpha)}};
  if (auto w = tail_sample_warning(m.size(), alpha)) j["warning"] = *w;
  else if (verdict.warning) j["warning"] = *verdict.warning;
  return j;
}

}  // namespace varmargin::app
