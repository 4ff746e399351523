#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "varmargin/error.hpp"
#include "varmargin/normal.hpp"

namespace varmargin {

inline constexpr double trading_days_per_year = 252.0;

enum class OptionKind { call, put };

constexpr std::string_view to_string(OptionKind k) { return k == OptionKind::call ? "call" : "put"; }

inline OptionKind parse_option_kind(std::string_view s) {
  if (s == "call") return OptionKind::call;
  if (s == "put") return OptionKind::put;
  throw Error(ErrorCode::InvalidArgument, "option kind must be call or put, got '" + std::string(s) + "'");
}

/// European vanilla option on a single underlying, no dividends.
struct OptionSpec {
  std::string underlying_id;
  OptionKind kind = OptionKind::call;
  double strike = 0.0;
  double expiry_years = 0.0;
  double rate = 0.0;        // continuously compounded
  double vol_annual = 0.0;

  void validate() const {
    require(strike > 0.0, ErrorCode::InvalidArgument, "strike must be > 0");
    require(expiry_years > 0.0, ErrorCode::InvalidArgument, "expiry must be > 0");
    require(vol_annual >= 0.0, ErrorCode::InvalidArgument, "volatility must be >= 0");
  }
};

/// Daily standard deviation scaled to a year of trading days.
inline double annualized_vol(double daily_sigma) { return daily_sigma * std::sqrt(trading_days_per_year); }

inline double bs_price(const OptionSpec& spec, double spot) {
  spec.validate();
  require(spot > 0.0 && std::isfinite(spot), ErrorCode::InvalidArgument, "spot must be > 0");
  const double t = spec.expiry_years;
  const double discounted_strike = spec.strike * std::exp(-spec.rate * t);
  const double vol_sqrt_t = spec.vol_annual * std::sqrt(t);
  if (vol_sqrt_t < 1e-14) {
    return spec.kind == OptionKind::call ? std::max(spot - discounted_strike, 0.0)
                                         : std::max(discounted_strike - spot, 0.0);
  }
  const double d1 = (std::log(spot / spec.strike) + (spec.rate + 0.5 * spec.vol_annual * spec.vol_annual) * t) / vol_sqrt_t;
  const double d2 = d1 - vol_sqrt_t;
  if (spec.kind == OptionKind::call) return spot * normal::cdf(d1) - discounted_strike * normal::cdf(d2);
  return discounted_strike * normal::cdf(-d2) - spot * normal::cdf(-d1);
}

/// Full-revaluation option returns: each underlying scenario moves the spot to
/// spot * (1 + r) and the option is repriced with `holding_days` of time decay.
inline std::vector<double> option_return_scenarios(const OptionSpec& spec, double spot,
                                                   std::span<const double> underlying_returns, int holding_days) {
  require(holding_days >= 0, ErrorCode::InvalidArgument, "holding period must be >= 0 days");
  const double elapsed = holding_days / trading_days_per_year;
  require(spec.expiry_years > elapsed, ErrorCode::ExpiredWithinHorizon,
          "option expires within the " + std::to_string(holding_days) + "-day horizon");
  const double price0 = bs_price(spec, spot);
  require(price0 > 0.0, ErrorCode::InvalidArgument, "option has zero value today; returns undefined");

  OptionSpec later = spec;
  later.expiry_years = spec.expiry_years - elapsed;
  std::vector<double> out;
  out.reserve(underlying_returns.size());
  for (double r : underlying_returns) {
    require(r > -1.0, ErrorCode::InvalidArgument, "underlying return must exceed -1");
    out.push_back(bs_price(later, spot * (1.0 + r)) / price0 - 1.0);
  }
  return out;
}

}  // namespace varmargin
