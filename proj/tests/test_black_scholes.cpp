#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "varmargin/black_scholes.hpp"

namespace varmargin {
namespace {

// Discounted expected payoff under the risk-neutral lognormal law, by composite
// Simpson integration over the standard normal variable on the exercise region.
double price_by_integration(const OptionSpec& s, double spot) {
  const double drift = (s.rate - 0.5 * s.vol_annual * s.vol_annual) * s.expiry_years;
  const double vol = s.vol_annual * std::sqrt(s.expiry_years);
  const double boundary = std::clamp((std::log(s.strike / spot) - drift) / vol, -12.0, 12.0);
  const int n = 20000;
  const double lo = s.kind == OptionKind::call ? boundary : -12.0;
  const double hi = s.kind == OptionKind::call ? 12.0 : boundary;
  const double step = (hi - lo) / n;
  double sum = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double z = lo + i * step;
    const double st = spot * std::exp(drift + vol * z);
    const double payoff = s.kind == OptionKind::call ? std::max(st - s.strike, 0.0) : std::max(s.strike - st, 0.0);
    const double weight = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    sum += weight * payoff * std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI);
  }
  return std::exp(-s.rate * s.expiry_years) * sum * step / 3.0;
}

OptionSpec atm(OptionKind kind) { return {"X", kind, 100.0, 1.0, 0.05, 0.2}; }

TEST(BlackScholes, TextbookValues) {
  EXPECT_NEAR(bs_price(atm(OptionKind::call), 100.0), 10.4506, 1e-4);
  EXPECT_NEAR(bs_price(atm(OptionKind::put), 100.0), 5.5735, 1e-4);
}

TEST(BlackScholes, MatchesIntegration) {
  for (double spot : {60.0, 90.0, 100.0, 115.0, 160.0})
    for (double vol : {0.05, 0.2, 0.6})
      for (auto kind : {OptionKind::call, OptionKind::put}) {
        OptionSpec s{"X", kind, 100.0, 0.75, 0.03, vol};
        EXPECT_NEAR(bs_price(s, spot), price_by_integration(s, spot), 1e-8) << spot << " " << vol;
      }
}

TEST(BlackScholes, PutCallParity) {
  for (double spot : {50.0, 100.0, 150.0}) {
    const double c = bs_price(atm(OptionKind::call), spot);
    const double p = bs_price(atm(OptionKind::put), spot);
    EXPECT_NEAR(c - p, spot - 100.0 * std::exp(-0.05), 1e-10);
  }
}

TEST(BlackScholes, MonotoneInSpotAndVol) {
  double previous_call = 0.0, previous_put = 1e9;
  for (double spot = 50.0; spot <= 150.0; spot += 5.0) {
    const double c = bs_price(atm(OptionKind::call), spot);
    const double p = bs_price(atm(OptionKind::put), spot);
    EXPECT_GT(c, previous_call);
    EXPECT_LT(p, previous_put);
    previous_call = c;
    previous_put = p;
  }
  double previous = 0.0;
  for (double vol = 0.05; vol <= 1.0; vol += 0.05) {
    auto s = atm(OptionKind::call);
    s.vol_annual = vol;
    const double c = bs_price(s, 100.0);
    EXPECT_GT(c, previous);  // positive vega
    previous = c;
  }
}

TEST(BlackScholes, ZeroVolIsDiscountedIntrinsic) {
  auto s = atm(OptionKind::call);
  s.vol_annual = 0.0;
  EXPECT_DOUBLE_EQ(bs_price(s, 120.0), 120.0 - 100.0 * std::exp(-0.05));
  EXPECT_EQ(bs_price(s, 80.0), 0.0);
}

TEST(BlackScholes, AnnualizedVol) { EXPECT_DOUBLE_EQ(annualized_vol(0.01), 0.01 * std::sqrt(252.0)); }

TEST(OptionReturns, FullRevaluation) {
  const auto spec = atm(OptionKind::put);
  const std::vector<double> moves{-0.1, 0.0, 0.1};
  const auto r = option_return_scenarios(spec, 100.0, moves, 1);
  const double p0 = bs_price(spec, 100.0);
  auto later = spec;
  later.expiry_years -= 1.0 / 252.0;
  for (std::size_t i = 0; i < moves.size(); ++i)
    EXPECT_DOUBLE_EQ(r[i], bs_price(later, 100.0 * (1.0 + moves[i])) / p0 - 1.0);
  EXPECT_GT(r[0], 0.0);
  EXPECT_LT(r[2], 0.0);
  // Zero holding period and zero move leaves the option unchanged.
  EXPECT_EQ(option_return_scenarios(spec, 100.0, std::vector<double>{0.0}, 0)[0], 0.0);
}

TEST(OptionReturns, Errors) {
  auto spec = atm(OptionKind::call);
  spec.expiry_years = 2.0 / 252.0;
  try {
    option_return_scenarios(spec, 100.0, std::vector<double>{0.0}, 2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ExpiredWithinHorizon);
  }
  spec.strike = 0.0;
  EXPECT_THROW(bs_price(spec, 100.0), Error);
  EXPECT_EQ(parse_option_kind("put"), OptionKind::put);
  EXPECT_THROW(parse_option_kind("straddle"), Error);
}

}  // namespace
}  // namespace varmargin
