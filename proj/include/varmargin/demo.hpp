#pragma once

#include <chrono>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "varmargin/market_data.hpp"
#include "varmargin/normal.hpp"
#include "varmargin/scenario.hpp"

namespace varmargin::demo {

// Synthetic market calibrated so the textbook margining walk-through comes out
// with its published VaR inputs: zero drift, alpha = 0.001, a three-asset book
// weighted (0.2, 0.7, 0.1) with VaR 0.0804, and an uncorrelated fourth asset
// that brings the VaR of (0.15, 0.525, 0.075, 0.25) down to 0.0663.

inline constexpr double alpha = 0.001;
inline constexpr double h = 0.2;
inline constexpr double capital = 10000.0;
inline constexpr double base_var = 0.0804;
inline constexpr double diversified_var = 0.0663;

inline const std::vector<std::string>& asset_ids() {
  static const std::vector<std::string> ids{"ISP", "IGV", "G", "ENI"};
  return ids;
}

inline const std::map<std::string, double>& spots() {
  static const std::map<std::string, double> s{{"ISP", 2.25}, {"IGV", 0.85}, {"G", 17.5}, {"ENI", 13.9}};
  return s;
}

/// Base book: 6000 / 21000 / 3000 in the first three assets.
inline const std::vector<double>& base_amounts() {
  static const std::vector<double> w{6000.0, 21000.0, 3000.0};
  return w;
}

inline NormalModel model() {
  const double q = -normal::quantile(alpha);
  // Shape of the first three assets before scaling to the target VaR.
  const Vector vol{0.022, 0.035, 0.016};
  const double corr[3][3] = {{1.0, 0.3, 0.6}, {0.3, 1.0, 0.25}, {0.6, 0.25, 1.0}};
  Matrix base(3, 3);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) base(i, j) = corr[i][j] * vol[i] * vol[j];
  const Vector x{0.2, 0.7, 0.1};
  const double raw = std::sqrt(quadratic_form(base, x));
  const double sigma_p = base_var / q;
  const double scale = (sigma_p / raw) * (sigma_p / raw);

  const double sigma_p4 = diversified_var / q;
  const double var4 = (sigma_p4 * sigma_p4 - 0.75 * 0.75 * sigma_p * sigma_p) / (0.25 * 0.25);

  NormalModel m;
  m.asset_ids = asset_ids();
  m.mu = Vector(4, 0.0);
  m.sigma = Matrix(4, 4);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) m.sigma(i, j) = base(i, j) * scale;
  m.sigma(3, 3) = var4;
  return m;
}

/// Daily close histories whose simple returns have exactly the moments of
/// `m` and whose last close equals `last`. Weekdays only, ending on `end`.
inline std::vector<PriceSeries> price_histories(const NormalModel& m, const std::map<std::string, double>& last,
                                                std::size_t days, std::uint64_t seed,
                                                Date end = std::chrono::year{2019} / 12 / 31) {
  const auto returns = moment_matched_sample(m, days, seed);
  std::vector<Date> dates;
  std::chrono::sys_days d{end};
  while (dates.size() < days + 1) {
    const std::chrono::weekday wd{d};
    if (wd != std::chrono::Saturday && wd != std::chrono::Sunday) dates.push_back(Date{d});
    d -= std::chrono::days{1};
  }
  std::vector<PriceSeries> out;
  for (std::size_t k = 0; k < m.size(); ++k) {
    PriceSeries series{m.asset_ids[k], std::vector<PricePoint>(days + 1)};
    auto it = last.find(m.asset_ids[k]);
    require(it != last.end(), ErrorCode::UnknownAsset, "no closing price for " + m.asset_ids[k]);
    double price = it->second;
    for (std::size_t t = days + 1; t-- > 0;) {
      series.observations[t] = {dates[days - t], price};
      if (t > 0) price /= 1.0 + returns(t - 1, k);
    }
    out.push_back(std::move(series));
  }
  return out;
}

}  // namespace varmargin::demo
