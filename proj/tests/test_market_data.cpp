#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "varmargin/market_data.hpp"

namespace varmargin {
namespace {

PriceSeries series_of(std::vector<double> closes) {
  PriceSeries p{"X", {}};
  Date d = std::chrono::year{2015} / 1 / 1;
  for (double c : closes) {
    p.observations.push_back({d, c});
    d = std::chrono::sys_days{d} + std::chrono::days{1};
  }
  return p;
}

ErrorCode code_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorCode::InvalidArgument;
}

TEST(LoadPrices, ParsesTwoRows) {
  const auto p = load_prices("date,close\n2015-01-02,100.0\n2015-01-05,110.0", "ENI");
  ASSERT_EQ(p.size(), 2u);
  EXPECT_EQ(p.asset_id, "ENI");
  EXPECT_EQ(format_date(p.observations[1].date), "2015-01-05");
  EXPECT_DOUBLE_EQ(p.observations[1].close, 110.0);
}

TEST(LoadPrices, SortsByDate) {
  const auto p = load_prices("date,close\r\n2015-01-05,110\r\n2015-01-02,100\r\n", "X");
  EXPECT_DOUBLE_EQ(p.observations.front().close, 100.0);
}

TEST(LoadPrices, Errors) {
  EXPECT_EQ(code_of([] { load_prices("date,close\n2015-01-02,-3", "X"); }), ErrorCode::NonPositivePrice);
  EXPECT_EQ(code_of([] { load_prices("date,close\n2015-01-02,0", "X"); }), ErrorCode::NonPositivePrice);
  EXPECT_EQ(code_of([] { load_prices("date,close\n2015-01-02,1\n2015-01-02,2", "X"); }), ErrorCode::DuplicateDate);
  EXPECT_EQ(code_of([] { load_prices("day,price\n2015-01-02,1", "X"); }), ErrorCode::MalformedRow);
  EXPECT_EQ(code_of([] { load_prices("date,close\n2015-13-02,1", "X"); }), ErrorCode::MalformedRow);
  EXPECT_EQ(code_of([] { load_prices("date,close\n2015-02-30,1", "X"); }), ErrorCode::MalformedRow);
  EXPECT_EQ(code_of([] { load_prices("date,close\n2015-01-02,abc", "X"); }), ErrorCode::MalformedRow);
  EXPECT_EQ(code_of([] { load_prices("date,close\n2015-01-02,1,2", "X"); }), ErrorCode::MalformedRow);
}

TEST(LoadPrices, ReportsLineNumber) {
  try {
    load_prices("date,close\n2015-01-02,1\n\n2015-01-04,x\n", "X");
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("line 4"), std::string::npos) << e.what();
  }
}

TEST(LoadPrices, CsvRoundTrip) {
  const auto p = series_of({100.0, 101.25, 99.5});
  EXPECT_EQ(load_prices(to_csv(p), "X").observations.size(), 3u);
  EXPECT_EQ(to_csv(load_prices(to_csv(p), "X")), to_csv(p));
}

TEST(Returns, Simple) {
  EXPECT_NEAR(simple_returns(series_of({100, 110})).observations[0].value, 0.10, 1e-15);
  EXPECT_EQ(simple_returns(series_of({100, 100})).observations[0].value, 0.0);
  const auto r = simple_returns(series_of({100, 110, 99})).values();
  // 110/100 - 1 and 99/110 - 1 by hand
  EXPECT_NEAR(r[0], 0.10, 1e-15);
  EXPECT_NEAR(r[1], -0.10, 1e-15);
  EXPECT_EQ(simple_returns(series_of({100, 110})).observations[0].date, (std::chrono::year{2015} / 1 / 2));
}

TEST(Returns, Log) {
  EXPECT_NEAR(log_returns(series_of({100, 110})).observations[0].value, 0.0953101798043249, 1e-15);
  EXPECT_EQ(log_returns(series_of({100, 100})).observations[0].value, 0.0);
}

TEST(Returns, TooShort) {
  EXPECT_EQ(code_of([] { simple_returns(series_of({100})); }), ErrorCode::SeriesTooShort);
  EXPECT_EQ(code_of([] { log_returns(series_of({})); }), ErrorCode::SeriesTooShort);
}

TEST(Compound, SimpleAndLog) {
  EXPECT_NEAR(compound(simple_returns(series_of({100, 110, 99}))), -0.01, 1e-15);
  ReturnSeries logs{"X", ReturnKind::log, {}};
  for (double v : {0.01, -0.02, 0.005}) logs.observations.push_back({std::chrono::year{2015} / 1 / 1, v});
  EXPECT_DOUBLE_EQ(compound(logs), 0.01 + -0.02 + 0.005);
}

TEST(ReturnProperties, RandomSeries) {
  std::mt19937_64 gen(7);
  std::normal_distribution<double> step(0.0, 0.02);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> closes{50.0 + trial};
    for (int i = 0; i < 60; ++i) closes.push_back(closes.back() * std::exp(step(gen)));
    const auto p = series_of(closes);
    const auto logs = log_returns(p);
    const auto simple = simple_returns(p);
    ASSERT_EQ(logs.observations.size(), p.size() - 1);

    // exp(sum of log returns) * P0 = Pn
    EXPECT_NEAR(std::exp(compound(logs)) * closes.front() / closes.back(), 1.0, 1e-12);
    EXPECT_NEAR(compound(logs), std::log1p(compound(simple)), 1e-12);

    for (std::size_t t = 0; t < simple.observations.size(); ++t) {
      const double r = simple.observations[t].value;
      EXPECT_GT(r, -1.0);
      if (std::fabs(r) <= 0.05) EXPECT_LE(std::fabs(logs.observations[t].value - r), r * r);
    }
  }
}

TEST(Align, IntersectsDates) {
  auto a = simple_returns(load_prices("date,close\n2015-01-01,1\n2015-01-02,2\n2015-01-03,3\n2015-01-05,4", "A"));
  auto b = simple_returns(load_prices("date,close\n2015-01-02,1\n2015-01-03,2\n2015-01-05,4\n2015-01-06,3", "B"));
  const auto panel = align({a, b});
  ASSERT_EQ(panel.num_rows(), 2u);
  EXPECT_EQ(format_date(panel.dates[0]), "2015-01-03");
  EXPECT_EQ(format_date(panel.dates[1]), "2015-01-05");
  EXPECT_EQ(panel.asset_ids, (std::vector<std::string>{"A", "B"}));
  EXPECT_DOUBLE_EQ(panel.rows[0][0], 0.5);
  EXPECT_DOUBLE_EQ(panel.rows[0][1], 1.0);
  EXPECT_DOUBLE_EQ(panel.rows[1][1], 1.0);

  EXPECT_EQ(align(split(panel)), panel);
}

TEST(Align, Errors) {
  auto a = simple_returns(load_prices("date,close\n2015-01-01,1\n2015-01-02,2", "A"));
  auto b = simple_returns(load_prices("date,close\n2016-01-01,1\n2016-01-02,2", "B"));
  EXPECT_EQ(code_of([&] { align({a, b}); }), ErrorCode::NoCommonDates);
  auto c = log_returns(load_prices("date,close\n2015-01-01,1\n2015-01-02,2", "C"));
  EXPECT_EQ(code_of([&] { align({a, c}); }), ErrorCode::MixedKinds);
}

TEST(Align, IdempotentOnRandomCalendars) {
  std::mt19937_64 gen(11);
  std::bernoulli_distribution keep(0.8);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<ReturnSeries> series;
    for (int k = 0; k < 3; ++k) {
      PriceSeries p{"A" + std::to_string(k), {}};
      for (int d = 1; d <= 28; ++d)
        if (keep(gen)) p.observations.push_back({std::chrono::year{2016} / 2 / d, 10.0 + d + k});
      series.push_back(simple_returns(p));
    }
    const auto panel = align(series);
    EXPECT_EQ(align(split(panel)), panel);
    for (std::size_t t = 1; t < panel.dates.size(); ++t) EXPECT_LT(panel.dates[t - 1], panel.dates[t]);
  }
}

}  // namespace
}  // namespace varmargin
