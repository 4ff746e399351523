#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <boost/math/distributions/normal.hpp>
#include <gtest/gtest.h>

#include "varmargin/risk.hpp"
#include "varmargin/scenario.hpp"

namespace varmargin {
namespace {

// Composite Simpson rule on [a, b].
template <typename F>
double simpson(F f, double a, double b, int intervals = 20000) {
  const double h = (b - a) / intervals;
  double s = f(a) + f(b);
  for (int i = 1; i < intervals; ++i) s += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
  return s * h / 3.0;
}

TEST(NormalQuantile, MatchesBoostAcrossRange) {
  const boost::math::normal_distribution<double> oracle;
  for (double p : {1e-12, 1e-9, 5e-7, 1e-4, 0.001, 0.01, 0.05, 0.2, 0.425, 0.5, 0.6, 0.95, 0.975, 0.999, 1 - 1e-9, 1 - 1e-12}) {
    EXPECT_NEAR(normal::quantile(p), boost::math::quantile(oracle, p), 1e-9) << p;
  }
  std::mt19937_64 gen(3);
  std::uniform_real_distribution<double> u(-12.0, 0.0);
  for (int i = 0; i < 2000; ++i) {
    const double p = std::pow(10.0, u(gen));
    EXPECT_NEAR(normal::quantile(p), boost::math::quantile(oracle, p), 1e-9) << p;
    EXPECT_NEAR(normal::quantile(1.0 - p), boost::math::quantile(oracle, 1.0 - p), 1e-9) << p;
  }
  EXPECT_THROW(normal::quantile(0.0), Error);
  EXPECT_THROW(normal::quantile(1.0), Error);
}

TEST(TailLevel, Validates) {
  EXPECT_THROW(TailLevel{0.0}, Error);
  EXPECT_THROW(TailLevel{0.51}, Error);
  EXPECT_THROW(TailLevel{-0.1}, Error);
  EXPECT_NO_THROW(TailLevel{0.5});
}

TEST(VarNormal, Examples) {
  // $10,000,000 x (1.65 x 0.0053) = $87,450
  EXPECT_NEAR(var_normal({0.0, 0.0053}, TailLevel{0.05}, 1.65), 0.008745, 1e-15);
  EXPECT_NEAR(1e7 * var_normal({0.0, 0.0053}, TailLevel{0.05}, 1.65), 87450.0, 1e-6);
  EXPECT_EQ(var_normal({0.0, 0.0}, TailLevel{0.05}), 0.0);
  EXPECT_NEAR(var_normal({0.0, 1.0}, TailLevel{0.05}), 1.644854, 1e-5);
  EXPECT_NEAR(var_normal({0.0, 1.0}, TailLevel{0.05}), 1.6448536269514722, 1e-12);
  EXPECT_LT(var_normal({0.05, 0.01}, TailLevel{0.05}), 0.0);  // signed, not clamped
}

TEST(EsNormal, MatchesTailIntegral) {
  for (double alpha : {0.001, 0.01, 0.05, 0.2, 0.5}) {
    const double q = boost::math::quantile(boost::math::normal_distribution<double>(), 1.0 - alpha);
    // E[-Z | Z < -q] = (1/alpha) * integral_{-inf}^{-q} (-z) phi(z) dz
    const double tail = simpson([](double z) { return -z * std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI); }, -40.0, -q,
                                200000) / alpha;
    EXPECT_NEAR(es_normal({0.0, 1.0}, TailLevel{alpha}), tail, 1e-9) << alpha;
  }
  EXPECT_NEAR(es_normal({0.0, 1.0}, TailLevel{0.05}), 2.06271, 1e-4);
  EXPECT_EQ(es_normal({0.0, 0.0}, TailLevel{0.05}), 0.0);
}

TEST(EsNormal, AgreesWithMonteCarloTailMean) {
  const NormalModel model{{"Z"}, {0.0}, Matrix::identity(1)};
  const auto draws = sample(model, 1000000, 2024).column(0);
  const TailLevel alpha{0.05};
  const double estimate = es_empirical(draws, alpha);
  // Standard error of the tail-mean estimator from the sample itself.
  std::vector<double> sorted = draws;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t k = tail_count(sorted.size(), alpha);
  const double tail_mean = std::accumulate(sorted.begin(), sorted.begin() + k, 0.0) / k;
  double tail_var = 0.0;
  for (std::size_t i = 0; i < k; ++i) tail_var += (sorted[i] - tail_mean) * (sorted[i] - tail_mean);
  tail_var /= k - 1;
  const double gap = -tail_mean + sorted[k - 1];
  const double se = std::sqrt((tail_var + (1 - alpha.value()) * gap * gap) / (sorted.size() * alpha.value()));
  EXPECT_NEAR(estimate, es_normal({0.0, 1.0}, alpha), 3.0 * se);
}

TEST(NormalMeasures, Properties) {
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> mu(-0.01, 0.01), sigma(0.0, 0.05), lambda(0.0, 10.0), alpha(0.001, 0.5),
      shift(-0.1, 0.1);
  for (int i = 0; i < 500; ++i) {
    const NormalParams p{mu(gen), sigma(gen)};
    const TailLevel a{alpha(gen)};
    const double c = shift(gen), l = lambda(gen);
    EXPECT_NEAR(var_normal({p.mu + c, p.sigma}, a), var_normal(p, a) - c, 1e-15);
    EXPECT_NEAR(var_normal({l * p.mu, l * p.sigma}, a), l * var_normal(p, a), 1e-14);
    EXPECT_GE(es_normal(p, a), var_normal(p, a) - 1e-16);
    const TailLevel smaller{a.value() * 0.5};
    EXPECT_GE(var_normal(p, smaller), var_normal(p, a) - 1e-16);
  }
}

TEST(ScaleHorizon, SquareRootOfTime) {
  const auto ten = scale_horizon({0.0, 0.0053}, 10);
  EXPECT_NEAR(ten.sigma, 0.016761, 1e-6);
  EXPECT_NEAR(1e7 * var_normal(ten, TailLevel{0.05}, 1.65), 276541.0, 1.0);
  const NormalParams p{0.001, 0.02};
  EXPECT_EQ(scale_horizon(p, 1).mu, p.mu);
  EXPECT_EQ(scale_horizon(p, 1).sigma, p.sigma);
  EXPECT_DOUBLE_EQ(scale_horizon(p, 4).sigma, 2.0 * p.sigma);
  EXPECT_DOUBLE_EQ(scale_horizon(p, 4).mu, 4.0 * p.mu);
  EXPECT_THROW(scale_horizon(p, 0), Error);
}

TEST(VarDiscrete, BondExample) {
  const DiscreteLoss bond({{0.0, 0.96}, {100.0, 0.04}});
  const TailLevel alpha{0.05};
  EXPECT_EQ(var_discrete(bond, alpha), 0.0);
  const auto both = convolve(bond, bond);
  ASSERT_EQ(both.outcomes().size(), 3u);
  EXPECT_NEAR(both.outcomes()[0].probability, 0.9216, 1e-15);
  EXPECT_NEAR(both.outcomes()[1].probability, 0.0768, 1e-15);
  EXPECT_NEAR(both.outcomes()[2].probability, 0.0016, 1e-15);
  EXPECT_EQ(var_discrete(both, alpha), 100.0);
  // VaR is not subadditive here.
  EXPECT_GT(var_discrete(both, alpha), var_discrete(bond, alpha) + var_discrete(bond, alpha));
}

TEST(VarDiscrete, EdgeCases) {
  EXPECT_EQ(var_discrete(DiscreteLoss({{42.0, 1.0}}), TailLevel{0.01}), 42.0);
  EXPECT_EQ(var_discrete(DiscreteLoss({{42.0, 1.0}}), TailLevel{0.5}), 42.0);
  // P(L > 0) = 0.05 exactly qualifies at alpha = 0.05
  EXPECT_EQ(var_discrete(DiscreteLoss({{0.0, 0.95}, {10.0, 0.05}}), TailLevel{0.05}), 0.0);
  EXPECT_EQ(var_discrete(DiscreteLoss({{0.0, 0.94}, {10.0, 0.06}}), TailLevel{0.05}), 10.0);
  EXPECT_THROW(DiscreteLoss({{0.0, 0.5}}), Error);
  EXPECT_THROW(DiscreteLoss({{0.0, 1.1}, {1.0, -0.1}}), Error);
}

const std::vector<double> ten_returns{-0.05, -0.03, 0.01, 0.02, 0.0, 0.015, 0.03, 0.025, 0.005, 0.04};

TEST(VarEmpirical, OrderStatistic) {
  EXPECT_DOUBLE_EQ(var_empirical(ten_returns, TailLevel{0.2}), 0.03);
  EXPECT_DOUBLE_EQ(var_empirical(ten_returns, TailLevel{0.1}), 0.05);
  EXPECT_DOUBLE_EQ(var_empirical(ten_returns, TailLevel{0.15}), 0.03);  // ceil(1.5) = 2
  EXPECT_DOUBLE_EQ(var_empirical(std::vector<double>(7, 0.013), TailLevel{0.3}), -0.013);

  std::vector<double> many(505);
  for (std::size_t i = 0; i < many.size(); ++i) many[i] = std::sin(static_cast<double>(i));
  EXPECT_EQ(var_empirical(many, TailLevel{5e-7}), -*std::min_element(many.begin(), many.end()));
  EXPECT_TRUE(tail_sample_warning(505, TailLevel{5e-7}).has_value());
  EXPECT_FALSE(tail_sample_warning(100, TailLevel{0.01}).has_value());
  EXPECT_THROW(var_empirical(std::vector<double>{}, TailLevel{0.1}), Error);
}

TEST(EsEmpirical, Examples) {
  EXPECT_NEAR(es_empirical(ten_returns, TailLevel{0.2}), 0.04, 1e-15);
  EXPECT_NEAR(es_empirical(std::vector<double>(9, -0.02), TailLevel{0.25}), 0.02, 1e-15);
  EXPECT_THROW(es_empirical(std::vector<double>{}, TailLevel{0.1}), Error);
}

/// (1/alpha) * integral_0^alpha of -Q(p) dp with Q the empirical quantile
/// function Q(p) = r_(ceil(n p)), integrated interval by interval.
double es_by_quantile_integral(std::vector<double> sample, double alpha) {
  std::sort(sample.begin(), sample.end());
  const double n = static_cast<double>(sample.size());
  double integral = 0.0;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const double lo = i / n, hi = std::min(alpha, (i + 1) / n);
    if (hi <= lo) break;
    integral += (hi - lo) * sample[i];
  }
  return -integral / alpha;
}

TEST(EsEmpirical, MatchesQuantileIntegralAndTailMean) {
  std::mt19937_64 gen(17);
  std::student_t_distribution<double> fat(4.0);
  std::uniform_int_distribution<int> size(20, 400);
  std::uniform_real_distribution<double> alpha(0.001, 0.5);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> s(size(gen));
    for (double& v : s) v = 0.01 * fat(gen);
    const double a = alpha(gen);
    EXPECT_NEAR(es_empirical(s, TailLevel{a}), es_by_quantile_integral(s, a), 1e-10);

    const std::size_t k = std::max<std::size_t>(1, s.size() / 10);
    const double integer_alpha = static_cast<double>(k) / s.size();
    std::vector<double> sorted = s;
    std::sort(sorted.begin(), sorted.end());
    const double worst_mean = std::accumulate(sorted.begin(), sorted.begin() + k, 0.0) / k;
    EXPECT_NEAR(es_empirical(s, TailLevel{integer_alpha}), -worst_mean, 1e-12);
    EXPECT_GE(es_empirical(s, TailLevel{a}), var_empirical(s, TailLevel{a}) - 1e-15);
  }
}

TEST(VarEmpirical, MonotoneInTailLevel) {
  std::mt19937_64 gen(23);
  std::normal_distribution<double> z;
  std::vector<double> s(1000);
  for (double& v : s) v = z(gen);
  double previous = var_empirical(s, TailLevel{0.001});
  for (double a = 0.002; a <= 0.5; a += 0.001) {
    const double v = var_empirical(s, TailLevel{a});
    EXPECT_LE(v, previous);
    previous = v;
  }
}

}  // namespace
}  // namespace varmargin
