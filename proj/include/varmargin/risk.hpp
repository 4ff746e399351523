#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "varmargin/error.hpp"
#include "varmargin/normal.hpp"

namespace varmargin {

/// Tail (exceedance) probability of a risk measure: a 5% VaR has alpha = 0.05.
class TailLevel {
 public:
  explicit TailLevel(double alpha) : alpha_(alpha) {
    require(alpha > 0.0 && alpha <= 0.5, ErrorCode::InvalidArgument,
            "tail level must lie in (0, 0.5], got " + std::to_string(alpha));
  }
  double value() const { return alpha_; }

 private:
  double alpha_;
};

struct NormalParams {
  double mu = 0.0;
  double sigma = 0.0;
};

enum class RiskMethod { normal, historical, monte_carlo };

constexpr std::string_view to_string(RiskMethod m) {
  switch (m) {
    case RiskMethod::normal: return "normal";
    case RiskMethod::historical: return "historical";
    case RiskMethod::monte_carlo: return "monte_carlo";
  }
  return "normal";
}

inline RiskMethod parse_risk_method(std::string_view s) {
  if (s == "normal") return RiskMethod::normal;
  if (s == "historical") return RiskMethod::historical;
  if (s == "monte_carlo" || s == "mc") return RiskMethod::monte_carlo;
  throw Error(ErrorCode::InvalidArgument, "unknown method '" + std::string(s) + "'");
}

struct RiskReport {
  double alpha = 0.05;
  int horizon_days = 1;
  double var = 0.0;
  double es = 0.0;
  RiskMethod method = RiskMethod::normal;
};

/// z-value used by the analytic formulas: q_{1-alpha}, or a caller override
/// such as the rounded 1.65 used in textbook examples.
inline double upper_quantile(TailLevel alpha, std::optional<double> z_override = std::nullopt) {
  return z_override ? *z_override : -normal::quantile(alpha.value());
}

/// ES constant C_alpha = phi(z) / alpha with z = q_{1-alpha}.
inline double es_constant(TailLevel alpha, std::optional<double> z_override = std::nullopt) {
  return normal::pdf(upper_quantile(alpha, z_override)) / alpha.value();
}

inline void validate(const NormalParams& p) {
  require(p.sigma >= 0.0 && std::isfinite(p.sigma) && std::isfinite(p.mu), ErrorCode::InvalidArgument,
          "normal params need finite mu and sigma >= 0");
}

/// Signed: negative when the drift outweighs the volatility term.
inline double var_normal(const NormalParams& p, TailLevel alpha, std::optional<double> z_override = std::nullopt) {
  validate(p);
  return upper_quantile(alpha, z_override) * p.sigma - p.mu;
}

inline double es_normal(const NormalParams& p, TailLevel alpha, std::optional<double> z_override = std::nullopt) {
  validate(p);
  return es_constant(alpha, z_override) * p.sigma - p.mu;
}

/// Square-root-of-time rule for i.i.d. per-period returns.
inline NormalParams scale_horizon(const NormalParams& p, int days) {
  require(days >= 1, ErrorCode::InvalidArgument, "horizon must be at least one day");
  return {p.mu * days, p.sigma * std::sqrt(static_cast<double>(days))};
}

// ---------------------------------------------------------------------------
// Discrete loss distributions

struct LossOutcome {
  double loss;
  double probability;
};

class DiscreteLoss {
 public:
  explicit DiscreteLoss(std::vector<LossOutcome> outcomes) : outcomes_(std::move(outcomes)) {
    require(!outcomes_.empty(), ErrorCode::InvalidArgument, "discrete loss needs outcomes");
    double total = 0.0;
    for (const auto& o : outcomes_) {
      require(o.probability >= 0.0, ErrorCode::InvalidArgument, "negative probability");
      total += o.probability;
    }
    require(std::fabs(total - 1.0) <= 1e-12, ErrorCode::InvalidArgument, "probabilities must sum to 1");
    std::sort(outcomes_.begin(), outcomes_.end(),
              [](const LossOutcome& a, const LossOutcome& b) { return a.loss < b.loss; });
  }

  const std::vector<LossOutcome>& outcomes() const { return outcomes_; }

 private:
  std::vector<LossOutcome> outcomes_;
};

/// Distribution of L1 + L2 for independent losses.
inline DiscreteLoss convolve(const DiscreteLoss& a, const DiscreteLoss& b) {
  std::vector<LossOutcome> merged;
  for (const auto& x : a.outcomes()) {
    for (const auto& y : b.outcomes()) {
      const double loss = x.loss + y.loss;
      auto it = std::find_if(merged.begin(), merged.end(), [&](const LossOutcome& o) { return o.loss == loss; });
      if (it == merged.end()) {
        merged.push_back({loss, x.probability * y.probability});
      } else {
        it->probability += x.probability * y.probability;
      }
    }
  }
  return DiscreteLoss(std::move(merged));
}

/// inf{ l : P(L > l) <= alpha }, exact over the finite support.
inline double var_discrete(const DiscreteLoss& d, TailLevel alpha) {
  const auto& out = d.outcomes();
  double above = 1.0;  // P(L > l) just below the current support point
  for (std::size_t i = 0; i < out.size(); ++i) {
    above -= out[i].probability;
    const bool last_of_value = i + 1 == out.size() || out[i + 1].loss != out[i].loss;
    if (last_of_value && above <= alpha.value() + 1e-12) return out[i].loss;
  }
  return out.back().loss;
}

// ---------------------------------------------------------------------------
// Empirical estimators on return samples (payoff convention: losses are
// negative returns).

/// Index k = ceil(n * alpha), 1-based, clamped to [1, n]. Products that land
/// within rounding noise of an integer are snapped to it.
inline std::size_t tail_count(std::size_t n, TailLevel alpha) {
  const double x = static_cast<double>(n) * alpha.value();
  const double nearest = std::round(x);
  double k = std::fabs(x - nearest) <= 1e-9 * std::max(1.0, x) ? nearest : std::ceil(x);
  k = std::clamp(k, 1.0, static_cast<double>(n));
  return static_cast<std::size_t>(k);
}

/// Set when the sample is too short to see a single tail observation.
inline std::optional<std::string> tail_sample_warning(std::size_t n, TailLevel alpha) {
  if (static_cast<double>(n) * alpha.value() < 1.0) return std::string("n·α < 1");
  return std::nullopt;
}

/// -r_(k) with k = ceil(n alpha): the negated order-statistic quantile.
inline double var_empirical(std::span<const double> sample, TailLevel alpha) {
  require(!sample.empty(), ErrorCode::EmptySample, "empty sample");
  std::vector<double> sorted(sample.begin(), sample.end());
  const std::size_t k = tail_count(sorted.size(), alpha);
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k - 1), sorted.end());
  return -sorted[k - 1];
}

inline double es_empirical(std::span<const double> sample, TailLevel alpha) {
  require(!sample.empty(), ErrorCode::EmptySample, "empty sample");
  std::vector<double> sorted(sample.begin(), sample.end());
  const std::size_t n = sorted.size();
  const std::size_t k = tail_count(n, alpha);
  std::partial_sort(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k), sorted.end());
  const double a = alpha.value();
  double head = 0.0;
  for (std::size_t i = 0; i + 1 < k; ++i) head += sorted[i];
  const double boundary_weight = a - static_cast<double>(k - 1) / static_cast<double>(n);
  return -(head / static_cast<double>(n) + boundary_weight * sorted[k - 1]) / a;
}

/// Empirical alpha-quantile r_(ceil(n alpha)) itself (not negated).
inline double empirical_quantile(std::span<const double> sample, TailLevel alpha) {
  return -var_empirical(sample, alpha);
}

inline RiskReport empirical_report(std::span<const double> sample, TailLevel alpha, int horizon_days,
                                   RiskMethod method) {
  return {alpha.value(), horizon_days, var_empirical(sample, alpha), es_empirical(sample, alpha), method};
}

inline RiskReport normal_report(const NormalParams& one_day, TailLevel alpha, int horizon_days,
                                std::optional<double> z_override = std::nullopt) {
  const auto p = scale_horizon(one_day, horizon_days);
  return {alpha.value(), horizon_days, var_normal(p, alpha, z_override), es_normal(p, alpha, z_override),
          RiskMethod::normal};
}

}  // namespace varmargin
