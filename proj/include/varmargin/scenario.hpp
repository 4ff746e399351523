#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "varmargin/error.hpp"
#include "varmargin/linalg.hpp"
#include "varmargin/market_data.hpp"
#include "varmargin/normal.hpp"
#include "varmargin/risk.hpp"

namespace varmargin {

/// Multivariate normal law of one-period simple returns.
struct NormalModel {
  std::vector<std::string> asset_ids;
  Vector mu;
  Matrix sigma;

  std::size_t size() const { return asset_ids.size(); }

  std::size_t index_of(const std::string& id) const {
    for (std::size_t k = 0; k < asset_ids.size(); ++k)
      if (asset_ids[k] == id) return k;
    throw Error(ErrorCode::UnknownAsset, "asset '" + id + "' not in model");
  }

  /// Mean and standard deviation of exposure' R.
  NormalParams portfolio(std::span<const double> exposure) const {
    require(exposure.size() == size(), ErrorCode::DimensionMismatch, "exposure length differs from model");
    return {dot(exposure, mu), std::sqrt(std::max(0.0, quadratic_form(sigma, exposure)))};
  }
};

inline void validate(const NormalModel& m) {
  const std::size_t n = m.size();
  require(m.mu.size() == n && m.sigma.rows() == n && m.sigma.cols() == n, ErrorCode::DimensionMismatch,
          "model dimensions inconsistent with asset ids");
  const double scale = std::max(1.0, m.sigma.max_abs());
  for (std::size_t i = 0; i < n; ++i) {
    require(m.sigma(i, i) >= 0.0, ErrorCode::NotPositiveSemidefinite, "negative variance");
    for (std::size_t j = 0; j < i; ++j)
      require(std::fabs(m.sigma(i, j) - m.sigma(j, i)) <= 1e-12 * scale, ErrorCode::InvalidArgument,
              "covariance matrix is not symmetric");
  }
}

/// Sub-model over the listed assets, in the listed order.
inline NormalModel restrict(const NormalModel& m, const std::vector<std::string>& ids) {
  NormalModel out;
  out.asset_ids = ids;
  out.mu.resize(ids.size());
  out.sigma = Matrix(ids.size(), ids.size());
  std::vector<std::size_t> idx;
  for (const auto& id : ids) idx.push_back(m.index_of(id));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    out.mu[i] = m.mu[idx[i]];
    for (std::size_t j = 0; j < ids.size(); ++j) out.sigma(i, j) = m.sigma(idx[i], idx[j]);
  }
  return out;
}

/// FNV-1a over ids and the raw bytes of every parameter; identifies the model
/// a Monte Carlo set was drawn from.
inline std::string model_hash(const NormalModel& m) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto eat = [&h](const void* p, std::size_t len) {
    const auto* bytes = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < len; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& id : m.asset_ids) eat(id.data(), id.size() + 1);
  eat(m.mu.data(), m.mu.size() * sizeof(double));
  eat(m.sigma.data().data(), m.sigma.data().size() * sizeof(double));
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

struct Provenance {
  enum class Kind { historical, monte_carlo } kind = Kind::historical;
  std::uint64_t seed = 0;
  std::string model_hash;
};

/// m joint scenarios of simple returns, one row per scenario.
struct ScenarioSet {
  std::vector<std::string> asset_ids;
  Matrix matrix;
  Provenance provenance;

  std::size_t num_scenarios() const { return matrix.rows(); }
  std::size_t num_assets() const { return matrix.cols(); }

  std::size_t index_of(const std::string& id) const {
    for (std::size_t k = 0; k < asset_ids.size(); ++k)
      if (asset_ids[k] == id) return k;
    throw Error(ErrorCode::UnknownAsset, "asset '" + id + "' not in scenario set");
  }

  Vector column(std::size_t j) const {
    Vector c(matrix.rows());
    for (std::size_t i = 0; i < matrix.rows(); ++i) c[i] = matrix(i, j);
    return c;
  }
};

// ---------------------------------------------------------------------------
// Estimation

/// Sample mean and 1/(m-1) covariance of the panel's columns.
inline NormalModel fit_normal(const AlignedReturnPanel& panel) {
  const std::size_t m = panel.num_rows();
  const std::size_t n = panel.num_assets();
  require(m >= 2, ErrorCode::InsufficientData, "need at least 2 joint observations to fit, got " + std::to_string(m));

  NormalModel model{panel.asset_ids, Vector(n, 0.0), Matrix(n, n)};
  for (const auto& row : panel.rows)
    for (std::size_t k = 0; k < n; ++k) model.mu[k] += row[k];
  for (auto& v : model.mu) v /= static_cast<double>(m);

  for (const auto& row : panel.rows)
    for (std::size_t i = 0; i < n; ++i) {
      const double di = row[i] - model.mu[i];
      for (std::size_t j = 0; j <= i; ++j) model.sigma(i, j) += di * (row[j] - model.mu[j]);
    }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j) {
      model.sigma(i, j) /= static_cast<double>(m - 1);
      model.sigma(j, i) = model.sigma(i, j);
    }
  return model;
}

/// Set when fewer than n+1 observations back an n-asset covariance.
inline std::optional<std::string> fit_warning(const AlignedReturnPanel& panel) {
  if (panel.num_rows() < panel.num_assets() + 1) return std::string("fewer than n+1 observations; covariance is singular");
  return std::nullopt;
}

struct CholeskyFactor {
  Matrix lower;
  double jitter = 0.0;  // added to every diagonal entry
};

/// L with L L' = Sigma + jitter I, escalating jitter through
/// {0, 1e-12, 1e-10, 1e-8} * trace/n until the factorization succeeds.
inline CholeskyFactor cholesky(const NormalModel& model) {
  validate(model);
  const std::size_t n = model.size();
  const double mean_var = n ? model.sigma.trace() / static_cast<double>(n) : 0.0;
  if (mean_var == 0.0) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        require(model.sigma(i, j) == 0.0, ErrorCode::NotPositiveSemidefinite, "zero variances with nonzero covariance");
    return {Matrix(n, n), 0.0};
  }
  for (double factor : {0.0, 1e-12, 1e-10, 1e-8}) {
    Matrix a = model.sigma;
    const double jitter = factor * mean_var;
    for (std::size_t i = 0; i < n; ++i) a(i, i) += jitter;
    if (auto l = cholesky_strict(a)) return {std::move(*l), jitter};
  }
  throw Error(ErrorCode::NotPositiveSemidefinite, "covariance not positive semidefinite even with jitter");
}

// ---------------------------------------------------------------------------
// Counter-based variate stream. See docs/scenario_stream.md; the construction
// is frozen because seeded results are part of the public contract.

namespace stream {

inline constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline constexpr std::uint64_t key(std::uint64_t seed, std::uint64_t scenario, std::uint64_t asset) {
  std::uint64_t h = mix64(seed ^ 0x9E3779B97F4A7C15ULL);
  h = mix64(h + scenario * 0xD1B54A32D192ED03ULL);
  return mix64(h + asset * 0x8CB92BA72F3D8DD7ULL + 0x632BE59BD9B4E019ULL);
}

/// Uniform on the open interval (0, 1): ((key >> 12) + 1/2) / 2^52.
inline double uniform(std::uint64_t seed, std::uint64_t scenario, std::uint64_t asset) {
  return (static_cast<double>(key(seed, scenario, asset) >> 12) + 0.5) * 0x1.0p-52;
}

inline double standard_normal(std::uint64_t seed, std::uint64_t scenario, std::uint64_t asset) {
  return normal::quantile(uniform(seed, scenario, asset));
}

}  // namespace stream

/// Scenarios [first, first + count) of the seeded stream; concatenating any
/// chunking of [0, m) reproduces sample(model, m, seed) exactly.
inline ScenarioSet sample_range(const NormalModel& model, std::uint64_t first, std::size_t count, std::uint64_t seed) {
  const auto chol = cholesky(model);
  const std::size_t n = model.size();
  ScenarioSet set{model.asset_ids, Matrix(count, n), {Provenance::Kind::monte_carlo, seed, model_hash(model)}};
  Vector z(n);
  for (std::size_t i = 0; i < count; ++i) {
    for (std::size_t j = 0; j < n; ++j) z[j] = stream::standard_normal(seed, first + i, j);
    auto row = set.matrix.row(i);
    for (std::size_t r = 0; r < n; ++r) {
      double v = model.mu[r];
      for (std::size_t c = 0; c <= r; ++c) v += chol.lower(r, c) * z[c];
      row[r] = v;
    }
  }
  return set;
}

inline ScenarioSet sample(const NormalModel& model, std::size_t m, std::uint64_t seed) {
  require(m >= 1, ErrorCode::InvalidArgument, "need at least one scenario");
  return sample_range(model, 0, m, seed);
}

/// Historical panel rows used directly as scenarios.
inline ScenarioSet historical_scenarios(const AlignedReturnPanel& panel) {
  require(panel.num_rows() >= 1, ErrorCode::ScenarioUnavailable, "no historical observations");
  require(panel.kind == ReturnKind::simple, ErrorCode::InvalidArgument, "scenarios must be simple returns");
  ScenarioSet set{panel.asset_ids, Matrix::from_rows(panel.rows), {Provenance::Kind::historical, 0, {}}};
  return set;
}

inline ScenarioSet restrict(const ScenarioSet& s, const std::vector<std::string>& ids) {
  std::vector<std::size_t> idx;
  for (const auto& id : ids) idx.push_back(s.index_of(id));
  ScenarioSet out{ids, Matrix(s.num_scenarios(), ids.size()), s.provenance};
  for (std::size_t i = 0; i < s.num_scenarios(); ++i)
    for (std::size_t j = 0; j < ids.size(); ++j) out.matrix(i, j) = s.matrix(i, idx[j]);
  return out;
}

/// Row-wise exposure' R.
inline Vector portfolio_scenarios(const ScenarioSet& s, std::span<const double> exposure) {
  require(exposure.size() == s.num_assets(), ErrorCode::DimensionMismatch,
          "exposure has " + std::to_string(exposure.size()) + " entries, scenarios have " +
              std::to_string(s.num_assets()) + " assets");
  Vector out(s.num_scenarios());
  for (std::size_t i = 0; i < s.num_scenarios(); ++i) out[i] = dot(s.matrix.row(i), exposure);
  return out;
}

/// Draws m scenarios and then affinely corrects them so the sample mean and
/// 1/(m-1) covariance equal the model's exactly. Used to build synthetic
/// price histories whose fitted model is known in advance.
inline Matrix moment_matched_sample(const NormalModel& model, std::size_t m, std::uint64_t seed) {
  const std::size_t n = model.size();
  require(m > n + 1, ErrorCode::InsufficientData, "moment matching needs more scenarios than assets");
  auto raw = sample(model, m, seed).matrix;
  AlignedReturnPanel panel;
  panel.asset_ids = model.asset_ids;
  for (std::size_t i = 0; i < m; ++i) panel.rows.emplace_back(raw.row(i).begin(), raw.row(i).end());
  panel.dates.resize(m);
  const auto fitted = fit_normal(panel);
  const auto sample_chol = cholesky_strict(fitted.sigma);
  const auto target_chol = cholesky_strict(model.sigma);
  require(sample_chol && target_chol, ErrorCode::NotPositiveSemidefinite, "moment matching needs a positive definite model");

  Matrix out(m, n);
  Vector centered(n), white(n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) centered[j] = raw(i, j) - fitted.mu[j];
    for (std::size_t j = 0; j < n; ++j) {  // white = L_s^{-1} centered
      double v = centered[j];
      for (std::size_t k = 0; k < j; ++k) v -= (*sample_chol)(j, k) * white[k];
      white[j] = v / (*sample_chol)(j, j);
    }
    for (std::size_t r = 0; r < n; ++r) {
      double v = model.mu[r];
      for (std::size_t c = 0; c <= r; ++c) v += (*target_chol)(r, c) * white[c];
      out(i, r) = v;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV round trip (debugging aid): header = asset ids, one scenario per line.

inline std::string to_csv(const ScenarioSet& s) {
  std::string out;
  for (std::size_t j = 0; j < s.asset_ids.size(); ++j) {
    if (j) out += ',';
    out += s.asset_ids[j];
  }
  out += '\n';
  char buf[64];
  for (std::size_t i = 0; i < s.num_scenarios(); ++i) {
    for (std::size_t j = 0; j < s.num_assets(); ++j) {
      if (j) out += ',';
      auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, s.matrix(i, j));
      out.append(buf, ptr);
    }
    out += '\n';
  }
  return out;
}

inline ScenarioSet scenarios_from_csv(std::istream& in) {
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorCode::MalformedRow, "line 1: missing header");
  ScenarioSet s;
  {
    std::stringstream header(std::string(detail::trim(line)));
    std::string id;
    while (std::getline(header, id, ',')) s.asset_ids.push_back(id);
  }
  std::vector<std::vector<double>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const auto row = detail::trim(line);
    if (row.empty()) continue;
    std::vector<double> values;
    std::size_t start = 0;
    while (true) {
      const auto comma = row.find(',', start);
      double v = 0.0;
      require(detail::parse_double(detail::trim(row.substr(start, comma - start)), v), ErrorCode::MalformedRow,
              "line " + std::to_string(line_no) + ": bad number");
      values.push_back(v);
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    require(values.size() == s.asset_ids.size(), ErrorCode::MalformedRow,
            "line " + std::to_string(line_no) + ": wrong field count");
    rows.push_back(std::move(values));
  }
  require(!rows.empty(), ErrorCode::ScenarioUnavailable, "scenario file has no rows");
  s.matrix = Matrix::from_rows(rows);
  return s;
}

}  // namespace varmargin
