#pragma once

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "varmargin/error.hpp"

namespace varmargin {

using Date = std::chrono::year_month_day;

inline std::string format_date(Date d) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(d.year()),
                static_cast<unsigned>(d.month()), static_cast<unsigned>(d.day()));
  return buf;
}

/// Strict ISO-8601 calendar date, `YYYY-MM-DD`. Returns false on anything else.
inline bool parse_date(std::string_view text, Date& out) {
  if (text.size() != 10 || text[4] != '-' || text[7] != '-') return false;
  int y = 0;
  unsigned m = 0, d = 0;
  auto field = [&](std::string_view s, auto& v) {
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    return ec == std::errc() && ptr == s.data() + s.size();
  };
  if (!field(text.substr(0, 4), y) || !field(text.substr(5, 2), m) || !field(text.substr(8, 2), d))
    return false;
  out = Date{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
  return out.ok();
}

struct PricePoint {
  Date date;
  double close;

  bool operator==(const PricePoint&) const = default;
};

struct PriceSeries {
  std::string asset_id;
  std::vector<PricePoint> observations;

  std::size_t size() const { return observations.size(); }
  double last_close() const {
    require(!observations.empty(), ErrorCode::SeriesTooShort, "empty price series " + asset_id);
    return observations.back().close;
  }
};

enum class ReturnKind { simple, log };

struct ReturnPoint {
  Date date;
  double value;
};

struct ReturnSeries {
  std::string asset_id;
  ReturnKind kind = ReturnKind::simple;
  std::vector<ReturnPoint> observations;

  std::vector<double> values() const {
    std::vector<double> v;
    v.reserve(observations.size());
    for (const auto& o : observations) v.push_back(o.value);
    return v;
  }
};

/// Joint return observations: rows are common dates, columns follow asset_ids.
struct AlignedReturnPanel {
  std::vector<std::string> asset_ids;
  ReturnKind kind = ReturnKind::simple;
  std::vector<Date> dates;
  std::vector<std::vector<double>> rows;

  std::size_t num_rows() const { return rows.size(); }
  std::size_t num_assets() const { return asset_ids.size(); }

  bool operator==(const AlignedReturnPanel&) const = default;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline bool parse_double(std::string_view s, double& out) {
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size() && std::isfinite(out);
}

}  // namespace detail

/// Reads a `date,close` CSV. Rows may come in any order; the result is sorted.
inline PriceSeries load_prices(std::istream& csv, const std::string& asset_id) {
  PriceSeries series{asset_id, {}};
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(csv, line)) {
    ++line_no;
    const auto row = detail::trim(line);
    if (!header_seen) {
      auto h = row;
      if (h.size() >= 3 && static_cast<unsigned char>(h[0]) == 0xEF) h.remove_prefix(3);  // BOM
      require(h == "date,close", ErrorCode::MalformedRow,
              "line " + std::to_string(line_no) + ": expected header 'date,close'");
      header_seen = true;
      continue;
    }
    if (row.empty()) continue;
    const auto comma = row.find(',');
    require(comma != std::string_view::npos && row.find(',', comma + 1) == std::string_view::npos,
            ErrorCode::MalformedRow, "line " + std::to_string(line_no) + ": expected 2 fields");
    Date date;
    require(parse_date(detail::trim(row.substr(0, comma)), date), ErrorCode::MalformedRow,
            "line " + std::to_string(line_no) + ": bad ISO-8601 date");
    double close = 0.0;
    require(detail::parse_double(detail::trim(row.substr(comma + 1)), close), ErrorCode::MalformedRow,
            "line " + std::to_string(line_no) + ": bad price");
    require(close > 0.0, ErrorCode::NonPositivePrice,
            "line " + std::to_string(line_no) + ": price must be > 0");
    series.observations.push_back({date, close});
  }
  require(header_seen, ErrorCode::MalformedRow, "line 1: missing header 'date,close'");

  std::stable_sort(series.observations.begin(), series.observations.end(),
                   [](const PricePoint& a, const PricePoint& b) { return a.date < b.date; });
  for (std::size_t i = 1; i < series.observations.size(); ++i) {
    require(series.observations[i].date != series.observations[i - 1].date, ErrorCode::DuplicateDate,
            "duplicate date " + format_date(series.observations[i].date));
  }
  return series;
}

inline PriceSeries load_prices(std::string_view csv, const std::string& asset_id) {
  std::istringstream in{std::string(csv)};
  return load_prices(in, asset_id);
}

inline std::string to_csv(const PriceSeries& series) {
  std::string out = "date,close\n";
  char buf[64];
  for (const auto& p : series.observations) {
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, p.close);
    out += format_date(p.date);
    out += ',';
    out.append(buf, ptr);
    out += '\n';
  }
  return out;
}

namespace detail {

template <typename F>
ReturnSeries returns_from(const PriceSeries& p, ReturnKind kind, F f) {
  require(p.size() >= 2, ErrorCode::SeriesTooShort, "need at least 2 prices for " + p.asset_id);
  ReturnSeries r{p.asset_id, kind, {}};
  r.observations.reserve(p.size() - 1);
  for (std::size_t t = 1; t < p.size(); ++t) {
    r.observations.push_back({p.observations[t].date, f(p.observations[t].close, p.observations[t - 1].close)});
  }
  return r;
}

}  // namespace detail

inline ReturnSeries simple_returns(const PriceSeries& p) {
  return detail::returns_from(p, ReturnKind::simple, [](double now, double before) { return now / before - 1.0; });
}

inline ReturnSeries log_returns(const PriceSeries& p) {
  return detail::returns_from(p, ReturnKind::log, [](double now, double before) { return std::log(now / before); });
}

/// Total return over the series: product of growth factors for simple
/// returns, plain sum for log returns.
inline double compound(const ReturnSeries& r) {
  require(!r.observations.empty(), ErrorCode::SeriesTooShort, "compound of empty series");
  if (r.kind == ReturnKind::log) {
    double total = 0.0;
    for (const auto& o : r.observations) total += o.value;
    return total;
  }
  double growth = 1.0;
  for (const auto& o : r.observations) growth *= 1.0 + o.value;
  return growth - 1.0;
}

/// Joins series on the intersection of their dates; column order follows input.
inline AlignedReturnPanel align(const std::vector<ReturnSeries>& series) {
  require(!series.empty(), ErrorCode::NoCommonDates, "no series to align");
  for (const auto& s : series) {
    require(s.kind == series.front().kind, ErrorCode::MixedKinds, "cannot align simple and log returns");
  }

  std::vector<Date> common;
  for (const auto& o : series.front().observations) common.push_back(o.date);
  for (std::size_t k = 1; k < series.size(); ++k) {
    std::vector<Date> dates, next;
    for (const auto& o : series[k].observations) dates.push_back(o.date);
    std::set_intersection(common.begin(), common.end(), dates.begin(), dates.end(), std::back_inserter(next));
    common = std::move(next);
  }
  require(!common.empty(), ErrorCode::NoCommonDates, "series share no dates");

  AlignedReturnPanel panel;
  panel.kind = series.front().kind;
  panel.dates = common;
  panel.rows.assign(common.size(), std::vector<double>(series.size()));
  for (std::size_t k = 0; k < series.size(); ++k) {
    panel.asset_ids.push_back(series[k].asset_id);
    std::size_t row = 0;
    for (const auto& o : series[k].observations) {
      if (row < common.size() && o.date == common[row]) panel.rows[row++][k] = o.value;
    }
  }
  return panel;
}

/// Inverse of align: one series per column.
inline std::vector<ReturnSeries> split(const AlignedReturnPanel& panel) {
  std::vector<ReturnSeries> out;
  for (std::size_t k = 0; k < panel.num_assets(); ++k) {
    ReturnSeries s{panel.asset_ids[k], panel.kind, {}};
    for (std::size_t t = 0; t < panel.num_rows(); ++t) s.observations.push_back({panel.dates[t], panel.rows[t][k]});
    out.push_back(std::move(s));
  }
  return out;
}

/// Keeps the most recent `window` rows (all rows when window is 0).
inline AlignedReturnPanel tail(const AlignedReturnPanel& panel, std::size_t window) {
  if (window == 0 || window >= panel.num_rows()) return panel;
  AlignedReturnPanel out = panel;
  const auto drop = static_cast<std::ptrdiff_t>(panel.num_rows() - window);
  out.dates.erase(out.dates.begin(), out.dates.begin() + drop);
  out.rows.erase(out.rows.begin(), out.rows.begin() + drop);
  return out;
}

}  // namespace varmargin
