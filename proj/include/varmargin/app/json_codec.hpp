#pragma once

#include <charconv>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "varmargin/error.hpp"
#include "varmargin/margin.hpp"
#include "varmargin/scenario.hpp"

namespace varmargin::app {

using json = nlohmann::ordered_json;

inline constexpr int schema_version = 1;

// ---------------------------------------------------------------------------
// Money

/// Currency amounts leave the engine with exactly four fractional digits.
/// Formatting is locale independent.
inline std::string format_money(double v) {
  require(std::isfinite(v), ErrorCode::InvalidArgument, "money amount is not finite");
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, 4);
  std::string s(buf, res.ptr);
  if (s == "-0.0000") s = "0.0000";
  return s;
}

namespace detail {
inline constexpr std::string_view money_tag = "\x1fmoney:";
inline constexpr std::string_view escaped_money_tag = "\"\\u001fmoney:";
}  // namespace detail

/// Placeholder that `dump` turns into a bare JSON number with four decimals.
inline json money(double v) { return std::string(detail::money_tag) + format_money(v); }

/// Serializes `j`, emitting money placeholders as numbers.
inline std::string dump(const json& j, int indent = -1) {
  const std::string raw = j.dump(indent);
  std::string out;
  out.reserve(raw.size());
  std::size_t pos = 0;
  while (true) {
    const auto hit = raw.find(detail::escaped_money_tag, pos);
    if (hit == std::string::npos) break;
    out.append(raw, pos, hit - pos);
    const auto start = hit + detail::escaped_money_tag.size();
    const auto end = raw.find('"', start);
    out.append(raw, start, end - start);
    pos = end + 1;
  }
  out.append(raw, pos, std::string::npos);
  return out;
}

/// How doubles that denote currency are written: rounded for API consumers or
/// exact for persistence, where replays must reproduce state bit for bit.
enum class MoneyStyle { api, exact };

inline json money(double v, MoneyStyle style) { return style == MoneyStyle::api ? money(v) : json(v); }

// ---------------------------------------------------------------------------
// Input helpers

inline json parse_json(std::string_view text, std::string_view what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::InvalidArgument, std::string(what) + " is not valid JSON: " + e.what());
  }
}

inline const json& field(const json& j, const char* name) {
  require(j.is_object() && j.contains(name), ErrorCode::InvalidArgument, std::string("missing field '") + name + "'");
  return j.at(name);
}

inline double number(const json& j, const char* name) {
  const auto& v = field(j, name);
  require(v.is_number(), ErrorCode::InvalidArgument, std::string("field '") + name + "' must be a number");
  return v.get<double>();
}

inline std::optional<double> optional_number(const json& j, const char* name) {
  if (!j.is_object() || !j.contains(name) || j.at(name).is_null()) return std::nullopt;
  return number(j, name);
}

inline std::string text(const json& j, const char* name) {
  const auto& v = field(j, name);
  require(v.is_string(), ErrorCode::InvalidArgument, std::string("field '") + name + "' must be a string");
  return v.get<std::string>();
}

inline std::uint64_t unsigned_integer(const json& j, const char* name) {
  const auto& v = field(j, name);
  require(v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0), ErrorCode::InvalidArgument,
          std::string("field '") + name + "' must be a non-negative integer");
  return v.get<std::uint64_t>();
}

// ---------------------------------------------------------------------------
// Policy

inline json to_json(const MarginPolicy& p) {
  return json{{"alpha", p.alpha}, {"h", p.h}, {"method", to_string(p.method)}, {"seed", p.seed},
              {"scenarios", p.scenarios}, {"window", p.window}};
}

/// Fields absent from `j` keep their value in `base`.
inline MarginPolicy policy_from_json(const json& j, MarginPolicy base = {}) {
  require(j.is_object(), ErrorCode::InvalidArgument, "policy must be an object");
  if (j.contains("alpha")) base.alpha = number(j, "alpha");
  if (j.contains("h")) base.h = number(j, "h");
  if (j.contains("method")) base.method = parse_risk_method(text(j, "method"));
  if (j.contains("seed")) base.seed = unsigned_integer(j, "seed");
  if (j.contains("scenarios")) base.scenarios = unsigned_integer(j, "scenarios");
  if (j.contains("window")) base.window = unsigned_integer(j, "window");
  base.validate();
  return base;
}

// ---------------------------------------------------------------------------
// Trades and positions
//
// {"asset": "ENI", "amount": 10000}
// {"option": {"underlying": "IGV", "kind": "put", "strike": "last", "expiry_years": 0.8333,
//             "rate": 0.1, "vol": 0.3}, "amount": 10000}
// A missing or "last" strike takes the last close; a missing vol annualizes the
// fitted daily volatility.

inline OptionTerms option_terms_from_json(const json& j) {
  OptionTerms t;
  t.underlying_id = text(j, "underlying");
  t.kind = parse_option_kind(text(j, "kind"));
  if (j.contains("strike") && !(j.at("strike").is_string() && j.at("strike") == "last")) t.strike = number(j, "strike");
  t.expiry_years = number(j, "expiry_years");
  t.rate = j.contains("rate") ? number(j, "rate") : 0.0;
  t.vol_annual = optional_number(j, "vol");
  return t;
}

inline Trade trade_from_json(const json& j) {
  require(j.is_object(), ErrorCode::InvalidArgument, "trade must be an object");
  Trade t;
  const bool has_asset = j.contains("asset"), has_option = j.contains("option");
  require(has_asset != has_option, ErrorCode::InvalidArgument, "trade needs exactly one of 'asset' or 'option'");
  if (has_asset) t.asset_id = text(j, "asset");
  else t.option = option_terms_from_json(j.at("option"));
  t.amount = number(j, "amount");
  require(t.amount >= 0.0, ErrorCode::InvalidArgument, "trade amount must be >= 0");
  return t;
}

inline json to_json(const Trade& t) {
  json j;
  if (t.option) {
    json o{{"underlying", t.option->underlying_id}, {"kind", to_string(t.option->kind)}};
    o["strike"] = t.option->strike ? json(*t.option->strike) : json("last");
    o["expiry_years"] = t.option->expiry_years;
    o["rate"] = t.option->rate;
    if (t.option->vol_annual) o["vol"] = *t.option->vol_annual;
    j["option"] = o;
  } else {
    j["asset"] = t.asset_id;
  }
  j["amount"] = t.amount;
  return j;
}

inline json to_json(const Position& p, MoneyStyle style) {
  json j;
  if (p.option) {
    j["option"] = json{{"underlying", p.asset_id}, {"kind", to_string(p.option->kind)}, {"strike", p.option->strike},
                       {"expiry_years", p.option->expiry_years}, {"rate", p.option->rate},
                       {"vol", p.option->vol_annual}};
  } else {
    j["asset"] = p.asset_id;
  }
  j["amount"] = money(p.amount, style);
  if (p.leverage) j["leverage"] = *p.leverage;
  return j;
}

/// Positions as stored: options carry every term, so no market is needed.
inline Position position_from_json(const json& j) {
  Position p;
  if (j.contains("option")) {
    const auto& o = j.at("option");
    OptionSpec spec;
    spec.underlying_id = text(o, "underlying");
    spec.kind = parse_option_kind(text(o, "kind"));
    spec.strike = number(o, "strike");
    spec.expiry_years = number(o, "expiry_years");
    spec.rate = number(o, "rate");
    spec.vol_annual = number(o, "vol");
    spec.validate();
    p.asset_id = spec.underlying_id;
    p.option = spec;
  } else {
    p.asset_id = text(j, "asset");
  }
  p.amount = number(j, "amount");
  p.leverage = optional_number(j, "leverage");
  return p;
}

// ---------------------------------------------------------------------------
// Accounts

inline json to_json(const MarginAccount& a, MoneyStyle style) {
  json positions = json::array();
  for (const auto& p : a.positions) positions.push_back(to_json(p, style));
  return json{{"capital", money(a.capital, style)},
              {"invested", money(a.invested(), style)},
              {"margin_factor", a.margin_factor},
              {"availability", money(a.availability, style)},
              {"positions", positions}};
}

inline MarginAccount account_from_json(const json& j) {
  MarginAccount a;
  a.capital = number(j, "capital");
  for (const auto& p : field(j, "positions")) a.positions.push_back(position_from_json(p));
  a.margin_factor = number(j, "margin_factor");
  a.availability = number(j, "availability");
  return a;
}

/// Portfolio file: {"capital": C, "positions": [trade-like entries with an
/// optional "leverage"], "policy": {...}}. Option terms are resolved against
/// `market` in file order.
struct PortfolioInput {
  double capital = 0.0;
  std::vector<Trade> entries;
  std::vector<std::optional<double>> leverage;
  MarginPolicy policy;
  bool has_policy = false;
};

inline PortfolioInput portfolio_input_from_json(const json& j) {
  require(j.is_object(), ErrorCode::InvalidArgument, "portfolio must be an object");
  PortfolioInput in;
  in.capital = number(j, "capital");
  require(in.capital > 0.0, ErrorCode::InvalidArgument, "capital must be > 0");
  if (j.contains("positions")) {
    require(j.at("positions").is_array(), ErrorCode::InvalidArgument, "positions must be an array");
    for (const auto& p : j.at("positions")) {
      in.entries.push_back(trade_from_json(p));
      in.leverage.push_back(optional_number(p, "leverage"));
    }
  }
  if (j.contains("policy")) {
    in.policy = policy_from_json(j.at("policy"));
    in.has_policy = true;
  }
  return in;
}

/// Underlying ids referenced by the entries, in first-seen order.
inline std::vector<std::string> referenced_assets(const std::vector<Trade>& entries) {
  std::vector<std::string> ids;
  for (const auto& t : entries) {
    const auto& id = t.option ? t.option->underlying_id : t.asset_id;
    if (std::find(ids.begin(), ids.end(), id) == ids.end()) ids.push_back(id);
  }
  return ids;
}

inline std::vector<Position> build_positions(const PortfolioInput& in, const MarketView& market) {
  std::vector<Position> book;
  for (std::size_t k = 0; k < in.entries.size(); ++k) {
    require(in.entries[k].amount > 0.0, ErrorCode::InvalidArgument, "position amounts must be > 0");
    book = apply_trade(book, in.entries[k], market);
    if (in.leverage[k]) {
      require(*in.leverage[k] >= 1.0, ErrorCode::InvalidArgument, "leverage must be >= 1");
      Position probe;
      probe.asset_id = in.entries[k].option ? in.entries[k].option->underlying_id : in.entries[k].asset_id;
      if (in.entries[k].option) probe.option = resolve_option(*in.entries[k].option, market);
      for (auto& p : book)
        if (p.key() == probe.key()) p.leverage = in.leverage[k];
    }
  }
  return book;
}

// ---------------------------------------------------------------------------
// Models

/// {"assets": [...], "mu": [...], "sigma": [[...]], "spots": {"ID": price}}
inline json to_json(const NormalModel& m) {
  json sigma = json::array();
  for (std::size_t i = 0; i < m.size(); ++i) {
    json row = json::array();
    for (std::size_t j = 0; j < m.size(); ++j) row.push_back(m.sigma(i, j));
    sigma.push_back(row);
  }
  return json{{"assets", m.asset_ids}, {"mu", m.mu}, {"sigma", sigma}};
}

inline NormalModel model_from_json(const json& j) {
  NormalModel m;
  m.asset_ids = field(j, "assets").get<std::vector<std::string>>();
  m.mu = field(j, "mu").get<std::vector<double>>();
  const auto rows = field(j, "sigma").get<std::vector<std::vector<double>>>();
  require(rows.size() == m.size(), ErrorCode::DimensionMismatch, "sigma must have one row per asset");
  for (const auto& r : rows) require(r.size() == m.size(), ErrorCode::DimensionMismatch, "sigma must be square");
  m.sigma = Matrix::from_rows(rows);
  validate(m);
  return m;
}

}  // namespace varmargin::app
