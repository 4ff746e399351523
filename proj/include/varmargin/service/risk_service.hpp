#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <utility>

#include "varmargin/app/json_codec.hpp"
#include "varmargin/app/workbench.hpp"
#include "varmargin/service/store.hpp"

// Transport-independent request handlers of the risk service. Reads (risk,
// what-if, leverage, simulate) copy what they need under a shared lock and
// compute without holding it. Mutations of one portfolio are serialized by a
// per-portfolio mutex; distinct portfolios proceed independently, and only
// the short append-and-apply step takes the exclusive state lock.

namespace varmargin::service {

struct Response {
  int status = 200;
  json body;  // null for empty bodies
};

using Query = std::map<std::string, std::string>;

inline int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::UnknownAsset:
    case ErrorCode::ExpiredWithinHorizon:
    case ErrorCode::NoRoot:
    case ErrorCode::Infeasible:
    case ErrorCode::UnboundedObjective:
      return 422;
    case ErrorCode::InsufficientData:
    case ErrorCode::NoCommonDates:
    case ErrorCode::ScenarioUnavailable:
    case ErrorCode::NotPositiveSemidefinite:
      return 409;
    default:
      return 400;
  }
}

inline Response error_response(int status, std::string_view code, std::string_view message) {
  return {status, json{{"error", json{{"code", code}, {"message", message}}}}};
}

inline Response error_response(const Error& e) {
  const std::string_view code = to_string(e.code());
  std::string_view message = e.what();
  if (message.substr(0, code.size()) == code && message.substr(code.size(), 2) == ": ") message.remove_prefix(code.size() + 2);
  return error_response(http_status(e.code()), code, message);
}

class RiskService {
 public:
  /// With a data directory, state is recovered from it and every event is
  /// persisted; a snapshot is written every `snapshot_every` events.
  explicit RiskService(std::optional<fs::path> data_dir = std::nullopt, std::uint64_t snapshot_every = 100)
      : journal_(data_dir), snapshot_every_(snapshot_every) {
    state_ = journal_.recover();
  }

  ~RiskService() {
    try {
      snapshot();
    } catch (...) {
    }
  }

  // -------------------------------------------------------------------------
  // Market data

  Response upload_prices(const std::string& asset_id, std::string_view csv) {
    return guarded([&] {
      require(valid_id(asset_id), ErrorCode::InvalidArgument, "asset id must be 1-64 chars of [A-Za-z0-9._-]");
      const auto series = load_prices(csv, asset_id);
      std::unique_lock lock(state_mutex_);
      auto it = state_.prices().find(asset_id);
      if (it != state_.prices().end() && it->second.observations == series.observations) return Response{204, nullptr};
      commit_locked(EventKind::prices_loaded, "", json{{"asset_id", asset_id}, {"csv", to_csv(series)}});
      return Response{204, nullptr};
    });
  }

  Response list_assets() const {
    std::shared_lock lock(state_mutex_);
    json out = json::array();
    for (const auto& [id, p] : state_.prices())
      out.push_back(json{{"asset_id", id},
                         {"observations", p.size()},
                         {"first", format_date(p.observations.front().date)},
                         {"last", format_date(p.observations.back().date)},
                         {"last_close", p.last_close()}});
    return {200, json{{"schema", app::schema_version}, {"assets", out}}};
  }

  // -------------------------------------------------------------------------
  // Portfolios

  Response create_portfolio(std::string_view body) {
    return guarded([&] {
      const auto j = app::parse_json(body, "request body");
      auto input = app::portfolio_input_from_json(j);
      std::string id = j.contains("id") ? app::text(j, "id") : "";
      const std::string owner = j.contains("owner") ? app::text(j, "owner") : "";
      require(id.empty() || valid_id(id), ErrorCode::InvalidArgument, "portfolio id must be 1-64 chars of [A-Za-z0-9._-]");

      std::lock_guard create_lock(create_mutex_);
      if (id.empty()) id = next_portfolio_id();
      {
        std::shared_lock lock(state_mutex_);
        if (state_.find(id)) return error_response(409, "PortfolioExists", "portfolio '" + id + "' already exists");
      }
      PortfolioRecord r;
      r.id = id;
      r.owner = owner;
      r.policy = input.has_policy ? input.policy : MarginPolicy{};
      r.version = 1;
      r.account.capital = input.capital;
      r.account.availability = input.capital;
      if (!input.entries.empty()) {
        const auto market = market_for(app::referenced_assets(input.entries), r.policy.window);
        const auto book = app::build_positions(input, market.view);
        const auto verdict = assess(input.capital, book, r.policy, market.view);
        if (!verdict.allowed)
          return Response{409, json{{"schema", app::schema_version}, {"verdict", app::whatif_json(verdict, r.account)}}};
        r.account = verdict.account;
      }
      {
        std::unique_lock lock(state_mutex_);
        commit_locked(EventKind::created, id, json{{"record", to_json(r, app::MoneyStyle::exact)}});
      }
      return Response{201, record_view(r)};
    });
  }

  Response get_portfolio(const std::string& id) const {
    const auto r = record(id);
    if (!r) return not_found(id);
    return {200, record_view(*r)};
  }

  Response list_portfolios() const {
    std::shared_lock lock(state_mutex_);
    json out = json::array();
    for (const auto& [id, r] : state_.portfolios())
      out.push_back(json{{"id", id}, {"owner", r.owner}, {"version", r.version}});
    return {200, json{{"schema", app::schema_version}, {"portfolios", out}}};
  }

  Response put_policy(const std::string& id, std::string_view body) {
    return guarded([&] {
      const auto j = app::parse_json(body, "request body");
      auto lock = portfolio_lock(id);
      auto r = record(id);
      if (!r) return not_found(id);
      if (auto conflict = version_conflict(j, *r, false)) return *conflict;
      const auto policy = app::policy_from_json(j.contains("policy") ? j.at("policy") : j, r->policy);
      MarginAccount account = r->account;
      if (!account.positions.empty()) {
        const auto market = market_for(app::assets_of(account.positions), policy.window);
        const auto verdict = assess(account.capital, account.positions, policy, market.view);
        if (!verdict.allowed)
          return Response{409, json{{"schema", app::schema_version}, {"version", r->version},
                                    {"verdict", app::whatif_json(verdict, r->account)}}};
        account = verdict.account;
      }
      r->policy = policy;
      r->account = account;
      r->version += 1;
      {
        std::unique_lock state_lock(state_mutex_);
        commit_locked(EventKind::policy_changed, id,
                      json{{"version", r->version}, {"policy", app::to_json(policy)},
                           {"account", app::to_json(account, app::MoneyStyle::exact)}});
      }
      return Response{200, record_view(*r)};
    });
  }

  // -------------------------------------------------------------------------
  // Risk and margining

  Response risk(const std::string& id, const Query& q) const {
    return guarded([&] {
      const auto r = record(id);
      if (!r) return not_found(id);
      require(!r->account.positions.empty(), ErrorCode::InsufficientData, "portfolio has no positions");
      app::RiskQuery query;
      if (auto v = get(q, "alpha")) query.alpha = parse_number(*v, "alpha");
      if (auto v = get(q, "method")) query.method = parse_risk_method(*v);
      if (auto v = get(q, "horizon_days")) query.horizon_days = static_cast<int>(parse_count(*v, "horizon_days"));
      if (auto v = get(q, "seed")) query.seed = parse_count(*v, "seed");
      if (auto v = get(q, "z_override")) query.z_override = parse_number(*v, "z_override");
      if (query.alpha) static_cast<void>(TailLevel{*query.alpha});
      const auto market = market_for(app::assets_of(r->account.positions), r->policy.window);
      return Response{200, app::risk_report(r->account.positions, r->policy, market, query)};
    });
  }

  Response whatif(const std::string& id, std::string_view body) const {
    return guarded([&] {
      const auto j = app::parse_json(body, "request body");
      const auto r = record(id);
      if (!r) return not_found(id);
      const auto trade = app::trade_from_json(j.contains("trade") ? j.at("trade") : j);
      const auto verdict = evaluate(*r, trade);
      auto out = app::whatif_json(verdict, r->account);
      out["version"] = r->version;
      return Response{200, out};
    });
  }

  Response commit_trade(const std::string& id, std::string_view body) {
    return guarded([&] {
      const auto j = app::parse_json(body, "request body");
      const auto trade = app::trade_from_json(app::field(j, "trade"));
      auto lock = portfolio_lock(id);
      auto r = record(id);
      if (!r) return not_found(id);
      if (auto conflict = version_conflict(j, *r, true)) return *conflict;
      const auto verdict = evaluate(*r, trade);
      if (!verdict.allowed) {
        {
          std::unique_lock state_lock(state_mutex_);
          commit_locked(EventKind::trade_denied, id,
                        json{{"trade", app::to_json(trade)}, {"version", r->version},
                             {"margin_factor", verdict.margin_factor}, {"availability", verdict.availability}});
        }
        return Response{409, json{{"schema", app::schema_version}, {"version", r->version},
                                  {"verdict", app::whatif_json(verdict, r->account)}}};
      }
      const auto previous = r->account;
      r->account = verdict.account;
      r->version += 1;
      {
        std::unique_lock state_lock(state_mutex_);
        commit_locked(EventKind::trade_committed, id,
                      json{{"trade", app::to_json(trade)}, {"version", r->version},
                           {"account", app::to_json(r->account, app::MoneyStyle::exact)}});
      }
      auto out = record_view(*r);
      out["verdict"] = app::whatif_json(verdict, previous);
      return Response{201, out};
    });
  }

  // -------------------------------------------------------------------------
  // Leverage

  Response leverage_max(const std::string& id, const Query& q) const {
    return guarded([&] {
      const auto r = record(id);
      if (!r) return not_found(id);
      const auto asset = get(q, "asset");
      require(asset.has_value() && !asset->empty(), ErrorCode::InvalidArgument, "query parameter 'asset' is required");
      app::LeverageRequest req;
      req.alpha = r->policy.alpha;
      if (auto v = get(q, "alpha")) req.alpha = parse_number(*v, "alpha");
      static_cast<void>(TailLevel{req.alpha});
      if (auto v = get(q, "method")) req.measure = app::parse_leverage_measure(*v);
      if (auto v = get(q, "h")) req.h = parse_number(*v, "h");
      std::optional<double> w;
      if (auto v = get(q, "w")) w = parse_number(*v, "w");
      auto inputs = app::leverage_inputs(r->account.positions, r->account.capital);
      auto ids = inputs.asset_ids;
      if (std::find(ids.begin(), ids.end(), *asset) == ids.end()) ids.push_back(*asset);
      const auto market = market_for(ids, r->policy.window);
      return Response{200, app::leverage_max(inputs, market.view.require_model(), *asset, w, req)};
    });
  }

  /// Single or sequential maxima for every held equity asset, the table the
  /// console shows next to the optimized factors.
  Response leverage_table(const std::string& id, const Query& q) const {
    return guarded([&] {
      const auto r = record(id);
      if (!r) return not_found(id);
      app::LeverageRequest req;
      req.alpha = r->policy.alpha;
      if (auto v = get(q, "alpha")) req.alpha = parse_number(*v, "alpha");
      static_cast<void>(TailLevel{req.alpha});
      if (auto v = get(q, "method")) req.measure = app::parse_leverage_measure(*v);
      if (auto v = get(q, "h")) req.h = parse_number(*v, "h");
      const auto mode = get(q, "mode").value_or("sequential");
      const auto inputs = app::leverage_inputs(r->account.positions, r->account.capital);
      require(!inputs.asset_ids.empty(), ErrorCode::InvalidArgument, "no equity positions to lever");
      const auto market = market_for(inputs.asset_ids, r->policy.window);
      return Response{200, app::leverage_table(mode, inputs, market.view.require_model(), req)};
    });
  }

  Response leverage_optimize(const std::string& id, std::string_view body) const {
    return guarded([&] {
      const auto j = body.empty() ? json::object() : app::parse_json(body, "request body");
      const auto r = record(id);
      if (!r) return not_found(id);
      const auto objective =
          j.contains("objective") ? parse_leverage_objective(app::text(j, "objective")) : LeverageObjective::max_mean;
      const double alpha = j.contains("alpha") ? app::number(j, "alpha") : r->policy.alpha;
      const auto inputs = app::leverage_inputs(r->account.positions, r->account.capital);
      const auto market = market_for(inputs.asset_ids, r->policy.window);
      return Response{200, app::leverage_optimize(inputs, market.view.require_model(), alpha, objective)};
    });
  }

  // -------------------------------------------------------------------------
  // End-of-day simulation

  Response simulate(const std::string& id, std::string_view body) const {
    return guarded([&] {
      const auto j = body.empty() ? json::object() : app::parse_json(body, "request body");
      const auto r = record(id);
      if (!r) return not_found(id);
      app::SimulationRequest req;
      if (j.contains("method")) req.method = parse_risk_method(app::text(j, "method"));
      if (req.method == RiskMethod::normal) req.method = RiskMethod::monte_carlo;
      if (j.contains("m")) req.scenarios = app::unsigned_integer(j, "m");
      if (j.contains("seed")) req.seed = app::unsigned_integer(j, "seed");
      require(req.scenarios <= 2000000, ErrorCode::InvalidArgument, "m is capped at 2,000,000 scenarios");
      if (r->account.availability < 0.0)
        return error_response(409, "NegativeAvailability", "portfolio availability is already negative");
      const auto market = market_for(app::assets_of(r->account.positions), r->policy.window);
      return Response{200, app::simulate_eod(r->account, r->policy, market, req)};
    });
  }

  // -------------------------------------------------------------------------
  // State inspection

  /// Exact serialization of the folded state.
  std::string canonical_state() const {
    std::shared_lock lock(state_mutex_);
    return state_.canonical().dump();
  }

  /// FNV-1a of the canonical state, as hex.
  std::string state_hash() const {
    const auto s = canonical_state();
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) h = (h ^ c) * 1099511628211ULL;
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
  }

  Response state_summary() const {
    std::shared_lock lock(state_mutex_);
    return {200, json{{"schema", app::schema_version}, {"last_seq", state_.last_seq()}, {"hash", state_hash_locked()}}};
  }

  void snapshot() const {
    std::shared_lock lock(state_mutex_);
    journal_.write_snapshot(state_);
  }

  const Journal& journal() const { return journal_; }

 private:
  template <class F>
  static Response guarded(F&& f) {
    try {
      return f();
    } catch (const Error& e) {
      return error_response(e);
    } catch (const json::exception& e) {
      return error_response(400, "InvalidArgument", e.what());
    }
  }

  static bool valid_id(const std::string& id) {
    if (id.empty() || id.size() > 64) return false;
    for (char c : id)
      if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_' || c == '-')) return false;
    return true;
  }

  static Response not_found(const std::string& id) {
    return error_response(404, "NotFound", "portfolio '" + id + "' does not exist");
  }

  static std::optional<std::string> get(const Query& q, const char* name) {
    auto it = q.find(name);
    if (it == q.end()) return std::nullopt;
    return it->second;
  }

  static double parse_number(const std::string& s, const char* name) {
    double v = 0.0;
    require(detail::parse_double(s, v), ErrorCode::InvalidArgument, std::string("'") + name + "' must be a number");
    return v;
  }

  static std::uint64_t parse_count(const std::string& s, const char* name) {
    std::uint64_t v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    require(res.ec == std::errc{} && res.ptr == s.data() + s.size(), ErrorCode::InvalidArgument,
            std::string("'") + name + "' must be a non-negative integer");
    return v;
  }

  static json record_view(const PortfolioRecord& r) {
    auto j = to_json(r, app::MoneyStyle::api);
    j["schema"] = app::schema_version;
    return j;
  }

  std::optional<PortfolioRecord> record(const std::string& id) const {
    std::shared_lock lock(state_mutex_);
    const auto* r = state_.find(id);
    if (!r) return std::nullopt;
    return *r;
  }

  std::optional<Response> version_conflict(const json& j, const PortfolioRecord& r, bool required) const {
    if (!j.contains("expected_version")) {
      if (required) return error_response(400, "InvalidArgument", "field 'expected_version' is required");
      return std::nullopt;
    }
    const auto expected = app::unsigned_integer(j, "expected_version");
    if (expected == r.version) return std::nullopt;
    auto resp = error_response(412, "VersionConflict",
                               "expected version " + std::to_string(expected) + ", current is " + std::to_string(r.version));
    resp.body["version"] = r.version;
    return resp;
  }

  TradeVerdict evaluate(const PortfolioRecord& r, const Trade& trade) const {
    const auto market = market_for(app::assets_of(r.account.positions, {trade}), r.policy.window);
    return evaluate_trade(r.account, trade, r.policy, market.view);
  }

  /// Market slices are cached per (assets, window) and dropped on any upload.
  app::MarketSlice market_for(const std::vector<std::string>& ids, std::size_t window) const {
    std::string key = std::to_string(window);
    for (const auto& id : ids) key += "|" + id;
    app::PriceBook prices;
    std::uint64_t revision = 0;
    {
      std::shared_lock lock(state_mutex_);
      revision = state_.prices_revision();
      {
        std::lock_guard cache_lock(cache_mutex_);
        if (cache_revision_ == revision) {
          auto it = cache_.find(key);
          if (it != cache_.end()) return it->second;
        }
      }
      for (const auto& id : ids) {
        auto it = state_.prices().find(id);
        require(it != state_.prices().end(), ErrorCode::UnknownAsset, "no prices loaded for asset '" + id + "'");
        prices.emplace(id, it->second);
      }
    }
    auto slice = app::market_from_prices(prices, ids, window);
    slice.view.memo = std::make_shared<ScenarioMemo>();
    std::lock_guard cache_lock(cache_mutex_);
    if (cache_revision_ != revision) {
      cache_.clear();
      cache_revision_ = revision;
    }
    if (cache_.size() > 256) cache_.clear();
    cache_.emplace(key, slice);
    return slice;
  }

  std::unique_lock<std::mutex> portfolio_lock(const std::string& id) {
    std::lock_guard guard(registry_mutex_);
    auto& m = portfolio_mutexes_[id];
    if (!m) m = std::make_unique<std::mutex>();
    return std::unique_lock<std::mutex>(*m);
  }

  std::string next_portfolio_id() const {
    std::shared_lock lock(state_mutex_);
    for (std::uint64_t n = state_.portfolios().size() + 1;; ++n) {
      const auto id = "p" + std::to_string(n);
      if (!state_.find(id)) return id;
    }
  }

  /// Caller holds state_mutex_ exclusively.
  void commit_locked(EventKind kind, const std::string& portfolio_id, json payload) {
    Event e{state_.last_seq() + 1, utc_timestamp(), portfolio_id, kind, std::move(payload)};
    State next = state_;
    next.apply(e);  // validate before the event becomes durable
    journal_.append(e);
    state_ = std::move(next);
    if (snapshot_every_ && state_.last_seq() % snapshot_every_ == 0) journal_.write_snapshot(state_);
  }

  std::string state_hash_locked() const {
    const auto s = state_.canonical().dump();
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) h = (h ^ c) * 1099511628211ULL;
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
  }

  Journal journal_;
  std::uint64_t snapshot_every_;
  State state_;
  mutable std::shared_mutex state_mutex_;
  std::mutex create_mutex_;
  std::mutex registry_mutex_;
  std::map<std::string, std::unique_ptr<std::mutex>> portfolio_mutexes_;
  mutable std::mutex cache_mutex_;
  mutable std::map<std::string, app::MarketSlice> cache_;
  mutable std::uint64_t cache_revision_ = ~0ULL;
};

}  // namespace varmargin::service
