#pragma once

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "varmargin/app/json_codec.hpp"
#include "varmargin/error.hpp"
#include "varmargin/margin.hpp"
#include "varmargin/market_data.hpp"

// Durable state of the risk service. Every mutation is an event appended to a
// JSON-lines log; state is a pure fold over the events, so replaying the log
// from empty (or from a snapshot plus the log tail) rebuilds it exactly.
// Persisted numbers use shortest round-trip formatting, never the four-decimal
// API rounding.

namespace varmargin::service {

using app::json;
namespace fs = std::filesystem;

struct PortfolioRecord {
  std::string id;
  std::string owner;
  MarginAccount account;
  MarginPolicy policy;
  std::uint64_t version = 0;
};

inline json to_json(const PortfolioRecord& r, app::MoneyStyle style) {
  return json{{"id", r.id},
              {"owner", r.owner},
              {"version", r.version},
              {"account", app::to_json(r.account, style)},
              {"policy", app::to_json(r.policy)}};
}

inline PortfolioRecord record_from_json(const json& j) {
  PortfolioRecord r;
  r.id = app::text(j, "id");
  r.owner = app::text(j, "owner");
  r.version = app::unsigned_integer(j, "version");
  r.account = app::account_from_json(app::field(j, "account"));
  r.policy = app::policy_from_json(app::field(j, "policy"));
  return r;
}

enum class EventKind { created, prices_loaded, trade_committed, trade_denied, policy_changed };

constexpr std::string_view to_string(EventKind k) {
  switch (k) {
    case EventKind::created: return "created";
    case EventKind::prices_loaded: return "prices_loaded";
    case EventKind::trade_committed: return "trade_committed";
    case EventKind::trade_denied: return "trade_denied";
    case EventKind::policy_changed: return "policy_changed";
  }
  return "created";
}

inline EventKind parse_event_kind(std::string_view s) {
  for (auto k : {EventKind::created, EventKind::prices_loaded, EventKind::trade_committed, EventKind::trade_denied,
                 EventKind::policy_changed})
    if (to_string(k) == s) return k;
  throw Error(ErrorCode::InvalidArgument, "unknown event kind '" + std::string(s) + "'");
}

struct Event {
  std::uint64_t seq = 0;
  std::string timestamp;
  std::string portfolio_id;  // empty for market-data events
  EventKind kind = EventKind::created;
  json payload;
};

inline json to_json(const Event& e) {
  return json{{"seq", e.seq}, {"ts", e.timestamp}, {"portfolio", e.portfolio_id}, {"kind", to_string(e.kind)},
              {"payload", e.payload}};
}

inline Event event_from_json(const json& j) {
  return Event{app::unsigned_integer(j, "seq"), app::text(j, "ts"), app::text(j, "portfolio"),
               parse_event_kind(app::text(j, "kind")), app::field(j, "payload")};
}

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[40];
  const auto n = std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  std::snprintf(buf + n, sizeof buf - n, ".%03dZ", static_cast<int>(ms));
  return buf;
}

/// Folded service state. Not thread safe; the service serializes access.
class State {
 public:
  const std::map<std::string, PriceSeries>& prices() const { return prices_; }
  const std::map<std::string, PortfolioRecord>& portfolios() const { return portfolios_; }
  std::uint64_t last_seq() const { return last_seq_; }
  std::uint64_t prices_revision() const { return prices_revision_; }

  const PortfolioRecord* find(const std::string& id) const {
    auto it = portfolios_.find(id);
    return it == portfolios_.end() ? nullptr : &it->second;
  }

  void apply(const Event& e) {
    require(e.seq == last_seq_ + 1, ErrorCode::InvalidArgument,
            "event sequence gap: expected " + std::to_string(last_seq_ + 1) + ", got " + std::to_string(e.seq));
    switch (e.kind) {
      case EventKind::created: {
        auto r = record_from_json(app::field(e.payload, "record"));
        require(!portfolios_.count(r.id), ErrorCode::InvalidArgument, "portfolio '" + r.id + "' created twice");
        portfolios_[r.id] = std::move(r);
        break;
      }
      case EventKind::prices_loaded: {
        const auto id = app::text(e.payload, "asset_id");
        prices_[id] = load_prices(app::text(e.payload, "csv"), id);
        ++prices_revision_;
        break;
      }
      case EventKind::trade_committed:
      case EventKind::policy_changed: {
        auto& r = existing(e.portfolio_id);
        const auto version = app::unsigned_integer(e.payload, "version");
        require(version == r.version + 1, ErrorCode::InvalidArgument, "non-consecutive portfolio version");
        r.account = app::account_from_json(app::field(e.payload, "account"));
        if (e.kind == EventKind::policy_changed) r.policy = app::policy_from_json(app::field(e.payload, "policy"));
        r.version = version;
        break;
      }
      case EventKind::trade_denied:
        existing(e.portfolio_id);  // audit only
        break;
    }
    last_seq_ = e.seq;
  }

  /// Exact serialization of everything the events determine.
  json canonical() const {
    json assets = json::object();
    for (const auto& [id, p] : prices_) assets[id] = to_csv(p);
    json portfolios = json::object();
    for (const auto& [id, r] : portfolios_) portfolios[id] = to_json(r, app::MoneyStyle::exact);
    return json{{"last_seq", last_seq_}, {"assets", assets}, {"portfolios", portfolios}};
  }

  static State from_canonical(const json& j) {
    State s;
    for (const auto& [id, csv] : app::field(j, "assets").items()) {
      s.prices_[id] = load_prices(csv.get<std::string>(), id);
      ++s.prices_revision_;
    }
    for (const auto& [id, r] : app::field(j, "portfolios").items()) s.portfolios_[id] = record_from_json(r);
    s.last_seq_ = app::unsigned_integer(j, "last_seq");
    return s;
  }

 private:
  PortfolioRecord& existing(const std::string& id) {
    auto it = portfolios_.find(id);
    require(it != portfolios_.end(), ErrorCode::InvalidArgument, "event for unknown portfolio '" + id + "'");
    return it->second;
  }

  std::map<std::string, PriceSeries> prices_;
  std::map<std::string, PortfolioRecord> portfolios_;
  std::uint64_t last_seq_ = 0;
  std::uint64_t prices_revision_ = 0;
};

/// Append-only JSON-lines event file plus snapshot file under one directory.
/// Without a directory everything stays in memory.
class Journal {
 public:
  explicit Journal(std::optional<fs::path> dir = std::nullopt) : dir_(std::move(dir)) {
    if (dir_) {
      fs::create_directories(*dir_);
      drop_torn_tail();
      out_.open(log_path(), std::ios::app | std::ios::binary);
      require(out_.good(), ErrorCode::InvalidArgument, "cannot open event log " + log_path().string());
    }
  }

  bool durable() const { return dir_.has_value(); }
  fs::path log_path() const { return *dir_ / "events.jsonl"; }
  fs::path snapshot_path() const { return *dir_ / "snapshot.json"; }

  void append(const Event& e) {
    if (!dir_) return;
    out_ << to_json(e).dump() << '\n';
    out_.flush();
    require(out_.good(), ErrorCode::InvalidArgument, "event log write failed");
  }

  void write_snapshot(const State& s) const {
    if (!dir_) return;
    const auto tmp = snapshot_path().string() + ".tmp";
    {
      std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
      f << s.canonical().dump() << '\n';
      require(f.good(), ErrorCode::InvalidArgument, "snapshot write failed");
    }
    fs::rename(tmp, snapshot_path());
  }

  /// Snapshot (when present) followed by every later logged event.
  State recover(bool use_snapshot = true) const {
    State s;
    if (!dir_) return s;
    if (use_snapshot && fs::exists(snapshot_path())) {
      std::ifstream f(snapshot_path(), std::ios::binary);
      s = State::from_canonical(json::parse(f));
    }
    for (const auto& e : read_log())
      if (e.seq > s.last_seq()) s.apply(e);
    return s;
  }

  std::vector<Event> read_log() const {
    std::vector<Event> events;
    if (!dir_ || !fs::exists(log_path())) return events;
    std::ifstream f(log_path(), std::ios::binary);
    std::vector<std::string> lines;
    for (std::string line; std::getline(f, line);)
      if (!line.empty()) lines.push_back(std::move(line));
    for (std::size_t i = 0; i < lines.size(); ++i) {
      json j;
      try {
        j = json::parse(lines[i]);
      } catch (const json::parse_error&) {
        if (i + 1 == lines.size()) break;  // torn final write; the event never committed
        throw Error(ErrorCode::InvalidArgument, "corrupt event log line " + std::to_string(i + 1));
      }
      events.push_back(event_from_json(j));
    }
    return events;
  }

 private:
  /// A crash mid-append can leave a final line without its newline; that
  /// event never committed, so it is cut before new appends follow it.
  void drop_torn_tail() const {
    if (!fs::exists(log_path())) return;
    std::string content;
    {
      std::ifstream f(log_path(), std::ios::binary);
      content.assign(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
    }
    if (content.empty() || content.back() == '\n') return;
    const auto keep = content.rfind('\n');
    fs::resize_file(log_path(), keep == std::string::npos ? 0 : keep + 1);
  }

  std::optional<fs::path> dir_;
  std::ofstream out_;
};

}  // namespace varmargin::service
