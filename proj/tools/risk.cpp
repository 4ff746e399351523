// risk: batch front end over the margining engine.
//
//   risk var|es     --prices DIR | --model FILE  --portfolio FILE [--alpha A] [--method M] [--horizon D] ...
//   risk leverage   --prices DIR | --model FILE  --portfolio FILE --mode single|sequential|optimize ...
//   risk margin     --prices DIR | --model FILE  --portfolio FILE [--trade FILE] [--h H] [--alpha A]
//   risk backtest   --prices DIR --portfolio FILE [--window N] [--alpha A] [--split S]
//   risk serve      [--port P] [--host H]
//   risk demo-data  --out DIR
//
// Exit codes: 0 success, 2 bad input, 3 trade denied.

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>

#include <CLI11.hpp>

#include "varmargin/app/workbench.hpp"
#include "varmargin/demo.hpp"
#include "varmargin/service/http_server.hpp"

namespace fs = std::filesystem;
using namespace varmargin;
using app::json;

namespace {

constexpr int exit_input = 2;
constexpr int exit_denied = 3;

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), ErrorCode::InvalidArgument, "cannot read " + path);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

json read_json(const std::string& path) { return app::parse_json(read_file(path), path); }

/// Every DIR/<ASSET>.csv, keyed by file stem.
app::PriceBook load_price_dir(const std::string& dir) {
  require(fs::is_directory(dir), ErrorCode::InvalidArgument, "price directory " + dir + " does not exist");
  app::PriceBook book;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".csv") continue;
    const auto id = entry.path().stem().string();
    std::ifstream f(entry.path(), std::ios::binary);
    book.emplace(id, load_prices(f, id));
  }
  require(!book.empty(), ErrorCode::InvalidArgument, "no .csv files in " + dir);
  return book;
}

struct MarketSource {
  std::string prices;
  std::string model;

  void add_to(CLI::App* cmd) {
    auto* p = cmd->add_option("--prices", prices, "Directory of <ASSET>.csv daily closes");
    auto* m = cmd->add_option("--model", model, "Normal model JSON {assets, mu, sigma, spots}");
    p->excludes(m);
  }

  app::MarketSlice load(const std::vector<std::string>& ids, std::size_t window) const {
    require(!prices.empty() || !model.empty(), ErrorCode::InvalidArgument, "one of --prices or --model is required");
    if (!model.empty()) return app::market_from_model(read_json(model));
    return app::market_from_prices(load_price_dir(prices), ids, window);
  }
};

struct Book {
  app::PortfolioInput input;
  MarginPolicy policy;
  app::MarketSlice market;
  std::vector<Position> positions;
};

Book load_book(const std::string& portfolio, const MarketSource& source, const std::optional<double>& alpha,
               const std::optional<double>& h, const std::optional<std::string>& method,
               const std::optional<std::uint64_t>& seed, const std::vector<Trade>& extra = {}) {
  Book b;
  b.input = app::portfolio_input_from_json(read_json(portfolio));
  b.policy = b.input.policy;
  if (alpha) b.policy.alpha = *alpha;
  if (h) b.policy.h = *h;
  if (method) b.policy.method = parse_risk_method(*method);
  if (seed) b.policy.seed = *seed;
  b.policy.validate();
  auto ids = app::referenced_assets(b.input.entries);
  for (const auto& id : app::referenced_assets(extra))
    if (std::find(ids.begin(), ids.end(), id) == ids.end()) ids.push_back(id);
  b.market = source.load(ids, b.policy.window);
  b.positions = app::build_positions(b.input, b.market.view);
  return b;
}

void print(const json& j) { std::cout << app::dump(j, 2) << '\n'; }

std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

void print_table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width(header.size());
  for (std::size_t c = 0; c < header.size(); ++c) width[c] = header[c].size();
  for (const auto& r : rows)
    for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());
  auto line = [&](const std::vector<std::string>& r) {
    for (std::size_t c = 0; c < r.size(); ++c) {
      if (c) std::cout << "  ";
      std::cout << std::string(width[c] - r[c].size(), ' ') << r[c];
    }
    std::cout << '\n';
  };
  line(header);
  for (const auto& r : rows) line(r);
}

void print_leverage_text(const json& j) {
  std::vector<std::vector<std::string>> rows;
  if (j.contains("leverage")) {
    for (const auto& r : j["leverage"])
      rows.push_back({r["asset"].get<std::string>(), fixed(r["w"].get<double>()), fixed(r["l"].get<double>())});
    print_table({"asset", "w", "l*"}, rows);
    std::cout << "objective " << to_string(parse_leverage_objective(j["objective"].get<std::string>())) << " = "
              << fixed(j["objective_value"].get<double>(), 8) << ", portfolio VaR "
              << fixed(j["portfolio_var"].get<double>(), 8) << '\n';
    return;
  }
  const bool sequential = j["mode"] == "sequential";
  for (const auto& r : j["rows"]) {
    std::vector<std::string> row{r["asset"].get<std::string>(), fixed(r["w"].get<double>()),
                                 r["status"].get<std::string>(),
                                 r["status"] == "bounded" ? fixed(r["l_max"].get<double>()) : "-"};
    if (sequential) row.push_back(fixed(r["l_used"].get<double>()));
    rows.push_back(row);
  }
  std::vector<std::string> header{"asset", "w", "status", "l_max"};
  if (sequential) header.push_back("l_used");
  print_table(header, rows);
}

/// Inputs for the demo: price files, the base portfolio, the diversifying
/// trade, the model behind the prices and a one-asset currency position.
void write_demo_data(const std::string& out) {
  fs::create_directories(fs::path(out) / "prices");
  const auto model = demo::model();
  for (const auto& p : demo::price_histories(model, demo::spots(), 504, 7)) {
    std::ofstream f(fs::path(out) / "prices" / (p.asset_id + ".csv"), std::ios::binary);
    f << to_csv(p);
  }
  auto write = [&](const std::string& name, const json& j) {
    std::ofstream f(fs::path(out) / name, std::ios::binary);
    f << j.dump(2) << '\n';
  };
  json positions = json::array();
  for (std::size_t k = 0; k < 3; ++k)
    positions.push_back(json{{"asset", demo::asset_ids()[k]}, {"amount", demo::base_amounts()[k]}});
  write("portfolio.json", json{{"capital", demo::capital}, {"positions", positions},
                               {"policy", json{{"alpha", demo::alpha}, {"h", demo::h}, {"method", "normal"}}}});
  write("trade_eni.json", json{{"asset", "ENI"}, {"amount", 10000.0}});
  write("trade_protective_put.json",
        json{{"option", json{{"underlying", "IGV"}, {"kind", "put"}, {"strike", "last"}, {"expiry_years", 0.25},
                             {"rate", 0.0}}},
             {"amount", 2000.0}});
  auto model_json = app::to_json(model);
  model_json["spots"] = demo::spots();
  write("model.json", model_json);
  write("fx_model.json", json{{"assets", {"DEMUSD"}}, {"mu", {0.0}}, {"sigma", {{0.0053 * 0.0053}}},
                              {"spots", json{{"DEMUSD", 1.0}}}});
  write("fx_portfolio.json", json{{"capital", 1e7}, {"positions", {json{{"asset", "DEMUSD"}, {"amount", 1e7}}}},
                                  {"policy", json{{"alpha", 0.05}, {"method", "normal"}}}});
}

int serve(int port, const std::string& host) {
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  service::RiskService svc(service::data_dir_from_env());
  httplib::Server server;
  service::register_routes(server, svc);
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&signals, &sig);
    server.stop();
  });
  std::cerr << "risk: listening on " << host << ":" << port << '\n';
  const bool ok = server.listen(host, port);
  if (!ok) {
    std::cerr << "risk: cannot listen on " << host << ":" << port << '\n';
    pthread_kill(waiter.native_handle(), SIGTERM);
  }
  waiter.join();
  svc.snapshot();
  return ok ? 0 : exit_input;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App cli{"Portfolio VaR, leverage and margin engine"};
  cli.require_subcommand(1);
  cli.set_help_flag("--help", "Print this help message and exit");  // frees -h for the threshold option

  // Shared option storage; each subcommand binds what it uses.
  MarketSource source;
  std::string portfolio, trade_file, method, mode = "sequential", leverage_method = "var", objective = "max_mean",
                                             format = "json", out_dir, host = "127.0.0.1";
  std::optional<double> alpha, h, z_override;
  std::optional<std::uint64_t> seed;
  int horizon = 1, port = 8080;
  std::size_t window = 0;
  double split = 0.5;

  std::vector<CLI::App*> report_cmds;
  for (const char* name : {"var", "es"}) {
    auto* cmd = cli.add_subcommand(name, std::string(name == std::string("var") ? "Value at Risk" : "Expected Shortfall") +
                                             " report (both measures are printed)");
    source.add_to(cmd);
    cmd->add_option("--portfolio", portfolio, "Portfolio JSON")->required();
    cmd->add_option("--alpha", alpha, "Tail probability in (0, 0.5]");
    cmd->add_option("--method", method, "normal | historical | monte_carlo");
    cmd->add_option("--horizon", horizon, "Horizon in trading days")->check(CLI::PositiveNumber);
    cmd->add_option("--seed", seed, "Monte Carlo seed");
    cmd->add_option("--z-override", z_override, "Fixed normal quantile, e.g. 1.65");
    report_cmds.push_back(cmd);
  }

  auto* leverage = cli.add_subcommand("leverage", "Maximum or optimized leverage factors");
  source.add_to(leverage);
  leverage->add_option("--portfolio", portfolio, "Portfolio JSON")->required();
  leverage->add_option("--mode", mode, "single | sequential | optimize")
      ->check(CLI::IsMember({"single", "sequential", "optimize"}));
  leverage->add_option("--method", leverage_method, "Risk measure bounded: var | es")->check(CLI::IsMember({"var", "es"}));
  leverage->add_option("--alpha", alpha, "Tail probability");
  leverage->add_option("--h", h, "Loss threshold as a fraction of own capital (default 0)");
  leverage->add_option("--objective", objective, "max_mean | max_min")->check(CLI::IsMember({"max_mean", "max_min"}));
  leverage->add_option("--format", format, "json | text")->check(CLI::IsMember({"json", "text"}));

  auto* margin = cli.add_subcommand("margin", "Margin factor, availability and trade verdict");
  source.add_to(margin);
  margin->add_option("--portfolio", portfolio, "Portfolio JSON")->required();
  margin->add_option("--trade", trade_file, "Proposed trade JSON");
  margin->add_option("--h", h, "Availability threshold as a fraction of capital");
  margin->add_option("--alpha", alpha, "Tail probability");
  margin->add_option("--method", method, "normal | historical | monte_carlo");
  margin->add_option("--seed", seed, "Monte Carlo seed");

  auto* bt = cli.add_subcommand("backtest", "Calibrate on the first part of the window, replay the rest");
  bt->add_option("--prices", source.prices, "Directory of <ASSET>.csv daily closes")->required();
  bt->add_option("--portfolio", portfolio, "Portfolio JSON")->required();
  bt->add_option("--window", window, "Most recent joint returns used (0 = all)");
  bt->add_option("--alpha", alpha, "Tail probability");
  bt->add_option("--h", h, "Availability threshold as a fraction of capital");
  bt->add_option("--method", method, "normal | historical | monte_carlo");
  bt->add_option("--split", split, "Calibration share of the window");

  auto* srv = cli.add_subcommand("serve", "Run the HTTP risk service (storage in RISK_DATA_DIR)");
  srv->add_option("--port", port, "TCP port")->check(CLI::Range(1, 65535));
  srv->add_option("--host", host, "Listen address");

  auto* demo_cmd = cli.add_subcommand("demo-data", "Write the synthetic demo inputs");
  demo_cmd->add_option("--out", out_dir, "Output directory")->required();

  try {
    cli.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = cli.exit(e);
    return code == 0 ? 0 : exit_input;
  }

  try {
    for (auto* cmd : report_cmds) {
      if (!cmd->parsed()) continue;
      const auto b = load_book(portfolio, source, alpha, std::nullopt, method.empty() ? std::nullopt : std::optional(method),
                               seed);
      app::RiskQuery q;
      q.horizon_days = horizon;
      q.z_override = z_override;
      print(app::risk_report(b.positions, b.policy, b.market, q));
      return 0;
    }
    if (leverage->parsed()) {
      const auto b = load_book(portfolio, source, alpha, std::nullopt, std::nullopt, std::nullopt);
      const auto inputs = app::leverage_inputs(b.positions, b.input.capital);
      const auto& model = b.market.view.require_model();
      json j;
      if (mode == "optimize") {
        j = app::leverage_optimize(inputs, model, b.policy.alpha, parse_leverage_objective(objective));
      } else {
        app::LeverageRequest req{b.policy.alpha, h.value_or(0.0), app::parse_leverage_measure(leverage_method)};
        j = app::leverage_table(mode, inputs, model, req);
      }
      if (format == "text") print_leverage_text(j);
      else print(j);
      return 0;
    }
    if (margin->parsed()) {
      std::vector<Trade> trades;
      if (!trade_file.empty()) trades.push_back(app::trade_from_json(read_json(trade_file)));
      const auto b =
          load_book(portfolio, source, alpha, h, method.empty() ? std::nullopt : std::optional(method), seed, trades);
      const auto current = assess(b.input.capital, b.positions, b.policy, b.market.view);
      const auto verdict =
          trades.empty() ? current : evaluate_trade(current.account, trades.front(), b.policy, b.market.view);
      print(app::margin_check_json(verdict));
      return verdict.allowed ? 0 : exit_denied;
    }
    if (bt->parsed()) {
      auto input = app::portfolio_input_from_json(read_json(portfolio));
      auto policy = input.policy;
      if (alpha) policy.alpha = *alpha;
      if (h) policy.h = *h;
      if (!method.empty()) policy.method = parse_risk_method(method);
      print(app::backtest(load_price_dir(source.prices), input, policy, {window, split}));
      return 0;
    }
    if (srv->parsed()) return serve(port, host);
    if (demo_cmd->parsed()) {
      write_demo_data(out_dir);
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "risk: " << e.what() << '\n';
    return exit_input;
  } catch (const std::exception& e) {
    std::cerr << "risk: " << e.what() << '\n';
    return exit_input;
  }
  return exit_input;
}
