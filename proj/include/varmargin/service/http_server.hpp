#pragma once

#include <cstdlib>
#include <optional>
#include <string>

#include <httplib.h>

#include "varmargin/service/risk_service.hpp"

// HTTP/1.1 binding of RiskService. Every response body is JSON with money
// fields at four decimals; errors carry {"error": {"code", "message"}}.

namespace varmargin::service {

/// Machine-readable description of the routes, served at /v1/spec.
inline json api_description() {
  auto op = [](const char* summary, json params, json responses) {
    return json{{"summary", summary}, {"parameters", std::move(params)}, {"responses", std::move(responses)}};
  };
  auto q = [](const char* name, const char* type, bool required = false) {
    return json{{"name", name}, {"in", "query"}, {"type", type}, {"required", required}};
  };
  json paths = json::object();
  paths["/v1/assets"]["get"] = op("List assets with loaded prices", json::array(), json{{"200", "asset list"}});
  paths["/v1/assets/{asset_id}/prices"]["put"] =
      op("Upload a daily close series as CSV (date,close); re-uploading the same series is a no-op", json::array(),
         json{{"204", "stored"}, {"400", "row-level diagnostics"}});
  paths["/v1/portfolios"]["get"] = op("List portfolios", json::array(), json{{"200", "portfolio list"}});
  paths["/v1/portfolios"]["post"] =
      op("Create a portfolio from {id?, owner?, capital, positions?, policy?}", json::array(),
         json{{"201", "record at version 1"}, {"409", "exists, or the initial book is denied"}, {"422", "unknown asset"}});
  paths["/v1/portfolios/{id}"]["get"] = op("Portfolio record", json::array(), json{{"200", "record"}, {"404", "unknown"}});
  paths["/v1/portfolios/{id}/policy"]["put"] =
      op("Change the margin policy {alpha?, h?, method?, seed?, scenarios?, window?, expected_version?}", json::array(),
         json{{"200", "record"}, {"409", "availability would turn negative"}, {"412", "version conflict"}});
  paths["/v1/portfolios/{id}/risk"]["get"] =
      op("Risk report",
         json::array({q("alpha", "number"), q("horizon_days", "integer"), q("method", "normal|historical|monte_carlo"),
                      q("seed", "integer"), q("z_override", "number")}),
         json{{"200", "risk report"}, {"400", "invalid parameter"}, {"404", "unknown"}, {"409", "insufficient data"}});
  paths["/v1/portfolios/{id}/whatif"]["post"] =
      op("Evaluate {trade} without changing state", json::array(),
         json{{"200", "verdict"}, {"404", "unknown"}, {"422", "unknown asset"}});
  paths["/v1/portfolios/{id}/trades"]["post"] =
      op("Commit {trade, expected_version}", json::array(),
         json{{"201", "new record and verdict"}, {"409", "denied, state unchanged"}, {"412", "version conflict"}});
  paths["/v1/portfolios/{id}/leverage/max"]["get"] =
      op("Maximum leverage of one asset with the other factors held",
         json::array({q("asset", "string", true), q("alpha", "number"), q("method", "var|es"), q("h", "number"),
                      q("w", "number")}),
         json{{"200", "{status, l_max}"}});
  paths["/v1/portfolios/{id}/leverage/table"]["get"] =
      op("Single or sequential maxima for every held asset",
         json::array({q("mode", "single|sequential"), q("alpha", "number"), q("method", "var|es"), q("h", "number")}),
         json{{"200", "rows of {asset, w, status, l_max}"}});
  paths["/v1/portfolios/{id}/leverage/optimize"]["post"] =
      op("Optimal leverage {objective: max_mean|max_min, alpha}", json::array(), json{{"200", "factors and certificate"}});
  paths["/v1/portfolios/{id}/simulate"]["post"] =
      op("End-of-day availability and value distributions {method, m, seed}", json::array(),
         json{{"200", "101-bin histograms and empirical quantiles"}, {"409", "availability already negative"}});
  paths["/v1/state/hash"]["get"] = op("Hash of the folded state", json::array(), json{{"200", "{last_seq, hash}"}});
  paths["/v1/spec"]["get"] = op("This document", json::array(), json{{"200", "description"}});
  return json{{"openapi", "3.0.3"},
              {"info", json{{"title", "varmargin risk service"}, {"version", "1"}}},
              {"paths", paths}};
}

namespace detail {

inline void send(httplib::Response& res, const Response& r) {
  res.status = r.status;
  if (!r.body.is_null()) res.set_content(app::dump(r.body), "application/json");
}

inline Query query_of(const httplib::Request& req) {
  Query q;
  for (const auto& [k, v] : req.params) q[k] = v;
  return q;
}

}  // namespace detail

inline void register_routes(httplib::Server& server, RiskService& svc) {
  using httplib::Request;
  using httplib::Response;
  using detail::send;

  server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                              {"Access-Control-Allow-Methods", "GET, POST, PUT, OPTIONS"},
                              {"Access-Control-Allow-Headers", "Content-Type"}});
  server.Options(R"(/v1/.*)", [](const Request&, Response& res) { res.status = 204; });

  server.Get("/v1/spec", [](const Request&, Response& res) { send(res, {200, api_description()}); });
  server.Get("/v1/state/hash", [&svc](const Request&, Response& res) { send(res, svc.state_summary()); });

  server.Get("/v1/assets", [&svc](const Request&, Response& res) { send(res, svc.list_assets()); });
  server.Put(R"(/v1/assets/([^/]+)/prices)", [&svc](const Request& req, Response& res) {
    send(res, svc.upload_prices(req.matches[1], req.body));
  });

  server.Get("/v1/portfolios", [&svc](const Request&, Response& res) { send(res, svc.list_portfolios()); });
  server.Post("/v1/portfolios", [&svc](const Request& req, Response& res) { send(res, svc.create_portfolio(req.body)); });
  server.Get(R"(/v1/portfolios/([^/]+))", [&svc](const Request& req, Response& res) {
    send(res, svc.get_portfolio(req.matches[1]));
  });
  server.Put(R"(/v1/portfolios/([^/]+)/policy)", [&svc](const Request& req, Response& res) {
    send(res, svc.put_policy(req.matches[1], req.body));
  });
  server.Get(R"(/v1/portfolios/([^/]+)/risk)", [&svc](const Request& req, Response& res) {
    send(res, svc.risk(req.matches[1], detail::query_of(req)));
  });
  server.Post(R"(/v1/portfolios/([^/]+)/whatif)", [&svc](const Request& req, Response& res) {
    send(res, svc.whatif(req.matches[1], req.body));
  });
  server.Post(R"(/v1/portfolios/([^/]+)/trades)", [&svc](const Request& req, Response& res) {
    send(res, svc.commit_trade(req.matches[1], req.body));
  });
  server.Get(R"(/v1/portfolios/([^/]+)/leverage/max)", [&svc](const Request& req, Response& res) {
    send(res, svc.leverage_max(req.matches[1], detail::query_of(req)));
  });
  server.Get(R"(/v1/portfolios/([^/]+)/leverage/table)", [&svc](const Request& req, Response& res) {
    send(res, svc.leverage_table(req.matches[1], detail::query_of(req)));
  });
  server.Post(R"(/v1/portfolios/([^/]+)/leverage/optimize)", [&svc](const Request& req, Response& res) {
    send(res, svc.leverage_optimize(req.matches[1], req.body));
  });
  server.Post(R"(/v1/portfolios/([^/]+)/simulate)", [&svc](const Request& req, Response& res) {
    send(res, svc.simulate(req.matches[1], req.body));
  });

  server.set_error_handler([](const Request&, Response& res) {
    if (res.body.empty() && res.status == 404)
      detail::send(res, error_response(404, "NotFound", "no such route"));
  });
  server.set_exception_handler([](const Request&, Response& res, std::exception_ptr ep) {
    std::string message = "internal error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      message = e.what();
    } catch (...) {
    }
    detail::send(res, error_response(500, "Internal", message));
  });
}

/// Storage root from RISK_DATA_DIR; in-memory when unset or empty.
inline std::optional<fs::path> data_dir_from_env() {
  const char* dir = std::getenv("RISK_DATA_DIR");
  if (!dir || !*dir) return std::nullopt;
  return fs::path(dir);
}

}  // namespace varmargin::service
