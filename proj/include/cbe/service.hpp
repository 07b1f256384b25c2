#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "cbe/bottleneck.hpp"
#include "cbe/intervene.hpp"

namespace cbe {

struct ServiceConfig {
  std::filesystem::path model_dir;
  /// Empty: `<model_dir>/intervention.json`.
  std::filesystem::path table_path;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::size_t max_body_bytes = 1 << 20;
  /// Origins echoed in Access-Control-Allow-Origin; "*" allows any.
  std::vector<std::string> cors_origins;
};

struct ServiceResponse {
  int status = 200;
  std::string body;  // JSON
};

/// Read-only JSON API over one loaded model and its intervention table:
///   GET  /schema       concepts with origins, class count, value domain
///   GET  /percentiles  the intervention table
///   POST /predict      {"text"} -> prediction + explanation
///   POST /explain      {"text", "class"?, "all_classes"?} -> explanation(s)
///   POST /intervene    {"text", "edits": {concept: value}} -> before/after
/// Errors are {"error": {"code", "message"}} with a 4xx/5xx status.
class Service {
 public:
  Service(ConceptModel model, std::optional<InterventionTable> table, ServiceConfig config = {});

  /// Loads the model directory and table; throws with a diagnostic when
  /// either is missing or corrupt.
  static Service load(const ServiceConfig& config);

  /// Pure request handler: the response depends only on the loaded model and
  /// the arguments.
  ServiceResponse handle(std::string_view method, std::string_view path, std::string_view body) const;

  /// Binds and serves until stop(). Throws Error if the port cannot be bound.
  void serve();
  void stop();
  /// Port actually bound (useful with port 0), or 0 before serve() binds.
  int bound_port() const;

  const ConceptModel& model() const { return model_; }
  const ServiceConfig& config() const { return config_; }

 private:
  nlohmann::json schema_json() const;
  nlohmann::json predict_json(const nlohmann::json& req) const;
  nlohmann::json explain_json(const nlohmann::json& req) const;
  nlohmann::json intervene_json(const nlohmann::json& req) const;

  ConceptModel model_;
  std::optional<InterventionTable> table_;
  ServiceConfig config_;
  struct Server;
  std::shared_ptr<Server> server_;
};

/// Edits from a JSON object {concept: "Positive", ...}.
Edits edits_from_json(const nlohmann::json& j);

}  // namespace cbe
