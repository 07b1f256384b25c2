#include "cbe/service.hpp"

#include <atomic>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "cbe/error.hpp"

// After Eigen (see llm_augment.cpp).
#include <httplib.h>

namespace cbe {

using nlohmann::json;

namespace {

struct HttpError {
  int status;
  std::string code;
  std::string message;
};

std::string error_body(const std::string& code, const std::string& message) {
  return json{{"error", {{"code", code}, {"message", message}}}}.dump();
}

const json& require_object(const json& req) {
  if (!req.is_object()) throw HttpError{400, "bad_request", "request body must be a JSON object"};
  return req;
}

std::string require_text(const json& req) {
  require_object(req);
  const auto it = req.find("text");
  if (it == req.end() || !it->is_string()) throw HttpError{400, "bad_request", "missing string field \"text\""};
  return it->get<std::string>();
}

json prediction_json(const LabelPrediction& p) {
  return {{"class", p.label},
          {"logits", std::vector<double>(p.logits.data(), p.logits.data() + p.logits.size())},
          {"probabilities", std::vector<double>(p.probs.data(), p.probs.data() + p.probs.size())}};
}

}  // namespace

Edits edits_from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("\"edits\" must be an object mapping concept names to values");
  Edits edits;
  for (const auto& [name, value] : j.items()) {
    if (!value.is_string()) throw ValidationError(fmt::format("edit for \"{}\" must be a string value", name));
    edits.emplace_back(name, parse_concept_value(value.get<std::string>()));
  }
  return edits;
}

struct Service::Server {
  httplib::Server http;
  std::atomic<int> port{0};
};

Service::Service(ConceptModel model, std::optional<InterventionTable> table, ServiceConfig config)
    : model_(std::move(model)), table_(std::move(table)), config_(std::move(config)),
      server_(std::make_shared<Server>()) {
  if (table_ && table_->rows.size() != model_.schema().size())
    throw DimensionError(fmt::format("intervention table has {} concepts, model {}", table_->rows.size(),
                                     model_.schema().size()));
}

Service Service::load(const ServiceConfig& config) {
  if (config.model_dir.empty()) throw ConfigError("no model directory given (set CBE_MODEL_DIR or --model)");
  ConceptModel model = load_model(config.model_dir);
  const auto table_path = config.table_path.empty() ? config.model_dir / "intervention.json" : config.table_path;
  std::optional<InterventionTable> table;
  if (std::filesystem::exists(table_path)) table = load_intervention_table(table_path);
  else if (model.interpretable()) spdlog::warn("no intervention table at {}; /intervene is disabled", table_path.string());
  return Service(std::move(model), std::move(table), config);
}

json Service::schema_json() const {
  json concepts = json::array();
  for (const auto& c : model_.schema().concepts()) concepts.push_back({{"name", c.name}, {"origin", to_string(c.origin)}});
  json values = json::array();
  for (ConceptValue v : kConceptValues) values.push_back(to_string(v));
  return {{"concepts", concepts},
          {"num_classes", model_.num_classes()},
          {"values", values},
          {"interpretable", model_.interpretable()},
          {"strategy", to_string(model_.provenance().strategy)}};
}

json Service::predict_json(const json& req) const {
  const std::string text = require_text(req);
  const auto fw = model_.forward(text);
  json out = {{"prediction", prediction_json(fw.label)}};
  out["explanation"] = fw.concepts ? to_json(explain(model_, *fw.concepts)) : json(nullptr);
  return out;
}

json Service::explain_json(const json& req) const {
  const std::string text = require_text(req);
  if (!model_.interpretable()) throw HttpError{400, "not_interpretable", "model has no concept bottleneck"};
  const ConceptActivations a = model_.project(model_.encoder().encode(text));
  if (req.value("all_classes", false)) {
    json all = json::array();
    for (int c = 0; c < model_.num_classes(); ++c) all.push_back(to_json(explain(model_, a, c)));
    return {{"explanations", all}};
  }
  std::optional<int> cls;
  if (req.contains("class")) {
    if (!req["class"].is_number_integer()) throw HttpError{400, "bad_request", "\"class\" must be an integer"};
    cls = req["class"].get<int>();
  }
  return to_json(explain(model_, a, cls));
}

json Service::intervene_json(const json& req) const {
  const std::string text = require_text(req);
  if (!model_.interpretable()) throw HttpError{400, "not_interpretable", "model has no concept bottleneck"};
  if (!table_) throw HttpError{409, "no_table", "service was started without an intervention table"};
  const Edits edits = edits_from_json(req.value("edits", json::object()));
  return to_json(predict_with_intervention(model_, *table_, text, edits));
}

ServiceResponse Service::handle(std::string_view method, std::string_view path, std::string_view body) const {
  try {
    if (body.size() > config_.max_body_bytes)
      throw HttpError{413, "payload_too_large", fmt::format("body exceeds {} bytes", config_.max_body_bytes)};
    const bool get = method == "GET";
    const bool post = method == "POST";
    auto parse_body = [&] {
      try {
        return json::parse(body);
      } catch (const json::parse_error& e) {
        throw HttpError{400, "bad_json", e.what()};
      }
    };
    json out;
    if (path == "/schema" || path == "/percentiles") {
      if (!get) throw HttpError{405, "method_not_allowed", fmt::format("{} expects GET", path)};
      if (path == "/schema") {
        out = schema_json();
      } else {
        if (!table_) throw HttpError{404, "no_table", "service was started without an intervention table"};
        out = to_json(*table_);
      }
    } else if (path == "/predict" || path == "/explain" || path == "/intervene") {
      if (!post) throw HttpError{405, "method_not_allowed", fmt::format("{} expects POST", path)};
      const json req = parse_body();
      if (path == "/predict") out = predict_json(req);
      else if (path == "/explain") out = explain_json(req);
      else out = intervene_json(req);
    } else {
      throw HttpError{404, "not_found", fmt::format("no endpoint {}", path)};
    }
    return {200, out.dump()};
  } catch (const HttpError& e) {
    return {e.status, error_body(e.code, e.message)};
  } catch (const SchemaError& e) {
    return {400, error_body("schema_error", e.what())};
  } catch (const ValidationError& e) {
    return {400, error_body("invalid_request", e.what())};
  } catch (const std::exception& e) {
    spdlog::error("request {} {} failed: {}", method, path, e.what());
    return {500, error_body("internal", e.what())};
  }
}

void Service::serve() {
  auto& http = server_->http;
  http.set_payload_max_length(config_.max_body_bytes);
  auto cors = [this](const httplib::Request& req, httplib::Response& res) {
    const std::string origin = req.get_header_value("Origin");
    if (origin.empty()) return;
    for (const auto& allowed : config_.cors_origins) {
      if (allowed == "*" || allowed == origin) {
        res.set_header("Access-Control-Allow-Origin", allowed == "*" ? "*" : origin);
        res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
        res.set_header("Access-Control-Allow-Headers", "Content-Type");
        return;
      }
    }
  };
  // The pre-routing hook runs before the body is read, so it only adds CORS
  // headers; every method is routed to handle() through catch-all patterns.
  http.set_pre_routing_handler([cors](const httplib::Request& req, httplib::Response& res) {
    cors(req, res);
    return httplib::Server::HandlerResponse::Unhandled;
  });
  auto route = [this](const httplib::Request& req, httplib::Response& res) {
    const auto r = handle(req.method, req.path, req.body);
    res.status = r.status;
    res.set_content(r.body, "application/json");
  };
  http.Get(".*", route);
  http.Post(".*", route);
  http.Put(".*", route);
  http.Patch(".*", route);
  http.Delete(".*", route);
  http.Options(".*", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
  http.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (!res.body.empty()) return;
    const std::string code = res.status == 413 ? "payload_too_large" : "http_error";
    res.set_content(error_body(code, httplib::status_message(res.status)), "application/json");
  });
  int port = config_.port;
  if (port == 0) {
    port = http.bind_to_any_port(config_.host);
    if (port < 0) throw Error(fmt::format("cannot bind {}", config_.host));
  } else if (!http.bind_to_port(config_.host, port)) {
    throw Error(fmt::format("cannot bind {}:{} (port busy?)", config_.host, port));
  }
  server_->port = port;
  spdlog::info("serving {} on http://{}:{}", config_.model_dir.string(), config_.host, port);
  http.listen_after_bind();
}

void Service::stop() { server_->http.stop(); }

int Service::bound_port() const { return server_->http.is_running() ? server_->port.load() : 0; }

}  // namespace cbe
