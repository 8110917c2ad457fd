#pragma once

// HTTP transport for model backends: the client used by the pipeline and a
// server that exposes any Backend implementation (the mocks, in practice).
//
//   POST /v1/{role}        role request JSON  -> role response JSON
//   POST /v1/detect/grad   detect request     -> gradient JSON
//   GET  /v1/health

#include <atomic>
#include <chrono>
#include <map>
#include <memory>
#include <string>
#include <thread>

#include <httplib.h>

#include "mbmc/backend.hpp"
#include "mbmc/error.hpp"

namespace mbmc {

inline constexpr std::chrono::milliseconds kDefaultBackendTimeout{30'000};

/// Splits "http://host:port" into host and port.
inline std::pair<std::string, int> parse_endpoint(const std::string& endpoint) {
  std::string rest = endpoint;
  const std::string scheme = "http://";
  if (rest.rfind(scheme, 0) == 0) rest = rest.substr(scheme.size());
  while (!rest.empty() && rest.back() == '/') rest.pop_back();
  const auto colon = rest.rfind(':');
  if (colon == std::string::npos || colon == 0) {
    throw ConfigError("endpoint '" + endpoint + "' must look like http://host:port");
  }
  try {
    const int port = std::stoi(rest.substr(colon + 1));
    if (port <= 0 || port > 65535) throw std::out_of_range("port");
    return {rest.substr(0, colon), port};
  } catch (const std::exception&) {
    throw ConfigError("endpoint '" + endpoint + "' has an invalid port");
  }
}

/// POSTs `request` to {endpoint}/v1/{role}[/{subpath}] and returns the parsed
/// JSON body. Transient transport failures are retried once.
inline json call_backend(BackendRole role, const json& request, const std::string& endpoint,
                         std::chrono::milliseconds timeout = kDefaultBackendTimeout,
                         const std::string& subpath = "") {
  const std::string role_name(to_string(role));
  const auto [host, port] = parse_endpoint(endpoint);
  std::string path = "/v1/" + role_name;
  if (!subpath.empty()) path += "/" + subpath;
  const std::string body = request.dump();

  for (int attempt = 0; attempt < 2; ++attempt) {
    httplib::Client client(host, port);
    const auto secs = timeout.count() / 1000;
    const auto usecs = (timeout.count() % 1000) * 1000;
    client.set_connection_timeout(secs, usecs);
    client.set_read_timeout(secs, usecs);
    client.set_write_timeout(secs, usecs);

    const auto start = std::chrono::steady_clock::now();
    auto res = client.Post(path, body, "application/json");
    const auto elapsed = std::chrono::steady_clock::now() - start;
    if (!res) {
      const auto err = res.error();
      if (err == httplib::Error::ConnectionTimeout || elapsed >= timeout) {
        throw TimeoutError(role_name + " backend at " + endpoint + " timed out after " +
                           std::to_string(timeout.count()) + " ms");
      }
      if (attempt == 0) continue;
      throw BackendError(role_name, "transport failure: " + httplib::to_string(err));
    }
    if (res->status != 200) {
      throw BackendError(role_name,
                         "HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 500));
    }
    try {
      return json::parse(res->body);
    } catch (const json::parse_error& e) {
      throw ProtocolError("<body>", e.what());
    }
  }
  throw BackendError(role_name, "unreachable");
}

/// Backend whose roles are served by remote HTTP endpoints, one per role.
class HttpBackend : public Backend {
 public:
  using Endpoints = std::map<BackendRole, std::string>;

  explicit HttpBackend(Endpoints endpoints,
                       std::chrono::milliseconds timeout = kDefaultBackendTimeout)
      : endpoints_(std::move(endpoints)), timeout_(timeout) {}

  /// Parses {"segment": "http://...", ...}. Unknown role names are rejected.
  static Endpoints parse_endpoints(const json& j) {
    if (!j.is_object()) throw ConfigError("backend endpoints must be a JSON object");
    Endpoints out;
    for (const auto& [name, url] : j.items()) {
      if (!url.is_string()) throw ConfigError("endpoint for '" + name + "' must be a string");
      out[parse_role(name)] = url.get<std::string>();
    }
    return out;
  }

  const Endpoints& endpoints() const { return endpoints_; }

  SegmentResponse segment(const SegmentRequest& r) override { return call<SegmentResponse>(BackendRole::Segment, to_json(r)); }
  PoseResponse pose(const PoseRequest& r) override { return call<PoseResponse>(BackendRole::Pose, to_json(r)); }
  EdgesResponse edges(const EdgesRequest& r) override { return call<EdgesResponse>(BackendRole::Edges, to_json(r)); }
  EmbedResponse embed(const EmbedRequest& r) override { return call<EmbedResponse>(BackendRole::Embed, to_json(r)); }
  ImageResponse inpaint(const InpaintRequest& r) override { return call<ImageResponse>(BackendRole::Inpaint, to_json(r)); }
  ImageResponse generate(const GenerationRequest& r) override { return call<ImageResponse>(BackendRole::Generate, to_json(r)); }
  ImageResponse faceswap(const FaceSwapRequest& r) override { return call<ImageResponse>(BackendRole::FaceSwap, to_json(r)); }
  ImageResponse enhance(const EnhanceRequest& r) override { return call<ImageResponse>(BackendRole::Enhance, to_json(r)); }
  DetectResponse detect(const DetectRequest& r) override { return call<DetectResponse>(BackendRole::Detect, to_json(r)); }
  GradResponse detect_grad(const DetectRequest& r) override {
    return call<GradResponse>(BackendRole::Detect, to_json(r), "grad");
  }

 private:
  template <typename Response>
  Response call(BackendRole role, const json& request, const std::string& subpath = "") {
    auto it = endpoints_.find(role);
    if (it == endpoints_.end()) {
      throw ConfigError("no endpoint configured for role '" + std::string(to_string(role)) + "'");
    }
    return from_json<Response>(call_backend(role, request, it->second, timeout_, subpath));
  }

  Endpoints endpoints_;
  std::chrono::milliseconds timeout_;
};

/// Serves a Backend over HTTP. listen() blocks; start() runs it on a thread.
class BackendServer {
 public:
  explicit BackendServer(Backend& backend) : backend_(backend) {
    server_.Get("/v1/health", [](const httplib::Request&, httplib::Response& res) {
      res.set_content(R"({"status":"ok"})", "application/json");
    });
    server_.Post("/v1/detect/grad", [this](const httplib::Request& req, httplib::Response& res) {
      handle(BackendRole::Detect, true, req, res);
    });
    server_.Post(R"(/v1/([a-z]+))", [this](const httplib::Request& req, httplib::Response& res) {
      BackendRole role;
      try {
        role = parse_role(req.matches[1].str());
      } catch (const ConfigError& e) {
        res.status = 404;
        res.set_content(json{{"error", e.what()}}.dump(), "application/json");
        return;
      }
      handle(role, false, req, res);
    });
  }

  ~BackendServer() { stop(); }

  BackendServer(const BackendServer&) = delete;
  BackendServer& operator=(const BackendServer&) = delete;

  /// Binds (port 0 picks a free port) and serves on a background thread.
  int start(const std::string& host = "127.0.0.1", int port = 0) {
    port_ = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
    if (port_ < 0) throw IoError("cannot bind backend server to " + host + ":" + std::to_string(port));
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port_;
  }

  bool listen(const std::string& host, int port) { return server_.listen(host, port); }

  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  int port() const { return port_; }

 private:
  void handle(BackendRole role, bool grad, const httplib::Request& req, httplib::Response& res) {
    try {
      const json request = json::parse(req.body);
      res.set_content(dispatch(backend_, role, request, grad).dump(), "application/json");
    } catch (const json::parse_error& e) {
      res.status = 400;
      res.set_content(json{{"error", std::string("invalid JSON: ") + e.what()}}.dump(),
                      "application/json");
    } catch (const ProtocolError& e) {
      res.status = 400;
      res.set_content(json{{"error", e.what()}, {"field", e.field()}}.dump(), "application/json");
    } catch (const std::exception& e) {
      res.status = 500;
      res.set_content(json{{"error", e.what()}}.dump(), "application/json");
    }
  }

  Backend& backend_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = -1;
};

}  // namespace mbmc
