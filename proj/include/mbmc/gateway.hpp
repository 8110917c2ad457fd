#pragma once

// Service layer: image upload, asynchronous anonymisation jobs and their
// persisted store, plus the HTTP routes that expose them.
//
//   POST /v1/images         raw or multipart image -> {"image_id","bodies":[...]}
//   POST /v1/anonymize      {"image_id","seed","choices":[{"body_id","option"}]} -> {"job_id"}
//   GET  /v1/jobs/{id}      job JSON
//   GET  /v1/results/{id}   PNG
//   GET  /v1/health

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "mbmc/backend.hpp"
#include "mbmc/codec.hpp"
#include "mbmc/error.hpp"
#include "mbmc/http_backend.hpp"
#include "mbmc/manifold.hpp"
#include "mbmc/pipeline.hpp"

namespace mbmc {

namespace fs = std::filesystem;

inline constexpr std::size_t kDefaultMaxUploadBytes = 32u * 1024 * 1024;

struct ServiceConfig {
  HttpBackend::Endpoints endpoints;
  std::optional<std::string> body_manifold_path;
  std::optional<std::string> face_manifold_path;
  PipelineConfig pipeline{};
  std::set<AnonymizationChoice> enabled_options = {
      AnonymizationChoice::PhysicalRemoval, AnonymizationChoice::AdversarialRemoval,
      AnonymizationChoice::MaskBasedRemoval, AnonymizationChoice::IdentityRemoval,
      AnonymizationChoice::NoAction};
  std::string listen = "127.0.0.1:8080";
  std::string store_dir = "mbmc-store";
  int workers = 2;
  std::size_t max_upload_bytes = kDefaultMaxUploadBytes;
  std::chrono::milliseconds backend_timeout = kDefaultBackendTimeout;

  static std::vector<BackendRole> roles_for(AnonymizationChoice c) {
    switch (c) {
      case AnonymizationChoice::PhysicalRemoval: return {BackendRole::Inpaint};
      case AnonymizationChoice::AdversarialRemoval: return {BackendRole::Detect};
      case AnonymizationChoice::MaskBasedRemoval:
        return {BackendRole::Embed, BackendRole::Generate, BackendRole::Inpaint};
      case AnonymizationChoice::IdentityRemoval:
        return {BackendRole::Embed, BackendRole::FaceSwap, BackendRole::Enhance,
                BackendRole::Inpaint};
      case AnonymizationChoice::NoAction: return {};
    }
    return {};
  }

  /// Every role an enabled option relies on must have an endpoint.
  void validate_endpoints() const {
    std::set<BackendRole> needed = {BackendRole::Segment, BackendRole::Pose, BackendRole::Edges};
    for (auto c : enabled_options)
      for (auto r : roles_for(c)) needed.insert(r);
    for (auto r : needed) {
      if (!endpoints.count(r)) {
        throw ConfigError("no endpoint configured for role '" + std::string(to_string(r)) +
                          "' required by the enabled options");
      }
    }
  }

  void validate_manifolds() const {
    if (enabled_options.count(AnonymizationChoice::MaskBasedRemoval) && !body_manifold_path) {
      throw ConfigError("mask_based_removal is enabled but no body manifold is configured");
    }
    if (enabled_options.count(AnonymizationChoice::IdentityRemoval) && !face_manifold_path) {
      throw ConfigError("identity_removal is enabled but no face manifold is configured");
    }
  }

  static ServiceConfig from_json(const json& j) {
    ServiceConfig c;
    try {
      if (j.contains("backends")) c.endpoints = HttpBackend::parse_endpoints(j.at("backends"));
      if (j.contains("manifolds")) {
        const auto& m = j.at("manifolds");
        if (m.contains("body")) c.body_manifold_path = m.at("body").get<std::string>();
        if (m.contains("face")) c.face_manifold_path = m.at("face").get<std::string>();
      }
      if (j.contains("attack")) {
        const auto& a = j.at("attack");
        c.pipeline.attack.epsilon = a.value("epsilon", c.pipeline.attack.epsilon);
        c.pipeline.attack.alpha = a.value("alpha", c.pipeline.attack.alpha);
        c.pipeline.attack.max_iters = a.value("max_iters", c.pipeline.attack.max_iters);
        c.pipeline.attack.stop_threshold =
            a.value("stop_threshold", c.pipeline.attack.stop_threshold);
        c.pipeline.restrict_adversarial_to_bodies =
            a.value("restrict_to_bodies", c.pipeline.restrict_adversarial_to_bodies);
        c.pipeline.adversarial_margin = a.value("margin", c.pipeline.adversarial_margin);
        c.pipeline.attack.validate();
      }
      if (j.contains("dilation")) {
        const auto& d = j.at("dilation");
        c.pipeline.dilation_radius = d.value("radius", c.pipeline.dilation_radius);
        c.pipeline.dilation_iterations = d.value("iterations", c.pipeline.dilation_iterations);
      }
      c.pipeline.steps = j.value("steps", c.pipeline.steps);
      c.pipeline.sphere_k = j.value("sphere_k", c.pipeline.sphere_k);
      c.pipeline.feather = j.value("feather", c.pipeline.feather);
      if (j.contains("enabled_options")) {
        c.enabled_options.clear();
        for (const auto& o : j.at("enabled_options")) {
          c.enabled_options.insert(parse_choice(o.get<std::string>()));
        }
      }
      c.listen = j.value("listen", c.listen);
      c.store_dir = j.value("store_dir", c.store_dir);
      c.workers = j.value("workers", c.workers);
      c.max_upload_bytes = j.value("max_upload_bytes", c.max_upload_bytes);
      c.backend_timeout = std::chrono::milliseconds(
          j.value("backend_timeout_ms", static_cast<long long>(c.backend_timeout.count())));
    } catch (const json::exception& e) {
      throw ConfigError(std::string("invalid service config: ") + e.what());
    } catch (const ValidationError& e) {
      throw ConfigError(e.what());
    } catch (const ArgumentError& e) {
      throw ConfigError(e.what());
    }
    if (c.pipeline.steps < 1) throw ConfigError("steps must be >= 1");
    if (c.workers < 1) throw ConfigError("workers must be >= 1");
    return c;
  }
};

enum class JobState { Queued, Running, Done, Failed };

inline std::string_view to_string(JobState s) {
  switch (s) {
    case JobState::Queued: return "queued";
    case JobState::Running: return "running";
    case JobState::Done: return "done";
    case JobState::Failed: return "failed";
  }
  return "?";
}

inline JobState parse_job_state(std::string_view s) {
  if (s == "queued") return JobState::Queued;
  if (s == "running") return JobState::Running;
  if (s == "done") return JobState::Done;
  if (s == "failed") return JobState::Failed;
  throw ParseError("unknown job state '" + std::string(s) + "'");
}

struct BodyChoice {
  std::string body_id;
  std::string option;
};

struct Job {
  std::string job_id;
  JobState state = JobState::Queued;
  std::vector<JobState> history{JobState::Queued};
  std::string image_id;
  std::uint64_t seed = 0;
  std::vector<BodyChoice> choices;
  std::string request_digest;
  std::optional<std::string> result;  // result file name within the store
  std::vector<std::string> warnings;
  std::optional<std::string> error;

  json to_json() const {
    json j;
    j["job_id"] = job_id;
    j["state"] = to_string(state);
    json hist = json::array();
    for (auto s : history) hist.push_back(to_string(s));
    j["history"] = hist;
    j["image_id"] = image_id;
    j["seed"] = seed;
    json ch = json::array();
    for (const auto& c : choices) ch.push_back({{"body_id", c.body_id}, {"option", c.option}});
    j["choices"] = ch;
    j["request_digest"] = request_digest;
    j["result"] = result ? json(*result) : json(nullptr);
    j["warnings"] = warnings;
    j["error"] = error ? json(*error) : json(nullptr);
    return j;
  }

  static Job from_json(const json& j) {
    Job job;
    job.job_id = j.at("job_id").get<std::string>();
    job.state = parse_job_state(j.at("state").get<std::string>());
    job.history.clear();
    for (const auto& s : j.at("history")) job.history.push_back(parse_job_state(s.get<std::string>()));
    job.image_id = j.at("image_id").get<std::string>();
    job.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& c : j.at("choices")) {
      job.choices.push_back({c.at("body_id").get<std::string>(), c.at("option").get<std::string>()});
    }
    job.request_digest = j.at("request_digest").get<std::string>();
    if (!j.at("result").is_null()) job.result = j.at("result").get<std::string>();
    job.warnings = j.at("warnings").get<std::vector<std::string>>();
    if (!j.at("error").is_null()) job.error = j.at("error").get<std::string>();
    return job;
  }
};

struct BodySummary {
  std::string body_id;
  BoundingBox bbox;
  double confidence = 0.0;
};

/// Flat content-addressed directory: images/<id>.png, results/<job>.png and
/// index.json holding every job. All mutations are serialised.
class JobStore {
 public:
  explicit JobStore(fs::path root) : root_(std::move(root)) {
    fs::create_directories(root_ / "images");
    fs::create_directories(root_ / "results");
    load_index();
  }

  const fs::path& root() const { return root_; }

  void put_image(const std::string& image_id, const Bytes& png) {
    std::lock_guard lock(mu_);
    const fs::path p = root_ / "images" / (image_id + ".png");
    if (!fs::exists(p)) write_file(p, png);
  }

  std::optional<Bytes> get_image(const std::string& image_id) const {
    std::lock_guard lock(mu_);
    return read_file(root_ / "images" / (image_id + ".png"));
  }

  void put_result(const std::string& name, const Bytes& png) {
    std::lock_guard lock(mu_);
    write_file(root_ / "results" / name, png);
  }

  std::optional<Bytes> get_result(const std::string& name) const {
    std::lock_guard lock(mu_);
    return read_file(root_ / "results" / name);
  }

  void put_job(const Job& job) {
    std::lock_guard lock(mu_);
    jobs_[job.job_id] = job;
    save_index();
  }

  std::optional<Job> get_job(const std::string& id) const {
    std::lock_guard lock(mu_);
    auto it = jobs_.find(id);
    if (it == jobs_.end()) return std::nullopt;
    return it->second;
  }

  /// Applies `f` to the stored job under the store lock and persists it.
  template <typename F>
  Job update_job(const std::string& id, F&& f) {
    std::lock_guard lock(mu_);
    auto it = jobs_.find(id);
    if (it == jobs_.end()) throw NotFoundError("job '" + id + "' not found");
    f(it->second);
    save_index();
    return it->second;
  }

  std::vector<Job> jobs() const {
    std::lock_guard lock(mu_);
    std::vector<Job> out;
    for (const auto& [_, j] : jobs_) out.push_back(j);
    return out;
  }

 private:
  static void write_file(const fs::path& p, const Bytes& data) {
    const fs::path tmp = p.string() + ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
      if (!out) throw IoError("cannot write " + tmp.string());
    }
    fs::rename(tmp, p);
  }

  static std::optional<Bytes> read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) return std::nullopt;
    return Bytes(std::istreambuf_iterator<char>(in), {});
  }

  void load_index() {
    const auto data = read_file(root_ / "index.json");
    if (!data) return;
    try {
      const json j = json::parse(data->begin(), data->end());
      for (const auto& jj : j.at("jobs")) {
        Job job = Job::from_json(jj);
        jobs_[job.job_id] = std::move(job);
      }
    } catch (const json::exception& e) {
      throw ParseError(std::string("corrupt job index: ") + e.what());
    }
  }

  void save_index() {
    json arr = json::array();
    for (const auto& [_, job] : jobs_) arr.push_back(job.to_json());
    const std::string text = json{{"jobs", arr}}.dump(1);
    write_file(root_ / "index.json", Bytes(text.begin(), text.end()));
  }

  fs::path root_;
  mutable std::mutex mu_;
  std::map<std::string, Job> jobs_;
};

/// Transport-independent service: owns the store, the pipeline and a bounded
/// worker pool that runs queued jobs.
class Gateway {
 public:
  Gateway(ServiceConfig config, Backend& backend, std::optional<BodyManifold> bodies = {},
          std::optional<BodyManifold> faces = {})
      : config_(std::move(config)),
        backend_(backend),
        bodies_(std::move(bodies)),
        faces_(std::move(faces)),
        pipeline_(backend_, config_.pipeline, bodies_ ? &*bodies_ : nullptr,
                  faces_ ? &*faces_ : nullptr),
        store_(config_.store_dir) {
    // Jobs interrupted by a restart are replayed.
    for (auto& job : store_.jobs()) {
      if (job.state == JobState::Queued || job.state == JobState::Running) {
        store_.update_job(job.job_id, [](Job& j) {
          j.state = JobState::Queued;
          j.history.push_back(JobState::Queued);
        });
        queue_.push_back(job.job_id);
      }
    }
    for (int i = 0; i < config_.workers; ++i) workers_.emplace_back([this] { worker_loop(); });
  }

  ~Gateway() { shutdown(); }

  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;

  void shutdown() {
    {
      std::lock_guard lock(queue_mu_);
      stopping_ = true;
    }
    queue_cv_.notify_all();
    for (auto& t : workers_)
      if (t.joinable()) t.join();
    workers_.clear();
  }

  const ServiceConfig& config() const { return config_; }
  JobStore& store() { return store_; }

  struct Submission {
    std::string image_id;
    std::vector<BodySummary> bodies;
  };

  Submission submit_image(const Bytes& bytes) {
    if (bytes.size() > config_.max_upload_bytes) {
      throw PayloadError("upload of " + std::to_string(bytes.size()) + " bytes exceeds limit of " +
                         std::to_string(config_.max_upload_bytes));
    }
    if (bytes.empty()) throw ParseError("empty upload");
    const Image image = decode_image(bytes);
    const Bytes id_digest = digest(bytes, {}, 16);
    const std::string image_id = to_hex(id_digest);
    store_.put_image(image_id, encode_png(image));
    const auto bodies = detect_cached(image_id, image);
    Submission s{image_id, {}};
    for (const auto& b : bodies) s.bodies.push_back({b.body_id, b.bbox, b.confidence});
    return s;
  }

  std::string submit_anonymize(const std::string& image_id, const std::vector<BodyChoice>& choices,
                               std::uint64_t seed) {
    const Image image = load_image(image_id);
    const auto bodies = detect_cached(image_id, image);
    std::map<std::string, std::string> seen;
    for (const auto& c : choices) {
      const auto choice = parse_choice(c.option);
      auto [it, inserted] = seen.emplace(c.body_id, c.option);
      if (!inserted && it->second != c.option) {
        throw ValidationError("conflicting options for body_id '" + c.body_id + "'");
      }
      if (!config_.enabled_options.count(choice)) {
        throw ValidationError("option '" + c.option + "' is disabled on this service");
      }
      const bool known = std::any_of(bodies.begin(), bodies.end(),
                                     [&](const BodyInstance& b) { return b.body_id == c.body_id; });
      if (!known) throw NotFoundError("body_id '" + c.body_id + "' not found in image " + image_id);
    }
    Hasher h;
    h.update("mbmc-request").update(image_id).update_u64(seed);
    for (const auto& c : choices) h.update(c.body_id).update(c.option);
    const Bytes req_digest = h.finish();

    Job job;
    job.job_id = to_hex(Hasher()
                            .update(req_digest)
                            .update_u64(job_counter_.fetch_add(1))
                            .update_u64(static_cast<std::uint64_t>(
                                std::chrono::system_clock::now().time_since_epoch().count()))
                            .finish())
                     .substr(0, 24);
    job.image_id = image_id;
    job.seed = seed;
    job.choices = choices;
    job.request_digest = to_hex(req_digest);
    store_.put_job(job);
    {
      std::lock_guard lock(queue_mu_);
      queue_.push_back(job.job_id);
    }
    queue_cv_.notify_one();
    return job.job_id;
  }

  Job get_job(const std::string& job_id) const {
    auto job = store_.get_job(job_id);
    if (!job) throw NotFoundError("job '" + job_id + "' not found");
    return *job;
  }

  Bytes result_png(const std::string& job_id) const {
    const Job job = get_job(job_id);
    if (job.state != JobState::Done || !job.result) {
      throw NotFoundError("job '" + job_id + "' has no result (state " +
                          std::string(to_string(job.state)) + ")");
    }
    auto data = store_.get_result(*job.result);
    if (!data) throw NotFoundError("result file for job '" + job_id + "' missing");
    return *data;
  }

  /// Blocks until the job leaves queued/running or the timeout passes.
  Job wait_for(const std::string& job_id, std::chrono::milliseconds timeout) const {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    for (;;) {
      Job j = get_job(job_id);
      if (j.state == JobState::Done || j.state == JobState::Failed) return j;
      if (std::chrono::steady_clock::now() > deadline) return j;
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
  }

 private:
  Image load_image(const std::string& image_id) const {
    const auto png = store_.get_image(image_id);
    if (!png) throw NotFoundError("image '" + image_id + "' not found");
    return decode_png(*png);
  }

  std::vector<BodyInstance> detect_cached(const std::string& image_id, const Image& image) {
    {
      std::lock_guard lock(cache_mu_);
      auto it = body_cache_.find(image_id);
      if (it != body_cache_.end()) return it->second;
    }
    auto bodies = pipeline_.detect_bodies(image);
    std::lock_guard lock(cache_mu_);
    return body_cache_.emplace(image_id, std::move(bodies)).first->second;
  }

  void worker_loop() {
    for (;;) {
      std::string id;
      {
        std::unique_lock lock(queue_mu_);
        queue_cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
        if (stopping_) return;
        id = queue_.front();
        queue_.pop_front();
      }
      run_job(id);
    }
  }

  void run_job(const std::string& id) {
    const Job job = store_.update_job(id, [](Job& j) {
      j.state = JobState::Running;
      j.history.push_back(JobState::Running);
    });
    try {
      AnonymizationRequest req;
      req.image = load_image(job.image_id);
      req.seed = job.seed;
      for (const auto& c : job.choices) req.choices.emplace_back(c.body_id, parse_choice(c.option));
      const auto outcome = pipeline_.anonymize(req);
      const std::string name = job.job_id + ".png";
      store_.put_result(name, encode_png(outcome.image));
      store_.update_job(id, [&](Job& j) {
        j.state = JobState::Done;
        j.history.push_back(JobState::Done);
        j.result = name;
        j.warnings = outcome.warnings;
      });
    } catch (const std::exception& e) {
      store_.update_job(id, [&](Job& j) {
        j.state = JobState::Failed;
        j.history.push_back(JobState::Failed);
        j.error = e.what();
      });
    }
  }

  ServiceConfig config_;
  Backend& backend_;
  std::optional<BodyManifold> bodies_;
  std::optional<BodyManifold> faces_;
  Pipeline pipeline_;
  JobStore store_;

  std::mutex cache_mu_;
  std::map<std::string, std::vector<BodyInstance>> body_cache_;

  std::mutex queue_mu_;
  std::condition_variable queue_cv_;
  std::deque<std::string> queue_;
  bool stopping_ = false;
  std::atomic<std::uint64_t> job_counter_{0};
  std::vector<std::thread> workers_;
};

inline int http_status_for(const Error& e) {
  switch (e.kind()) {
    case ErrorKind::NotFound: return 404;
    case ErrorKind::Payload: return 413;
    case ErrorKind::Parse:
    case ErrorKind::Validation:
    case ErrorKind::Argument:
    case ErrorKind::Protocol: return 400;
    case ErrorKind::Timeout: return 504;
    case ErrorKind::Backend: return 502;
    default: return 500;
  }
}

inline json body_summary_json(const BodySummary& b) {
  return {{"body_id", b.body_id},
          {"bbox", json::array({b.bbox.x, b.bbox.y, b.bbox.w, b.bbox.h})},
          {"confidence", b.confidence}};
}

/// HTTP front end for a Gateway.
class GatewayServer {
 public:
  static constexpr const char* kCorrelationHeader = "X-Correlation-Id";

  explicit GatewayServer(Gateway& gateway) : gateway_(gateway) {
    server_.set_payload_max_length(gateway_.config().max_upload_bytes + 1024 * 1024);
    server_.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                                 {"Access-Control-Allow-Headers", "Content-Type, X-Correlation-Id"},
                                 {"Access-Control-Expose-Headers", "X-Correlation-Id"}});
    server_.set_pre_routing_handler([this](const httplib::Request& req, httplib::Response& res) {
      std::string cid = req.get_header_value(kCorrelationHeader);
      if (cid.empty()) cid = "mbmc-" + std::to_string(correlation_.fetch_add(1) + 1);
      res.set_header(kCorrelationHeader, cid);
      return httplib::Server::HandlerResponse::Unhandled;
    });
    server_.Options(R"(/v1/.*)", [](const httplib::Request&, httplib::Response& res) {
      res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
      res.status = 204;
    });
    server_.Get("/v1/health", [](const httplib::Request&, httplib::Response& res) {
      res.set_content(R"({"status":"ok"})", "application/json");
    });
    server_.Post("/v1/images", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        Bytes bytes;
        if (req.is_multipart_form_data()) {
          if (req.files.empty()) throw ParseError("multipart upload carries no file");
          const auto it = req.files.find("image");
          const auto& file = it != req.files.end() ? it->second : req.files.begin()->second;
          bytes.assign(file.content.begin(), file.content.end());
        } else {
          bytes.assign(req.body.begin(), req.body.end());
        }
        const auto sub = gateway_.submit_image(bytes);
        json bodies = json::array();
        for (const auto& b : sub.bodies) bodies.push_back(body_summary_json(b));
        res.set_content(json{{"image_id", sub.image_id}, {"bodies", bodies}}.dump(),
                        "application/json");
      });
    });
    server_.Post("/v1/anonymize", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        json j;
        try {
          j = json::parse(req.body);
        } catch (const json::parse_error& e) {
          throw ParseError(std::string("invalid JSON: ") + e.what());
        }
        std::string image_id;
        std::uint64_t seed = 0;
        std::vector<BodyChoice> choices;
        try {
          image_id = j.at("image_id").get<std::string>();
          seed = j.value("seed", std::uint64_t{0});
          for (const auto& c : j.at("choices")) {
            choices.push_back({c.at("body_id").get<std::string>(), c.at("option").get<std::string>()});
          }
        } catch (const json::exception& e) {
          throw ValidationError(std::string("malformed anonymize request: ") + e.what());
        }
        const std::string job_id = gateway_.submit_anonymize(image_id, choices, seed);
        res.status = 202;
        res.set_content(json{{"job_id", job_id}}.dump(), "application/json");
      });
    });
    server_.Get(R"(/v1/jobs/([A-Za-z0-9_-]+))", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        res.set_content(gateway_.get_job(req.matches[1].str()).to_json().dump(), "application/json");
      });
    });
    server_.Get(R"(/v1/results/([A-Za-z0-9_-]+))", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const Bytes png = gateway_.result_png(req.matches[1].str());
        res.set_content(std::string(png.begin(), png.end()), "image/png");
      });
    });
  }

  ~GatewayServer() { stop(); }

  GatewayServer(const GatewayServer&) = delete;
  GatewayServer& operator=(const GatewayServer&) = delete;

  int start(const std::string& host = "127.0.0.1", int port = 0) {
    port_ = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
    if (port_ < 0) throw IoError("cannot bind gateway to " + host + ":" + std::to_string(port));
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port_;
  }

  bool listen(const std::string& host, int port) { return server_.listen(host, port); }

  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

 private:
  template <typename F>
  static void guarded(httplib::Response& res, F&& f) {
    try {
      f();
    } catch (const Error& e) {
      res.status = http_status_for(e);
      res.set_content(json{{"error", e.what()}, {"kind", to_string(e.kind())}}.dump(),
                      "application/json");
    } catch (const std::exception& e) {
      res.status = 500;
      res.set_content(json{{"error", e.what()}, {"kind", "internal"}}.dump(), "application/json");
    }
  }

  Gateway& gateway_;
  httplib::Server server_;
  std::thread thread_;
  std::atomic<std::uint64_t> correlation_{0};
  int port_ = -1;
};

}  // namespace mbmc
