// Acceptance gate: one PASS/FAIL line per primary criterion. Exit status is
// non-zero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mbmc/gateway.hpp"
#include "mbmc/http_backend.hpp"
#include "mbmc/metrics.hpp"
#include "mbmc/mock_backend.hpp"
#include "mbmc/pipeline.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"
#include "support/wire_gen.hpp"

using namespace mbmc;
using namespace mbmc::testing;
using Clock = std::chrono::steady_clock;

namespace {

// Pinned limits and tolerances.
constexpr double kGuideBudgetSeconds = 60.0;
constexpr double kAttackBudgetSeconds = 120.0;
constexpr double kEndToEndBudgetSeconds = 10.0;
constexpr double kFrechetTolerance = 1e-9;
constexpr double kPsnrExpected = 48.1308;
constexpr double kPsnrTolerance = 1e-3;
constexpr double kReidTolerance = 1e-9;
constexpr int kGuideManifolds = 1000;
constexpr int kGuideQueries = 50;
constexpr int kSphereTrials = 500;
constexpr int kAttackImages = 50;
constexpr int kOrderRequests = 100;
constexpr int kNoActionRequests = 100;
constexpr int kReidInstances = 100;
constexpr int kWirePayloads = 1000;

struct Outcome {
  bool pass = true;
  std::string detail;
};

double seconds_since(Clock::time_point t) {
  return std::chrono::duration<double>(Clock::now() - t).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---- guide selection ---------------------------------------------------------

BodyManifold random_guide_manifold(std::mt19937_64& rng, std::size_t& dim_out) {
  const std::size_t dim = 2 + rng() % 63;
  const int classes = 1 + static_cast<int>(rng() % 10);
  const std::size_t per_class = 1 + rng() % (1000 / classes);
  std::vector<ManifoldEntry> entries;
  for (int c = 0; c < classes; ++c) {
    for (std::size_t i = 0; i < per_class; ++i) {
      ManifoldEntry e;
      e.id = "m" + std::to_string(rng() % 1000000) + "-" + std::to_string(c) + "-" + std::to_string(i);
      e.activity = "act-" + std::to_string(c);
      e.embedding = random_embedding(rng, dim);
      entries.push_back(std::move(e));
    }
  }
  // Some manifolds carry exact duplicate embeddings within a class.
  if (rng() % 4 == 0 && entries.size() > 1) {
    for (int k = 0; k < 5; ++k) {
      const std::size_t a = rng() % entries.size(), b = rng() % entries.size();
      if (entries[a].activity == entries[b].activity) entries[a].embedding = entries[b].embedding;
    }
  }
  dim_out = dim;
  return build_manifold(std::move(entries), per_class, dim);
}

Outcome guide_oracle() {
  std::mt19937_64 rng(1001);
  const auto start = Clock::now();
  std::size_t checks = 0, mismatches = 0;
  for (int m = 0; m < kGuideManifolds; ++m) {
    std::size_t dim = 0;
    const auto manifold = random_guide_manifold(rng, dim);
    const auto acts = manifold.activities();
    for (int q = 0; q < kGuideQueries; ++q) {
      // Half the queries sit exactly on a stored entry.
      EmbeddingVector query = q % 2 == 0 ? random_embedding(rng, dim)
                                         : manifold.entries()[rng() % manifold.size()].embedding;
      const std::string& act = acts[rng() % acts.size()];
      const auto& got = select_guide(manifold, query, act);
      const auto want = ranked_ids(manifold, query, &act);
      ++checks;
      if (got.id != want.front()) ++mismatches;
    }
  }
  const double secs = seconds_since(start);
  Outcome o;
  o.pass = mismatches == 0 && secs < kGuideBudgetSeconds;
  o.detail = std::to_string(checks) + " queries, " + std::to_string(mismatches) + " mismatches, " +
             fmt("%.1f s", secs);
  return o;
}

Outcome sphere_containment() {
  std::mt19937_64 rng(1002);
  std::size_t outside = 0, unstable = 0;
  for (int t = 0; t < kSphereTrials; ++t) {
    const std::size_t dim = 2 + rng() % 31;
    const auto m = random_manifold(rng, dim, 1 + static_cast<int>(rng() % 5), 1 + rng() % 40, "face-");
    const std::size_t k = 1 + rng() % 15;
    const auto query = random_embedding(rng, dim);
    const std::uint64_t seed = rng();
    const auto& pick = select_face_guide(m, query, k, seed);
    auto top = ranked_ids(m, query);
    top.resize(std::min(k, top.size()));
    if (std::find(top.begin(), top.end(), pick.id) == top.end()) ++outside;
    if (select_face_guide(m, query, k, seed).id != pick.id) ++unstable;
  }
  Outcome o;
  o.pass = outside == 0 && unstable == 0;
  o.detail = std::to_string(kSphereTrials) + " trials, " + std::to_string(outside) +
             " outside top-K, " + std::to_string(unstable) + " unstable picks";
  return o;
}

// ---- adversarial --------------------------------------------------------------

Outcome adversarial_vanish() {
  std::mt19937_64 rng(1003);
  ConvPersonDetector detector(42);
  const AttackConfig cfg;  // epsilon 8/255, 200 iterations
  const auto start = Clock::now();
  std::vector<Image> before, after;
  bool linf_ok = true, iters_ok = true;
  for (int i = 0; i < kAttackImages; ++i) {
    const auto scene = person_scene(rng);
    const auto r = vanish_attack(scene.image, detector, cfg);
    int max_diff = 0;
    for (std::size_t p = 0; p < scene.image.pixels.size(); ++p)
      max_diff = std::max(max_diff, std::abs(int(r.image.pixels[p]) - int(scene.image.pixels[p])));
    if (!(max_diff / 255.0 <= cfg.epsilon)) linf_ok = false;
    if (r.iterations_used > cfg.max_iters) iters_ok = false;
    before.push_back(scene.image);
    after.push_back(r.image);
  }
  const auto acc = detection_delta(before, after, detector, cfg.stop_threshold);
  const double secs = seconds_since(start);
  Outcome o;
  o.pass = acc.before == 100.0 && acc.after == 0.0 && linf_ok && iters_ok && secs < kAttackBudgetSeconds;
  o.detail = "acc before " + fmt("%.2f", acc.before) + "%, after " + fmt("%.2f", acc.after) +
             "%, linf " + (linf_ok ? "ok" : "exceeded") + ", " + fmt("%.1f s", secs);
  return o;
}

// ---- multi-body ----------------------------------------------------------------

struct PipelineRig {
  PipelineRig() : mock(7, {.embed_dim = 16}) {
    std::mt19937_64 rng(1004);
    bodies = random_manifold(rng, 16, 4, 12);
    faces = random_manifold(rng, 16, 3, 12, "face-");
  }
  MockBackend mock;
  BodyManifold bodies;
  BodyManifold faces;
};

Scene multi_body_scene(std::mt19937_64& rng) {
  for (;;) {
    auto s = person_scene(rng, 112, 80, 3, rng() % 2 == 0);
    if (s.people.size() >= 2) return s;
  }
}

Outcome order_invariance() {
  PipelineRig rig;
  Pipeline pipeline(rig.mock, {}, &rig.bodies, &rig.faces);
  std::mt19937_64 rng(1005);
  std::size_t permutations = 0, differing = 0, merges = 0;
  for (int t = 0; t < kOrderRequests; ++t) {
    const auto scene = multi_body_scene(rng);
    const auto bodies = pipeline.detect_bodies(scene.image);
    AnonymizationRequest req{scene.image, {}, rng()};
    for (const auto& b : bodies)
      req.choices.emplace_back(b.body_id, static_cast<AnonymizationChoice>(rng() % kChoiceNames.size()));
    std::vector<std::size_t> order(req.choices.size());
    std::iota(order.begin(), order.end(), 0);
    Bytes reference;
    do {
      AnonymizationRequest perm = req;
      perm.choices.clear();
      for (auto i : order) perm.choices.push_back(req.choices[i]);
      const auto out = pipeline.anonymize(perm);
      const Bytes png = encode_png(out.image);
      if (reference.empty()) {
        reference = png;
        merges += out.merge_pass;
      } else if (png != reference) {
        ++differing;
      }
      ++permutations;
    } while (std::next_permutation(order.begin(), order.end()));
  }
  Outcome o;
  o.pass = differing == 0;
  o.detail = std::to_string(kOrderRequests) + " requests, " + std::to_string(permutations) +
             " permutations, " + std::to_string(merges) + " with overlap merge, " +
             std::to_string(differing) + " differing";
  return o;
}

Outcome noaction_identity() {
  PipelineRig rig;
  Pipeline pipeline(rig.mock, {}, &rig.bodies, &rig.faces);
  std::mt19937_64 rng(1006);
  std::size_t differing = 0;
  for (int t = 0; t < kNoActionRequests; ++t) {
    const auto scene = person_scene(rng, 112, 80, 3, rng() % 2 == 0);
    AnonymizationRequest req{scene.image, {}, rng()};
    for (const auto& b : pipeline.detect_bodies(scene.image))
      req.choices.emplace_back(b.body_id, AnonymizationChoice::NoAction);
    if (encode_png(pipeline.anonymize(req).image) != encode_png(scene.image)) ++differing;
  }
  Outcome o;
  o.pass = differing == 0;
  o.detail = std::to_string(kNoActionRequests) + " requests, " + std::to_string(differing) + " differing";
  return o;
}

// ---- metric kernels ------------------------------------------------------------

GaussianMoments moments(std::vector<double> mean, std::vector<double> cov_diag) {
  const auto n = static_cast<Eigen::Index>(mean.size());
  GaussianMoments m{Eigen::Map<Eigen::VectorXd>(mean.data(), n), Eigen::MatrixXd::Zero(n, n)};
  for (Eigen::Index i = 0; i < n; ++i) m.covariance(i, i) = cov_diag[static_cast<std::size_t>(i)];
  return m;
}

Outcome metric_kernels() {
  std::vector<std::string> failures;
  GaussianMoments p{Eigen::Vector3d(0.3, -1.0, 2.0), Eigen::Matrix3d::Zero()};
  p.covariance << 2, 0.5, 0, 0.5, 1, 0.2, 0, 0.2, 3;
  if (!(std::fabs(frechet_distance(p, p)) <= kFrechetTolerance)) failures.push_back("frechet zero");
  if (!(std::fabs(frechet_distance(moments({0, 0}, {0, 0}), moments({3, 4}, {0, 0})) - 25.0) <=
        kFrechetTolerance))
    failures.push_back("frechet point mass");
  if (!(std::fabs(frechet_distance(moments({0}, {1}), moments({0}, {4})) - 1.0) <= kFrechetTolerance))
    failures.push_back("frechet 1-D");

  std::mt19937_64 rng(1007);
  auto a = random_image(rng, 32, 24);
  for (auto& v : a.pixels) v = static_cast<std::uint8_t>(std::min<int>(v, 254));
  auto b = a;
  for (auto& v : b.pixels) ++v;
  const auto db = psnr(a, b);
  if (!db || std::fabs(*db - kPsnrExpected) > kPsnrTolerance) failures.push_back("psnr offset");

  const auto e0 = EmbeddingVector::from_unit(std::vector<float>{1, 0});
  const auto e1 = EmbeddingVector::from_unit(std::vector<float>{0.8f, 0.6f});
  const auto e2 = EmbeddingVector::from_unit(std::vector<float>{0, 1});
  const auto two = reid_eval({{e0}, {"a"}, {e1, e2}, {"b", "a"}}, {1, 2});
  if (two.map != 50.0 || two.rank.at(1) != 0.0 || two.rank.at(2) != 100.0)
    failures.push_back("reid 2-item");

  const std::vector<int> ks = {1, 5, 10, 20};
  std::size_t oracle_mismatch = 0, non_monotone = 0;
  for (int t = 0; t < kReidInstances; ++t) {
    const auto inst = random_reid(rng);
    const auto got = reid_eval(inst, ks);
    const auto want = ref_reid(inst, ks);
    bool ok = std::fabs(got.map - want.map) <= kReidTolerance;
    double prev = 0.0;
    for (int k : ks) {
      ok = ok && std::fabs(got.rank.at(k) - want.rank.at(k)) <= kReidTolerance;
      if (got.rank.at(k) < prev || got.rank.at(k) > 100.0) ++non_monotone;
      prev = got.rank.at(k);
    }
    if (!ok) ++oracle_mismatch;
  }
  if (oracle_mismatch) failures.push_back(std::to_string(oracle_mismatch) + " reid oracle mismatches");
  if (non_monotone) failures.push_back(std::to_string(non_monotone) + " non-monotone ranks");

  Outcome o;
  o.pass = failures.empty();
  if (o.pass) {
    o.detail = "frechet 3 cases, psnr " + fmt("%.4f dB", *db) + ", reid 2-item + " +
               std::to_string(kReidInstances) + " random instances";
  } else {
    for (const auto& f : failures) o.detail += (o.detail.empty() ? "" : "; ") + f;
  }
  return o;
}

// ---- wire ---------------------------------------------------------------------

Outcome wire_roundtrip_all() {
  WireGen g(1008);
  std::size_t schemas = 0;
  std::vector<std::string> failed;
  auto check = [&](const char* name, auto make) {
    ++schemas;
    for (int i = 0; i < kWirePayloads; ++i) {
      const auto v = make();
      if (!(wire_roundtrip(v) == v)) {
        failed.push_back(name);
        return;
      }
    }
  };
  check("segment.request", [&] { return g.segment_request(); });
  check("segment.response", [&] { return g.segment_response(); });
  check("pose.request", [&] { return g.pose_request(); });
  check("pose.response", [&] { return g.pose_response(); });
  check("edges.request", [&] { return g.edges_request(); });
  check("edges.response", [&] { return g.edges_response(); });
  check("embed.request", [&] { return g.embed_request(); });
  check("embed.response", [&] { return g.embed_response(); });
  check("inpaint.request", [&] { return g.inpaint_request(); });
  check("generate.request", [&] { return g.generate_request(); });
  check("faceswap.request", [&] { return g.faceswap_request(); });
  check("enhance.request", [&] { return g.enhance_request(); });
  check("image.response", [&] { return g.image_response(); });
  check("detect.request", [&] { return g.detect_request(); });
  check("detect.response", [&] { return g.detect_response(); });
  check("detect.grad.response", [&] { return g.grad_response(); });
  Outcome o;
  o.pass = failed.empty();
  o.detail = std::to_string(schemas) + " schemas x " + std::to_string(kWirePayloads) + " payloads";
  for (const auto& f : failed) o.detail += ", failed " + f;
  return o;
}

// ---- end to end ----------------------------------------------------------------

Outcome end_to_end() {
  const auto start = Clock::now();
  PipelineRig rig;
  BackendServer backend_server(rig.mock);
  const int backend_port = backend_server.start();
  HttpBackend::Endpoints endpoints;
  for (auto r : kAllRoles) endpoints[r] = "http://127.0.0.1:" + std::to_string(backend_port);

  const fs::path store = fs::temp_directory_path() /
                         ("mbmc-acceptance-" + std::to_string(std::random_device{}()));
  ServiceConfig cfg;
  cfg.endpoints = endpoints;
  cfg.store_dir = store.string();
  cfg.backend_timeout = std::chrono::milliseconds(5000);
  cfg.validate_endpoints();
  HttpBackend http(endpoints, cfg.backend_timeout);
  std::vector<std::string> failures;
  {
    Gateway gateway(cfg, http, rig.bodies, rig.faces);
    GatewayServer server(gateway);
    const int port = server.start();
    httplib::Client client("127.0.0.1", port);

    const Image image = two_person_scene().image;
    const Bytes upload = encode_png(image);
    auto r = client.Post("/v1/images", std::string(upload.begin(), upload.end()), "image/png");
    if (!r || r->status != 200) {
      failures.push_back("upload");
    } else {
      const json up = json::parse(r->body);
      if (up.at("bodies").size() != 2) failures.push_back("expected 2 bodies");
      for (auto name : kChoiceNames) {
        json req = {{"image_id", up.at("image_id")}, {"seed", 11}, {"choices", json::array()}};
        for (const auto& b : up.at("bodies"))
          req["choices"].push_back({{"body_id", b.at("body_id")}, {"option", name}});
        auto sub = client.Post("/v1/anonymize", req.dump(), "application/json");
        if (!sub || sub->status != 202) {
          failures.push_back(std::string(name) + " submit");
          continue;
        }
        const std::string job_id = json::parse(sub->body).at("job_id");
        std::string state;
        while (seconds_since(start) < kEndToEndBudgetSeconds) {
          auto jr = client.Get("/v1/jobs/" + job_id);
          state = jr ? json::parse(jr->body).at("state").get<std::string>() : "";
          if (state == "done" || state == "failed") break;
          std::this_thread::sleep_for(std::chrono::milliseconds(5));
        }
        if (state != "done") {
          failures.push_back(std::string(name) + " state " + state);
          continue;
        }
        auto res = client.Get("/v1/results/" + job_id);
        if (!res || res->status != 200) {
          failures.push_back(std::string(name) + " result");
          continue;
        }
        const Image out = decode_png(Bytes(res->body.begin(), res->body.end()));
        const bool unchanged = out == image;
        if (unchanged != (name == "no_action")) failures.push_back(std::string(name) + " output");
      }
    }
    server.stop();
    gateway.shutdown();
  }
  backend_server.stop();
  std::error_code ec;
  fs::remove_all(store, ec);
  const double secs = seconds_since(start);
  Outcome o;
  o.pass = failures.empty() && secs < kEndToEndBudgetSeconds;
  o.detail = "5 options over HTTP, " + fmt("%.2f s", secs);
  for (const auto& f : failures) o.detail += ", failed " + f;
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"guide-selection-oracle", guide_oracle},
      {"randomness-sphere-containment", sphere_containment},
      {"adversarial-detector-vanish", adversarial_vanish},
      {"multi-body-order-invariance", order_invariance},
      {"no-action-identity", noaction_identity},
      {"metric-kernels", metric_kernels},
      {"wire-roundtrip", wire_roundtrip_all},
      {"end-to-end-mock-integration", end_to_end},
  };
  int failed = 0;
  for (const auto& [name, run] : criteria) {
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
