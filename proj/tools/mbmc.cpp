// mbmc command line: manifold tooling, one-shot anonymisation, evaluation,
// the gateway service and a mock backend server.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mbmc/gateway.hpp"
#include "mbmc/http_backend.hpp"
#include "mbmc/manifold.hpp"
#include "mbmc/metrics.hpp"
#include "mbmc/mock_backend.hpp"
#include "mbmc/pipeline.hpp"

using namespace mbmc;

namespace {

Bytes read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, const Bytes& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out) throw IoError("write to '" + path + "' failed");
}

json read_json_file(const std::string& path) {
  const Bytes b = read_file(path);
  try {
    return json::parse(b.begin(), b.end());
  } catch (const json::parse_error& e) {
    throw ParseError(path + ": " + e.what());
  }
}

Image read_image(const std::string& path) { return decode_image(read_file(path)); }

std::pair<std::string, int> split_listen(const std::string& listen) {
  return parse_endpoint(listen);
}

/// JSON lines with an "embedding" array and, for re-id sets, a "label".
struct LabelledEmbeddings {
  std::vector<EmbeddingVector> embeddings;
  std::vector<std::string> labels;
};

LabelledEmbeddings read_embeddings_jsonl(const std::string& path, bool need_labels) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  LabelledEmbeddings out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      out.embeddings.push_back(EmbeddingVector::normalized(j.at("embedding").get<std::vector<double>>()));
      if (need_labels) out.labels.push_back(j.at("label").get<std::string>());
    } catch (const json::exception& e) {
      throw ParseError(path + ": " + e.what(), line_no);
    } catch (const ArgumentError& e) {
      throw ParseError(path + ": " + e.what(), line_no);
    }
  }
  return out;
}

/// Backend and manifolds shared by the one-shot commands: either the remote
/// roles of a service config or the in-process mock.
struct Runtime {
  std::unique_ptr<Backend> backend;
  PipelineConfig pipeline;
  std::optional<BodyManifold> bodies;
  std::optional<BodyManifold> faces;

  Pipeline make_pipeline() const {
    return Pipeline(*backend, pipeline, bodies ? &*bodies : nullptr, faces ? &*faces : nullptr);
  }
};

struct RuntimeOptions {
  std::string config;
  std::uint64_t mock_seed = 0;
  std::size_t embed_dim = kDefaultEmbeddingDim;
  std::string body_manifold;
  std::string face_manifold;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--config", config, "service config JSON (remote backends)");
    cmd->add_option("--mock-seed", mock_seed, "seed of the in-process mock backend");
    cmd->add_option("--embed-dim", embed_dim, "mock embedding dimension");
    cmd->add_option("--body-manifold", body_manifold, "body manifold file");
    cmd->add_option("--face-manifold", face_manifold, "face manifold file");
  }

  Runtime load() const {
    Runtime rt;
    std::optional<std::string> body_path, face_path;
    if (!config.empty()) {
      const auto cfg = ServiceConfig::from_json(read_json_file(config));
      rt.backend = std::make_unique<HttpBackend>(cfg.endpoints, cfg.backend_timeout);
      rt.pipeline = cfg.pipeline;
      body_path = cfg.body_manifold_path;
      face_path = cfg.face_manifold_path;
    } else {
      rt.backend = std::make_unique<MockBackend>(mock_seed, MockBackend::Options{.embed_dim = embed_dim});
    }
    if (!body_manifold.empty()) body_path = body_manifold;
    if (!face_manifold.empty()) face_path = face_manifold;
    if (body_path) rt.bodies = read_manifold(*body_path);
    if (face_path) rt.faces = read_manifold(*face_path);
    return rt;
  }
};

json bodies_json(const std::vector<BodyInstance>& bodies) {
  json arr = json::array();
  for (std::size_t i = 0; i < bodies.size(); ++i) {
    const auto& b = bodies[i];
    arr.push_back({{"index", i},
                   {"body_id", b.body_id},
                   {"bbox", json::array({b.bbox.x, b.bbox.y, b.bbox.w, b.bbox.h})},
                   {"confidence", b.confidence}});
  }
  return arr;
}

/// "BODY=OPTION" where BODY is a body_id or an index into the canonical order.
std::pair<std::string, AnonymizationChoice> parse_choice_arg(const std::string& arg,
                                                             const std::vector<BodyInstance>& bodies) {
  const auto eq = arg.find('=');
  if (eq == std::string::npos) throw ValidationError("choice '" + arg + "' must look like BODY=OPTION");
  const std::string body = arg.substr(0, eq);
  const auto option = parse_choice(arg.substr(eq + 1));
  if (!body.empty() && body.find_first_not_of("0123456789") == std::string::npos) {
    const std::size_t idx = std::stoul(body);
    if (idx >= bodies.size()) throw ValidationError("body index " + body + " out of range");
    return {bodies[idx].body_id, option};
  }
  return {body, option};
}

void print_report(const EvalReport& report, const std::string& format) {
  if (format == "json") {
    std::cout << report.to_json().dump(2) << "\n";
  } else {
    std::cout << report.to_text();
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-body anonymisation toolkit"};
  app.require_subcommand(1);

  // manifold build / query
  auto* manifold = app.add_subcommand("manifold", "build or query an embedding manifold");
  manifold->require_subcommand(1);
  std::string build_input, build_out;
  std::size_t per_class = 0, build_dim = 0;
  auto* mbuild = manifold->add_subcommand("build", "balance JSONL entries into a manifold file");
  mbuild->add_option("--input", build_input, "JSONL with id, activity, embedding")->required();
  mbuild->add_option("--per-class", per_class, "entries kept per activity")->required();
  mbuild->add_option("--out", build_out, "output manifold file")->required();
  mbuild->add_option("--dim", build_dim, "embedding dimension (default: from the first entry)");

  std::string query_manifold, query_embedding, query_activity;
  std::size_t query_k = 0;
  std::uint64_t query_seed = 0;
  auto* mquery = manifold->add_subcommand("query", "guide entry for an embedding");
  mquery->add_option("--manifold", query_manifold)->required();
  mquery->add_option("--embedding", query_embedding, "JSON array or @file")->required();
  mquery->add_option("--activity", query_activity, "same-activity farthest entry");
  mquery->add_option("--sphere-k", query_k, "uniform pick among the K farthest instead");
  mquery->add_option("--seed", query_seed);

  // detect / anonymize
  RuntimeOptions detect_rt;
  std::string detect_image;
  auto* detect = app.add_subcommand("detect", "list the bodies found in an image");
  detect->add_option("--image", detect_image)->required();
  detect_rt.add_to(detect);

  RuntimeOptions anon_rt;
  std::string anon_image, anon_out, anon_all;
  std::vector<std::string> anon_choices;
  std::uint64_t anon_seed = 0;
  auto* anonymize = app.add_subcommand("anonymize", "apply per-body options to an image");
  anonymize->add_option("--image", anon_image)->required();
  anonymize->add_option("--choice", anon_choices, "BODY=OPTION, BODY is a body_id or index");
  anonymize->add_option("--all", anon_all, "apply one option to every body");
  anonymize->add_option("--seed", anon_seed);
  anonymize->add_option("--out", anon_out, "output PNG")->required();
  anon_rt.add_to(anonymize);

  // eval
  auto* eval = app.add_subcommand("eval", "evaluation metrics");
  eval->require_subcommand(1);
  std::string format = "text", dataset = "custom";
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--format", format)->check(CLI::IsMember({"json", "text"}));
    cmd->add_option("--dataset", dataset);
  };
  RuntimeOptions adv_rt;
  std::vector<std::string> adv_before, adv_after;
  double adv_threshold = kDefaultDetectionThreshold;
  std::optional<std::size_t> adv_humans;
  auto* eadv = eval->add_subcommand("adv", "detector accuracy before and after");
  eadv->add_option("--before", adv_before)->required();
  eadv->add_option("--after", adv_after)->required();
  eadv->add_option("--threshold", adv_threshold);
  eadv->add_option("--humans", adv_humans, "number of people in the set, for the report");
  adv_rt.add_to(eadv);
  add_common(eadv);

  std::string reid_query, reid_gallery;
  std::vector<int> reid_ranks = kDefaultRanks;
  auto* ereid = eval->add_subcommand("reid", "mAP and Rank-k from embedding JSONL");
  ereid->add_option("--query", reid_query)->required();
  ereid->add_option("--gallery", reid_gallery)->required();
  ereid->add_option("--ranks", reid_ranks);
  add_common(ereid);

  std::string fid_a, fid_b;
  auto* efid = eval->add_subcommand("fid", "Frechet distance between two embedding sets");
  efid->add_option("--a", fid_a)->required();
  efid->add_option("--b", fid_b)->required();
  add_common(efid);

  std::string psnr_a, psnr_b;
  auto* epsnr = eval->add_subcommand("psnr", "PSNR between two images");
  epsnr->add_option("--a", psnr_a)->required();
  epsnr->add_option("--b", psnr_b)->required();
  add_common(epsnr);

  // services
  std::string serve_config;
  auto* serve = app.add_subcommand("serve", "run the gateway");
  serve->add_option("--config", serve_config)->required();

  std::uint64_t mock_seed = 0;
  std::string mock_listen = "127.0.0.1:9000";
  std::size_t mock_dim = kDefaultEmbeddingDim;
  auto* mock = app.add_subcommand("mock-backends", "serve every backend role from the mock");
  mock->add_option("--seed", mock_seed);
  mock->add_option("--listen", mock_listen);
  mock->add_option("--embed-dim", mock_dim);

  CLI11_PARSE(app, argc, argv);

  try {
    if (mbuild->parsed()) {
      std::ifstream in(build_input);
      if (!in) throw IoError("cannot open '" + build_input + "'");
      auto entries = read_entries_jsonl(in);
      if (entries.empty()) throw ValidationError("no entries in '" + build_input + "'");
      const std::size_t dim = build_dim ? build_dim : entries.front().embedding.dim();
      const auto m = build_manifold(std::move(entries), per_class, dim);
      write_manifold(m, build_out);
      std::cout << json{{"entries", m.size()}, {"activities", m.activities()}, {"dim", m.dim()}}.dump()
                << "\n";
    } else if (mquery->parsed()) {
      const auto m = read_manifold(query_manifold);
      json raw = query_embedding.rfind('@', 0) == 0 ? read_json_file(query_embedding.substr(1))
                                                    : json::parse(query_embedding);
      const auto q = EmbeddingVector::normalized(raw.get<std::vector<double>>());
      const ManifoldEntry* pick = nullptr;
      if (query_k > 0) {
        pick = &select_face_guide(m, q, query_k, query_seed);
      } else if (!query_activity.empty()) {
        if (!m.has_activity(query_activity)) throw UnknownActivityError(query_activity);
        pick = &select_guide(m, q, query_activity);
      } else {
        pick = &select_farthest(m, q);
      }
      std::cout << json{{"id", pick->id},
                        {"activity", pick->activity},
                        {"distance", cosine_distance(q, pick->embedding)}}
                       .dump()
                << "\n";
    } else if (detect->parsed()) {
      const auto rt = detect_rt.load();
      const auto bodies = rt.make_pipeline().detect_bodies(read_image(detect_image));
      std::cout << json{{"bodies", bodies_json(bodies)}}.dump(2) << "\n";
    } else if (anonymize->parsed()) {
      const auto rt = anon_rt.load();
      const auto pipeline = rt.make_pipeline();
      AnonymizationRequest req;
      req.image = read_image(anon_image);
      req.seed = anon_seed;
      const auto bodies = pipeline.detect_bodies(req.image);
      if (!anon_all.empty()) {
        const auto option = parse_choice(anon_all);
        for (const auto& b : bodies) req.choices.emplace_back(b.body_id, option);
      }
      for (const auto& c : anon_choices) req.choices.push_back(parse_choice_arg(c, bodies));
      const auto outcome = pipeline.anonymize(req);
      write_file(anon_out, encode_png(outcome.image));
      std::cout << json{{"bodies", bodies_json(outcome.bodies)},
                        {"warnings", outcome.warnings},
                        {"merge_pass", outcome.merge_pass},
                        {"out", anon_out}}
                       .dump(2)
                << "\n";
    } else if (eadv->parsed()) {
      const auto rt = adv_rt.load();
      std::vector<Image> before, after;
      for (const auto& p : adv_before) before.push_back(read_image(p));
      for (const auto& p : adv_after) after.push_back(read_image(p));
      BackendDetector detector(*rt.backend);
      const auto acc = detection_delta(before, after, detector, adv_threshold);
      EvalReport r;
      r.dataset = dataset;
      r.humans = adv_humans;
      r.accuracy_before = acc.before;
      r.accuracy_after = acc.after;
      print_report(r, format);
    } else if (ereid->parsed()) {
      auto q = read_embeddings_jsonl(reid_query, true);
      auto g = read_embeddings_jsonl(reid_gallery, true);
      EvalReport r;
      r.dataset = dataset;
      r.reid = reid_eval({q.embeddings, q.labels, g.embeddings, g.labels}, reid_ranks);
      print_report(r, format);
    } else if (efid->parsed()) {
      const auto a = read_embeddings_jsonl(fid_a, false);
      const auto b = read_embeddings_jsonl(fid_b, false);
      EvalReport r;
      r.dataset = dataset;
      r.fid = fid(a.embeddings, b.embeddings);
      print_report(r, format);
    } else if (epsnr->parsed()) {
      EvalReport r;
      r.dataset = dataset;
      r.psnr = psnr(read_image(psnr_a), read_image(psnr_b));
      print_report(r, format);
    } else if (serve->parsed()) {
      const auto cfg = ServiceConfig::from_json(read_json_file(serve_config));
      cfg.validate_endpoints();
      cfg.validate_manifolds();
      std::optional<BodyManifold> bodies, faces;
      if (cfg.body_manifold_path) bodies = read_manifold(*cfg.body_manifold_path);
      if (cfg.face_manifold_path) faces = read_manifold(*cfg.face_manifold_path);
      HttpBackend backend(cfg.endpoints, cfg.backend_timeout);
      Gateway gateway(cfg, backend, std::move(bodies), std::move(faces));
      GatewayServer server(gateway);
      const auto [host, port] = split_listen(cfg.listen);
      std::cerr << "gateway listening on " << host << ":" << port << "\n";
      if (!server.listen(host, port)) throw IoError("cannot listen on " + cfg.listen);
    } else if (mock->parsed()) {
      MockBackend backend(mock_seed, {.embed_dim = mock_dim});
      BackendServer server(backend);
      const auto [host, port] = split_listen(mock_listen);
      std::cerr << "mock backends listening on " << host << ":" << port << "\n";
      if (!server.listen(host, port)) throw IoError("cannot listen on " + mock_listen);
    }
  } catch (const Error& e) {
    std::cerr << "error (" << to_string(e.kind()) << "): " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
