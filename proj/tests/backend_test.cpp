#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <random>
#include <set>
#include <thread>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sodium.h>
#include <sys/socket.h>
#include <unistd.h>

#include "mbmc/http_backend.hpp"
#include "mbmc/mock_backend.hpp"
#include "support/fixtures.hpp"
#include "support/wire_gen.hpp"

using namespace mbmc;
using namespace mbmc::testing;
using namespace std::chrono_literals;

namespace {

constexpr const char* kProbeActivity = "mock-activity-0";
constexpr float kProbeE0 = 0.0301120263f, kProbeE1 = -0.00270380965f, kProbeE511 = 0.0260653477f;

Image embed_probe() {
  Image im(8, 8);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x)
      for (int c = 0; c < 3; ++c) im.at(x, y)[c] = static_cast<std::uint8_t>((x * 31 + y * 17 + c * 7) % 256);
  return im;
}

void append_le64(std::vector<unsigned char>& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

// The embed rule written out from its definition with one-shot libsodium calls.
std::pair<std::vector<float>, std::string> embed_oracle(const Image& im, std::uint64_t seed,
                                                        std::size_t dim) {
  if (sodium_init() < 0) throw std::runtime_error("sodium");
  std::vector<unsigned char> key_input = {'m', 'b', 'm', 'c', '-', 'm', 'o', 'c', 'k',
                                          'e', 'm', 'b', 'e', 'd'};
  append_le64(key_input, seed);
  unsigned char key[32];
  crypto_generichash(key, 32, key_input.data(), key_input.size(), nullptr, 0);
  std::vector<unsigned char> msg;
  append_le64(msg, static_cast<std::uint64_t>(im.width));
  append_le64(msg, static_cast<std::uint64_t>(im.height));
  msg.insert(msg.end(), im.pixels.begin(), im.pixels.end());
  unsigned char out[32];
  crypto_generichash(out, 32, msg.data(), msg.size(), key, 32);
  std::uint64_t code = 0;
  for (int i = 7; i >= 0; --i) code = (code << 8) | out[i];
  std::mt19937_64 rng(code);
  std::vector<double> raw(dim);
  double sq = 0;
  for (auto& v : raw) {
    v = static_cast<double>(rng() >> 11) / 9007199254740992.0 * 2.0 - 1.0;
    sq += v * v;
  }
  std::vector<float> unit(dim);
  for (std::size_t i = 0; i < dim; ++i) unit[i] = static_cast<float>(raw[i] / std::sqrt(sq));
  return {unit, "mock-activity-" + std::to_string(code % 4)};
}

std::string endpoint(int port) { return "http://127.0.0.1:" + std::to_string(port); }

HttpBackend::Endpoints all_roles(int port) {
  HttpBackend::Endpoints e;
  for (auto r : kAllRoles) e[r] = endpoint(port);
  return e;
}

}  // namespace

TEST(Roles, NamesRoundtripAndUnknownIsConfigError) {
  for (auto r : kAllRoles) EXPECT_EQ(parse_role(to_string(r)), r);
  EXPECT_THROW(parse_role("teleport"), ConfigError);
  EXPECT_THROW(HttpBackend::parse_endpoints(json{{"segmentt", "http://h:1"}}), ConfigError);
  EXPECT_THROW(HttpBackend::parse_endpoints(json{{"segment", 5}}), ConfigError);
  EXPECT_THROW(parse_endpoint("localhost"), ConfigError);
  EXPECT_THROW(parse_endpoint("http://h:notaport"), ConfigError);
  EXPECT_EQ(parse_endpoint("http://10.0.0.2:8091/"), (std::pair<std::string, int>{"10.0.0.2", 8091}));
}

TEST(Wire, RoundtripEverySchema) {
  WireGen g(31);
  for (int i = 0; i < 100; ++i) {
    auto a = g.segment_request(); EXPECT_EQ(wire_roundtrip(a), a);
    auto b = g.segment_response(); EXPECT_EQ(wire_roundtrip(b), b);
    auto c = g.pose_request(); EXPECT_EQ(wire_roundtrip(c), c);
    auto d = g.pose_response(); EXPECT_EQ(wire_roundtrip(d), d);
    auto e = g.edges_request(); EXPECT_EQ(wire_roundtrip(e), e);
    auto f = g.edges_response(); EXPECT_EQ(wire_roundtrip(f), f);
    auto h = g.embed_request(); EXPECT_EQ(wire_roundtrip(h), h);
    auto k = g.embed_response(); EXPECT_EQ(wire_roundtrip(k), k);
    auto l = g.inpaint_request(); EXPECT_EQ(wire_roundtrip(l), l);
    auto m = g.generate_request(); EXPECT_EQ(wire_roundtrip(m), m);
    auto n = g.faceswap_request(); EXPECT_EQ(wire_roundtrip(n), n);
    auto o = g.enhance_request(); EXPECT_EQ(wire_roundtrip(o), o);
    auto p = g.image_response(); EXPECT_EQ(wire_roundtrip(p), p);
    auto q = g.detect_request(); EXPECT_EQ(wire_roundtrip(q), q);
    auto r = g.detect_response(); EXPECT_EQ(wire_roundtrip(r), r);
    auto s = g.grad_response(); EXPECT_EQ(wire_roundtrip(s), s);
  }
}

TEST(Wire, KeysFollowSchema) {
  WireGen g(32);
  const json gen = to_json(g.generate_request());
  for (const char* k : {"image", "mask", "pose_map", "edge_map", "guide_embedding", "steps", "seed"})
    EXPECT_TRUE(gen.contains(k)) << k;
  const json emb = to_json(EmbedResponse{g.embedding(), "walk"});
  EXPECT_TRUE(emb.at("embedding").is_array());
  EXPECT_EQ(emb.at("activity"), "walk");
  const json seg = to_json(SegmentResponse{{{BinaryMask(2, 2), {0, 0, 1, 1}, 0.5}}});
  EXPECT_EQ(seg.at("bodies")[0].at("bbox"), json::array({0, 0, 1, 1}));
  const json det = to_json(DetectResponse{{{{1, 2, 3, 4}, 0.75}}});
  EXPECT_EQ(det.at("detections")[0].at("objectness"), 0.75);
}

TEST(Wire, MissingActivityNamesField) {
  WireGen g(33);
  json j = to_json(EmbedResponse{g.embedding(), "walk"});
  j.erase("activity");
  try {
    from_json<EmbedResponse>(j);
    FAIL();
  } catch (const ProtocolError& e) {
    EXPECT_EQ(e.field(), "activity");
  }
}

TEST(Wire, SchemaViolationsNameTheirField) {
  WireGen g(34);
  auto expect_field = [](const json& j, auto tag, const std::string& field) {
    using T = decltype(tag);
    try {
      from_json<T>(j);
      ADD_FAILURE() << "accepted " << j.dump().substr(0, 80);
    } catch (const ProtocolError& e) {
      EXPECT_EQ(e.field(), field);
    }
  };
  json gen = to_json(g.generate_request());
  gen["steps"] = 0;
  expect_field(gen, GenerationRequest{}, "steps");
  gen = to_json(g.generate_request());
  gen["pose_map"] = wire::encode_image(Image(99, 1));
  expect_field(gen, GenerationRequest{}, "pose_map");
  gen["image"] = "@@not base64@@";
  expect_field(gen, GenerationRequest{}, "image");
  json emb = to_json(EmbedResponse{g.embedding(), "walk"});
  emb["embedding"] = json::array({0.5, 0.0});
  expect_field(emb, EmbedResponse{}, "embedding");
  expect_field(json{{"detections", json::array({{{"bbox", {0, 0, 1, 1}}, {"objectness", 1.5}}})}},
               DetectResponse{}, "objectness");
  expect_field(json{{"keypoints", json::array()}}, PoseResponse{}, "keypoints");
  json grad = to_json(g.grad_response());
  grad["width"] = grad["width"].get<int>() + 1;
  expect_field(grad, GradResponse{}, "grad");
  expect_field(json::array(), SegmentRequest{}, "image");
}

TEST(MockEmbed, MatchesHashRuleOracle) {
  MockBackend mock(42);
  const auto got = mock.embed({embed_probe()});
  const auto [want, activity] = embed_oracle(embed_probe(), 42, kDefaultEmbeddingDim);
  ASSERT_EQ(got.embedding.dim(), want.size());
  for (std::size_t i = 0; i < want.size(); ++i) ASSERT_NEAR(got.embedding[i], want[i], 1e-7) << i;
  EXPECT_EQ(got.activity, activity);
  EXPECT_NEAR(got.embedding.norm(), 1.0, 1e-6);
}

TEST(MockEmbed, FrozenValuesForProbeImage) {
  MockBackend mock(42);
  const auto got = mock.embed({embed_probe()});
  EXPECT_EQ(got.activity, kProbeActivity);
  EXPECT_FLOAT_EQ(got.embedding[0], kProbeE0);
  EXPECT_FLOAT_EQ(got.embedding[1], kProbeE1);
  EXPECT_FLOAT_EQ(got.embedding[511], kProbeE511);
}

TEST(MockEmbed, DistinctImagesGiveDistinctEmbeddings) {
  MockBackend mock(42, {.embed_dim = 16});
  std::mt19937_64 rng(35);
  std::set<std::vector<float>> seen;
  for (int i = 0; i < 1000; ++i) {
    auto im = random_image(rng, 4, 4);
    const auto e = mock.embed({im}).embedding;
    seen.insert({e.values().begin(), e.values().end()});
  }
  EXPECT_EQ(seen.size(), 1000u);
}

TEST(MockSegment, TwoRectanglesTwoTightBodies) {
  const auto s = two_person_scene();
  MockBackend mock(1);
  const auto r = mock.segment({s.image});
  ASSERT_EQ(r.bodies.size(), 2u);
  std::set<std::pair<int, int>> boxes;
  for (const auto& b : r.bodies) {
    EXPECT_EQ(b.mask.count(), static_cast<std::size_t>(b.bbox.area()));
    EXPECT_GT(b.confidence, 0.5);
    boxes.insert({b.bbox.x, b.bbox.y});
    EXPECT_TRUE(b.bbox == s.people[0] || b.bbox == s.people[1]);
  }
  EXPECT_EQ(boxes.size(), 2u);
  EXPECT_TRUE(mock.segment({gray_image(20, 20)}).bodies.empty());
}

TEST(MockSegment, DropsSpecksBelowMinimumArea) {
  auto im = gray_image(20, 20);
  fill_rect(im, {2, 2, 3, 3}, {200, 20, 20});
  MockBackend mock(1);
  EXPECT_TRUE(mock.segment({im}).bodies.empty());
}

TEST(MockPose, GridInsideBox) {
  MockBackend mock(1);
  const BoundingBox b{10, 20, 40, 70};
  const auto r = mock.pose({gray_image(64, 100), b});
  for (std::size_t i = 0; i < kPoseKeypoints; ++i) {
    const auto& k = r.keypoints[i];
    EXPECT_DOUBLE_EQ(k.x, 10 + 40.0 * (i % 3 + 1) / 4.0);
    EXPECT_DOUBLE_EQ(k.y, 20 + 70.0 * (i / 3 + 1) / 7.0);
    EXPECT_EQ(k.confidence, 1.0);
  }
}

TEST(MockEdges, RectangleOutline) {
  auto im = gray_image(20, 20, 0);
  fill_rect(im, {5, 5, 10, 10}, {255, 255, 255});
  MockBackend mock(1);
  const auto e = mock.edges({im}).edge_map;
  EXPECT_EQ(e.at(5, 10)[0], 255);
  EXPECT_EQ(e.at(4, 10)[0], 255);
  EXPECT_EQ(e.at(10, 10)[0], 0);
  EXPECT_EQ(e.at(0, 0)[0], 0);
}

TEST(MockGenerative, DeterministicAndConfinedToMask) {
  WireGen g(36);
  MockBackend mock(5);
  for (int i = 0; i < 20; ++i) {
    const auto req = g.generate_request();
    const auto a = mock.generate(req), b = mock.generate(req);
    EXPECT_EQ(a, b);
    for (std::size_t p = 0; p < req.mask.bits.size(); ++p)
      if (!req.mask.bits[p]) {
        for (int c = 0; c < 3; ++c) ASSERT_EQ(a.image.pixels[p * 3 + c], req.masked_image.pixels[p * 3 + c]);
      }
    auto other = req;
    other.seed ^= 1;
    if (!req.mask.empty()) {
      EXPECT_NE(mock.generate(other), a);
    }
    const auto ip = g.inpaint_request();
    EXPECT_EQ(mock.inpaint(ip), mock.inpaint(ip));
  }
  EXPECT_NE(MockBackend(6).inpaint({gray_image(8, 8), BinaryMask(8, 8, true), 1}),
            MockBackend(5).inpaint({gray_image(8, 8), BinaryMask(8, 8, true), 1}));
}

TEST(MockGenerative, FaceswapAndEnhanceDeterministic) {
  WireGen g(37);
  MockBackend mock(5);
  for (int i = 0; i < 10; ++i) {
    const auto fs = g.faceswap_request();
    const auto a = mock.faceswap(fs);
    EXPECT_EQ(a, mock.faceswap(fs));
    EXPECT_EQ(a.image.width, fs.image.width);
    const auto en = g.enhance_request();
    EXPECT_EQ(mock.enhance(en), mock.enhance(en));
  }
}

class BackendHttp : public ::testing::Test {
 protected:
  void SetUp() override { port_ = server_.start(); }
  MockBackend mock_{7, {.embed_dim = 32}};
  BackendServer server_{mock_};
  int port_ = 0;
};

TEST_F(BackendHttp, EveryRoleMatchesInProcessMock) {
  HttpBackend client(all_roles(port_), 5s);
  const auto s = two_person_scene();
  WireGen g(38);
  EXPECT_EQ(client.segment({s.image}), mock_.segment({s.image}));
  EXPECT_EQ(client.pose({s.image, {1, 2, 3, 4}}), mock_.pose({s.image, {1, 2, 3, 4}}));
  EXPECT_EQ(client.edges({s.image}), mock_.edges({s.image}));
  EXPECT_EQ(client.embed({s.image}), mock_.embed({s.image}));
  const auto ip = g.inpaint_request();
  EXPECT_EQ(client.inpaint(ip), mock_.inpaint(ip));
  auto gen = g.generate_request();
  EXPECT_EQ(client.generate(gen), mock_.generate(gen));
  const auto fs = g.faceswap_request();
  EXPECT_EQ(client.faceswap(fs), mock_.faceswap(fs));
  const auto en = g.enhance_request();
  EXPECT_EQ(client.enhance(en), mock_.enhance(en));
  EXPECT_EQ(client.detect({s.image}), mock_.detect({s.image}));
  EXPECT_EQ(client.detect_grad({s.image}), mock_.detect_grad({s.image}));
}

TEST_F(BackendHttp, RequestNotMutated) {
  HttpBackend client(all_roles(port_), 5s);
  WireGen g(39);
  const auto gen = g.generate_request();
  const auto copy = gen;
  client.generate(gen);
  EXPECT_EQ(gen, copy);
}

TEST_F(BackendHttp, ServerRejectsBadInput) {
  httplib::Client c("127.0.0.1", port_);
  auto r = c.Post("/v1/teleport", "{}", "application/json");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 404);
  r = c.Post("/v1/embed", "{\"img\":1}", "application/json");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 400);
  EXPECT_EQ(json::parse(r->body).at("field"), "image");
  r = c.Post("/v1/embed", "not json", "application/json");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 400);
  r = c.Get("/v1/health");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 200);
}

TEST(BackendClient, MissingEndpointIsConfigError) {
  HttpBackend client({}, 1s);
  EXPECT_THROW(client.embed({Image(2, 2)}), ConfigError);
}

TEST(BackendClient, ProtocolErrorsAndStatusCodes) {
  httplib::Server srv;
  srv.Post("/v1/embed", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"embedding":[1.0]})", "application/json");
  });
  srv.Post("/v1/inpaint", [](const httplib::Request&, httplib::Response& res) {
    res.status = 503;
    res.set_content("overloaded", "text/plain");
  });
  srv.Post("/v1/edges", [](const httplib::Request&, httplib::Response& res) {
    res.set_content("<html>", "text/html");
  });
  const int port = srv.bind_to_any_port("127.0.0.1");
  std::thread t([&] { srv.listen_after_bind(); });
  srv.wait_until_ready();
  HttpBackend client(all_roles(port), 5s);
  try {
    client.embed({Image(2, 2)});
    ADD_FAILURE();
  } catch (const ProtocolError& e) {
    EXPECT_EQ(e.field(), "activity");
  }
  try {
    client.inpaint({Image(2, 2), BinaryMask(2, 2), 0});
    ADD_FAILURE();
  } catch (const BackendError& e) {
    EXPECT_EQ(e.role(), "inpaint");
    EXPECT_NE(std::string(e.what()).find("503"), std::string::npos);
  }
  EXPECT_THROW(client.edges({Image(2, 2)}), ProtocolError);
  srv.stop();
  t.join();
}

TEST(BackendClient, SlowBackendTimesOut) {
  httplib::Server srv;
  srv.Post("/v1/segment", [](const httplib::Request&, httplib::Response& res) {
    std::this_thread::sleep_for(1500ms);
    res.set_content(R"({"bodies":[]})", "application/json");
  });
  const int port = srv.bind_to_any_port("127.0.0.1");
  std::thread t([&] { srv.listen_after_bind(); });
  srv.wait_until_ready();
  HttpBackend client(all_roles(port), 300ms);
  const auto start = std::chrono::steady_clock::now();
  EXPECT_THROW(client.segment({Image(2, 2)}), TimeoutError);
  EXPECT_LT(std::chrono::steady_clock::now() - start, 1400ms);
  srv.stop();
  t.join();
}

TEST(BackendClient, UnreachableIsBackendError) {
  // Bind then close a plain socket so nothing listens on the port.
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  ASSERT_EQ(::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr), 0);
  socklen_t len = sizeof addr;
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
  const int port = ntohs(addr.sin_port);
  ::close(fd);
  HttpBackend client(all_roles(port), 2s);
  EXPECT_THROW(client.embed({Image(2, 2)}), BackendError);
}
