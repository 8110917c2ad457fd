#pragma once

// Model backend roles, their request/response schemas and the JSON wire
// encoding shared by the HTTP client, the backend server and the mocks.
//
// Images travel as base64 PNG, masks as base64 single-channel 0/255 PNG,
// embeddings as JSON float arrays, detector gradients as base64 little-endian
// float32 arrays (row-major H x W x 3).

#include <array>
#include <cstdint>
#include <cstring>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mbmc/attack.hpp"
#include "mbmc/codec.hpp"
#include "mbmc/error.hpp"
#include "mbmc/manifold.hpp"
#include "mbmc/raster.hpp"

namespace mbmc {

using json = nlohmann::json;

enum class BackendRole { Segment, Pose, Edges, Embed, Inpaint, Generate, FaceSwap, Enhance, Detect };

inline constexpr std::array<BackendRole, 9> kAllRoles = {
    BackendRole::Segment, BackendRole::Pose,     BackendRole::Edges,
    BackendRole::Embed,   BackendRole::Inpaint,  BackendRole::Generate,
    BackendRole::FaceSwap, BackendRole::Enhance, BackendRole::Detect};

inline std::string_view to_string(BackendRole role) {
  switch (role) {
    case BackendRole::Segment: return "segment";
    case BackendRole::Pose: return "pose";
    case BackendRole::Edges: return "edges";
    case BackendRole::Embed: return "embed";
    case BackendRole::Inpaint: return "inpaint";
    case BackendRole::Generate: return "generate";
    case BackendRole::FaceSwap: return "faceswap";
    case BackendRole::Enhance: return "enhance";
    case BackendRole::Detect: return "detect";
  }
  return "?";
}

inline BackendRole parse_role(std::string_view name) {
  for (auto r : kAllRoles)
    if (to_string(r) == name) return r;
  throw ConfigError("unknown backend role '" + std::string(name) + "'");
}

inline constexpr int kDefaultGenerationSteps = 60;
inline constexpr std::size_t kPoseKeypoints = 18;

struct Keypoint {
  double x = 0.0;
  double y = 0.0;
  double confidence = 0.0;
  friend bool operator==(const Keypoint&, const Keypoint&) = default;
};

/// OpenPose/COCO 18-point layout.
using Pose = std::array<Keypoint, kPoseKeypoints>;

// ---- schemas ---------------------------------------------------------------

struct SegmentRequest {
  Image image;
  friend bool operator==(const SegmentRequest&, const SegmentRequest&) = default;
};
struct SegmentedBody {
  BinaryMask mask;
  BoundingBox bbox;
  double confidence = 0.0;
  friend bool operator==(const SegmentedBody&, const SegmentedBody&) = default;
};
struct SegmentResponse {
  std::vector<SegmentedBody> bodies;
  friend bool operator==(const SegmentResponse&, const SegmentResponse&) = default;
};

struct PoseRequest {
  Image image;
  BoundingBox bbox;
  friend bool operator==(const PoseRequest&, const PoseRequest&) = default;
};
struct PoseResponse {
  Pose keypoints{};
  friend bool operator==(const PoseResponse&, const PoseResponse&) = default;
};

struct EdgesRequest {
  Image image;
  friend bool operator==(const EdgesRequest&, const EdgesRequest&) = default;
};
struct EdgesResponse {
  Image edge_map;
  friend bool operator==(const EdgesResponse&, const EdgesResponse&) = default;
};

struct EmbedRequest {
  Image image;
  friend bool operator==(const EmbedRequest&, const EmbedRequest&) = default;
};
struct EmbedResponse {
  EmbeddingVector embedding;
  std::string activity;
  friend bool operator==(const EmbedResponse&, const EmbedResponse&) = default;
};

struct InpaintRequest {
  Image image;
  BinaryMask mask;
  std::uint64_t seed = 0;
  friend bool operator==(const InpaintRequest&, const InpaintRequest&) = default;
};

/// Conditioning inputs for the multi-ControlNet generator. `mask` marks the
/// region to synthesise; masked_image has that region zeroed.
struct GenerationRequest {
  Image masked_image;
  BinaryMask mask;
  Image pose_map;
  Image edge_map;
  EmbeddingVector guide_embedding;
  int steps = kDefaultGenerationSteps;
  std::uint64_t seed = 0;
  friend bool operator==(const GenerationRequest&, const GenerationRequest&) = default;
};

struct FaceSwapRequest {
  Image image;  // face crop
  EmbeddingVector guide_embedding;
  std::string guide_id;
  std::uint64_t seed = 0;
  friend bool operator==(const FaceSwapRequest&, const FaceSwapRequest&) = default;
};

struct EnhanceRequest {
  Image image;
  std::uint64_t seed = 0;
  friend bool operator==(const EnhanceRequest&, const EnhanceRequest&) = default;
};

struct ImageResponse {
  Image image;
  friend bool operator==(const ImageResponse&, const ImageResponse&) = default;
};

struct DetectRequest {
  Image image;
  friend bool operator==(const DetectRequest&, const DetectRequest&) = default;
};
struct DetectResponse {
  std::vector<Detection> detections;
  friend bool operator==(const DetectResponse&, const DetectResponse&) = default;
};
struct GradResponse {
  int width = 0;
  int height = 0;
  std::vector<float> grad;  // width * height * 3
  friend bool operator==(const GradResponse&, const GradResponse&) = default;
};

/// One model service per role. Implementations must be safe to call from
/// several threads at once.
class Backend {
 public:
  virtual ~Backend() = default;
  virtual SegmentResponse segment(const SegmentRequest& req) = 0;
  virtual PoseResponse pose(const PoseRequest& req) = 0;
  virtual EdgesResponse edges(const EdgesRequest& req) = 0;
  virtual EmbedResponse embed(const EmbedRequest& req) = 0;
  virtual ImageResponse inpaint(const InpaintRequest& req) = 0;
  virtual ImageResponse generate(const GenerationRequest& req) = 0;
  virtual ImageResponse faceswap(const FaceSwapRequest& req) = 0;
  virtual ImageResponse enhance(const EnhanceRequest& req) = 0;
  virtual DetectResponse detect(const DetectRequest& req) = 0;
  virtual GradResponse detect_grad(const DetectRequest& req) = 0;
};

/// Adapts the detect role to the attack's detector contract.
class BackendDetector : public DetectorInterface {
 public:
  explicit BackendDetector(Backend& backend) : backend_(backend) {}

  std::vector<Detection> score(const Image& image) override {
    return backend_.detect({image}).detections;
  }
  std::vector<float> grad(const Image& image) override {
    auto r = backend_.detect_grad({image});
    if (r.width != image.width || r.height != image.height) {
      throw BackendError("detect", "gradient dimensions do not match image");
    }
    return std::move(r.grad);
  }

 private:
  Backend& backend_;
};

// ---- JSON encoding ---------------------------------------------------------

namespace wire {

inline const json& field(const json& j, const char* name) {
  if (!j.is_object()) throw ProtocolError(name, "payload is not a JSON object");
  auto it = j.find(name);
  if (it == j.end()) throw ProtocolError(name, "missing field");
  return *it;
}

template <typename T>
T get(const json& j, const char* name) {
  const json& v = field(j, name);
  try {
    return v.get<T>();
  } catch (const json::exception& e) {
    throw ProtocolError(name, e.what());
  }
}

inline std::string encode_image(const Image& image) { return base64_encode(encode_png(image)); }
inline std::string encode_mask(const BinaryMask& mask) {
  return base64_encode(encode_mask_png(mask));
}

inline Image image_field(const json& j, const char* name) {
  try {
    return decode_png(base64_decode(get<std::string>(j, name)));
  } catch (const ProtocolError&) {
    throw;
  } catch (const Error& e) {
    throw ProtocolError(name, e.what());
  }
}

inline BinaryMask mask_field(const json& j, const char* name) {
  try {
    return decode_mask_png(base64_decode(get<std::string>(j, name)));
  } catch (const ProtocolError&) {
    throw;
  } catch (const Error& e) {
    throw ProtocolError(name, e.what());
  }
}

inline json encode_bbox(const BoundingBox& b) { return json::array({b.x, b.y, b.w, b.h}); }

inline BoundingBox bbox_value(const json& v, const char* name) {
  if (!v.is_array() || v.size() != 4) throw ProtocolError(name, "expected [x, y, w, h]");
  try {
    BoundingBox b{v[0].get<int>(), v[1].get<int>(), v[2].get<int>(), v[3].get<int>()};
    if (b.w <= 0 || b.h <= 0) throw ProtocolError(name, "non-positive box extent");
    return b;
  } catch (const json::exception& e) {
    throw ProtocolError(name, e.what());
  }
}

inline json encode_embedding(const EmbeddingVector& e) {
  json arr = json::array();
  for (float v : e.values()) arr.push_back(v);
  return arr;
}

inline EmbeddingVector embedding_field(const json& j, const char* name) {
  const json& v = field(j, name);
  if (!v.is_array() || v.empty()) throw ProtocolError(name, "expected a non-empty float array");
  std::vector<float> values;
  values.reserve(v.size());
  for (const auto& x : v) {
    if (!x.is_number()) throw ProtocolError(name, "non-numeric element");
    values.push_back(static_cast<float>(x.get<double>()));
  }
  try {
    return EmbeddingVector::from_unit(std::move(values));
  } catch (const ValidationError& e) {
    throw ProtocolError(name, e.what());
  }
}

inline double unit_interval(const json& j, const char* name) {
  const double v = get<double>(j, name);
  if (!(v >= 0.0 && v <= 1.0)) throw ProtocolError(name, "value outside [0, 1]");
  return v;
}

inline std::string encode_floats(std::span<const float> values) {
  std::vector<std::uint8_t> raw(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, &values[i], 4);
    for (int b = 0; b < 4; ++b) raw[i * 4 + b] = static_cast<std::uint8_t>(bits >> (8 * b));
  }
  return base64_encode(raw);
}

inline std::vector<float> decode_floats(const std::string& text, const char* name) {
  Bytes raw;
  try {
    raw = base64_decode(text);
  } catch (const Error& e) {
    throw ProtocolError(name, e.what());
  }
  if (raw.size() % 4 != 0) throw ProtocolError(name, "byte length not a multiple of 4");
  std::vector<float> out(raw.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(raw[i * 4 + b]) << (8 * b);
    std::memcpy(&out[i], &bits, 4);
  }
  return out;
}

}  // namespace wire

inline json to_json(const SegmentRequest& r) { return {{"image", wire::encode_image(r.image)}}; }
inline void from_json_into(const json& j, SegmentRequest& r) { r.image = wire::image_field(j, "image"); }

inline json to_json(const SegmentResponse& r) {
  json bodies = json::array();
  for (const auto& b : r.bodies) {
    bodies.push_back({{"mask", wire::encode_mask(b.mask)},
                      {"bbox", wire::encode_bbox(b.bbox)},
                      {"confidence", b.confidence}});
  }
  return {{"bodies", bodies}};
}
inline void from_json_into(const json& j, SegmentResponse& r) {
  const json& bodies = wire::field(j, "bodies");
  if (!bodies.is_array()) throw ProtocolError("bodies", "expected an array");
  r.bodies.clear();
  for (const auto& b : bodies) {
    SegmentedBody body;
    body.mask = wire::mask_field(b, "mask");
    body.bbox = wire::bbox_value(wire::field(b, "bbox"), "bbox");
    body.confidence = wire::unit_interval(b, "confidence");
    r.bodies.push_back(std::move(body));
  }
}

inline json to_json(const PoseRequest& r) {
  return {{"image", wire::encode_image(r.image)}, {"bbox", wire::encode_bbox(r.bbox)}};
}
inline void from_json_into(const json& j, PoseRequest& r) {
  r.image = wire::image_field(j, "image");
  r.bbox = wire::bbox_value(wire::field(j, "bbox"), "bbox");
}

inline json to_json(const PoseResponse& r) {
  json kps = json::array();
  for (const auto& k : r.keypoints) kps.push_back({k.x, k.y, k.confidence});
  return {{"keypoints", kps}};
}
inline void from_json_into(const json& j, PoseResponse& r) {
  const json& kps = wire::field(j, "keypoints");
  if (!kps.is_array() || kps.size() != kPoseKeypoints) {
    throw ProtocolError("keypoints", "expected 18 [x, y, confidence] triples");
  }
  for (std::size_t i = 0; i < kPoseKeypoints; ++i) {
    const json& k = kps[i];
    if (!k.is_array() || k.size() != 3 || !k[0].is_number() || !k[1].is_number() ||
        !k[2].is_number()) {
      throw ProtocolError("keypoints", "malformed keypoint " + std::to_string(i));
    }
    r.keypoints[i] = {k[0].get<double>(), k[1].get<double>(), k[2].get<double>()};
  }
}

inline json to_json(const EdgesRequest& r) { return {{"image", wire::encode_image(r.image)}}; }
inline void from_json_into(const json& j, EdgesRequest& r) { r.image = wire::image_field(j, "image"); }

inline json to_json(const EdgesResponse& r) { return {{"edge_map", wire::encode_image(r.edge_map)}}; }
inline void from_json_into(const json& j, EdgesResponse& r) {
  r.edge_map = wire::image_field(j, "edge_map");
}

inline json to_json(const EmbedRequest& r) { return {{"image", wire::encode_image(r.image)}}; }
inline void from_json_into(const json& j, EmbedRequest& r) { r.image = wire::image_field(j, "image"); }

inline json to_json(const EmbedResponse& r) {
  return {{"embedding", wire::encode_embedding(r.embedding)}, {"activity", r.activity}};
}
inline void from_json_into(const json& j, EmbedResponse& r) {
  r.embedding = wire::embedding_field(j, "embedding");
  r.activity = wire::get<std::string>(j, "activity");
  if (r.activity.empty()) throw ProtocolError("activity", "must be non-empty");
}

inline json to_json(const InpaintRequest& r) {
  return {{"image", wire::encode_image(r.image)},
          {"mask", wire::encode_mask(r.mask)},
          {"seed", r.seed}};
}
inline void from_json_into(const json& j, InpaintRequest& r) {
  r.image = wire::image_field(j, "image");
  r.mask = wire::mask_field(j, "mask");
  r.seed = wire::get<std::uint64_t>(j, "seed");
}

inline json to_json(const GenerationRequest& r) {
  return {{"image", wire::encode_image(r.masked_image)},
          {"mask", wire::encode_mask(r.mask)},
          {"pose_map", wire::encode_image(r.pose_map)},
          {"edge_map", wire::encode_image(r.edge_map)},
          {"guide_embedding", wire::encode_embedding(r.guide_embedding)},
          {"steps", r.steps},
          {"seed", r.seed}};
}
inline void from_json_into(const json& j, GenerationRequest& r) {
  r.masked_image = wire::image_field(j, "image");
  r.mask = wire::mask_field(j, "mask");
  r.pose_map = wire::image_field(j, "pose_map");
  r.edge_map = wire::image_field(j, "edge_map");
  r.guide_embedding = wire::embedding_field(j, "guide_embedding");
  r.steps = wire::get<int>(j, "steps");
  if (r.steps < 1) throw ProtocolError("steps", "must be >= 1");
  r.seed = wire::get<std::uint64_t>(j, "seed");
  const auto w = r.masked_image.width, h = r.masked_image.height;
  if (r.mask.width != w || r.mask.height != h) throw ProtocolError("mask", "size differs from image");
  if (r.pose_map.width != w || r.pose_map.height != h) {
    throw ProtocolError("pose_map", "size differs from image");
  }
  if (r.edge_map.width != w || r.edge_map.height != h) {
    throw ProtocolError("edge_map", "size differs from image");
  }
}

inline json to_json(const FaceSwapRequest& r) {
  return {{"image", wire::encode_image(r.image)},
          {"guide_embedding", wire::encode_embedding(r.guide_embedding)},
          {"guide_id", r.guide_id},
          {"seed", r.seed}};
}
inline void from_json_into(const json& j, FaceSwapRequest& r) {
  r.image = wire::image_field(j, "image");
  r.guide_embedding = wire::embedding_field(j, "guide_embedding");
  r.guide_id = wire::get<std::string>(j, "guide_id");
  r.seed = wire::get<std::uint64_t>(j, "seed");
}

inline json to_json(const EnhanceRequest& r) {
  return {{"image", wire::encode_image(r.image)}, {"seed", r.seed}};
}
inline void from_json_into(const json& j, EnhanceRequest& r) {
  r.image = wire::image_field(j, "image");
  r.seed = wire::get<std::uint64_t>(j, "seed");
}

inline json to_json(const ImageResponse& r) { return {{"image", wire::encode_image(r.image)}}; }
inline void from_json_into(const json& j, ImageResponse& r) { r.image = wire::image_field(j, "image"); }

inline json to_json(const DetectRequest& r) { return {{"image", wire::encode_image(r.image)}}; }
inline void from_json_into(const json& j, DetectRequest& r) { r.image = wire::image_field(j, "image"); }

inline json to_json(const DetectResponse& r) {
  json dets = json::array();
  for (const auto& d : r.detections) {
    dets.push_back({{"bbox", wire::encode_bbox(d.box)}, {"objectness", d.objectness}});
  }
  return {{"detections", dets}};
}
inline void from_json_into(const json& j, DetectResponse& r) {
  const json& dets = wire::field(j, "detections");
  if (!dets.is_array()) throw ProtocolError("detections", "expected an array");
  r.detections.clear();
  for (const auto& d : dets) {
    r.detections.push_back(
        {wire::bbox_value(wire::field(d, "bbox"), "bbox"), wire::unit_interval(d, "objectness")});
  }
}

inline json to_json(const GradResponse& r) {
  return {{"width", r.width},
          {"height", r.height},
          {"channels", Image::kChannels},
          {"grad", wire::encode_floats(r.grad)}};
}
inline void from_json_into(const json& j, GradResponse& r) {
  r.width = wire::get<int>(j, "width");
  r.height = wire::get<int>(j, "height");
  if (r.width <= 0 || r.height <= 0) throw ProtocolError("width", "non-positive dimensions");
  if (wire::get<int>(j, "channels") != Image::kChannels) {
    throw ProtocolError("channels", "expected 3");
  }
  r.grad = wire::decode_floats(wire::get<std::string>(j, "grad"), "grad");
  if (r.grad.size() != static_cast<std::size_t>(r.width) * r.height * Image::kChannels) {
    throw ProtocolError("grad", "length does not match width * height * 3");
  }
}

template <typename T>
T from_json(const json& j) {
  T out{};
  from_json_into(j, out);
  return out;
}

/// Server-side dispatch: decode a role request, run it, encode the response.
/// `grad` selects the detect/grad sub-route.
inline json dispatch(Backend& backend, BackendRole role, const json& request, bool grad = false) {
  switch (role) {
    case BackendRole::Segment: return to_json(backend.segment(from_json<SegmentRequest>(request)));
    case BackendRole::Pose: return to_json(backend.pose(from_json<PoseRequest>(request)));
    case BackendRole::Edges: return to_json(backend.edges(from_json<EdgesRequest>(request)));
    case BackendRole::Embed: return to_json(backend.embed(from_json<EmbedRequest>(request)));
    case BackendRole::Inpaint: return to_json(backend.inpaint(from_json<InpaintRequest>(request)));
    case BackendRole::Generate:
      return to_json(backend.generate(from_json<GenerationRequest>(request)));
    case BackendRole::FaceSwap:
      return to_json(backend.faceswap(from_json<FaceSwapRequest>(request)));
    case BackendRole::Enhance: return to_json(backend.enhance(from_json<EnhanceRequest>(request)));
    case BackendRole::Detect: {
      auto req = from_json<DetectRequest>(request);
      return grad ? to_json(backend.detect_grad(req)) : to_json(backend.detect(req));
    }
  }
  throw ConfigError("unhandled role");
}

}  // namespace mbmc
