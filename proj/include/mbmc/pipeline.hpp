#pragma once

// Per-body anonymisation options and the order-invariant multi-body flow.
//
// Multi-body requests run every single-body pass against the original image,
// assemble the results (pixels edited by exactly one body come from that
// body's pass), then resolve pixels claimed by two or more bodies with one
// extra generation call over the overlap. Adversarial perturbation runs
// last, on the merged image.

#include <algorithm>
#include <array>
#include <cstdint>
#include <future>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mbmc/attack.hpp"
#include "mbmc/backend.hpp"
#include "mbmc/codec.hpp"
#include "mbmc/error.hpp"
#include "mbmc/manifold.hpp"
#include "mbmc/raster.hpp"

namespace mbmc {

enum class AnonymizationChoice {
  PhysicalRemoval,
  AdversarialRemoval,
  MaskBasedRemoval,
  IdentityRemoval,
  NoAction,
};

inline constexpr std::array<std::string_view, 5> kChoiceNames = {
    "physical_removal", "adversarial_removal", "mask_based_removal", "identity_removal",
    "no_action"};

inline std::string_view to_string(AnonymizationChoice c) {
  return kChoiceNames[static_cast<std::size_t>(c)];
}

inline AnonymizationChoice parse_choice(std::string_view name) {
  for (std::size_t i = 0; i < kChoiceNames.size(); ++i)
    if (kChoiceNames[i] == name) return static_cast<AnonymizationChoice>(i);
  std::string legal;
  for (auto n : kChoiceNames) legal += (legal.empty() ? "" : ", ") + std::string(n);
  throw ValidationError("invalid option '" + std::string(name) + "'; expected one of: " + legal);
}

struct BodyInstance {
  std::string body_id;  // content hash of the mask
  BinaryMask mask;
  BoundingBox bbox;
  Pose pose{};
  Image edge_map;  // full-frame soft edges, zero outside the body box
  double confidence = 0.0;
};

struct PipelineConfig {
  int dilation_radius = 0;  // 0 selects default_dilation_radius(bbox) per body
  int dilation_iterations = 1;
  int steps = kDefaultGenerationSteps;
  std::size_t sphere_k = kDefaultSphereK;
  AttackConfig attack{};
  bool feather = false;          // 2-pixel linear blend at mask borders
  double face_fraction = 1.0 / 3.0;  // top share of the body box treated as the face
  int min_face_bbox_height = 12;
  bool restrict_adversarial_to_bodies = false;
  int adversarial_margin = 8;    // pixels added around each targeted body box
  bool parallel_bodies = true;
};

struct AnonymizationRequest {
  Image image;
  std::vector<std::pair<std::string, AnonymizationChoice>> choices;
  std::uint64_t seed = 0;
};

struct PassResult {
  Image image;
  BinaryMask edited;  // pixels this pass is allowed to have changed
  std::vector<std::string> warnings;
  std::optional<EmbeddingVector> guide;
  std::optional<std::string> guide_id;
};

struct AnonymizationOutcome {
  Image image;
  std::vector<BodyInstance> bodies;
  std::vector<std::string> warnings;
  bool merge_pass = false;
};

inline std::string mask_content_id(const BinaryMask& mask) {
  Hasher h;
  h.update("mbmc-body").update_u64(static_cast<std::uint64_t>(mask.width));
  h.update_u64(static_cast<std::uint64_t>(mask.height)).update(mask.bits);
  const Bytes d = h.finish();
  return to_hex(std::span<const std::uint8_t>(d).first(16));
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view label) {
  return Hasher().update("mbmc-seed").update_u64(seed).update(label).finish_u64();
}

inline bool canonical_less(const BodyInstance& a, const BodyInstance& b) {
  if (a.bbox.x != b.bbox.x) return a.bbox.x < b.bbox.x;
  if (a.bbox.y != b.bbox.y) return a.bbox.y < b.bbox.y;
  return a.body_id < b.body_id;
}

// ---- pose conditioning map ---------------------------------------------------

namespace detail {

// COCO-18 limbs and the usual OpenPose palette.
inline constexpr std::array<std::pair<int, int>, 17> kLimbs = {{
    {1, 2}, {1, 5}, {2, 3}, {3, 4}, {5, 6}, {6, 7}, {1, 8}, {8, 9}, {9, 10},
    {1, 11}, {11, 12}, {12, 13}, {1, 0}, {0, 14}, {14, 16}, {0, 15}, {15, 17}}};

inline constexpr std::array<std::array<std::uint8_t, 3>, 18> kPoseColors = {{
    {255, 0, 0},   {255, 85, 0},  {255, 170, 0}, {255, 255, 0}, {170, 255, 0}, {85, 255, 0},
    {0, 255, 0},   {0, 255, 85},  {0, 255, 170}, {0, 255, 255}, {0, 170, 255}, {0, 85, 255},
    {0, 0, 255},   {85, 0, 255},  {170, 0, 255}, {255, 0, 255}, {255, 0, 170}, {255, 0, 85}}};

inline void stamp(Image& im, int cx, int cy, int r, const std::array<std::uint8_t, 3>& color) {
  for (int y = cy - r; y <= cy + r; ++y)
    for (int x = cx - r; x <= cx + r; ++x)
      if (x >= 0 && y >= 0 && x < im.width && y < im.height &&
          (x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r)
        std::copy(color.begin(), color.end(), im.at(x, y));
}

inline void draw_line(Image& im, int x0, int y0, int x1, int y1, int r,
                      const std::array<std::uint8_t, 3>& color) {
  const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
  const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  for (;;) {
    stamp(im, x0, y0, r, color);
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) { err += dy; x0 += sx; }
    if (e2 <= dx) { err += dx; y0 += sy; }
  }
}

}  // namespace detail

/// Renders skeletons onto `canvas` (limbs, then joints) in fixed colours.
inline void draw_pose(Image& canvas, const Pose& pose, double min_confidence = 0.1) {
  for (std::size_t i = 0; i < detail::kLimbs.size(); ++i) {
    const auto& a = pose[detail::kLimbs[i].first];
    const auto& b = pose[detail::kLimbs[i].second];
    if (a.confidence < min_confidence || b.confidence < min_confidence) continue;
    detail::draw_line(canvas, static_cast<int>(std::lround(a.x)), static_cast<int>(std::lround(a.y)),
                      static_cast<int>(std::lround(b.x)), static_cast<int>(std::lround(b.y)), 1,
                      detail::kPoseColors[i]);
  }
  for (std::size_t i = 0; i < pose.size(); ++i) {
    if (pose[i].confidence < min_confidence) continue;
    detail::stamp(canvas, static_cast<int>(std::lround(pose[i].x)),
                  static_cast<int>(std::lround(pose[i].y)), 2, detail::kPoseColors[i]);
  }
}

inline Image render_pose_map(int width, int height, const Pose& pose) {
  Image canvas(width, height);
  draw_pose(canvas, pose);
  return canvas;
}

// ---- pipeline ----------------------------------------------------------------

class Pipeline {
 public:
  Pipeline(Backend& backend, PipelineConfig config = {}, const BodyManifold* bodies = nullptr,
           const BodyManifold* faces = nullptr)
      : backend_(backend), config_(config), bodies_(bodies), faces_(faces) {}

  const PipelineConfig& config() const { return config_; }

  /// Segments, then attaches pose and edges. Bodies come back in canonical
  /// order (bbox x, then y, then body_id).
  std::vector<BodyInstance> detect_bodies(const Image& image) const {
    if (!image.valid()) throw ArgumentError("detect_bodies: invalid image");
    const auto seg = attributed("segment", [&] { return backend_.segment({image}); });
    std::vector<BodyInstance> out;
    if (seg.bodies.empty()) return out;
    const auto edges = attributed("edges", [&] { return backend_.edges({image}); });
    if (edges.edge_map.width != image.width || edges.edge_map.height != image.height) {
      throw BackendError("edges", "edge map size differs from image");
    }
    for (const auto& sb : seg.bodies) {
      if (sb.mask.width != image.width || sb.mask.height != image.height) {
        throw BackendError("segment", "mask size differs from image");
      }
      if (sb.mask.empty()) throw BackendError("segment", "returned an empty body mask");
      const BoundingBox tight = mask_to_bbox(sb.mask);
      if (!sb.bbox.inside(image.width, image.height) || tight.x < sb.bbox.x ||
          tight.y < sb.bbox.y || tight.right() > sb.bbox.right() ||
          tight.bottom() > sb.bbox.bottom()) {
        throw BackendError("segment", "bbox does not contain its mask");
      }
      BodyInstance body;
      body.body_id = mask_content_id(sb.mask);
      body.mask = sb.mask;
      body.bbox = sb.bbox;
      body.confidence = sb.confidence;
      body.pose = attributed("pose", [&] { return backend_.pose({image, sb.bbox}); }).keypoints;
      body.edge_map = zero_masked(edges.edge_map,
                                  invert(box_mask(image.width, image.height, sb.bbox)));
      out.push_back(std::move(body));
    }
    std::sort(out.begin(), out.end(), canonical_less);
    for (std::size_t i = 1; i < out.size(); ++i) {
      if (out[i].body_id == out[i - 1].body_id) {
        throw BackendError("segment", "duplicate body mask " + out[i].body_id);
      }
    }
    return out;
  }

  int dilation_radius_for(const BodyInstance& body) const {
    return config_.dilation_radius > 0 ? config_.dilation_radius
                                       : default_dilation_radius(body.bbox);
  }

  BinaryMask dilated_mask(const BodyInstance& body) const {
    return dilate(body.mask, dilation_radius_for(body), config_.dilation_iterations);
  }

  /// Removes the body and inpaints the dilated region.
  PassResult run_physical(const Image& image, const BodyInstance& body, std::uint64_t seed) const {
    PassResult r;
    r.edited = dilated_mask(body);
    const auto filled = attributed("inpaint", [&] {
      return backend_.inpaint({zero_masked(image, r.edited), r.edited, seed});
    });
    check_same_size(filled.image, image, "inpaint");
    r.image = blend(image, filled.image, r.edited);
    return r;
  }

  /// Replaces the body with one synthesised from the most dissimilar guide
  /// of the same activity.
  PassResult run_mask_based(const Image& image, const BodyInstance& body,
                            std::uint64_t seed) const {
    if (!bodies_ || bodies_->empty()) throw ConfigError("mask-based removal needs a body manifold");
    PassResult r;
    const auto emb = attributed("embed", [&] { return backend_.embed({crop(image, body.bbox)}); });
    if (emb.embedding.dim() != bodies_->dim()) {
      throw BackendError("embed", "embedding dimension " + std::to_string(emb.embedding.dim()) +
                                      " does not match manifold dimension " +
                                      std::to_string(bodies_->dim()));
    }
    const ManifoldEntry* guide = nullptr;
    if (bodies_->has_activity(emb.activity)) {
      guide = &select_guide(*bodies_, emb.embedding, emb.activity);
    } else {
      guide = &select_farthest(*bodies_, emb.embedding);
      r.warnings.push_back("body " + body.body_id + ": activity '" + emb.activity +
                           "' not in manifold; used global farthest guide '" + guide->id + "'");
    }
    r.guide = guide->embedding;
    r.guide_id = guide->id;
    r.edited = dilated_mask(body);

    GenerationRequest req;
    req.masked_image = zero_masked(image, r.edited);
    req.mask = r.edited;
    req.pose_map = render_pose_map(image.width, image.height, body.pose);
    req.edge_map = body.edge_map;
    req.guide_embedding = guide->embedding;
    req.steps = config_.steps;
    req.seed = seed;
    const auto gen = attributed("generate", [&] { return backend_.generate(req); });
    check_same_size(gen.image, image, "generate");
    r.image = blend(image, gen.image, r.edited);
    return r;
  }

  /// Face box: the top face_fraction of the body box.
  BoundingBox face_box(const BodyInstance& body) const {
    const int h = std::max(1, static_cast<int>(body.bbox.h * config_.face_fraction));
    return {body.bbox.x, body.bbox.y, body.bbox.w, h};
  }

  /// Swaps in a dissimilar synthetic face, then enhances it.
  PassResult run_identity(const Image& image, const BodyInstance& body, std::uint64_t seed) const {
    if (!faces_ || faces_->empty()) throw ConfigError("identity removal needs a face manifold");
    PassResult r;
    r.image = image;
    r.edited = BinaryMask(image.width, image.height);
    if (body.bbox.h < config_.min_face_bbox_height) {
      r.warnings.push_back("body " + body.body_id + ": bbox height " +
                           std::to_string(body.bbox.h) + " px too small for a face; skipped");
      return r;
    }
    const BoundingBox fbox = face_box(body);
    const Image face = crop(image, fbox);
    const auto emb = attributed("embed", [&] { return backend_.embed({face}); });
    if (emb.embedding.dim() != faces_->dim()) {
      throw BackendError("embed", "face embedding dimension does not match face manifold");
    }
    const ManifoldEntry& guide =
        select_face_guide(*faces_, emb.embedding, config_.sphere_k, seed);
    r.guide = guide.embedding;
    r.guide_id = guide.id;
    const auto swapped = attributed("faceswap", [&] {
      return backend_.faceswap({face, guide.embedding, guide.id, seed});
    });
    check_same_size(swapped.image, face, "faceswap");
    const auto enhanced =
        attributed("enhance", [&] { return backend_.enhance({swapped.image, seed}); });
    check_same_size(enhanced.image, face, "enhance");

    Image pasted = image;
    paste(pasted, enhanced.image, fbox);
    r.edited = intersect_masks(dilated_mask(body), box_mask(image.width, image.height, fbox));
    r.image = blend(image, pasted, r.edited);
    return r;
  }

  /// Suppresses detections of the given bodies.
  AdversarialResult run_adversarial(const Image& image, const std::vector<BodyInstance>& bodies,
                                    const AttackConfig& cfg) const {
    if (bodies.empty()) throw ArgumentError("run_adversarial: no target bodies");
    AttackTargets targets;
    for (const auto& b : bodies) targets.boxes.push_back(b.bbox);
    if (config_.restrict_adversarial_to_bodies) {
      BinaryMask region(image.width, image.height);
      for (const auto& b : bodies) {
        const int m = config_.adversarial_margin;
        const BinaryMask box =
            box_mask(image.width, image.height, {b.bbox.x - m, b.bbox.y - m, b.bbox.w + 2 * m,
                                                 b.bbox.h + 2 * m});
        for (std::size_t i = 0; i < region.bits.size(); ++i) region.bits[i] |= box.bits[i];
      }
      targets.region = std::move(region);
    }
    BackendDetector detector(backend_);
    try {
      return vanish_attack(image, detector, cfg, targets);
    } catch (const Error&) {
      throw;
    } catch (const std::exception& e) {
      throw BackendError("detect", e.what());
    }
  }

  AnonymizationOutcome anonymize(const AnonymizationRequest& request) const {
    if (!request.image.valid()) throw ArgumentError("anonymize: invalid image");
    AnonymizationOutcome out;
    out.bodies = detect_bodies(request.image);

    std::map<std::string, AnonymizationChoice> chosen;
    for (const auto& [id, choice] : request.choices) {
      const bool known = std::any_of(out.bodies.begin(), out.bodies.end(),
                                     [&](const BodyInstance& b) { return b.body_id == id; });
      if (!known) throw ValidationError("unknown body_id '" + id + "'");
      auto [it, inserted] = chosen.emplace(id, choice);
      if (!inserted && it->second != choice) {
        throw ValidationError("conflicting choices for body_id '" + id + "'");
      }
    }
    auto choice_of = [&](const BodyInstance& b) {
      auto it = chosen.find(b.body_id);
      return it == chosen.end() ? AnonymizationChoice::NoAction : it->second;
    };

    // Single-body passes, each against the original image.
    std::vector<std::size_t> editing;
    std::vector<BodyInstance> adversarial;
    for (std::size_t i = 0; i < out.bodies.size(); ++i) {
      const auto c = choice_of(out.bodies[i]);
      if (c == AnonymizationChoice::AdversarialRemoval) adversarial.push_back(out.bodies[i]);
      if (c == AnonymizationChoice::PhysicalRemoval || c == AnonymizationChoice::MaskBasedRemoval ||
          c == AnonymizationChoice::IdentityRemoval) {
        editing.push_back(i);
      }
    }
    auto run_one = [&](std::size_t idx) {
      const auto& body = out.bodies[idx];
      const std::uint64_t seed = derive_seed(request.seed, body.body_id);
      switch (choice_of(body)) {
        case AnonymizationChoice::PhysicalRemoval: return run_physical(request.image, body, seed);
        case AnonymizationChoice::MaskBasedRemoval: return run_mask_based(request.image, body, seed);
        case AnonymizationChoice::IdentityRemoval: return run_identity(request.image, body, seed);
        default: throw std::logic_error("not an editing choice");
      }
    };
    std::vector<PassResult> passes;
    if (config_.parallel_bodies && editing.size() > 1) {
      std::vector<std::future<PassResult>> futures;
      for (auto idx : editing) futures.push_back(std::async(std::launch::async, run_one, idx));
      for (auto& f : futures) passes.push_back(f.get());
    } else {
      for (auto idx : editing) passes.push_back(run_one(idx));
    }
    for (const auto& p : passes)
      out.warnings.insert(out.warnings.end(), p.warnings.begin(), p.warnings.end());

    out.image = request.image;
    if (!passes.empty()) {
      std::vector<const PassResult*> ptrs;
      std::vector<const BodyInstance*> owners;
      for (std::size_t k = 0; k < passes.size(); ++k) {
        ptrs.push_back(&passes[k]);
        owners.push_back(&out.bodies[editing[k]]);
      }
      std::vector<AnonymizationChoice> kinds;
      for (auto idx : editing) kinds.push_back(choice_of(out.bodies[idx]));
      out.image = merge_passes(request.image, ptrs, owners, kinds, request.seed, out.merge_pass);
    }

    if (!adversarial.empty()) {
      out.image = run_adversarial(out.image, adversarial, config_.attack).image;
    }
    return out;
  }

  /// Pixels edited by exactly one pass come from that pass; pixels claimed by
  /// several passes are regenerated by one extra call over that overlap.
  Image merge_passes(const Image& original, const std::vector<const PassResult*>& passes,
                     const std::vector<const BodyInstance*>& owners,
                     const std::vector<AnonymizationChoice>& kinds, std::uint64_t seed,
                     bool& merged) const {
    const int w = original.width, h = original.height;
    std::vector<int> cover(static_cast<std::size_t>(w) * h, 0);
    std::vector<int> last(cover.size(), -1);
    for (std::size_t k = 0; k < passes.size(); ++k) {
      const auto& bits = passes[k]->edited.bits;
      for (std::size_t i = 0; i < bits.size(); ++i) {
        if (!bits[i]) continue;
        ++cover[i];
        last[i] = static_cast<int>(k);
      }
    }
    Image base = original;
    BinaryMask overlap(w, h);
    for (std::size_t i = 0; i < cover.size(); ++i) {
      const std::size_t px = i * Image::kChannels;
      if (cover[i] == 1) {
        std::copy_n(passes[static_cast<std::size_t>(last[i])]->image.pixels.begin() +
                        static_cast<long>(px),
                    Image::kChannels, base.pixels.begin() + static_cast<long>(px));
      } else if (cover[i] > 1) {
        overlap.bits[i] = 1;
      }
    }
    merged = !overlap.empty();
    if (!merged) return base;

    // Passes touching the overlap, in canonical order.
    std::vector<std::size_t> involved;
    for (std::size_t k = 0; k < passes.size(); ++k) {
      const auto& bits = passes[k]->edited.bits;
      for (std::size_t i = 0; i < bits.size(); ++i) {
        if (bits[i] && overlap.bits[i]) {
          involved.push_back(k);
          break;
        }
      }
    }
    const std::uint64_t merge_seed = derive_seed(seed, "merge");
    const Image masked = zero_masked(base, overlap);
    std::vector<double> guide_sum;
    std::optional<EmbeddingVector> first_guide;
    for (auto k : involved) {
      if (kinds[k] != AnonymizationChoice::MaskBasedRemoval || !passes[k]->guide) continue;
      const auto v = passes[k]->guide->values();
      if (!first_guide) first_guide = passes[k]->guide;
      guide_sum.resize(v.size(), 0.0);
      for (std::size_t d = 0; d < v.size(); ++d) guide_sum[d] += v[d];
    }

    Image fill;
    if (first_guide) {
      GenerationRequest req;
      req.masked_image = masked;
      req.mask = overlap;
      req.pose_map = Image(w, h);
      req.edge_map = Image(w, h);
      for (auto k : involved) {
        draw_pose(req.pose_map, owners[k]->pose);
        const auto& e = owners[k]->edge_map.pixels;
        for (std::size_t i = 0; i < e.size(); ++i)
          req.edge_map.pixels[i] = std::max(req.edge_map.pixels[i], e[i]);
      }
      double sq = 0.0;
      for (double v : guide_sum) sq += v * v;
      req.guide_embedding =
          sq > 1e-18 ? EmbeddingVector::normalized(guide_sum) : *first_guide;
      req.steps = config_.steps;
      req.seed = merge_seed;
      fill = attributed("generate", [&] { return backend_.generate(req); }).image;
    } else {
      fill = attributed("inpaint", [&] {
               return backend_.inpaint({masked, overlap, merge_seed});
             }).image;
    }
    check_same_size(fill, original, "merge");
    return composite(base, fill, overlap);
  }

 private:
  template <typename F>
  static auto attributed(const char* role, F&& f) -> decltype(f()) {
    try {
      return f();
    } catch (const Error&) {
      throw;
    } catch (const std::exception& e) {
      throw BackendError(role, e.what());
    }
  }

  static void check_same_size(const Image& a, const Image& b, const char* role) {
    if (a.width != b.width || a.height != b.height || !a.valid()) {
      throw BackendError(role, "returned an image of the wrong size");
    }
  }

  static BinaryMask invert(BinaryMask m) {
    for (auto& b : m.bits) b = b ? 0 : 1;
    return m;
  }

  Image blend(const Image& base, const Image& patch, const BinaryMask& mask) const {
    return config_.feather ? composite_feathered(base, patch, mask, 2)
                           : composite(base, patch, mask);
  }

  Backend& backend_;
  PipelineConfig config_;
  const BodyManifold* bodies_;
  const BodyManifold* faces_;
};

}  // namespace mbmc
