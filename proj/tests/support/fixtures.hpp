#pragma once

#include <algorithm>
#include <cstdint>
#include <mutex>
#include <random>
#include <string>
#include <vector>

#include "mbmc/backend.hpp"
#include "mbmc/manifold.hpp"
#include "mbmc/mock_backend.hpp"
#include "mbmc/raster.hpp"

namespace mbmc::testing {

inline Image gray_image(int w, int h, std::uint8_t v = 128) {
  Image im(w, h);
  std::fill(im.pixels.begin(), im.pixels.end(), v);
  return im;
}

inline void fill_rect(Image& im, const BoundingBox& b, std::array<std::uint8_t, 3> rgb) {
  for (int y = b.y; y < b.bottom(); ++y)
    for (int x = b.x; x < b.right(); ++x)
      for (int c = 0; c < 3; ++c) im.at(x, y)[c] = rgb[c];
}

inline Image random_image(std::mt19937_64& rng, int w, int h) {
  Image im(w, h);
  for (auto& p : im.pixels) p = static_cast<std::uint8_t>(rng() & 0xFF);
  return im;
}

inline BinaryMask random_mask(std::mt19937_64& rng, int w, int h, double density = 0.3) {
  BinaryMask m(w, h);
  std::bernoulli_distribution bit(density);
  for (auto& b : m.bits) b = bit(rng) ? 1 : 0;
  return m;
}

inline std::vector<float> random_unit(std::mt19937_64& rng, std::size_t dim) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> raw(dim);
  for (auto& v : raw) v = n(rng);
  const auto e = EmbeddingVector::normalized(raw);
  return {e.values().begin(), e.values().end()};
}

inline EmbeddingVector random_embedding(std::mt19937_64& rng, std::size_t dim) {
  return EmbeddingVector::from_unit(random_unit(rng, dim));
}

/// `classes` activities named prefix0.. with `per_class` entries each.
inline BodyManifold random_manifold(std::mt19937_64& rng, std::size_t dim, int classes,
                                    std::size_t per_class,
                                    const std::string& prefix = "mock-activity-") {
  std::vector<ManifoldEntry> entries;
  for (int c = 0; c < classes; ++c) {
    for (std::size_t i = 0; i < per_class; ++i) {
      ManifoldEntry e;
      e.id = "e" + std::to_string(c) + "-" + std::to_string(i) + "-" + std::to_string(rng() % 100000);
      e.activity = prefix + std::to_string(c);
      e.embedding = random_embedding(rng, dim);
      entries.push_back(std::move(e));
    }
  }
  return build_manifold(std::move(entries), per_class, dim);
}

/// A colour with HSV saturation above 0.5 whose channel-chroma energy sits
/// in a band the mock detector both fires on and can be pushed below.
inline std::array<std::uint8_t, 3> person_colour(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> hi(150, 200);
  const int h = hi(rng);
  const int lo = h * 45 / 100;  // saturation 0.55
  std::array<std::uint8_t, 3> rgb{};
  const int dominant = static_cast<int>(rng() % 3);
  for (int c = 0; c < 3; ++c) rgb[c] = static_cast<std::uint8_t>(c == dominant ? h : lo);
  return rgb;
}

struct Scene {
  Image image;
  std::vector<BoundingBox> people;
};

/// Gray background with 1..max_people disjoint saturated rectangles.
inline Scene person_scene(std::mt19937_64& rng, int w = 128, int h = 96, int max_people = 3,
                          bool allow_touching = false) {
  Scene s{gray_image(w, h, 128), {}};
  const int people = 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(max_people));
  std::uniform_int_distribution<int> side(24, 40);
  for (int attempt = 0; attempt < 200 && static_cast<int>(s.people.size()) < people; ++attempt) {
    const int bw = std::min(side(rng), w), bh = std::min(side(rng), h);
    const BoundingBox b{static_cast<int>(rng() % static_cast<std::uint64_t>(w - bw + 1)),
                        static_cast<int>(rng() % static_cast<std::uint64_t>(h - bh + 1)), bw, bh};
    const int gap = allow_touching ? 0 : 4;
    const BoundingBox grown{b.x - gap, b.y - gap, b.w + 2 * gap, b.h + 2 * gap};
    const bool clear = std::none_of(s.people.begin(), s.people.end(), [&](const BoundingBox& o) {
      return intersection_area(grown, o) > 0;
    });
    if (!clear) continue;
    fill_rect(s.image, b, person_colour(rng));
    s.people.push_back(b);
  }
  return s;
}

/// Two people side by side, the left one at x=8.
inline Scene two_person_scene() {
  Scene s{gray_image(96, 64, 128), {}};
  s.people = {{8, 12, 28, 40}, {56, 10, 30, 44}};
  fill_rect(s.image, s.people[0], {190, 80, 80});
  fill_rect(s.image, s.people[1], {70, 70, 180});
  return s;
}

/// Two people whose dilated masks overlap.
inline Scene overlapping_scene() {
  Scene s{gray_image(96, 64, 128), {}};
  s.people = {{10, 12, 30, 40}, {44, 14, 30, 40}};
  fill_rect(s.image, s.people[0], {190, 80, 80});
  fill_rect(s.image, s.people[1], {70, 70, 180});
  return s;
}

/// Wraps a backend and records the order of calls and generate requests.
class RecordingBackend : public Backend {
 public:
  explicit RecordingBackend(Backend& inner) : inner_(inner) {}

  std::vector<std::string> calls() const {
    std::lock_guard lock(mu_);
    return calls_;
  }
  std::vector<GenerationRequest> generations() const {
    std::lock_guard lock(mu_);
    return generations_;
  }
  std::vector<InpaintRequest> inpaints() const {
    std::lock_guard lock(mu_);
    return inpaints_;
  }
  std::size_t count(const std::string& role) const {
    std::lock_guard lock(mu_);
    return static_cast<std::size_t>(std::count(calls_.begin(), calls_.end(), role));
  }
  void clear() {
    std::lock_guard lock(mu_);
    calls_.clear();
    generations_.clear();
    inpaints_.clear();
  }

  SegmentResponse segment(const SegmentRequest& r) override { note("segment"); return inner_.segment(r); }
  PoseResponse pose(const PoseRequest& r) override { note("pose"); return inner_.pose(r); }
  EdgesResponse edges(const EdgesRequest& r) override { note("edges"); return inner_.edges(r); }
  EmbedResponse embed(const EmbedRequest& r) override { note("embed"); return inner_.embed(r); }
  ImageResponse inpaint(const InpaintRequest& r) override {
    {
      std::lock_guard lock(mu_);
      calls_.push_back("inpaint");
      inpaints_.push_back(r);
    }
    return inner_.inpaint(r);
  }
  ImageResponse generate(const GenerationRequest& r) override {
    {
      std::lock_guard lock(mu_);
      calls_.push_back("generate");
      generations_.push_back(r);
    }
    return inner_.generate(r);
  }
  ImageResponse faceswap(const FaceSwapRequest& r) override { note("faceswap"); return inner_.faceswap(r); }
  ImageResponse enhance(const EnhanceRequest& r) override { note("enhance"); return inner_.enhance(r); }
  DetectResponse detect(const DetectRequest& r) override { note("detect"); return inner_.detect(r); }
  GradResponse detect_grad(const DetectRequest& r) override { note("detect_grad"); return inner_.detect_grad(r); }

 private:
  void note(const char* role) {
    std::lock_guard lock(mu_);
    calls_.push_back(role);
  }

  Backend& inner_;
  mutable std::mutex mu_;
  std::vector<std::string> calls_;
  std::vector<GenerationRequest> generations_;
  std::vector<InpaintRequest> inpaints_;
};

}  // namespace mbmc::testing
