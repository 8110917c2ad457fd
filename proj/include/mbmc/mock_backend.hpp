#pragma once

// Deterministic in-process stand-ins for every backend role. Each response
// is a pure function of (request, seed), so pipelines built on them are
// reproducible byte for byte.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <random>
#include <string>
#include <vector>

#include "mbmc/attack.hpp"
#include "mbmc/backend.hpp"
#include "mbmc/codec.hpp"
#include "mbmc/raster.hpp"

namespace mbmc {

namespace mock {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// 32-byte key for one role of a mock seeded with `seed`.
inline Bytes role_key(std::uint64_t seed, std::string_view role) {
  return Hasher().update("mbmc-mock").update(role).update_u64(seed).finish();
}

inline void hash_image(Hasher& h, const Image& image) {
  h.update_u64(static_cast<std::uint64_t>(image.width));
  h.update_u64(static_cast<std::uint64_t>(image.height));
  h.update(image.pixels);
}

inline void hash_mask(Hasher& h, const BinaryMask& mask) {
  h.update_u64(static_cast<std::uint64_t>(mask.width));
  h.update_u64(static_cast<std::uint64_t>(mask.height));
  h.update(mask.bits);
}

inline void hash_embedding(Hasher& h, const EmbeddingVector& e) {
  const auto v = e.values();
  h.update({reinterpret_cast<const std::uint8_t*>(v.data()), v.size() * sizeof(float)});
}

/// HSV saturation in [0, 1].
inline double saturation(const std::uint8_t* px) {
  const int mx = std::max({px[0], px[1], px[2]});
  const int mn = std::min({px[0], px[1], px[2]});
  return mx == 0 ? 0.0 : static_cast<double>(mx - mn) / mx;
}

/// Low-saturation blocky texture keyed by `key`, written under `mask`.
inline Image fill_texture(const Image& base, const BinaryMask& mask, std::uint64_t key) {
  Image out = base;
  for (int y = 0; y < base.height; ++y) {
    for (int x = 0; x < base.width; ++x) {
      if (!mask.get(x, y)) continue;
      const std::uint64_t block = splitmix64(key ^ (static_cast<std::uint64_t>(x / 4) << 32) ^
                                             static_cast<std::uint64_t>(y / 4));
      const std::uint64_t pix = splitmix64(key + (static_cast<std::uint64_t>(y) << 32) +
                                           static_cast<std::uint64_t>(x));
      const int gray = 60 + static_cast<int>(block & 0x7F);
      for (int c = 0; c < 3; ++c) {
        const int tint = static_cast<int>((block >> (8 + 5 * c)) & 0xF) - 8;
        const int dither = static_cast<int>((pix >> (4 * c)) % 7) - 3;
        out.at(x, y)[c] = static_cast<std::uint8_t>(std::clamp(gray + tint + dither, 0, 255));
      }
    }
  }
  return out;
}

}  // namespace mock

/// Differentiable logistic person detector over fixed random features.
///
/// The image is tiled into cells. Each cell's logit is
///   gain * (chroma - tau) + texture_gain * sum_p,c r_c * (-1)^(x+y) * x_pc
/// where chroma = sum_c f_c^2 with f_c the cell mean of (x_c - mean over
/// channels), and r is a seeded random channel vector. Cells with sigmoid
/// objectness >= threshold are grouped into 4-connected detections. The
/// high-frequency term makes the detector sensitive to small perturbations,
/// the way real detectors are.
class ConvPersonDetector : public DetectorInterface {
 public:
  struct Params {
    int cell = 8;
    double gain = 30.0;
    double tau = 0.08;
    double texture_gain = 1.0;
    double threshold = 0.25;
  };

  explicit ConvPersonDetector(std::uint64_t seed) : ConvPersonDetector(seed, Params{}) {}

  ConvPersonDetector(std::uint64_t seed, Params params) : params_(params) {
    std::mt19937_64 rng(mock::splitmix64(seed ^ 0xde7ec7ULL));
    for (auto& r : weights_) {
      const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
      const double sign = (rng() & 1) ? 1.0 : -1.0;
      r = sign * (0.5 + u);
    }
  }

  const Params& params() const { return params_; }
  const std::array<double, 3>& channel_weights() const { return weights_; }

  /// Per-cell logits, row-major over the cell grid.
  std::vector<double> cell_logits(const Image& image) const {
    const Grid g = grid(image);
    std::vector<double> logits(static_cast<std::size_t>(g.cols) * g.rows);
    for (int cy = 0; cy < g.rows; ++cy)
      for (int cx = 0; cx < g.cols; ++cx)
        logits[static_cast<std::size_t>(cy) * g.cols + cx] = cell_stats(image, cx, cy).logit;
    return logits;
  }

  std::vector<Detection> score(const Image& image) override {
    const Grid g = grid(image);
    const auto logits = cell_logits(image);
    std::vector<double> obj(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) obj[i] = sigmoid(logits[i]);

    std::vector<Detection> out;
    std::vector<char> seen(obj.size(), 0);
    for (int cy = 0; cy < g.rows; ++cy) {
      for (int cx = 0; cx < g.cols; ++cx) {
        const std::size_t start = static_cast<std::size_t>(cy) * g.cols + cx;
        if (seen[start] || obj[start] < params_.threshold) continue;
        int min_cx = cx, max_cx = cx, min_cy = cy, max_cy = cy;
        double best = 0.0;
        std::deque<std::pair<int, int>> queue{{cx, cy}};
        seen[start] = 1;
        while (!queue.empty()) {
          auto [qx, qy] = queue.front();
          queue.pop_front();
          best = std::max(best, obj[static_cast<std::size_t>(qy) * g.cols + qx]);
          min_cx = std::min(min_cx, qx);
          max_cx = std::max(max_cx, qx);
          min_cy = std::min(min_cy, qy);
          max_cy = std::max(max_cy, qy);
          static constexpr int dx[] = {1, -1, 0, 0}, dy[] = {0, 0, 1, -1};
          for (int k = 0; k < 4; ++k) {
            const int nx = qx + dx[k], ny = qy + dy[k];
            if (nx < 0 || ny < 0 || nx >= g.cols || ny >= g.rows) continue;
            const std::size_t ni = static_cast<std::size_t>(ny) * g.cols + nx;
            if (seen[ni] || obj[ni] < params_.threshold) continue;
            seen[ni] = 1;
            queue.emplace_back(nx, ny);
          }
        }
        const int x0 = min_cx * params_.cell, y0 = min_cy * params_.cell;
        const int x1 = std::min(image.width, (max_cx + 1) * params_.cell);
        const int y1 = std::min(image.height, (max_cy + 1) * params_.cell);
        out.push_back({{x0, y0, x1 - x0, y1 - y0}, best});
      }
    }
    return out;
  }

  /// Gradient of the summed cell objectness.
  std::vector<float> grad(const Image& image) override {
    const Grid g = grid(image);
    std::vector<float> out(image.pixels.size(), 0.0f);
    for (int cy = 0; cy < g.rows; ++cy) {
      for (int cx = 0; cx < g.cols; ++cx) {
        const CellStats s = cell_stats(image, cx, cy);
        const double p = sigmoid(s.logit);
        const double dp = p * (1.0 - p);
        const int x0 = cx * params_.cell, y0 = cy * params_.cell;
        const int x1 = std::min(image.width, x0 + params_.cell);
        const int y1 = std::min(image.height, y0 + params_.cell);
        for (int y = y0; y < y1; ++y) {
          for (int x = x0; x < x1; ++x) {
            const double parity = ((x + y) & 1) ? -1.0 : 1.0;
            for (int c = 0; c < 3; ++c) {
              const double dl = 2.0 * params_.gain * s.f[c] / s.n +
                                params_.texture_gain * weights_[c] * parity;
              out[image.index(x, y) + c] = static_cast<float>(dp * dl);
            }
          }
        }
      }
    }
    return out;
  }

 private:
  struct Grid {
    int cols, rows;
  };
  struct CellStats {
    double logit;
    std::array<double, 3> f;
    double n;
  };

  static double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

  Grid grid(const Image& image) const {
    return {(image.width + params_.cell - 1) / params_.cell,
            (image.height + params_.cell - 1) / params_.cell};
  }

  CellStats cell_stats(const Image& image, int cx, int cy) const {
    const int x0 = cx * params_.cell, y0 = cy * params_.cell;
    const int x1 = std::min(image.width, x0 + params_.cell);
    const int y1 = std::min(image.height, y0 + params_.cell);
    std::array<double, 3> f{0, 0, 0};
    double texture = 0.0;
    for (int y = y0; y < y1; ++y) {
      for (int x = x0; x < x1; ++x) {
        const std::uint8_t* px = image.at(x, y);
        const double v[3] = {px[0] / 255.0, px[1] / 255.0, px[2] / 255.0};
        const double mean = (v[0] + v[1] + v[2]) / 3.0;
        const double parity = ((x + y) & 1) ? -1.0 : 1.0;
        for (int c = 0; c < 3; ++c) {
          f[c] += v[c] - mean;
          texture += weights_[c] * parity * v[c];
        }
      }
    }
    const double n = static_cast<double>(x1 - x0) * (y1 - y0);
    double chroma = 0.0;
    for (auto& fc : f) {
      fc /= n;
      chroma += fc * fc;
    }
    return {params_.gain * (chroma - params_.tau) + params_.texture_gain * texture, f, n};
  }

  Params params_;
  std::array<double, 3> weights_{};
};

/// Deterministic implementation of every role; reentrant.
class MockBackend : public Backend {
 public:
  struct Options {
    std::size_t embed_dim = kDefaultEmbeddingDim;
    int min_body_area = 16;
    int edge_threshold = 128;
    ConvPersonDetector::Params detector{};
  };

  explicit MockBackend(std::uint64_t seed) : MockBackend(seed, Options{}) {}
  MockBackend(std::uint64_t seed, Options options)
      : seed_(seed), options_(options), detector_(seed, options.detector) {}

  std::uint64_t seed() const { return seed_; }
  const Options& options() const { return options_; }

  /// Connected components (4-neighbour) of pixels with HSV saturation > 0.5.
  SegmentResponse segment(const SegmentRequest& req) override {
    const Image& im = req.image;
    std::vector<char> sat(static_cast<std::size_t>(im.width) * im.height, 0);
    for (int y = 0; y < im.height; ++y)
      for (int x = 0; x < im.width; ++x)
        sat[static_cast<std::size_t>(y) * im.width + x] = mock::saturation(im.at(x, y)) > 0.5;

    SegmentResponse resp;
    std::vector<char> seen(sat.size(), 0);
    for (int y = 0; y < im.height; ++y) {
      for (int x = 0; x < im.width; ++x) {
        const std::size_t start = static_cast<std::size_t>(y) * im.width + x;
        if (!sat[start] || seen[start]) continue;
        BinaryMask mask(im.width, im.height);
        double sat_sum = 0.0;
        int area = 0;
        std::deque<std::pair<int, int>> queue{{x, y}};
        seen[start] = 1;
        while (!queue.empty()) {
          auto [qx, qy] = queue.front();
          queue.pop_front();
          mask.set(qx, qy);
          sat_sum += mock::saturation(im.at(qx, qy));
          ++area;
          static constexpr int dx[] = {1, -1, 0, 0}, dy[] = {0, 0, 1, -1};
          for (int k = 0; k < 4; ++k) {
            const int nx = qx + dx[k], ny = qy + dy[k];
            if (nx < 0 || ny < 0 || nx >= im.width || ny >= im.height) continue;
            const std::size_t ni = static_cast<std::size_t>(ny) * im.width + nx;
            if (!sat[ni] || seen[ni]) continue;
            seen[ni] = 1;
            queue.emplace_back(nx, ny);
          }
        }
        if (area < options_.min_body_area) continue;
        resp.bodies.push_back({mask, mask_to_bbox(mask), std::clamp(sat_sum / area, 0.0, 1.0)});
      }
    }
    return resp;
  }

  /// 18 keypoints on a 3 x 6 grid inside the box.
  PoseResponse pose(const PoseRequest& req) override {
    PoseResponse resp;
    const auto& b = req.bbox;
    for (std::size_t i = 0; i < kPoseKeypoints; ++i) {
      const int col = static_cast<int>(i % 3), row = static_cast<int>(i / 3);
      resp.keypoints[i] = {b.x + b.w * (col + 1) / 4.0, b.y + b.h * (row + 1) / 7.0, 1.0};
    }
    return resp;
  }

  /// Sobel magnitude of luma, thresholded to a white-on-black map.
  EdgesResponse edges(const EdgesRequest& req) override {
    const Image& im = req.image;
    auto luma = [&](int x, int y) {
      x = std::clamp(x, 0, im.width - 1);
      y = std::clamp(y, 0, im.height - 1);
      const auto* p = im.at(x, y);
      return (77 * p[0] + 150 * p[1] + 29 * p[2]) >> 8;
    };
    Image out(im.width, im.height);
    for (int y = 0; y < im.height; ++y) {
      for (int x = 0; x < im.width; ++x) {
        const int gx = -luma(x - 1, y - 1) - 2 * luma(x - 1, y) - luma(x - 1, y + 1) +
                       luma(x + 1, y - 1) + 2 * luma(x + 1, y) + luma(x + 1, y + 1);
        const int gy = -luma(x - 1, y - 1) - 2 * luma(x, y - 1) - luma(x + 1, y - 1) +
                       luma(x - 1, y + 1) + 2 * luma(x, y + 1) + luma(x + 1, y + 1);
        const double mag = std::sqrt(static_cast<double>(gx) * gx + static_cast<double>(gy) * gy);
        if (mag > options_.edge_threshold) std::fill_n(out.at(x, y), 3, std::uint8_t{255});
      }
    }
    return {out};
  }

  /// Keyed BLAKE2b of (width, height, pixels). The first 8 digest bytes
  /// (little endian) pick the activity (mod 4) and seed a mt19937_64 whose
  /// outputs, mapped to [-1, 1), form the embedding before normalisation.
  EmbedResponse embed(const EmbedRequest& req) override {
    Hasher h(mock::role_key(seed_, "embed"));
    mock::hash_image(h, req.image);
    const std::uint64_t code = h.finish_u64();
    std::mt19937_64 rng(code);
    std::vector<double> raw(options_.embed_dim);
    for (auto& v : raw) v = static_cast<double>(rng() >> 11) * 0x1.0p-53 * 2.0 - 1.0;
    return {EmbeddingVector::normalized(raw), "mock-activity-" + std::to_string(code % 4)};
  }

  ImageResponse inpaint(const InpaintRequest& req) override {
    Hasher h(mock::role_key(seed_, "inpaint"));
    mock::hash_image(h, req.image);
    mock::hash_mask(h, req.mask);
    h.update_u64(req.seed);
    return {mock::fill_texture(req.image, req.mask, h.finish_u64())};
  }

  ImageResponse generate(const GenerationRequest& req) override {
    Hasher h(mock::role_key(seed_, "generate"));
    mock::hash_image(h, req.masked_image);
    mock::hash_mask(h, req.mask);
    mock::hash_image(h, req.pose_map);
    mock::hash_image(h, req.edge_map);
    mock::hash_embedding(h, req.guide_embedding);
    h.update_u64(static_cast<std::uint64_t>(req.steps));
    h.update_u64(req.seed);
    return {mock::fill_texture(req.masked_image, req.mask, h.finish_u64())};
  }

  /// Mirror, channel rotation and a keyed offset.
  ImageResponse faceswap(const FaceSwapRequest& req) override {
    Hasher h(mock::role_key(seed_, "faceswap"));
    mock::hash_image(h, req.image);
    mock::hash_embedding(h, req.guide_embedding);
    h.update(req.guide_id);
    h.update_u64(req.seed);
    const std::uint64_t k = h.finish_u64();
    const int rot = 1 + static_cast<int>(k % 2);
    const int offset = 64 + static_cast<int>((k >> 8) % 64);
    const Image& in = req.image;
    Image out(in.width, in.height);
    for (int y = 0; y < in.height; ++y)
      for (int x = 0; x < in.width; ++x)
        for (int c = 0; c < 3; ++c)
          out.at(x, y)[c] =
              static_cast<std::uint8_t>((in.at(in.width - 1 - x, y)[(c + rot) % 3] + offset) & 0xFF);
    return {out};
  }

  /// Keyed contrast stretch around mid-gray.
  ImageResponse enhance(const EnhanceRequest& req) override {
    Hasher h(mock::role_key(seed_, "enhance"));
    mock::hash_image(h, req.image);
    h.update_u64(req.seed);
    const double gain = 1.05 + static_cast<double>(h.finish_u64() % 11) / 100.0;
    Image out = req.image;
    for (auto& v : out.pixels) {
      v = static_cast<std::uint8_t>(std::clamp<long>(std::lround((v - 128.0) * gain + 128.0), 0, 255));
    }
    return {out};
  }

  DetectResponse detect(const DetectRequest& req) override {
    return {detector_.score(req.image)};
  }

  GradResponse detect_grad(const DetectRequest& req) override {
    return {req.image.width, req.image.height, detector_.grad(req.image)};
  }

  ConvPersonDetector& detector() { return detector_; }

 private:
  std::uint64_t seed_;
  Options options_;
  ConvPersonDetector detector_;
};

}  // namespace mbmc
