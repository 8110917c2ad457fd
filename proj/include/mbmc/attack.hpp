#pragma once

// Adversarial removal: iterative objectness-vanishing perturbation against a
// differentiable person detector (sign-gradient descent with L-inf projection).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "mbmc/error.hpp"
#include "mbmc/raster.hpp"

namespace mbmc {

struct Detection {
  BoundingBox box;
  double objectness = 0.0;

  friend bool operator==(const Detection&, const Detection&) = default;
};

/// Person detector seen by the attack. grad() returns d(total person
/// objectness)/d(pixel) for pixels normalised to [0, 1], laid out like
/// Image::pixels (row-major, 3 interleaved channels).
class DetectorInterface {
 public:
  virtual ~DetectorInterface() = default;
  virtual std::vector<Detection> score(const Image& image) = 0;
  virtual std::vector<float> grad(const Image& image) = 0;
};

struct AttackConfig {
  double epsilon = 8.0 / 255.0;
  double alpha = 1.0 / 255.0;
  int max_iters = 200;
  double stop_threshold = 0.25;

  void validate() const {
    if (!(alpha > 0.0) || alpha > epsilon) throw ArgumentError("attack: need 0 < alpha <= epsilon");
    if (max_iters < 1) throw ArgumentError("attack: max_iters must be >= 1");
    if (stop_threshold < 0.0 || stop_threshold > 1.0) {
      throw ArgumentError("attack: stop_threshold must lie in [0, 1]");
    }
  }
};

struct AdversarialResult {
  Image image;
  int iterations_used = 0;
  double final_max_objectness = 0.0;
  double linf_used = 0.0;
};

/// Which detections the attack must suppress. With no boxes and no region
/// every detection counts.
struct AttackTargets {
  std::optional<BinaryMask> region;  // perturbation support; whole image when empty
  std::vector<BoundingBox> boxes;    // bodies whose detections must vanish
};

/// A detection belongs to a target body when IoU > 0.5, or when more than
/// half of the detection lies inside the body box (fragments left over while
/// a detection is being suppressed).
inline bool detection_hits_body(const BoundingBox& det, const BoundingBox& body) {
  if (iou(det, body) > 0.5) return true;
  const long long a = det.area();
  return a > 0 && static_cast<double>(intersection_area(det, body)) / static_cast<double>(a) > 0.5;
}

namespace detail {

inline bool box_touches_mask(const BoundingBox& box, const BinaryMask& mask) {
  const int x0 = std::max(0, box.x), y0 = std::max(0, box.y);
  const int x1 = std::min(mask.width, box.right()), y1 = std::min(mask.height, box.bottom());
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x)
      if (mask.get(x, y)) return true;
  return false;
}

inline double max_target_objectness(const std::vector<Detection>& dets,
                                    const AttackTargets& targets) {
  double best = 0.0;
  for (const auto& d : dets) {
    bool relevant = true;
    if (!targets.boxes.empty()) {
      relevant = std::any_of(targets.boxes.begin(), targets.boxes.end(),
                             [&](const BoundingBox& b) { return detection_hits_body(d.box, b); });
    } else if (targets.region) {
      relevant = box_touches_mask(d.box, *targets.region);
    }
    if (relevant) best = std::max(best, d.objectness);
  }
  return best;
}

}  // namespace detail

/// Drives the objectness of targeted detections below cfg.stop_threshold.
///
/// x <- clip(x - alpha * sign(grad(x))), clipped to the epsilon L-inf ball
/// around the input and to [0, 1]. The detector always sees the quantised
/// 8-bit image, which is also what is returned; quantisation never leaves
/// the budget: values are clamped to floor(epsilon * 255) levels.
inline AdversarialResult vanish_attack(const Image& image, DetectorInterface& detector,
                                       const AttackConfig& cfg,
                                       const AttackTargets& targets = {}) {
  cfg.validate();
  if (!image.valid()) throw ArgumentError("vanish_attack: invalid image");
  if (targets.region &&
      (targets.region->width != image.width || targets.region->height != image.height)) {
    throw ArgumentError("vanish_attack: target region size differs from image");
  }
  const int level_budget = static_cast<int>(std::floor(cfg.epsilon * 255.0 + 1e-9));
  const std::size_t n = image.pixels.size();

  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = image.pixels[i] / 255.0;

  auto quantise = [&](const std::vector<double>& v) {
    Image q = image;
    for (std::size_t i = 0; i < n; ++i) {
      const int orig = image.pixels[i];
      int level = static_cast<int>(std::lround(v[i] * 255.0));
      level = std::clamp(level, orig - level_budget, orig + level_budget);
      q.pixels[i] = static_cast<std::uint8_t>(std::clamp(level, 0, 255));
    }
    return q;
  };

  AdversarialResult result;
  result.image = image;
  result.final_max_objectness = detail::max_target_objectness(detector.score(image), targets);
  if (result.final_max_objectness < cfg.stop_threshold) return result;

  for (int it = 1; it <= cfg.max_iters; ++it) {
    const std::vector<float> g = detector.grad(result.image);
    if (g.size() != n) throw BackendError("detect", "gradient size does not match image");
    for (std::size_t i = 0; i < n; ++i) {
      if (targets.region) {
        const std::size_t pixel = i / Image::kChannels;
        if (!targets.region->bits[pixel]) continue;
      }
      const double s = g[i] > 0.0f ? 1.0 : (g[i] < 0.0f ? -1.0 : 0.0);
      const double x0 = image.pixels[i] / 255.0;
      double v = x[i] - cfg.alpha * s;
      v = std::clamp(v, x0 - cfg.epsilon, x0 + cfg.epsilon);
      x[i] = std::clamp(v, 0.0, 1.0);
    }
    result.image = quantise(x);
    result.iterations_used = it;
    result.final_max_objectness =
        detail::max_target_objectness(detector.score(result.image), targets);
    if (result.final_max_objectness < cfg.stop_threshold) break;
  }

  int max_delta = 0;
  for (std::size_t i = 0; i < n; ++i) {
    max_delta = std::max(max_delta, std::abs(int(result.image.pixels[i]) - int(image.pixels[i])));
  }
  result.linf_used = max_delta / 255.0;
  return result;
}

}  // namespace mbmc
