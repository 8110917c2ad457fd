#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mbmc/error.hpp"

namespace mbmc {

// Coordinates are x = column, y = row, origin at the top-left pixel.

/// 8-bit RGB image, row-major, channels interleaved.
namespace detail {
inline std::size_t checked_area(int w, int h, const char* what) {
  if (w <= 0 || h <= 0) throw ArgumentError(std::string(what) + " dimensions must be positive");
  return static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
}
}  // namespace detail

struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  static constexpr int kChannels = 3;

  Image() = default;
  Image(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), pixels(detail::checked_area(w, h, "image") * kChannels, fill) {}

  std::size_t index(int x, int y) const {
    return (static_cast<std::size_t>(y) * width + x) * kChannels;
  }
  std::uint8_t* at(int x, int y) { return pixels.data() + index(x, y); }
  const std::uint8_t* at(int x, int y) const { return pixels.data() + index(x, y); }

  bool valid() const {
    return width > 0 && height > 0 &&
           pixels.size() == static_cast<std::size_t>(width) * height * kChannels;
  }

  friend bool operator==(const Image&, const Image&) = default;
};

/// One boolean per pixel, stored as 0/1 bytes.
struct BinaryMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits;

  BinaryMask() = default;
  BinaryMask(int w, int h, bool fill = false)
      : width(w), height(h), bits(detail::checked_area(w, h, "mask"), fill ? 1 : 0) {}

  bool get(int x, int y) const { return bits[static_cast<std::size_t>(y) * width + x] != 0; }
  void set(int x, int y, bool v = true) {
    bits[static_cast<std::size_t>(y) * width + x] = v ? 1 : 0;
  }

  std::size_t count() const {
    return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
  }
  bool empty() const { return std::none_of(bits.begin(), bits.end(), [](auto b) { return b != 0; }); }

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;
};

struct BoundingBox {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;

  int right() const { return x + w; }
  int bottom() const { return y + h; }
  long long area() const { return static_cast<long long>(w) * h; }

  bool inside(int width, int height) const {
    return w > 0 && h > 0 && x >= 0 && y >= 0 && right() <= width && bottom() <= height;
  }

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

inline long long intersection_area(const BoundingBox& a, const BoundingBox& b) {
  const int ix = std::max(0, std::min(a.right(), b.right()) - std::max(a.x, b.x));
  const int iy = std::max(0, std::min(a.bottom(), b.bottom()) - std::max(a.y, b.y));
  return static_cast<long long>(ix) * iy;
}

inline double iou(const BoundingBox& a, const BoundingBox& b) {
  const long long inter = intersection_area(a, b);
  const long long uni = a.area() + b.area() - inter;
  return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

namespace detail {

inline void require_same_size(int w1, int h1, int w2, int h2, const char* what) {
  if (w1 != w2 || h1 != h2) {
    throw ArgumentError(std::string(what) + ": dimension mismatch (" + std::to_string(w1) +
                        "x" + std::to_string(h1) + " vs " + std::to_string(w2) + "x" +
                        std::to_string(h2) + ")");
  }
}

// One pass of square dilation, separable into a row max and a column max.
inline BinaryMask dilate_once(const BinaryMask& in, int radius) {
  const int w = in.width, h = in.height;
  BinaryMask rows(w, h);
  for (int y = 0; y < h; ++y) {
    // distance to the last set pixel seen while scanning; forward then backward
    int last = -1'000'000;
    for (int x = 0; x < w; ++x) {
      if (in.get(x, y)) last = x;
      if (x - last <= radius) rows.set(x, y);
    }
    last = 1'000'000;
    for (int x = w - 1; x >= 0; --x) {
      if (in.get(x, y)) last = x;
      if (last - x <= radius) rows.set(x, y);
    }
  }
  BinaryMask out(w, h);
  for (int x = 0; x < w; ++x) {
    int last = -1'000'000;
    for (int y = 0; y < h; ++y) {
      if (rows.get(x, y)) last = y;
      if (y - last <= radius) out.set(x, y);
    }
    last = 1'000'000;
    for (int y = h - 1; y >= 0; --y) {
      if (rows.get(x, y)) last = y;
      if (last - y <= radius) out.set(x, y);
    }
  }
  return out;
}

}  // namespace detail

/// Morphological dilation with a (2*radius+1)^2 square structuring element,
/// repeated `iterations` times. Pixels beyond the image border are ignored.
inline BinaryMask dilate(const BinaryMask& mask, int radius, int iterations = 1) {
  if (radius < 1) throw ArgumentError("dilate: radius must be >= 1");
  if (iterations < 1) throw ArgumentError("dilate: iterations must be >= 1");
  BinaryMask out = mask;
  for (int i = 0; i < iterations; ++i) out = detail::dilate_once(out, radius);
  return out;
}

/// Margin that scales with body size: max(3, round(0.02 * longest bbox side)).
inline int default_dilation_radius(const BoundingBox& body_box) {
  const double side = std::max(body_box.w, body_box.h);
  return std::max(3, static_cast<int>(std::lround(0.02 * side)));
}

/// patch where mask is set, base elsewhere.
inline Image composite(const Image& base, const Image& patch, const BinaryMask& mask) {
  detail::require_same_size(base.width, base.height, patch.width, patch.height, "composite");
  detail::require_same_size(base.width, base.height, mask.width, mask.height, "composite");
  Image out = base;
  for (int y = 0; y < base.height; ++y) {
    for (int x = 0; x < base.width; ++x) {
      if (!mask.get(x, y)) continue;
      std::copy_n(patch.at(x, y), Image::kChannels, out.at(x, y));
    }
  }
  return out;
}

/// Like composite, but pixels within `feather` steps of the mask border are
/// linearly blended. Pixels outside the mask are still taken from base.
inline Image composite_feathered(const Image& base, const Image& patch, const BinaryMask& mask,
                                 int feather = 2) {
  if (feather <= 0) return composite(base, patch, mask);
  detail::require_same_size(base.width, base.height, patch.width, patch.height, "composite");
  detail::require_same_size(base.width, base.height, mask.width, mask.height, "composite");
  const int w = mask.width, h = mask.height;
  // depth[i] = number of erosions the pixel survives, capped at feather + 1
  std::vector<int> depth(mask.bits.size(), 0);
  BinaryMask cur = mask;
  for (int level = 1; level <= feather + 1; ++level) {
    BinaryMask next(w, h);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (!cur.get(x, y)) continue;
        depth[static_cast<std::size_t>(y) * w + x] = level;
        bool interior = true;
        for (int dy = -1; dy <= 1 && interior; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int nx = x + dx, ny = y + dy;
            if (nx < 0 || ny < 0 || nx >= w || ny >= h || !cur.get(nx, ny)) {
              interior = false;
              break;
            }
          }
        }
        if (interior) next.set(x, y);
      }
    }
    cur = std::move(next);
  }
  Image out = base;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int d = depth[static_cast<std::size_t>(y) * w + x];
      if (d == 0) continue;
      const double alpha = std::min(1.0, static_cast<double>(d) / (feather + 1));
      for (int c = 0; c < Image::kChannels; ++c) {
        const double v = alpha * patch.at(x, y)[c] + (1.0 - alpha) * base.at(x, y)[c];
        out.at(x, y)[c] = static_cast<std::uint8_t>(std::lround(v));
      }
    }
  }
  return out;
}

inline Image crop(const Image& image, const BoundingBox& box) {
  if (!box.inside(image.width, image.height)) {
    throw ArgumentError("crop: box (" + std::to_string(box.x) + "," + std::to_string(box.y) +
                        "," + std::to_string(box.w) + "," + std::to_string(box.h) +
                        ") outside image");
  }
  Image out(box.w, box.h);
  const std::size_t row_bytes = static_cast<std::size_t>(box.w) * Image::kChannels;
  for (int y = 0; y < box.h; ++y) {
    std::copy_n(image.at(box.x, box.y + y), row_bytes, out.at(0, y));
  }
  return out;
}

inline BinaryMask crop(const BinaryMask& mask, const BoundingBox& box) {
  if (!box.inside(mask.width, mask.height)) throw ArgumentError("crop: box outside mask");
  BinaryMask out(box.w, box.h);
  for (int y = 0; y < box.h; ++y)
    for (int x = 0; x < box.w; ++x) out.set(x, y, mask.get(box.x + x, box.y + y));
  return out;
}

/// Writes `patch` into `image` with its top-left corner at the box origin.
inline void paste(Image& image, const Image& patch, const BoundingBox& box) {
  if (!box.inside(image.width, image.height) || patch.width != box.w || patch.height != box.h) {
    throw ArgumentError("paste: patch does not fit box");
  }
  const std::size_t row_bytes = static_cast<std::size_t>(box.w) * Image::kChannels;
  for (int y = 0; y < box.h; ++y) {
    std::copy_n(patch.at(0, y), row_bytes, image.at(box.x, box.y + y));
  }
}

inline BoundingBox mask_to_bbox(const BinaryMask& mask) {
  int min_x = mask.width, min_y = mask.height, max_x = -1, max_y = -1;
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      if (!mask.get(x, y)) continue;
      min_x = std::min(min_x, x);
      max_x = std::max(max_x, x);
      min_y = std::min(min_y, y);
      max_y = std::max(max_y, y);
    }
  }
  if (max_x < 0) throw EmptyMaskError("mask_to_bbox: mask has no set pixels");
  return {min_x, min_y, max_x - min_x + 1, max_y - min_y + 1};
}

inline BinaryMask union_masks(std::span<const BinaryMask> masks) {
  if (masks.empty()) throw ArgumentError("union_masks: empty list");
  BinaryMask out(masks.front().width, masks.front().height);
  for (const auto& m : masks) {
    detail::require_same_size(out.width, out.height, m.width, m.height, "union_masks");
    for (std::size_t i = 0; i < out.bits.size(); ++i) out.bits[i] |= m.bits[i];
  }
  return out;
}

inline BinaryMask intersect_masks(const BinaryMask& a, const BinaryMask& b) {
  detail::require_same_size(a.width, a.height, b.width, b.height, "intersect_masks");
  BinaryMask out(a.width, a.height);
  for (std::size_t i = 0; i < out.bits.size(); ++i) out.bits[i] = a.bits[i] & b.bits[i];
  return out;
}

inline BinaryMask box_mask(int width, int height, const BoundingBox& box) {
  BinaryMask out(width, height);
  const int x0 = std::max(0, box.x), y0 = std::max(0, box.y);
  const int x1 = std::min(width, box.right()), y1 = std::min(height, box.bottom());
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) out.set(x, y);
  return out;
}

/// Sets every pixel under the mask to zero.
inline Image zero_masked(const Image& image, const BinaryMask& mask) {
  detail::require_same_size(image.width, image.height, mask.width, mask.height, "zero_masked");
  Image out = image;
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      if (mask.get(x, y)) std::fill_n(out.at(x, y), Image::kChannels, std::uint8_t{0});
  return out;
}

}  // namespace mbmc
