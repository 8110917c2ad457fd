#pragma once

// Image/mask codecs (PNG via libpng, JPEG decode via libjpeg), base64 and
// keyed content hashing (libsodium). Link: PNG::PNG JPEG::JPEG sodium.

#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <jpeglib.h>
#include <png.h>
#include <sodium.h>

#include "mbmc/error.hpp"
#include "mbmc/raster.hpp"

namespace mbmc {

using Bytes = std::vector<std::uint8_t>;

namespace detail {

inline void ensure_sodium() {
  static const bool ok = sodium_init() >= 0;
  if (!ok) throw Error(ErrorKind::Config, "libsodium initialisation failed");
}

inline Bytes png_write(int width, int height, png_uint_32 format, const std::uint8_t* data) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(width);
  img.height = static_cast<png_uint_32>(height);
  img.format = format;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, data, 0, nullptr)) {
    throw IoError(std::string("png encode: ") + img.message);
  }
  Bytes out(size);
  if (!png_image_write_to_memory(&img, out.data(), &size, 0, data, 0, nullptr)) {
    throw IoError(std::string("png encode: ") + img.message);
  }
  out.resize(size);
  return out;
}

// Returns width/height and fills `out` with pixels converted to `format`.
inline void png_read(std::span<const std::uint8_t> bytes, png_uint_32 format, int& width,
                     int& height, std::vector<std::uint8_t>& out) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
    throw ParseError(std::string("png decode: ") + img.message);
  }
  img.format = format;
  out.resize(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, out.data(), 0, nullptr)) {
    png_image_free(&img);
    throw ParseError(std::string("png decode: ") + img.message);
  }
  width = static_cast<int>(img.width);
  height = static_cast<int>(img.height);
}

struct JpegErrorJump {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
};

inline void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorJump*>(cinfo->err);
  std::longjmp(err->jump, 1);
}

}  // namespace detail

inline bool looks_like_png(std::span<const std::uint8_t> bytes) {
  static constexpr std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  return bytes.size() >= 8 && std::equal(sig, sig + 8, bytes.begin());
}

inline bool looks_like_jpeg(std::span<const std::uint8_t> bytes) {
  return bytes.size() >= 3 && bytes[0] == 0xFF && bytes[1] == 0xD8 && bytes[2] == 0xFF;
}

inline Bytes encode_png(const Image& image) {
  if (!image.valid()) throw ArgumentError("encode_png: invalid image");
  return detail::png_write(image.width, image.height, PNG_FORMAT_RGB, image.pixels.data());
}

/// Single-channel PNG, 0 for unset and 255 for set pixels.
inline Bytes encode_mask_png(const BinaryMask& mask) {
  std::vector<std::uint8_t> gray(mask.bits.size());
  for (std::size_t i = 0; i < gray.size(); ++i) gray[i] = mask.bits[i] ? 255 : 0;
  return detail::png_write(mask.width, mask.height, PNG_FORMAT_GRAY, gray.data());
}

inline Image decode_png(std::span<const std::uint8_t> bytes) {
  Image out;
  detail::png_read(bytes, PNG_FORMAT_RGB, out.width, out.height, out.pixels);
  return out;
}

/// Any pixel >= 128 counts as set.
inline BinaryMask decode_mask_png(std::span<const std::uint8_t> bytes) {
  int w = 0, h = 0;
  std::vector<std::uint8_t> gray;
  detail::png_read(bytes, PNG_FORMAT_GRAY, w, h, gray);
  BinaryMask mask(w, h);
  for (std::size_t i = 0; i < gray.size(); ++i) mask.bits[i] = gray[i] >= 128 ? 1 : 0;
  return mask;
}

inline Image decode_jpeg(std::span<const std::uint8_t> bytes) {
  jpeg_decompress_struct cinfo{};
  detail::JpegErrorJump err{};
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = detail::jpeg_error_exit;
  // No C++ objects with destructors may be live across the setjmp boundary.
  Image* result = new Image();
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    delete result;
    throw ParseError("jpeg decode failed");
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  result->width = static_cast<int>(cinfo.output_width);
  result->height = static_cast<int>(cinfo.output_height);
  result->pixels.resize(static_cast<std::size_t>(result->width) * result->height * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = result->pixels.data() +
                   static_cast<std::size_t>(cinfo.output_scanline) * result->width * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  Image out = std::move(*result);
  delete result;
  return out;
}

/// Decodes PNG or JPEG by sniffing the signature.
inline Image decode_image(std::span<const std::uint8_t> bytes) {
  if (looks_like_png(bytes)) return decode_png(bytes);
  if (looks_like_jpeg(bytes)) return decode_jpeg(bytes);
  throw ParseError("unrecognised image format (expected PNG or JPEG)");
}

inline std::string base64_encode(std::span<const std::uint8_t> bytes) {
  detail::ensure_sodium();
  const auto variant = sodium_base64_VARIANT_ORIGINAL;
  std::string out(sodium_base64_ENCODED_LEN(bytes.size(), variant), '\0');
  sodium_bin2base64(out.data(), out.size(), bytes.data(), bytes.size(), variant);
  out.resize(out.size() - 1);  // trailing NUL
  return out;
}

inline Bytes base64_decode(std::string_view text) {
  detail::ensure_sodium();
  Bytes out(text.size() / 4 * 3 + 3);
  std::size_t len = 0;
  if (sodium_base642bin(out.data(), out.size(), text.data(), text.size(), nullptr, &len,
                        nullptr, sodium_base64_VARIANT_ORIGINAL) != 0) {
    throw ParseError("invalid base64 payload");
  }
  out.resize(len);
  return out;
}

/// BLAKE2b digest of `data`, optionally keyed.
inline Bytes digest(std::span<const std::uint8_t> data, std::span<const std::uint8_t> key = {},
                    std::size_t out_len = 32) {
  detail::ensure_sodium();
  Bytes out(out_len);
  crypto_generichash(out.data(), out.size(), data.data(), data.size(),
                     key.empty() ? nullptr : key.data(), key.size());
  return out;
}

inline std::string to_hex(std::span<const std::uint8_t> bytes) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (auto b : bytes) {
    out.push_back(kHex[b >> 4]);
    out.push_back(kHex[b & 0xF]);
  }
  return out;
}

/// Incremental keyed digest, for hashing several fields without concatenating them.
class Hasher {
 public:
  explicit Hasher(std::span<const std::uint8_t> key = {}, std::size_t out_len = 32)
      : out_len_(out_len) {
    detail::ensure_sodium();
    crypto_generichash_init(&state_, key.empty() ? nullptr : key.data(), key.size(), out_len);
  }

  Hasher& update(std::span<const std::uint8_t> data) {
    crypto_generichash_update(&state_, data.data(), data.size());
    return *this;
  }
  Hasher& update(std::string_view s) {
    return update({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()});
  }
  Hasher& update_u64(std::uint64_t v) {
    std::uint8_t buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<std::uint8_t>(v >> (8 * i));
    return update(buf);
  }

  Bytes finish() {
    Bytes out(out_len_);
    crypto_generichash_final(&state_, out.data(), out.size());
    return out;
  }

  std::uint64_t finish_u64() {
    const Bytes d = finish();
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(d[i]) << (8 * i);
    return v;
  }

 private:
  crypto_generichash_state state_{};
  std::size_t out_len_;
};

inline std::uint64_t key_from_seed(std::uint64_t seed, std::string_view domain) {
  return Hasher().update(domain).update_u64(seed).finish_u64();
}

}  // namespace mbmc
