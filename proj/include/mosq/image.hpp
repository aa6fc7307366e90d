#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include <png.h>

#include "mosq/core.hpp"

namespace mosq {

/// Pixel value domain. Byte images hold [0,255] values, Unit images [0,1].
enum class Scale { Byte, Unit };

/// H x W x 3 interleaved RGB grid, row-major.
///
/// Byte images coming out of decode/resize/gain hold integral values. The
/// denoiser is the one producer of fractional Byte values; encode() rounds.
struct ImageTensor {
  static constexpr int channels = 3;

  int height = 0;
  int width = 0;
  Scale scale = Scale::Byte;
  std::vector<float> data;

  ImageTensor() = default;
  ImageTensor(int h, int w, Scale s = Scale::Byte, float fill = 0.0f)
      : height(h), width(w), scale(s), data(static_cast<std::size_t>(h) * w * 3, fill) {
    if (h < 0 || w < 0) throw Error(ErrorKind::ShapeMismatch, "negative image size");
  }

  bool empty() const { return height == 0 || width == 0; }
  std::size_t index(int y, int x, int c = 0) const {
    return (static_cast<std::size_t>(y) * width + x) * 3 + c;
  }
  float& at(int y, int x, int c) { return data[index(y, x, c)]; }
  float at(int y, int x, int c) const { return data[index(y, x, c)]; }

  void set_pixel(int y, int x, float r, float g, float b) {
    auto i = index(y, x);
    data[i] = r;
    data[i + 1] = g;
    data[i + 2] = b;
  }

  bool operator==(const ImageTensor&) const = default;
};

struct ResizePolicy {
  int target_h = 299;
  int target_w = 299;
  enum class Filter { Bilinear } filter = Filter::Bilinear;
};

// ---------------------------------------------------------------------------
// Byte conversion

inline std::uint8_t to_byte(float v, Scale s) {
  double x = s == Scale::Unit ? static_cast<double>(v) * 255.0 : static_cast<double>(v);
  return static_cast<std::uint8_t>(std::clamp(std::lround(x), 0L, 255L));
}

/// Packed 8-bit RGB bytes of the image (rounded and clamped).
inline std::vector<std::uint8_t> to_rgb8(const ImageTensor& img) {
  std::vector<std::uint8_t> out(img.data.size());
  std::transform(img.data.begin(), img.data.end(), out.begin(),
                 [&](float v) { return to_byte(v, img.scale); });
  return out;
}

inline ImageTensor from_rgb8(int h, int w, std::span<const std::uint8_t> rgb) {
  if (rgb.size() != static_cast<std::size_t>(h) * w * 3) {
    throw Error(ErrorKind::ShapeMismatch, "rgb buffer length does not match dimensions");
  }
  ImageTensor img(h, w, Scale::Byte);
  std::copy(rgb.begin(), rgb.end(), img.data.begin());
  return img;
}

/// SHA-256 of the decoded 8-bit pixel bytes; used as image_id.
inline std::string content_digest(const ImageTensor& img) {
  auto rgb = to_rgb8(img);
  std::string header = std::to_string(img.height) + "x" + std::to_string(img.width) + ":";
  std::vector<std::uint8_t> buf(header.begin(), header.end());
  buf.insert(buf.end(), rgb.begin(), rgb.end());
  return sha256_hex(buf);
}

// ---------------------------------------------------------------------------
// Codecs

namespace detail {

inline bool is_png(std::span<const std::uint8_t> b) {
  static constexpr std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  return b.size() >= 8 && std::memcmp(b.data(), sig, 8) == 0;
}

inline ImageTensor decode_ppm(std::span<const std::uint8_t> b) {
  std::size_t pos = 2;
  auto skip_ws = [&] {
    while (pos < b.size()) {
      if (b[pos] == '#') {
        while (pos < b.size() && b[pos] != '\n') ++pos;
      } else if (std::isspace(b[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&]() -> long {
    skip_ws();
    if (pos >= b.size() || !std::isdigit(b[pos])) {
      throw Error(ErrorKind::DecodeError, "malformed PPM header");
    }
    long v = 0;
    while (pos < b.size() && std::isdigit(b[pos])) {
      v = v * 10 + (b[pos++] - '0');
      if (v > 1'000'000) throw Error(ErrorKind::DecodeError, "PPM header value too large");
    }
    return v;
  };
  const long w = read_int();
  const long h = read_int();
  const long maxval = read_int();
  if (w <= 0 || h <= 0) throw Error(ErrorKind::DecodeError, "PPM dimensions must be positive");
  if (maxval != 255) throw Error(ErrorKind::DecodeError, "only 8-bit PPM (maxval 255) supported");
  if (pos >= b.size() || !std::isspace(b[pos])) {
    throw Error(ErrorKind::DecodeError, "malformed PPM header");
  }
  ++pos;
  const std::size_t need = static_cast<std::size_t>(w) * h * 3;
  if (b.size() - pos < need) throw Error(ErrorKind::DecodeError, "truncated PPM payload");
  return from_rgb8(static_cast<int>(h), static_cast<int>(w), b.subspan(pos, need));
}

inline ImageTensor decode_png(std::span<const std::uint8_t> b) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, b.data(), b.size())) {
    std::string msg = image.message;
    png_image_free(&image);
    throw Error(ErrorKind::DecodeError, "PNG: " + msg);
  }
  // Read as RGBA so grayscale is replicated and alpha can be dropped without compositing.
  image.format = PNG_FORMAT_RGBA;
  std::vector<std::uint8_t> rgba(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, rgba.data(), 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    throw Error(ErrorKind::DecodeError, "PNG: " + msg);
  }
  const int h = static_cast<int>(image.height);
  const int w = static_cast<int>(image.width);
  ImageTensor img(h, w, Scale::Byte);
  for (std::size_t p = 0, n = static_cast<std::size_t>(h) * w; p < n; ++p) {
    img.data[p * 3 + 0] = rgba[p * 4 + 0];
    img.data[p * 3 + 1] = rgba[p * 4 + 1];
    img.data[p * 3 + 2] = rgba[p * 4 + 2];
  }
  return img;
}

}  // namespace detail

/// Decodes PNG or binary PPM (P6) into a Byte-scale RGB tensor.
inline ImageTensor decode_image(std::span<const std::uint8_t> bytes) {
  if (detail::is_png(bytes)) return detail::decode_png(bytes);
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6') return detail::decode_ppm(bytes);
  throw Error(ErrorKind::DecodeError, "unsupported image format (expected PNG or P6 PPM)");
}

inline ImageTensor decode_image(std::string_view bytes) {
  return decode_image(
      std::span(reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()));
}

inline std::vector<std::uint8_t> encode_ppm(const ImageTensor& img) {
  std::string header =
      "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  auto rgb = to_rgb8(img);
  out.insert(out.end(), rgb.begin(), rgb.end());
  return out;
}

inline std::vector<std::uint8_t> encode_png(const ImageTensor& img) {
  if (img.empty()) throw Error(ErrorKind::ShapeMismatch, "cannot encode an empty image");
  auto rgb = to_rgb8(img);
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, rgb.data(), 0, nullptr)) {
    throw Error(ErrorKind::IoError, std::string("PNG encode: ") + image.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, rgb.data(), 0, nullptr)) {
    throw Error(ErrorKind::IoError, std::string("PNG encode: ") + image.message);
  }
  out.resize(size);
  return out;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path& path,
                             std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::IoError, "short write to " + path.string());
}

inline ImageTensor load_image(const std::filesystem::path& path) {
  return decode_image(read_file_bytes(path));
}

/// Format chosen from the extension: .ppm writes P6, anything else PNG.
inline void save_image(const ImageTensor& img, const std::filesystem::path& path) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  write_file_bytes(path, ext == ".ppm" ? encode_ppm(img) : encode_png(img));
}

// ---------------------------------------------------------------------------
// Geometry and value transforms

/// Bilinear resampling with half-pixel-centred sample positions.
/// Byte images are rounded back to integral values.
inline ImageTensor resize(const ImageTensor& img, int out_h, int out_w) {
  if (img.empty()) throw Error(ErrorKind::ShapeMismatch, "resize of empty image");
  if (out_h <= 0 || out_w <= 0) throw Error(ErrorKind::ConfigError, "resize target must be positive");
  ImageTensor out(out_h, out_w, img.scale);
  const double sy = static_cast<double>(img.height) / out_h;
  const double sx = static_cast<double>(img.width) / out_w;

  struct Tap {
    int i0, i1;
    double f;
  };
  auto taps = [](int n_out, int n_in, double scale) {
    std::vector<Tap> t(n_out);
    for (int o = 0; o < n_out; ++o) {
      double s = std::clamp((o + 0.5) * scale - 0.5, 0.0, static_cast<double>(n_in - 1));
      int i0 = static_cast<int>(std::floor(s));
      int i1 = std::min(i0 + 1, n_in - 1);
      t[o] = {i0, i1, s - i0};
    }
    return t;
  };
  const auto ty = taps(out_h, img.height, sy);
  const auto tx = taps(out_w, img.width, sx);
  const bool round_bytes = img.scale == Scale::Byte;

  for (int y = 0; y < out_h; ++y) {
    const auto& a = ty[y];
    for (int x = 0; x < out_w; ++x) {
      const auto& b = tx[x];
      for (int c = 0; c < 3; ++c) {
        double top = img.at(a.i0, b.i0, c) * (1.0 - b.f) + img.at(a.i0, b.i1, c) * b.f;
        double bot = img.at(a.i1, b.i0, c) * (1.0 - b.f) + img.at(a.i1, b.i1, c) * b.f;
        double v = top * (1.0 - a.f) + bot * a.f;
        out.at(y, x, c) = round_bytes ? static_cast<float>(std::round(v)) : static_cast<float>(v);
      }
    }
  }
  return out;
}

inline ImageTensor resize(const ImageTensor& img, const ResizePolicy& policy) {
  return resize(img, policy.target_h, policy.target_w);
}

/// Byte -> Unit, each value divided by 255.
inline ImageTensor normalize(const ImageTensor& img) {
  if (img.scale == Scale::Unit) throw Error(ErrorKind::AlreadyNormalized, "image is already Unit scale");
  ImageTensor out = img;
  out.scale = Scale::Unit;
  for (auto& v : out.data) v = static_cast<float>(static_cast<double>(v) / 255.0);
  return out;
}

/// Unit -> Byte, rounded to integral values.
inline ImageTensor denormalize(const ImageTensor& img) {
  if (img.scale == Scale::Byte) return img;
  ImageTensor out = img;
  out.scale = Scale::Byte;
  for (auto& v : out.data) v = to_byte(v, Scale::Unit);
  return out;
}

inline ImageTensor flip_horizontal(const ImageTensor& img) {
  ImageTensor out(img.height, img.width, img.scale);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) out.at(y, img.width - 1 - x, c) = img.at(y, x, c);
  return out;
}

}  // namespace mosq
