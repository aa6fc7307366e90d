#pragma once

#include <algorithm>
#include <array>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "mosq/core.hpp"
#include "mosq/image.hpp"

namespace mosq {

enum class AugmentKind { ZoomIn = 0, ZoomOut = 1, GainUp = 2, GainDown = 3 };

inline constexpr std::array<AugmentKind, 4> kAugmentKinds = {
    AugmentKind::ZoomIn, AugmentKind::ZoomOut, AugmentKind::GainUp, AugmentKind::GainDown};

inline std::string_view name(AugmentKind k) {
  switch (k) {
    case AugmentKind::ZoomIn: return "zoom_in";
    case AugmentKind::ZoomOut: return "zoom_out";
    case AugmentKind::GainUp: return "gain_up";
    case AugmentKind::GainDown: return "gain_down";
  }
  return "?";
}

struct FactorRange {
  double lo = 1.0;
  double hi = 1.0;
  bool contains(double f) const { return f >= lo && f <= hi; }
};

struct AugmentationSpec {
  FactorRange zoom_in{1.05, 1.50};
  FactorRange zoom_out{0.75, 0.90};
  FactorRange gain_up{1.05, 1.50};
  FactorRange gain_down{0.75, 0.95};
  std::uint64_t seed = 0;

  const FactorRange& range(AugmentKind k) const {
    switch (k) {
      case AugmentKind::ZoomIn: return zoom_in;
      case AugmentKind::ZoomOut: return zoom_out;
      case AugmentKind::GainUp: return gain_up;
      case AugmentKind::GainDown: return gain_down;
    }
    return zoom_in;
  }

  void validate() const {
    for (auto k : kAugmentKinds) {
      if (!(range(k).lo < range(k).hi)) throw Error(ErrorKind::ConfigError, "augmentation range must have lo < hi");
    }
    if (!(zoom_in.lo > 1.0)) throw Error(ErrorKind::ConfigError, "zoom-in range must lie above 1");
    if (!(zoom_out.hi < 1.0)) throw Error(ErrorKind::ConfigError, "zoom-out range must lie below 1");
    if (!(zoom_out.lo > 0.0) || !(gain_down.lo > 0.0)) {
      throw Error(ErrorKind::ConfigError, "factors must be positive");
    }
  }
};

struct AugmentedVariant {
  AugmentKind kind;
  double factor;
  ImageTensor image;
};

struct AugmentedSet {
  std::string source_id;
  ImageTensor original;
  std::vector<AugmentedVariant> variants;  // one per kind, in kAugmentKinds order

  std::size_t image_count() const { return 1 + variants.size(); }
};

namespace detail {

inline std::array<float, 3> border_median(const ImageTensor& img) {
  std::array<std::vector<float>, 3> ring;
  auto push = [&](int y, int x) {
    for (int c = 0; c < 3; ++c) ring[c].push_back(img.at(y, x, c));
  };
  for (int x = 0; x < img.width; ++x) {
    push(0, x);
    if (img.height > 1) push(img.height - 1, x);
  }
  for (int y = 1; y + 1 < img.height; ++y) {
    push(y, 0);
    if (img.width > 1) push(y, img.width - 1);
  }
  std::array<float, 3> med{};
  for (int c = 0; c < 3; ++c) {
    auto& v = ring[c];
    auto mid = v.begin() + static_cast<std::ptrdiff_t>((v.size() - 1) / 2);  // lower median
    std::nth_element(v.begin(), mid, v.end());
    med[c] = *mid;
  }
  return med;
}

}  // namespace detail

/// factor > 1 centre-crops then resizes back; factor < 1 shrinks and pads
/// with the median colour of the 1-pixel border ring.
inline ImageTensor zoom(const ImageTensor& img, double factor) {
  if (!(factor > 0.0 && factor <= 4.0)) throw Error(ErrorKind::BadFactor, "zoom factor must be in (0, 4]");
  if (img.empty()) throw Error(ErrorKind::ShapeMismatch, "zoom of empty image");
  if (factor == 1.0) return img;

  const int h = img.height;
  const int w = img.width;
  if (factor > 1.0) {
    const int ch = std::max(1, static_cast<int>(std::lround(h / factor)));
    const int cw = std::max(1, static_cast<int>(std::lround(w / factor)));
    const int top = (h - ch) / 2;
    const int left = (w - cw) / 2;
    ImageTensor crop(ch, cw, img.scale);
    for (int y = 0; y < ch; ++y)
      for (int x = 0; x < cw; ++x)
        for (int c = 0; c < 3; ++c) crop.at(y, x, c) = img.at(top + y, left + x, c);
    return resize(crop, h, w);
  }

  const int nh = std::max(1, static_cast<int>(std::lround(h * factor)));
  const int nw = std::max(1, static_cast<int>(std::lround(w * factor)));
  const auto fill = detail::border_median(img);
  ImageTensor small = resize(img, nh, nw);
  ImageTensor out(h, w, img.scale);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) out.set_pixel(y, x, fill[0], fill[1], fill[2]);
  const int top = (h - nh) / 2;
  const int left = (w - nw) / 2;
  for (int y = 0; y < nh; ++y)
    for (int x = 0; x < nw; ++x)
      for (int c = 0; c < 3; ++c) out.at(top + y, left + x, c) = small.at(y, x, c);
  return out;
}

/// Multiplicative brightness/contrast gain with rounding and saturation.
inline ImageTensor gain(const ImageTensor& img, double factor) {
  if (!(factor > 0.0) || !std::isfinite(factor)) throw Error(ErrorKind::BadFactor, "gain factor must be positive");
  if (img.scale != Scale::Byte) throw Error(ErrorKind::ConfigError, "gain expects a Byte-scale image");
  ImageTensor out = img;
  for (auto& v : out.data) {
    v = static_cast<float>(std::clamp(std::round(static_cast<double>(v) * factor), 0.0, 255.0));
  }
  return out;
}

inline ImageTensor apply(AugmentKind kind, const ImageTensor& img, double factor) {
  switch (kind) {
    case AugmentKind::ZoomIn:
    case AugmentKind::ZoomOut: return zoom(img, factor);
    case AugmentKind::GainUp:
    case AugmentKind::GainDown: return gain(img, factor);
  }
  return img;
}

/// Factors for one image, drawn from a stream keyed by (seed, image id) so
/// that each image's draws are independent of the rest of the manifest.
inline std::array<double, 4> draw_factors(const AugmentationSpec& spec, std::string_view image_id) {
  Rng rng = Rng::substream(spec.seed, image_id);
  std::array<double, 4> f{};
  for (auto k : kAugmentKinds) {
    const auto& r = spec.range(k);
    f[static_cast<int>(k)] = rng.uniform(r.lo, r.hi);
  }
  return f;
}

using ImageLoader = std::function<ImageTensor(const std::string& image_id)>;

inline AugmentedSet augment_one(const std::string& image_id, ImageTensor original,
                                const AugmentationSpec& spec) {
  AugmentedSet set;
  set.source_id = image_id;
  const auto factors = draw_factors(spec, image_id);
  for (auto k : kAugmentKinds) {
    const double f = factors[static_cast<int>(k)];
    set.variants.push_back({k, f, apply(k, original, f)});
  }
  set.original = std::move(original);
  return set;
}

/// Streams the expansion one image at a time; the sink owns each set.
inline void expand_each(const std::vector<std::string>& manifest, const AugmentationSpec& spec,
                        const ImageLoader& load, const std::function<void(AugmentedSet&&)>& sink) {
  spec.validate();
  if (manifest.empty()) throw Error(ErrorKind::EmptyDataset, "augmentation manifest is empty");
  for (const auto& id : manifest) {
    ImageTensor img;
    try {
      img = load(id);
    } catch (const std::exception& e) {
      throw Error(ErrorKind::MissingImage, id + ": " + e.what());
    }
    if (img.empty()) throw Error(ErrorKind::MissingImage, id);
    sink(augment_one(id, std::move(img), spec));
  }
}

/// Original plus one variant per kind: 5 images per manifest entry.
inline std::vector<AugmentedSet> expand(const std::vector<std::string>& manifest,
                                        const AugmentationSpec& spec, const ImageLoader& load) {
  std::vector<AugmentedSet> out;
  out.reserve(manifest.size());
  expand_each(manifest, spec, load, [&](AugmentedSet&& s) { out.push_back(std::move(s)); });
  return out;
}

}  // namespace mosq
