#pragma once

#include <algorithm>
#include <cmath>
#include <thread>
#include <vector>

#include "mosq/core.hpp"
#include "mosq/image.hpp"

namespace mosq {

/// Non-local means parameters. Distances are on Byte-scale intensities.
struct DenoiseConfig {
  enum class Search { Windowed, Exact };

  int patch_radius = 3;        // 7x7 patches
  double h = 10.0;             // filtering degree
  Search search = Search::Windowed;
  int window_radius = 10;      // 21x21 search window
  unsigned threads = 0;        // 0: hardware concurrency

  static DenoiseConfig exact(int patch_radius = 3, double h = 10.0) {
    DenoiseConfig c;
    c.patch_radius = patch_radius;
    c.h = h;
    c.search = Search::Exact;
    return c;
  }

  static DenoiseConfig windowed(int window_radius, int patch_radius = 3, double h = 10.0) {
    DenoiseConfig c;
    c.patch_radius = patch_radius;
    c.h = h;
    c.window_radius = window_radius;
    return c;
  }

  void validate() const {
    if (patch_radius < 1) throw Error(ErrorKind::ConfigError, "patch radius must be >= 1");
    if (!(h > 0.0) || !std::isfinite(h)) throw Error(ErrorKind::ConfigError, "h must be positive");
    if (search == Search::Windowed && window_radius < patch_radius) {
      throw Error(ErrorKind::ConfigError, "window radius must be >= patch radius");
    }
  }
};

/// Largest image side the exact (all-pairs) mode accepts.
inline constexpr int kExactModeMaxSide = 64;

struct PixelCoord {
  int y = 0;
  int x = 0;
};

/// Squared Euclidean distance between the joint-RGB patches centred at i and
/// j, with edge replication outside the image.
inline double patch_distance(const ImageTensor& img, PixelCoord i, PixelCoord j, int r) {
  auto inside = [&](PixelCoord p) {
    return p.y >= 0 && p.y < img.height && p.x >= 0 && p.x < img.width;
  };
  if (!inside(i) || !inside(j)) throw Error(ErrorKind::OutOfBounds, "patch centre outside image");
  if (r < 0) throw Error(ErrorKind::ConfigError, "negative patch radius");
  double d = 0.0;
  for (int qy = -r; qy <= r; ++qy) {
    const int yi = std::clamp(i.y + qy, 0, img.height - 1);
    const int yj = std::clamp(j.y + qy, 0, img.height - 1);
    for (int qx = -r; qx <= r; ++qx) {
      const int xi = std::clamp(i.x + qx, 0, img.width - 1);
      const int xj = std::clamp(j.x + qx, 0, img.width - 1);
      for (int c = 0; c < 3; ++c) {
        const double diff = static_cast<double>(img.at(yi, xi, c)) - img.at(yj, xj, c);
        d += diff * diff;
      }
    }
  }
  return d;
}

/// Unnormalized weight exp(-d / h^2).
inline double nlm_weight(double d, double h) {
  if (!(h > 0.0)) throw Error(ErrorKind::ConfigError, "h must be positive");
  return std::exp(-d / (h * h));
}

/// Normalized weights w(i, .) over the whole image (zero outside the search
/// window). Direct evaluation; intended for inspection and tests.
inline std::vector<double> nlm_pixel_weights(const ImageTensor& img, const DenoiseConfig& cfg,
                                             PixelCoord i) {
  cfg.validate();
  std::vector<double> w(static_cast<std::size_t>(img.height) * img.width, 0.0);
  const bool exact = cfg.search == DenoiseConfig::Search::Exact;
  double z = 0.0;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      if (!exact && (std::abs(y - i.y) > cfg.window_radius || std::abs(x - i.x) > cfg.window_radius)) {
        continue;
      }
      double u = nlm_weight(patch_distance(img, i, {y, x}, cfg.patch_radius), cfg.h);
      w[static_cast<std::size_t>(y) * img.width + x] = u;
      z += u;
    }
  }
  for (auto& v : w) v /= z;
  return w;
}

namespace detail {

/// Row-band worker of the windowed filter.
///
/// Offsets are visited in groups closed under negation and horizontal
/// mirroring, {(dy,dx), (dy,-dx), (-dy,dx), (-dy,-dx)}, and each group's
/// contribution to a pixel is summed pairwise before accumulation. The
/// per-pixel floating-point sum is then identical for an image and its mirror.
/// The distance field for -o is the field for +o read at i - o.
class NlmBand {
public:
  NlmBand(const ImageTensor& img, const DenoiseConfig& cfg, int search_y, int search_x)
      : img_(img), r_(cfg.patch_radius), sy_(search_y), sx_(search_x), inv_h2_(1.0 / (cfg.h * cfg.h)) {
    H_ = img.height;
    W_ = img.width;
    const std::size_t n = static_cast<std::size_t>(H_) * W_ * 3;
    v_.resize(n);
    for (std::size_t k = 0; k < n; ++k) v_[k] = img.data[k];
    // exp(-d/h^2) for integral d; values outside the table are computed directly.
    table_.resize(kTableSize);
    for (int d = 0; d < kTableSize; ++d) table_[d] = std::exp(-d * inv_h2_);
  }

  void run(int y0, int y1, ImageTensor& out) {
    const int bh = y1 - y0;
    wsum_.assign(static_cast<std::size_t>(bh) * W_, 0.0);
    acc_.assign(static_cast<std::size_t>(bh) * W_ * 3, 0.0);
    // Field rows cover the band and the rows reached by i - o.
    field_y0_ = std::max(0, y0 - sy_);
    field_y1_ = y1;

    for (int dy = 0; dy <= sy_; ++dy) {
      for (int dx = 0; dx <= sx_; ++dx) {
        if (dy == 0 && dx == 0) {
          accumulate_self(y0, y1);
          continue;
        }
        compute_field(dy, dx, field_a_);
        if (dy > 0 && dx > 0) compute_field(dy, -dx, field_b_);
        accumulate_group(y0, y1, dy, dx);
      }
    }

    for (int y = y0; y < y1; ++y) {
      for (int x = 0; x < W_; ++x) {
        const std::size_t p = static_cast<std::size_t>(y - y0) * W_ + x;
        for (int c = 0; c < 3; ++c) {
          out.at(y, x, c) = static_cast<float>(acc_[p * 3 + c] / wsum_[p]);
        }
      }
    }
  }

private:
  static constexpr int kTableSize = 1 << 16;

  double weight(double d) const {
    if (d < kTableSize) {
      const int di = static_cast<int>(d);
      if (di == d) return table_[di];
    }
    return std::exp(-d * inv_h2_);
  }

  double px(int y, int x, int c) const {
    return v_[(static_cast<std::size_t>(y) * W_ + x) * 3 + c];
  }

  // field(p) = ||patch(p) - patch(p + o)||^2 for p in rows [field_y0_, field_y1_).
  void compute_field(int dy, int dx, std::vector<double>& field) {
    const int r = r_;
    const int pw = W_ + 2 * r;
    const int prow0 = field_y0_ - r;
    const int ph = (field_y1_ - field_y0_) + 2 * r;
    diff_.assign(static_cast<std::size_t>(ph) * pw, 0.0);
    for (int py = 0; py < ph; ++py) {
      const int y = prow0 + py;
      const int ya = std::clamp(y, 0, H_ - 1);
      const int yb = std::clamp(y + dy, 0, H_ - 1);
      for (int pxi = 0; pxi < pw; ++pxi) {
        const int x = pxi - r;
        const int xa = std::clamp(x, 0, W_ - 1);
        const int xb = std::clamp(x + dx, 0, W_ - 1);
        double s = 0.0;
        for (int c = 0; c < 3; ++c) {
          const double t = px(ya, xa, c) - px(yb, xb, c);
          s += t * t;
        }
        diff_[static_cast<std::size_t>(py) * pw + pxi] = s;
      }
    }
    const int fh = field_y1_ - field_y0_;
    col_.assign(static_cast<std::size_t>(fh) * pw, 0.0);
    for (int fy = 0; fy < fh; ++fy) {
      double* dst = &col_[static_cast<std::size_t>(fy) * pw];
      for (int k = 0; k <= 2 * r; ++k) {
        const double* src = &diff_[static_cast<std::size_t>(fy + k) * pw];
        for (int pxi = 0; pxi < pw; ++pxi) dst[pxi] += src[pxi];
      }
    }
    field.assign(static_cast<std::size_t>(fh) * W_, 0.0);
    for (int fy = 0; fy < fh; ++fy) {
      const double* src = &col_[static_cast<std::size_t>(fy) * pw];
      double* dst = &field[static_cast<std::size_t>(fy) * W_];
      for (int x = 0; x < W_; ++x) {
        const int c0 = x + r;
        double s = src[c0];
        // symmetric pairs keep the sum mirror-invariant
        for (int k = 1; k <= r; ++k) s += src[c0 - k] + src[c0 + k];
        dst[x] = s;
      }
    }
  }

  double field_at(const std::vector<double>& f, int y, int x) const {
    return f[static_cast<std::size_t>(y - field_y0_) * W_ + x];
  }

  void accumulate_self(int y0, int y1) {
    for (int y = y0; y < y1; ++y) {
      for (int x = 0; x < W_; ++x) {
        const std::size_t p = static_cast<std::size_t>(y - y0) * W_ + x;
        wsum_[p] += 1.0;
        for (int c = 0; c < 3; ++c) acc_[p * 3 + c] += px(y, x, c);
      }
    }
  }

  struct Term {
    double w = 0.0;
    double rgb[3] = {0.0, 0.0, 0.0};
  };

  static Term add(const Term& a, const Term& b) {
    return {a.w + b.w, {a.rgb[0] + b.rgb[0], a.rgb[1] + b.rgb[1], a.rgb[2] + b.rgb[2]}};
  }

  // Weight of neighbour j = (y + oy, x + ox) for pixel (y, x), or an empty term if j is outside.
  // Distance is read from a field of offset (fy_off, fx_off), either at i (forward) or at j (mirror).
  Term term(int y, int x, int oy, int ox, const std::vector<double>& field, bool at_j) const {
    const int jy = y + oy;
    const int jx = x + ox;
    if (jy < 0 || jy >= H_ || jx < 0 || jx >= W_) return {};
    const double d = at_j ? field_at(field, jy, jx) : field_at(field, y, x);
    const double w = weight(d);
    return {w, {w * px(jy, jx, 0), w * px(jy, jx, 1), w * px(jy, jx, 2)}};
  }

  void accumulate_group(int y0, int y1, int dy, int dx) {
    for (int y = y0; y < y1; ++y) {
      for (int x = 0; x < W_; ++x) {
        Term g;
        if (dy > 0 && dx > 0) {
          // field_a_: o=(dy,dx); field_b_: o=(dy,-dx)
          const Term fwd = add(term(y, x, dy, dx, field_a_, false), term(y, x, dy, -dx, field_b_, false));
          const Term bwd = add(term(y, x, -dy, -dx, field_a_, true), term(y, x, -dy, dx, field_b_, true));
          g = add(fwd, bwd);
        } else {
          g = add(term(y, x, dy, dx, field_a_, false), term(y, x, -dy, -dx, field_a_, true));
        }
        const std::size_t p = static_cast<std::size_t>(y - y0) * W_ + x;
        wsum_[p] += g.w;
        for (int c = 0; c < 3; ++c) acc_[p * 3 + c] += g.rgb[c];
      }
    }
  }

  const ImageTensor& img_;
  int r_, sy_, sx_;
  double inv_h2_;
  int H_ = 0, W_ = 0;
  int field_y0_ = 0, field_y1_ = 0;
  std::vector<double> v_, table_;
  std::vector<double> diff_, col_, field_a_, field_b_;
  std::vector<double> wsum_, acc_;
};

}  // namespace detail

/// Non-local means filter. Each output pixel is the normalized
/// exp(-d/h^2)-weighted mean of the pixels in its search region, where d is
/// the joint-RGB squared patch distance. Output stays on the Byte scale and
/// may hold fractional values.
inline ImageTensor denoise(const ImageTensor& img, const DenoiseConfig& cfg) {
  cfg.validate();
  if (img.scale != Scale::Byte) {
    throw Error(ErrorKind::ConfigError, "denoise expects a Byte-scale image (denoise before normalize)");
  }
  if (img.empty()) return img;

  int sy = cfg.window_radius;
  int sx = cfg.window_radius;
  if (cfg.search == DenoiseConfig::Search::Exact) {
    if (img.height > kExactModeMaxSide || img.width > kExactModeMaxSide) {
      throw Error(ErrorKind::ConfigError, "exact search is limited to images of at most 64x64");
    }
    sy = img.height - 1;
    sx = img.width - 1;
  }
  // Offsets past the image extent never land inside it.
  sy = std::min(sy, img.height - 1);
  sx = std::min(sx, img.width - 1);

  ImageTensor out(img.height, img.width, Scale::Byte);
  unsigned threads = cfg.threads ? cfg.threads : std::max(1u, std::thread::hardware_concurrency());
  threads = std::min<unsigned>(threads, static_cast<unsigned>(img.height));

  auto work = [&](int y0, int y1) {
    detail::NlmBand band(img, cfg, sy, sx);
    band.run(y0, y1, out);
  };
  if (threads <= 1) {
    work(0, img.height);
  } else {
    std::vector<std::jthread> pool;
    const int step = (img.height + static_cast<int>(threads) - 1) / static_cast<int>(threads);
    for (int y0 = 0; y0 < img.height; y0 += step) {
      pool.emplace_back(work, y0, std::min(img.height, y0 + step));
    }
  }

  // Convex combination: clamp away last-ulp excursions past the input range.
  for (int c = 0; c < 3; ++c) {
    float lo = 255.0f, hi = 0.0f;
    for (std::size_t k = c; k < img.data.size(); k += 3) {
      lo = std::min(lo, img.data[k]);
      hi = std::max(hi, img.data[k]);
    }
    for (std::size_t k = c; k < out.data.size(); k += 3) out.data[k] = std::clamp(out.data[k], lo, hi);
  }
  return out;
}

}  // namespace mosq
