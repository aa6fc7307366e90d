#pragma once

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "mosq/heads.hpp"
#include "mosq/image.hpp"

namespace mosq {

inline constexpr double kOverlayAlpha = 0.4;

struct CamResult {
  int class_index = 0;
  std::size_t grid_h = 0, grid_w = 0;
  std::vector<double> raw_map;  // M_c(i, j), row-major grid_h x grid_w
  int heat_h = 0, heat_w = 0;
  std::vector<double> heatmap;  // ReLU, upsampled, min-max normalized to [0, 1]
  ImageTensor overlay;          // Byte scale, same size as the input image
};

/// Per-channel class weights from the graph already recorded in `model`:
/// w_k = sum over positions of d logit_c / d f_k(i, j), i.e. the gradient of
/// the class logit with respect to the pooled channel k. For a head that maps
/// pooled features linearly to logits this is exactly the weight row of c.
template <class T>
std::vector<double> cam_weights_recorded(HeadModel<T>& model, std::size_t c) {
  if (c >= model.num_classes()) throw Error(ErrorKind::BadClass, "class index out of range");
  nn::Tensor<T> seed({1, model.num_classes()});
  seed[c] = T{1};
  const auto df = model.backward_features(seed);  // throws GraphNotRecorded without a forward pass
  const std::size_t C = df.dim(3), positions = df.dim(1) * df.dim(2);
  std::vector<double> w(C, 0.0);
  for (std::size_t p = 0; p < positions; ++p)
    for (std::size_t k = 0; k < C; ++k) w[k] += df.data[p * C + k];
  return w;
}

/// Records an eval-mode forward pass of f on a copy of the model and returns
/// the class weights.
template <class T>
std::vector<double> cam_weights(const HeadModel<T>& model, const FeatureTensor& f, std::size_t c) {
  if (c >= model.num_classes()) throw Error(ErrorKind::BadClass, "class index out of range");
  HeadModel<T> scratch = model;
  scratch.forward_features(f.cast<T>(), nn::Mode::Eval);
  return cam_weights_recorded(scratch, c);
}

/// M_c(i, j) = sum_k w_k f_k(i, j) over a [H, W, C] feature map.
inline std::vector<double> class_activation_map(const FeatureTensor& f, const std::vector<double>& w) {
  const std::size_t C = f.dim(2), positions = f.dim(0) * f.dim(1);
  if (w.size() != C) throw Error(ErrorKind::ShapeMismatch, "weight count does not match channels");
  std::vector<double> m(positions, 0.0);
  for (std::size_t p = 0; p < positions; ++p) {
    double s = 0.0;
    for (std::size_t k = 0; k < C; ++k) s += w[k] * f.data[p * C + k];
    m[p] = s;
  }
  return m;
}

/// Bilinear (half-pixel) resampling of a single-channel grid.
inline std::vector<double> resize_grid(const std::vector<double>& g, std::size_t h, std::size_t w, int out_h,
                                       int out_w) {
  std::vector<double> out(static_cast<std::size_t>(out_h) * out_w);
  auto tap = [](int o, int n_out, std::size_t n_in, int& i0, int& i1, double& f) {
    double s = std::clamp((o + 0.5) * static_cast<double>(n_in) / n_out - 0.5, 0.0, static_cast<double>(n_in - 1));
    i0 = static_cast<int>(std::floor(s));
    i1 = std::min(i0 + 1, static_cast<int>(n_in) - 1);
    f = s - i0;
  };
  for (int y = 0; y < out_h; ++y) {
    int y0, y1;
    double fy;
    tap(y, out_h, h, y0, y1, fy);
    for (int x = 0; x < out_w; ++x) {
      int x0, x1;
      double fx;
      tap(x, out_w, w, x0, x1, fx);
      const double top = g[y0 * w + x0] * (1 - fx) + g[y0 * w + x1] * fx;
      const double bot = g[y1 * w + x0] * (1 - fx) + g[y1 * w + x1] * fx;
      out[static_cast<std::size_t>(y) * out_w + x] = top * (1 - fy) + bot * fy;
    }
  }
  return out;
}

/// Min-max normalization to [0, 1]; a constant grid maps to all zeros.
inline void normalize_min_max(std::vector<double>& v) {
  if (v.empty()) return;
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const double a = *lo, b = *hi;
  if (!(b > a)) {
    std::fill(v.begin(), v.end(), 0.0);
    return;
  }
  for (auto& x : v) x = (x - a) / (b - a);
}

/// Blend with the blue->red colour map t -> (255 t, 0, 255 (1 - t)) at alpha 0.4.
inline ImageTensor heat_overlay(const ImageTensor& img, const std::vector<double>& heat) {
  if (heat.size() != static_cast<std::size_t>(img.height) * img.width) {
    throw Error(ErrorKind::ShapeMismatch, "heatmap does not match image size");
  }
  ImageTensor out(img.height, img.width, Scale::Byte);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const double t = heat[static_cast<std::size_t>(y) * img.width + x];
      const double color[3] = {t * 255.0, 0.0, (1.0 - t) * 255.0};
      for (int c = 0; c < 3; ++c) {
        const double base = to_byte(img.at(y, x, c), img.scale);
        out.at(y, x, c) = static_cast<float>(std::round((1.0 - kOverlayAlpha) * base + kOverlayAlpha * color[c]));
      }
    }
  }
  return out;
}

/// Heatmap and overlay from a raw activation map.
inline void render_cam(CamResult& r, const ImageTensor& img) {
  std::vector<double> rect = r.raw_map;
  for (auto& v : rect) v = std::max(v, 0.0);
  r.heat_h = img.height;
  r.heat_w = img.width;
  r.heatmap = resize_grid(rect, r.grid_h, r.grid_w, img.height, img.width);
  normalize_min_max(r.heatmap);
  r.overlay = heat_overlay(img, r.heatmap);
}

/// Class activation map of class c for a preprocessed image.
inline CamResult cam(const Head& model, const Backbone& backbone, const ImageTensor& img, int c) {
  if (c < 0 || static_cast<std::size_t>(c) >= model.num_classes()) throw Error(ErrorKind::BadClass, "class index out of range");
  const auto f = backbone.extract(img, model.spec().endpoint);
  CamResult r;
  r.class_index = c;
  r.grid_h = f.dim(0);
  r.grid_w = f.dim(1);
  r.raw_map = class_activation_map(f, cam_weights(model, f, static_cast<std::size_t>(c)));
  render_cam(r, img);
  return r;
}

/// Predicted class of the image (the default CAM target).
inline int predicted_class(const Head& model, const Backbone& backbone, const ImageTensor& img) {
  return argmax(head_probabilities(model, backbone, img));
}

inline std::string raw_map_csv(const CamResult& r) {
  std::ostringstream out;
  out.precision(9);
  for (std::size_t i = 0; i < r.grid_h; ++i) {
    for (std::size_t j = 0; j < r.grid_w; ++j) out << (j ? "," : "") << r.raw_map[i * r.grid_w + j];
    out << '\n';
  }
  return out.str();
}

}  // namespace mosq
