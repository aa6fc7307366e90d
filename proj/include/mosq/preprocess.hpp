#pragma once

#include "mosq/denoise.hpp"
#include "mosq/image.hpp"

namespace mosq {

/// Ingest pipeline shared by training, evaluation, classification and the
/// service: resize to 299x299, non-local means on the Byte image, then /255.
struct PreprocessConfig {
  ResizePolicy resize;
  DenoiseConfig denoise;
  bool denoise_enabled = true;
};

/// Resize and denoise; the result stays on the Byte scale so that
/// augmentation can run before normalization.
inline ImageTensor prepare_bytes(const ImageTensor& img, const PreprocessConfig& cfg = {}) {
  ImageTensor out = img.scale == Scale::Unit ? denormalize(img) : img;
  if (out.height != cfg.resize.target_h || out.width != cfg.resize.target_w) out = resize(out, cfg.resize);
  if (cfg.denoise_enabled) out = denoise(out, cfg.denoise);
  return out;
}

inline ImageTensor preprocess(const ImageTensor& img, const PreprocessConfig& cfg = {}) {
  return normalize(prepare_bytes(img, cfg));
}

}  // namespace mosq
