#include <gtest/gtest.h>

#include <cmath>

#include "mosq/denoise.hpp"
#include "oracles.hpp"

using namespace mosq;

namespace {

ImageTensor random_image(int h, int w, std::uint64_t seed, int levels = 256) {
  ImageTensor img(h, w);
  Rng r(seed);
  for (auto& v : img.data) v = static_cast<float>(r.below(static_cast<std::uint64_t>(levels)));
  return img;
}

// smooth gradient plus mild noise so the weights are not all negligible
ImageTensor textured_image(int h, int w, std::uint64_t seed) {
  ImageTensor img(h, w);
  Rng r(seed);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(y, x, c) = static_cast<float>(std::round(100 + 3 * x + 2 * y + 20 * c + r.uniform(-4, 4)));
  return img;
}

DenoiseConfig single_thread(DenoiseConfig c) {
  c.threads = 1;
  return c;
}

}  // namespace

TEST(PatchDistance, SinglePixelPatch) {
  ImageTensor img(1, 2);
  img.set_pixel(0, 0, 3, 0, 0);
  EXPECT_DOUBLE_EQ(patch_distance(img, {0, 0}, {0, 1}, 0), 9.0);
  EXPECT_DOUBLE_EQ(patch_distance(img, {0, 0}, {0, 0}, 3), 0.0);
}

TEST(PatchDistance, EdgeReplication) {
  // 1x2 image, radius 1: each 3x3 patch replicates the border, so the patch
  // around (0,0) is columns {0,0,1} and around (0,1) is {0,1,1}, three rows each.
  ImageTensor img(1, 2);
  img.set_pixel(0, 1, 2, 0, 0);
  EXPECT_DOUBLE_EQ(patch_distance(img, {0, 0}, {0, 1}, 1), 3 * 4.0 + 3 * 0.0 + 0.0 + 3 * 0.0);
}

TEST(PatchDistance, OutOfBounds) {
  ImageTensor img(3, 3);
  EXPECT_THROW(patch_distance(img, {0, 0}, {3, 0}, 1), Error);
}

TEST(NlmWeight, Value) {
  EXPECT_NEAR(nlm_weight(100.0, 10.0), 0.36787944117144233, 1e-15);
  EXPECT_EQ(nlm_weight(0.0, 10.0), 1.0);
  EXPECT_THROW(nlm_weight(1.0, 0.0), Error);
}

TEST(Denoise, MatchesAllPairsOracle) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    auto img = random_image(12, 10, seed, 24);
    const auto ref = oracle::nlm(img, 3, 10.0);
    for (auto cfg : {DenoiseConfig::exact(), DenoiseConfig::windowed(16)}) {
      auto out = denoise(img, single_thread(cfg));
      for (std::size_t k = 0; k < ref.size(); ++k) ASSERT_NEAR(out.data[k], ref[k], 1e-4) << k;
    }
  }
}

TEST(Denoise, SmallPatchOracle) {
  auto img = textured_image(9, 9, 4);
  const auto ref = oracle::nlm(img, 1, 6.0);
  auto out = denoise(img, single_thread(DenoiseConfig::exact(1, 6.0)));
  for (std::size_t k = 0; k < ref.size(); ++k) ASSERT_NEAR(out.data[k], ref[k], 1e-4);
}

TEST(Denoise, ConstantImageIsFixedPoint) {
  ImageTensor img(20, 20, Scale::Byte, 123.0f);
  for (auto cfg : {DenoiseConfig::exact(), DenoiseConfig::windowed(5)}) {
    auto out = denoise(img, single_thread(cfg));
    for (float v : out.data) EXPECT_NEAR(v, 123.0f, 1e-6);
  }
}

TEST(Denoise, WeightsSumToOne) {
  auto img = textured_image(14, 12, 5);
  for (auto cfg : {DenoiseConfig::exact(), DenoiseConfig::windowed(4)}) {
    for (PixelCoord p : {PixelCoord{0, 0}, PixelCoord{7, 5}, PixelCoord{13, 11}}) {
      const auto w = nlm_pixel_weights(img, cfg, p);
      double s = 0;
      for (double v : w) {
        EXPECT_GE(v, 0.0);
        s += v;
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Denoise, WindowRestrictsSupport) {
  auto img = textured_image(15, 15, 6);
  const auto w = nlm_pixel_weights(img, DenoiseConfig::windowed(3), {7, 7});
  for (int y = 0; y < 15; ++y)
    for (int x = 0; x < 15; ++x)
      if (std::abs(y - 7) > 3 || std::abs(x - 7) > 3) EXPECT_EQ(w[static_cast<std::size_t>(y) * 15 + x], 0.0);
}

TEST(Denoise, CommutesWithHorizontalFlip) {
  auto img = random_image(17, 23, 7);
  for (auto cfg : {DenoiseConfig::exact(), DenoiseConfig::windowed(4), DenoiseConfig::windowed(6, 2, 15.0)}) {
    cfg.threads = 1;
    EXPECT_EQ(denoise(flip_horizontal(img), cfg), flip_horizontal(denoise(img, cfg)));
  }
}

TEST(Denoise, ThreadCountDoesNotChangeOutput) {
  auto img = random_image(31, 19, 8);
  auto cfg = DenoiseConfig::windowed(5);
  cfg.threads = 1;
  auto a = denoise(img, cfg);
  cfg.threads = 4;
  EXPECT_EQ(denoise(img, cfg), a);
}

TEST(Denoise, OutputStaysWithinInputRange) {
  auto img = random_image(16, 16, 9);
  auto out = denoise(img, single_thread(DenoiseConfig::windowed(4)));
  EXPECT_EQ(out.scale, Scale::Byte);
  for (float v : out.data) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 255.0f);
  }
}

TEST(Denoise, ReducesNoiseOnFlatRegion) {
  ImageTensor img(32, 32);
  Rng r(10);
  for (auto& v : img.data) v = static_cast<float>(std::round(128 + r.uniform(-10, 10)));
  // 3x3 patches and a wide h, so noisy patches still count as similar
  auto out = denoise(img, single_thread(DenoiseConfig::windowed(5, 1, 30.0)));
  auto spread = [](const ImageTensor& t) {
    double m = 0, s = 0;
    for (float v : t.data) m += v;
    m /= static_cast<double>(t.data.size());
    for (float v : t.data) s += (v - m) * (v - m);
    return std::sqrt(s / static_cast<double>(t.data.size()));
  };
  EXPECT_LT(spread(out), 0.5 * spread(img));
}

TEST(Denoise, RejectsBadInput) {
  EXPECT_THROW(denoise(ImageTensor(4, 4, Scale::Unit), DenoiseConfig{}), Error);
  EXPECT_THROW(denoise(ImageTensor(65, 8), DenoiseConfig::exact()), Error);
  DenoiseConfig bad;
  bad.h = -1;
  EXPECT_THROW(denoise(ImageTensor(4, 4), bad), Error);
  bad = DenoiseConfig::windowed(2, 3);
  EXPECT_THROW(bad.validate(), Error);
}
