#include <gtest/gtest.h>

#include <filesystem>

#include "mosq/image.hpp"
#include "mosq/preprocess.hpp"

using namespace mosq;

namespace {

ImageTensor random_image(int h, int w, std::uint64_t seed) {
  ImageTensor img(h, w);
  Rng r(seed);
  for (auto& v : img.data) v = static_cast<float>(r.below(256));
  return img;
}

}  // namespace

TEST(Image, NormalizeDividesBy255) {
  ImageTensor img(1, 1);
  img.set_pixel(0, 0, 51, 0, 255);
  auto u = normalize(img);
  EXPECT_EQ(u.scale, Scale::Unit);
  EXPECT_NEAR(u.at(0, 0, 0), 0.2f, 1e-7);
  EXPECT_EQ(u.at(0, 0, 2), 1.0f);
  EXPECT_THROW(normalize(u), Error);
  EXPECT_EQ(denormalize(u), img);
}

TEST(Image, PngRoundTripIsLossless) {
  auto img = random_image(13, 17, 1);
  EXPECT_EQ(decode_image(encode_png(img)), img);
  EXPECT_EQ(decode_image(encode_ppm(img)), img);
}

TEST(Image, DecodeRejectsGarbage) {
  try {
    decode_image(std::string_view("not an image"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DecodeError);
  }
}

TEST(Image, SaveAndLoad) {
  auto dir = std::filesystem::temp_directory_path() / "mosq_test_image";
  std::filesystem::create_directories(dir);
  auto img = random_image(8, 5, 2);
  save_image(img, dir / "a.png");
  EXPECT_EQ(load_image(dir / "a.png"), img);
  std::filesystem::remove_all(dir);
}

TEST(Image, ResizeIdentityAndConstant) {
  auto img = random_image(9, 11, 3);
  EXPECT_EQ(resize(img, 9, 11), img);
  ImageTensor c(20, 30, Scale::Byte, 77.0f);
  auto r = resize(c, 299, 299);
  for (float v : r.data) EXPECT_EQ(v, 77.0f);
}

TEST(Image, ResizeKeepsByteValuesIntegral) {
  auto r = resize(random_image(10, 10, 4), 23, 31);
  for (float v : r.data) EXPECT_EQ(v, std::round(v));
}

TEST(Image, FlipTwiceIsIdentity) {
  auto img = random_image(6, 7, 5);
  EXPECT_EQ(flip_horizontal(flip_horizontal(img)), img);
  EXPECT_EQ(flip_horizontal(img).at(2, 0, 1), img.at(2, 6, 1));
}

TEST(Image, ContentDigestIgnoresEncoding) {
  auto img = random_image(4, 4, 6);
  EXPECT_EQ(content_digest(img), content_digest(decode_image(encode_png(img))));
  auto other = img;
  other.data[0] = 255 - other.data[0];
  EXPECT_NE(content_digest(img), content_digest(other));
}

TEST(Preprocess, ProducesUnitImageOfTargetSize) {
  PreprocessConfig cfg;
  cfg.resize = {40, 40};
  cfg.denoise.threads = 1;
  auto out = preprocess(random_image(20, 30, 7), cfg);
  EXPECT_EQ(out.height, 40);
  EXPECT_EQ(out.width, 40);
  EXPECT_EQ(out.scale, Scale::Unit);
  for (float v : out.data) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(Preprocess, ResizesBeforeDenoising) {
  PreprocessConfig cfg;
  cfg.resize = {24, 24};
  cfg.denoise.threads = 1;
  auto img = random_image(12, 12, 8);
  auto expected = denoise(resize(img, 24, 24), cfg.denoise);
  EXPECT_EQ(prepare_bytes(img, cfg), expected);
}
