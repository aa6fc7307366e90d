#include <gtest/gtest.h>

#include "mosq/augment.hpp"
#include "mosq/catalog.hpp"

using namespace mosq;

namespace {

ImageTensor random_image(int h, int w, std::uint64_t seed) {
  ImageTensor img(h, w);
  Rng r(seed);
  for (auto& v : img.data) v = static_cast<float>(r.below(256));
  return img;
}

}  // namespace

TEST(Augment, DefaultRanges) {
  AugmentationSpec s;
  EXPECT_EQ(s.zoom_in.lo, 1.05);
  EXPECT_EQ(s.zoom_in.hi, 1.50);
  EXPECT_EQ(s.zoom_out.lo, 0.75);
  EXPECT_EQ(s.zoom_out.hi, 0.90);
  EXPECT_EQ(s.gain_up.lo, 1.05);
  EXPECT_EQ(s.gain_up.hi, 1.50);
  EXPECT_EQ(s.gain_down.lo, 0.75);
  EXPECT_EQ(s.gain_down.hi, 0.95);
  EXPECT_NO_THROW(s.validate());
}

TEST(Augment, FactorsAreKeyedByImageId) {
  AugmentationSpec s;
  s.seed = 11;
  EXPECT_EQ(draw_factors(s, "a"), draw_factors(s, "a"));
  EXPECT_NE(draw_factors(s, "a"), draw_factors(s, "b"));
  s.seed = 12;
  AugmentationSpec t;
  t.seed = 11;
  EXPECT_NE(draw_factors(s, "a"), draw_factors(t, "a"));
}

TEST(Augment, FactorsLieInRanges) {
  AugmentationSpec s;
  s.seed = 5;
  for (int i = 0; i < 2000; ++i) {
    const auto f = draw_factors(s, "img" + std::to_string(i));
    for (auto k : kAugmentKinds) EXPECT_TRUE(s.range(k).contains(f[static_cast<int>(k)]));
  }
}

TEST(Augment, OneImageGivesFive) {
  AugmentationSpec s;
  auto set = augment_one("x", random_image(20, 24, 1), s);
  EXPECT_EQ(set.image_count(), 5u);
  ASSERT_EQ(set.variants.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(set.variants[i].kind, kAugmentKinds[i]);
    EXPECT_EQ(set.variants[i].image.height, 20);
    EXPECT_EQ(set.variants[i].image.width, 24);
  }
}

TEST(Augment, GainScalesAndSaturates) {
  ImageTensor img(1, 2);
  img.set_pixel(0, 0, 100, 200, 0);
  img.set_pixel(0, 1, 10, 255, 3);
  auto g = gain(img, 1.5);
  EXPECT_EQ(g.at(0, 0, 0), 150.0f);
  EXPECT_EQ(g.at(0, 0, 1), 255.0f);
  EXPECT_EQ(g.at(0, 1, 2), 5.0f);  // 4.5 rounds away from zero
  EXPECT_THROW(gain(img, 0.0), Error);
}

TEST(Augment, ZoomKeepsSizeAndPadsWithBorderColour) {
  ImageTensor img(40, 40, Scale::Byte, 50.0f);
  for (int y = 10; y < 30; ++y)
    for (int x = 10; x < 30; ++x) img.set_pixel(y, x, 200, 100, 0);
  auto out = zoom(img, 0.8);
  EXPECT_EQ(out.height, 40);
  EXPECT_EQ(out.at(0, 0, 0), 50.0f);
  EXPECT_EQ(out.at(20, 20, 0), 200.0f);
  auto in = zoom(img, 1.5);
  EXPECT_EQ(in.height, 40);
  // the bright centre grows under zoom-in
  EXPECT_EQ(in.at(9, 20, 0), 200.0f);
  EXPECT_EQ(img.at(9, 20, 0), 50.0f);
  EXPECT_EQ(zoom(img, 1.0), img);
  EXPECT_THROW(zoom(img, -1.0), Error);
}

TEST(Augment, ExpandStreamsEveryEntry) {
  std::vector<std::string> ids{"a", "b", "c"};
  AugmentationSpec s;
  auto sets = expand(ids, s, [](const std::string& id) { return random_image(8, 8, id[0]); });
  ASSERT_EQ(sets.size(), 3u);
  std::size_t images = 0;
  for (auto& set : sets) images += set.image_count();
  EXPECT_EQ(images, 15u);
  EXPECT_THROW(expand({}, s, [](const std::string&) { return ImageTensor(2, 2); }), Error);
  try {
    expand(ids, s, [](const std::string&) -> ImageTensor { throw std::runtime_error("gone"); });
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::MissingImage);
  }
}

TEST(Augment, ManifestExpansionOnlyTouchesTrain) {
  DatasetManifest m;
  for (int i = 0; i < 30; ++i) {
    ManifestEntry e;
    e.image_id = "i" + std::to_string(i);
    e.specimen_id = "s" + std::to_string(i / 3);
    e.label = "aegypti";
    e.partition = i < 18 ? Partition::Train : (i < 24 ? Partition::Validation : Partition::Test);
    m.entries.push_back(e);
  }
  AugmentationSpec s;
  auto out = expand_manifest(m, s);
  EXPECT_EQ(out.entries.size(), 30u + 18u * 4u);
  for (const auto& e : out.entries)
    if (e.augmented_from) EXPECT_EQ(e.partition, Partition::Train);
}

TEST(Augment, RejectsBadRanges) {
  AugmentationSpec s;
  s.zoom_out = {0.9, 1.1};
  EXPECT_THROW(s.validate(), Error);
  s = {};
  s.gain_up = {1.4, 1.2};
  EXPECT_THROW(s.validate(), Error);
}
