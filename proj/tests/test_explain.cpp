#include <gtest/gtest.h>

#include "mosq/explain.hpp"

using namespace mosq;

namespace {

FeatureTensor random_features(std::size_t C, std::uint64_t seed) {
  FeatureTensor f({kFeatureGrid, kFeatureGrid, C});
  Rng r(seed);
  for (auto& v : f.data) v = static_cast<float>(r.uniform(0.0, 1.0));
  return f;
}

// weight column c of the output layer
std::vector<double> output_column(HeadModel<double>& m, std::size_t c) {
  for (auto& p : m.parameters()) {
    if (p.name != "output.weight") continue;
    std::vector<double> w;
    for (std::size_t k = 0; k < p.value->dim(0); ++k) w.push_back(p.value->row(k)[c]);
    return w;
  }
  return {};
}

}  // namespace

TEST(Cam, LinearHeadWeightsAreOutputColumn) {
  HeadModel<double> m({"linear", "conv2d_93", 192, {}, {}, 3}, 4);
  const auto f = random_features(192, 1);
  for (std::size_t c = 0; c < 3; ++c) {
    const auto w = cam_weights(m, f, c);
    const auto ref = output_column(m, c);
    for (std::size_t k = 0; k < w.size(); ++k) EXPECT_NEAR(w[k], ref[k], 1e-12);
    // literal map: sum_k w_k f_k(i, j)
    const auto map = class_activation_map(f, w);
    for (std::size_t p = 0; p < map.size(); ++p) {
      double lit = 0;
      for (std::size_t k = 0; k < 192; ++k) lit += ref[k] * f.data[p * 192 + k];
      EXPECT_NEAR(map[p], lit, 1e-9);
    }
  }
}

TEST(Cam, MapMeanIsPooledLogitForLinearHead) {
  HeadModel<double> m({"linear", "conv2d_93", 192, {}, {}, 3}, 4);
  const auto f = random_features(192, 2);
  const auto logits = m.infer(nn::global_average_pool(f.cast<double>()));
  for (std::size_t c = 0; c < 3; ++c) {
    const auto map = class_activation_map(f, cam_weights(m, f, c));
    double mean = 0;
    for (double v : map) mean += v;
    mean /= static_cast<double>(map.size());
    double bias = 0;
    for (auto& p : m.parameters())
      if (p.name == "output.bias") bias = (*p.value)[c];
    EXPECT_NEAR(mean + bias, logits[c], 1e-9);
  }
}

TEST(Cam, HeatmapInUnitRange) {
  auto model = build_head(HeadName::Aedes, 3);
  StandinBackbone bb(3);
  ImageTensor img(64, 48, Scale::Unit);
  Rng r(5);
  for (auto& v : img.data) v = static_cast<float>(r.uniform());
  for (int c = 0; c < 3; ++c) {
    auto res = cam(model, bb, img, c);
    EXPECT_EQ(res.heat_h, 64);
    EXPECT_EQ(res.heat_w, 48);
    ASSERT_EQ(res.heatmap.size(), 64u * 48u);
    for (double v : res.heatmap) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
    EXPECT_EQ(res.overlay.height, 64);
    EXPECT_EQ(res.overlay.scale, Scale::Byte);
  }
  EXPECT_THROW(cam(model, bb, img, 3), Error);
  EXPECT_THROW(cam(model, bb, img, -1), Error);
}

TEST(Cam, ConstantMapGivesZeroHeatmap) {
  CamResult r;
  r.grid_h = r.grid_w = 4;
  r.raw_map.assign(16, 2.5);
  ImageTensor img(8, 8, Scale::Byte, 100.0f);
  render_cam(r, img);
  for (double v : r.heatmap) EXPECT_EQ(v, 0.0);
  r.raw_map.assign(16, -1.0);  // all negative: ReLU leaves a constant zero map
  render_cam(r, img);
  for (double v : r.heatmap) EXPECT_EQ(v, 0.0);
}

TEST(Cam, OverlayBlend) {
  ImageTensor img(1, 2, Scale::Byte, 100.0f);
  auto o = heat_overlay(img, {0.0, 1.0});
  EXPECT_EQ(o.at(0, 0, 0), 60.0f);   // 0.6*100
  EXPECT_EQ(o.at(0, 0, 2), 162.0f);  // 0.6*100 + 0.4*255
  EXPECT_EQ(o.at(0, 1, 0), 162.0f);
  EXPECT_EQ(o.at(0, 1, 1), 60.0f);
  EXPECT_THROW(heat_overlay(img, {0.0}), Error);
}

TEST(Cam, ResizeGridIdentityAndConstant) {
  std::vector<double> g{1, 2, 3, 4};
  EXPECT_EQ(resize_grid(g, 2, 2, 2, 2), g);
  auto up = resize_grid(std::vector<double>(9, 3.0), 3, 3, 10, 7);
  for (double v : up) EXPECT_DOUBLE_EQ(v, 3.0);
}

TEST(Cam, RecordedWeightsNeedForward) {
  auto m = build_head(HeadName::Genus, 1);
  EXPECT_THROW(cam_weights_recorded(m, 0), Error);
}

TEST(Cam, RawMapCsvShape) {
  CamResult r;
  r.grid_h = 2;
  r.grid_w = 3;
  r.raw_map = {1, 2, 3, 4, 5, 6};
  EXPECT_EQ(raw_map_csv(r), "1,2,3\n4,5,6\n");
}
