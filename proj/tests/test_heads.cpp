#include <gtest/gtest.h>

#include <filesystem>

#include "gradcheck.hpp"
#include "mosq/heads.hpp"

using namespace mosq;

namespace {

std::size_t row_in(const std::vector<LayerRow>& rows, const std::string& layer) {
  for (const auto& r : rows)
    if (r.layer == layer) return r.in;
  return 0;
}

std::size_t row_out(const std::vector<LayerRow>& rows, const std::string& layer) {
  for (const auto& r : rows)
    if (r.layer == layer) return r.out;
  return 0;
}

ImageTensor unit_image(int side, std::uint64_t seed) {
  ImageTensor img(side, side, Scale::Unit);
  Rng r(seed);
  for (auto& v : img.data) v = static_cast<float>(r.uniform());
  return img;
}

}  // namespace

TEST(HeadSpec, RegisteredWidths) {
  auto genus = build_head(HeadName::Genus, 1).layer_rows();
  EXPECT_EQ(row_in(genus, "GlobalAveragePooling"), 1088u);
  EXPECT_EQ(row_out(genus, "concat_1"), 1152u);
  EXPECT_EQ(row_out(genus, "softmax"), 3u);

  auto aedes = build_head(HeadName::Aedes, 1).layer_rows();
  EXPECT_EQ(row_in(aedes, "GlobalAveragePooling"), 192u);
  EXPECT_EQ(row_out(aedes, "concat_1"), 640u);

  auto anopheles = build_head(HeadName::Anopheles, 1).layer_rows();
  EXPECT_EQ(row_in(anopheles, "softmax"), 256u);
  EXPECT_EQ(row_out(anopheles, "softmax"), 3u);
  EXPECT_EQ(row_out(anopheles, "concat_1"), 0u);

  auto culex = build_head(HeadName::Culex, 1).layer_rows();
  EXPECT_EQ(row_in(culex, "GlobalAveragePooling"), 160u);
  EXPECT_EQ(row_in(culex, "dense_5"), 512u);
  EXPECT_EQ(row_out(culex, "concat_1"), 1664u);

  auto species = build_head(HeadName::SpeciesOnly, 1).layer_rows();
  EXPECT_EQ(row_in(species, "softmax"), 1152u);
  EXPECT_EQ(row_out(species, "softmax"), 9u);
}

TEST(HeadSpec, EndpointsMatchBackbone) {
  for (auto h : kHeadNames) {
    const auto s = head_spec(h);
    EXPECT_EQ(endpoint(s.endpoint).channels, s.in_channels) << s.name;
    EXPECT_EQ(head_name(s), h);
  }
}

TEST(HeadSpec, RejectsBadConcat) {
  HeadSpec s{"toy", "conv2d_93", 4, {3}, {2}, 2};
  EXPECT_THROW(HeadModel<double>(s, 1), Error);
}

TEST(Head, ForwardGivesDistributions) {
  auto h = build_head(HeadName::Aedes, 3);
  StandinBackbone bb(3);
  auto p = head_probabilities(h, bb, unit_image(40, 1));
  ASSERT_EQ(p.size(), 3u);
  double s = 0;
  for (double v : p) s += v;
  EXPECT_NEAR(s, 1.0, 1e-6);
}

TEST(Head, SeedDeterminesWeights) {
  EXPECT_EQ(build_head(HeadName::Genus, 5).named_tensors(), build_head(HeadName::Genus, 5).named_tensors());
  EXPECT_NE(build_head(HeadName::Genus, 5).named_tensors(), build_head(HeadName::Genus, 6).named_tensors());
}

TEST(Head, InferMatchesEvalForward) {
  auto h = build_head(HeadName::Culex, 2).cast<double>();
  Rng rng(4);
  auto x = gradcheck::random_tensor({3, 160}, rng, 0, 1);
  auto a = h.infer(x);
  auto b = h.forward(x, nn::Mode::Eval);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(Head, CheckpointRoundTrip) {
  auto dir = std::filesystem::temp_directory_path() / "mosq_test_heads";
  std::filesystem::create_directories(dir);
  auto h = build_head(HeadName::SpeciesOnly, 9, {false, 0.2});
  save_head(h, dir / "h.fmap", 7);
  auto back = load_head(dir / "h.fmap");
  EXPECT_EQ(back.spec(), h.spec());
  EXPECT_EQ(back.options(), h.options());
  EXPECT_EQ(back.named_tensors(), h.named_tensors());
  std::filesystem::remove_all(dir);
}

TEST(Head, BackwardBeforeForwardThrows) {
  auto h = build_head(HeadName::Genus, 1);
  EXPECT_THROW(h.backward(nn::Tensor<float>({1, 3})), Error);
}

class HeadGradient : public ::testing::TestWithParam<HeadName> {};

TEST_P(HeadGradient, MatchesFiniteDifferences) {
  const auto h = GetParam();
  auto model = build_head(h, 21).cast<double>();
  const auto r = gradcheck::head(model, 31, 32, 10);
  EXPECT_TRUE(r.ok()) << r.what << " max rel " << r.max_rel << " over " << r.checked << " skipped " << r.skipped;
}

INSTANTIATE_TEST_SUITE_P(All, HeadGradient, ::testing::ValuesIn(kHeadNames),
                         [](const auto& info) { return std::string(name(info.param)); });

TEST(HeadGradient, SmallConcatHeadExhaustive) {
  HeadSpec s{"toy", "conv2d_93", 6, {5, 4, 3}, {1, 3}, 3};
  HeadModel<double> m(s, 8);
  const auto r = gradcheck::head(m, 9, 32, 1000);
  EXPECT_TRUE(r.ok()) << r.max_rel;
}

TEST(HeadGradient, LinearHead) {
  HeadSpec s{"linear", "conv2d_93", 6, {}, {}, 4};
  HeadModel<double> m(s, 8);
  const auto r = gradcheck::head(m, 10, 8, 1000);
  EXPECT_TRUE(r.ok()) << r.max_rel;
}

TEST(HeadGradient, ThreePointErrorIsTruncation) {
  // batch-norm over 4 rows is strongly curved: the three-point stencil misses
  // at eps 1e-3 but recovers at 1e-4, and the five-point one agrees at 1e-3
  auto model = build_head(HeadName::Culex, 21).cast<double>();
  const auto coarse = gradcheck::head(model, 31, 4, 25, 1e-3);
  const auto fine = gradcheck::head(model, 31, 4, 25, 1e-4);
  EXPECT_GT(coarse.max_rel_three_point, gradcheck::kTolerance);
  EXPECT_LE(fine.max_rel_three_point, gradcheck::kTolerance);
  EXPECT_TRUE(coarse.ok()) << coarse.max_rel;
}

TEST(Backbone, StandinIsDeterministic) {
  StandinBackbone a(1), b(1), c(2);
  auto img = unit_image(30, 2);
  EXPECT_EQ(a.extract(img, "conv2d_93"), b.extract(img, "conv2d_93"));
  EXPECT_NE(a.extract(img, "conv2d_93"), c.extract(img, "conv2d_93"));
  auto f = a.extract(img, "conv2d_111");
  EXPECT_EQ(f.shape, (std::vector<std::size_t>{kFeatureGrid, kFeatureGrid, 160}));
  EXPECT_FALSE(a.trainable());
  EXPECT_THROW(a.extract(unit_image(10, 1), "conv2d_93"), Error);
}

TEST(Backbone, ImportedServesExportedFeatures) {
  StandinBackbone a(1);
  std::vector<ImageTensor> imgs{unit_image(20, 1), unit_image(20, 2)};
  auto archive = export_features(a, imgs, {"conv2d_93", "conv2d_111"});
  EXPECT_EQ(archive.entries.size(), 4u);
  ImportedBackbone imp(fmap_parse(fmap_serialize(archive)));
  EXPECT_EQ(imp.extract(imgs[1], "conv2d_111"), a.extract(imgs[1], "conv2d_111"));
  try {
    imp.extract(unit_image(20, 3), "conv2d_93");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::MissingFeature);
  }
}

TEST(Classify, HierarchicalRoutesThroughGenus) {
  StandinBackbone bb(1);
  auto g = build_head(HeadName::Genus, 1), a = build_head(HeadName::Aedes, 2), n = build_head(HeadName::Anopheles, 3),
       c = build_head(HeadName::Culex, 4);
  auto img = unit_image(30, 5);
  auto r = classify_hierarchical(img, &g, {{Genus::Aedes, &a}, {Genus::Anopheles, &n}, {Genus::Culex, &c}}, bb);
  EXPECT_EQ(static_cast<int>(r.label.genus), argmax(r.genus_probabilities));
  EXPECT_EQ(genus_of(r.label.species), r.label.genus);
  EXPECT_EQ(index_within_genus(r.label.species), argmax(r.species_probabilities));
  EXPECT_THROW(classify_hierarchical(img, &g, {}, bb), Error);
  EXPECT_THROW(classify_direct(img, nullptr, bb), Error);
}
