#include <gtest/gtest.h>

#include <set>

#include "mosq/core.hpp"

using namespace mosq;

TEST(Rng, SubstreamsAreReproducibleAndDistinct) {
  Rng a = Rng::substream(42, "x"), b = Rng::substream(42, "x"), c = Rng::substream(42, "y");
  for (int i = 0; i < 10; ++i) {
    const auto va = a.next();
    EXPECT_EQ(va, b.next());
    EXPECT_NE(va, c.next());
  }
}

TEST(Rng, UniformAndBelowStayInRange) {
  Rng r(3);
  for (int i = 0; i < 10000; ++i) {
    const double u = r.uniform(0.75, 0.9);
    EXPECT_GE(u, 0.75);
    EXPECT_LT(u, 0.9);
    EXPECT_LT(r.below(7), 7u);
  }
}

TEST(Rng, ShuffleIsAPermutation) {
  std::vector<int> v(50);
  for (int i = 0; i < 50; ++i) v[i] = i;
  Rng r(9);
  r.shuffle(v);
  EXPECT_EQ(std::set<int>(v.begin(), v.end()).size(), 50u);
}

TEST(Digest, KnownSha256) {
  EXPECT_EQ(sha256_hex(std::string_view("abc")),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Taxonomy, TableOrder) {
  EXPECT_EQ(name(Species::Aegypti), "aegypti");
  EXPECT_EQ(genus_of(*parse_species("stephensi")), Genus::Anopheles);
  EXPECT_EQ(genus_of(*parse_species("salinarius")), Genus::Culex);
  EXPECT_EQ(index_within_genus(*parse_species("coronator")), 0);
  EXPECT_EQ(species_in_genus(Genus::Aedes, 2), *parse_species("taeniorhynchus"));
  EXPECT_EQ(*parse_genus("Culex"), Genus::Culex);
  EXPECT_FALSE(parse_species("pipiens"));
  for (int s = 0; s < kNumSpecies; ++s) {
    const auto sp = static_cast<Species>(s);
    EXPECT_EQ(species_in_genus(genus_of(sp), index_within_genus(sp)), sp);
  }
}

TEST(Argmax, LowestIndexWinsTies) {
  EXPECT_EQ(argmax(std::vector<double>{0.2, 0.4, 0.4}), 1);
  EXPECT_EQ(argmax(std::vector<double>{0.5, 0.5}), 0);
  EXPECT_EQ(argmax(std::vector<float>{0.1f, 0.2f, 0.7f}), 2);
}
