#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <fstream>
#include <sstream>

#include "mosq/catalog.hpp"
#include "mosq/image.hpp"
#include "service_rig.hpp"
#include "synthetic.hpp"

using namespace mosq;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out, err;
};

Run mosq_cli(const std::string& args, const fs::path& dir) {
  const auto err_file = dir / "stderr.txt";
  const std::string cmd = std::string(MOSQ_CLI) + " " + args + " 2>" + err_file.string();
  Run r;
  FILE* p = ::popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
  const int status = ::pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream e(err_file);
  std::stringstream ss;
  ss << e.rdbuf();
  r.err = ss.str();
  return r;
}

/// PNG files plus an unpartitioned manifest for a small genus corpus.
fs::path write_corpus(const fs::path& dir, int per_class) {
  auto corpus = fixtures::genus_corpus(per_class, 17, 40);
  for (const auto& e : corpus.manifest.entries) save_image(corpus.images.at(e.image_id), dir / e.path);
  save_manifest(corpus.manifest, dir / "manifest.csv");
  return dir / "manifest.csv";
}

class Cli : public ::testing::Test {
protected:
  void SetUp() override { dir = fixtures::scratch_dir("cli"); }
  fs::path dir;
};

}  // namespace

TEST_F(Cli, HelpAndUnknownCommand) {
  EXPECT_EQ(mosq_cli("--help", dir).code, 0);
  EXPECT_NE(mosq_cli("fly-away", dir).code, 0);
}

TEST_F(Cli, SetNeedsThreeImages) {
  const auto r = mosq_cli("classify --model none.fmap --set a.png b.png", dir);
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("set requires exactly three images"), std::string::npos) << r.err;
}

TEST_F(Cli, MissingFileIsInputError) {
  const auto r = mosq_cli("denoise --in " + (dir / "absent.png").string() + " --out " + (dir / "x.png").string(), dir);
  EXPECT_EQ(r.code, 1);
  EXPECT_FALSE(r.err.empty());
}

TEST_F(Cli, DenoiseWritesImage) {
  Rng rng(3);
  save_image(fixtures::hue_blob(0, 3, rng, 24), dir / "in.png");
  const auto r = mosq_cli("denoise --in " + (dir / "in.png").string() + " --out " + (dir / "out.ppm").string(), dir);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto img = load_image(dir / "out.ppm");
  EXPECT_EQ(img.height, 24);
  EXPECT_EQ(img.width, 24);
}

TEST_F(Cli, SplitKeepsSpecimensTogether) {
  const auto m = write_corpus(dir, 6);
  const auto r = mosq_cli("split --json --val 0.3 --seed 2 --manifest " + m.string() + " --out " + (dir / "split.csv").string(), dir);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto counts = json::parse(r.out);
  for (const auto& g : {"Aedes", "Anopheles", "Culex"}) {
    EXPECT_EQ(counts[g]["train"].get<int>() + counts[g]["validation"].get<int>(), 6);
    EXPECT_GT(counts[g]["validation"].get<int>(), 0);
  }
  EXPECT_EQ(load_manifest(dir / "split.csv").entries.size(), 18u);
}

TEST_F(Cli, TrainIsDeterministicAndFeedsEvalClassifyExplain) {
  const auto m = write_corpus(dir, 6);
  const std::string common = "train --json --no-denoise --epochs1 3 --epochs2 0 --batch-size 8 --seed 9 --manifest " + m.string();
  const auto a = mosq_cli(common + " --out " + (dir / "run-a").string(), dir);
  ASSERT_EQ(a.code, 0) << a.err;
  const auto b = mosq_cli(common + " --out " + (dir / "run-b").string(), dir);
  ASSERT_EQ(b.code, 0) << b.err;
  const auto ja = json::parse(a.out), jb = json::parse(b.out);
  EXPECT_EQ(ja["checkpoint_sha256"], jb["checkpoint_sha256"]);
  EXPECT_EQ(ja["validation_items"], jb["validation_items"]);
  EXPECT_TRUE(fs::exists(dir / "run-a" / "checkpoint.fmap"));

  const auto model = (dir / "run-a" / "checkpoint.fmap").string();
  const auto ev = mosq_cli("eval --json --no-denoise --partition all --model " + model + " --manifest " + m.string() +
                               " --out " + (dir / "eval" / "report.json").string(), dir);
  ASSERT_EQ(ev.code, 0) << ev.err;
  EXPECT_TRUE(fs::exists(dir / "eval" / "report.csv"));
  const auto report = json::parse(ev.out);
  EXPECT_FALSE(report.empty());

  const auto img = [&](const char* id) { return (dir / (std::string(id) + ".png")).string(); };
  const auto cl = mosq_cli("classify --json --no-denoise --model " + model + " --set " + img("Aedes-0") + " " +
                               img("Aedes-1") + " " + img("Aedes-2"), dir);
  ASSERT_EQ(cl.code, 0) << cl.err;
  const auto res = json::parse(cl.out);
  ASSERT_EQ(res.size(), 1u);
  EXPECT_EQ(res[0]["input"], "set");
  double sum = 0;
  for (double p : res[0]["probabilities"]) sum += p;
  EXPECT_NEAR(sum, 1.0, 1e-6);  // float32 head

  const auto ex = mosq_cli("explain --no-denoise --model " + model + " --image " + img("Culex-0") + " --out " +
                               (dir / "cam.png").string(), dir);
  ASSERT_EQ(ex.code, 0) << ex.err;
  EXPECT_TRUE(fs::exists(dir / "cam.png"));
}
