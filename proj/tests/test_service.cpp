#include <gtest/gtest.h>

#include <cstdlib>

#include "mosq/service.hpp"
#include "service_rig.hpp"

using namespace mosq;
using nlohmann::json;

namespace {

json rig_config(const std::filesystem::path& dir, bool with_model = true) {
  json j = {{"mode", "direct"},
            {"backbone", {{"kind", "standin"}, {"seed", 3}}},
            {"store", "store"},
            {"preprocess", {{"denoise", false}}}};
  if (with_model) j["models"] = {{"species", "species.fmap"}};
  (void)dir;
  return j;
}

}  // namespace

TEST(AlertPolicy, WatchlistAndThreshold) {
  AlertPolicy p;
  p.watchlist = {Species::Stephensi, Species::Crucians};
  p.critical = {Species::Stephensi};
  p.min_confidence = 0.7;
  EXPECT_FALSE(p.evaluate(Species::Aegypti, 0.99));
  EXPECT_FALSE(p.evaluate(Species::Stephensi, 0.69));
  auto a = p.evaluate(Species::Stephensi, 0.7);
  ASSERT_TRUE(a);
  EXPECT_EQ(a->severity, "critical");
  EXPECT_EQ(a->species, "stephensi");
  EXPECT_EQ(p.evaluate(Species::Crucians, 0.9)->severity, "warning");
}

TEST(AlertPolicy, CriticalMustBeWatched) {
  AlertPolicy p;
  p.watchlist = {Species::Crucians};
  p.critical = {Species::Stephensi};
  EXPECT_THROW(p.validate(), Error);
  p.critical = {};
  p.min_confidence = 0.0;
  EXPECT_THROW(p.validate(), Error);
}

TEST(ServiceConfig, ParsesAndResolvesPaths) {
  const json j = {{"mode", "hierarchical"},
                  {"models", {{"genus", "g.fmap"}, {"aedes", "a.fmap"}, {"culex", "c.fmap"}}},
                  {"alert_policy", {{"watchlist", {"stephensi"}}, {"critical", {"stephensi"}}, {"min_confidence", 0.8}}},
                  {"review_threshold", 0.4},
                  {"bind", {{"host", "0.0.0.0"}, {"port", 9000}}},
                  {"store", "data"}};
  const auto c = service_config_from_json(j, "/srv/mosq");
  EXPECT_EQ(c.mode, ClassifyMode::Hierarchical);
  EXPECT_EQ(c.genus_model, "/srv/mosq/g.fmap");
  EXPECT_EQ(c.genus_models.at(Genus::Culex), "/srv/mosq/c.fmap");
  EXPECT_EQ(c.genus_models.count(Genus::Anopheles), 0u);
  EXPECT_EQ(c.alerts.watchlist.size(), 1u);
  EXPECT_DOUBLE_EQ(c.alerts.min_confidence, 0.8);
  EXPECT_DOUBLE_EQ(c.review_threshold, 0.4);
  EXPECT_EQ(c.port, 9000);
  EXPECT_EQ(c.store, "/srv/mosq/data");
}

TEST(ServiceConfig, RejectsBadValues) {
  EXPECT_THROW(service_config_from_json({{"mode", "sideways"}}), Error);
  EXPECT_THROW(service_config_from_json({{"alert_policy", {{"watchlist", {"mosquito"}}}}}), Error);
  EXPECT_THROW(service_config_from_json({{"review_threshold", 1.5}}), Error);
}

TEST(ServiceConfig, EnvironmentOverrides) {
  ServiceConfig c;
  ::setenv("MOSQ_BIND", "10.0.0.2:7001", 1);
  ::setenv("MOSQ_STORE", "/var/lib/mosq", 1);
  apply_env_overrides(c);
  ::unsetenv("MOSQ_BIND");
  ::unsetenv("MOSQ_STORE");
  EXPECT_EQ(c.host, "10.0.0.2");
  EXPECT_EQ(c.port, 7001);
  EXPECT_EQ(c.store, "/var/lib/mosq");
}

TEST(Base64, KnownVectors) {
  const std::string s = "foobar";
  auto enc = [](std::string_view v) {
    return base64({reinterpret_cast<const std::uint8_t*>(v.data()), v.size()});
  };
  EXPECT_EQ(enc(""), "");
  EXPECT_EQ(enc("f"), "Zg==");
  EXPECT_EQ(enc("fo"), "Zm8=");
  EXPECT_EQ(enc(s), "Zm9vYmFy");
}

TEST(ServiceHttp, NoModelAnswers503) {
  fixtures::ServiceRig rig(fixtures::scratch_dir("svc503"), rig_config({}, false));
  auto c = rig.client();
  auto health = c->Get("/health");
  ASSERT_TRUE(health);
  EXPECT_EQ(health->status, 200);
  EXPECT_FALSE(json::parse(health->body)["model_loaded"].get<bool>());
  auto r = fixtures::post_specimen(*c, fixtures::specimen_pngs(1), json::object());
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 503);
}

TEST(ServiceHttp, RejectsBadUploads) {
  const auto dir = fixtures::scratch_dir("svcbad");
  save_head(fixtures::forced_species_head(Species::Stephensi, 5), dir / "species.fmap");
  fixtures::ServiceRig rig(dir, rig_config(dir));
  auto c = rig.client();
  auto none = fixtures::post_specimen(*c, {}, json::object());
  EXPECT_EQ(none->status, 400);
  auto garbage = fixtures::post_specimen(*c, {"not an image"}, json::object());
  EXPECT_EQ(garbage->status, 422);
  auto date = fixtures::post_specimen(*c, fixtures::specimen_pngs(2), {{"capture_date", "2024-13-40"}});
  EXPECT_EQ(date->status, 400);
  auto plain = c->Post("/specimens", "{}", "application/json");
  EXPECT_EQ(plain->status, 400);
  EXPECT_EQ(c->Get("/review/nothing")->status, 404);
}

TEST(ServiceHttp, IngestReviewRestartExport) {
  const auto dir = fixtures::scratch_dir("svc");
  save_head(fixtures::forced_species_head(Species::Stephensi, 5), dir / "species.fmap");
  fixtures::ServiceRig rig(dir, rig_config(dir));
  auto c = rig.client();

  const json meta = {{"specimen_id", "trap7-0001"}, {"trap_id", "trap7"}, {"capture_date", "2024-06-02"}};
  auto r = fixtures::post_specimen(*c, fixtures::specimen_pngs(11), meta);
  ASSERT_TRUE(r);
  ASSERT_EQ(r->status, 201) << r->body;
  const auto body = json::parse(r->body);
  EXPECT_EQ(body["prediction"]["label"], "stephensi");
  EXPECT_EQ(body["alert"]["severity"], "critical");
  EXPECT_TRUE(body["needs_review"].get<bool>());

  EXPECT_EQ(fixtures::post_specimen(*c, fixtures::specimen_pngs(11), meta)->status, 409);

  auto pending = json::parse(c->Get("/review/pending")->body)["items"];
  ASSERT_EQ(pending.size(), 1u);
  EXPECT_EQ(pending[0]["specimen_id"], "trap7-0001");
  EXPECT_EQ(pending[0]["images"].size(), 3u);
  EXPECT_EQ(pending[0]["cams"].size(), 3u);

  auto item = json::parse(c->Get("/review/trap7-0001")->body);
  EXPECT_FALSE(item["images"][0]["png_base64"].get<std::string>().empty());
  const std::string img_url = item["images"][0]["url"];
  auto png = c->Get(img_url);
  ASSERT_EQ(png->status, 200);
  EXPECT_EQ(png->get_header_value("Content-Type"), "image/png");
  EXPECT_EQ(c->Get(item["cams"][0]["url"].get<std::string>())->status, 200);

  const json override_body = {{"decision", "override"}, {"label", "quadrimaculatus"}, {"reviewer", "ana"}};
  auto d = c->Post("/review/trap7-0001/decision", override_body.dump(), "application/json");
  ASSERT_EQ(d->status, 200) << d->body;
  EXPECT_EQ(json::parse(d->body)["status"], "overridden");

  const json confirm = {{"decision", "confirm"}, {"reviewer", "ben"}};
  EXPECT_EQ(c->Post("/review/trap7-0001/decision", confirm.dump(), "application/json")->status, 409);
  EXPECT_EQ(c->Post("/review/trap7-0001/decision", R"({"decision":"override"})", "application/json")->status, 400);
  EXPECT_TRUE(json::parse(c->Get("/review/pending")->body)["items"].empty());

  rig.restart();
  c = rig.client();
  auto after = json::parse(c->Get("/review/trap7-0001")->body);
  EXPECT_EQ(after["status"], "overridden");
  EXPECT_EQ(after["review"]["label"], "quadrimaculatus");

  auto corpus = json::parse(c->Get("/export/training-corpus")->body)["rows"];
  ASSERT_EQ(corpus.size(), 3u);
  for (const auto& row : corpus) {
    EXPECT_EQ(row["label"], "quadrimaculatus");
    EXPECT_EQ(row["source"], "override");
  }
  auto csv = c->Get("/export/training-corpus?format=csv");
  EXPECT_NE(csv->body.find("quadrimaculatus"), std::string::npos);

  auto summary_res = c->Get("/summary?since=2024-06-01");
  auto summary = json::parse(summary_res->body);
  ASSERT_EQ(summary_res->status, 200) << summary_res->body;
  EXPECT_EQ(summary["specimens"], 1);
  EXPECT_EQ(summary["species"]["quadrimaculatus"], 1);
  EXPECT_EQ(summary["alerts"]["critical"], 1);
  EXPECT_EQ(summary["traps"]["trap7"]["quadrimaculatus"], 1);
  EXPECT_EQ(json::parse(c->Get("/summary?since=2024-07-01")->body)["specimens"], 0);
  EXPECT_EQ(c->Get("/summary?since=yesterday")->status, 400);

  // forced re-decision supersedes after restart
  json forced = confirm;
  forced["force"] = true;
  EXPECT_EQ(c->Post("/review/trap7-0001/decision", forced.dump(), "application/json")->status, 200);
  rig.restart();
  c = rig.client();
  EXPECT_EQ(json::parse(c->Get("/review/trap7-0001")->body)["status"], "confirmed");
  EXPECT_EQ(json::parse(c->Get("/export/training-corpus")->body)["rows"][0]["label"], "stephensi");
}

TEST(ServiceHttp, ApiToken) {
  const auto dir = fixtures::scratch_dir("svctok");
  auto cfg = rig_config(dir, false);
  cfg["api_token"] = "s3cret";
  fixtures::ServiceRig rig(dir, cfg);
  auto c = rig.client();
  EXPECT_EQ(c->Get("/health")->status, 401);
  c->set_bearer_token_auth("s3cret");
  EXPECT_EQ(c->Get("/health")->status, 200);
}

TEST(ServiceHttp, UnwatchedConfidentPredictionSkipsReview) {
  const auto dir = fixtures::scratch_dir("svcquiet");
  save_head(fixtures::forced_species_head(Species::Aegypti, 6), dir / "species.fmap");
  auto cfg = rig_config(dir);
  cfg["alert_policy"] = {{"watchlist", {"stephensi"}}, {"critical", {"stephensi"}}};
  fixtures::ServiceRig rig(dir, cfg);
  auto c = rig.client();
  auto r = fixtures::post_specimen(*c, fixtures::specimen_pngs(12), json::object());
  ASSERT_EQ(r->status, 201) << r->body;
  const auto body = json::parse(r->body);
  EXPECT_TRUE(body["alert"].is_null());
  EXPECT_FALSE(body["needs_review"].get<bool>());
  EXPECT_TRUE(json::parse(c->Get("/review/pending")->body)["items"].empty());
  EXPECT_EQ(body["specimen_id"].get<std::string>().size(), 16u);
}
