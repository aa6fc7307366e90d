#pragma once

#include <openssl/evp.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

#include "httplib.h"
#include "json.hpp"
#include "mosq/catalog.hpp"
#include "mosq/eval.hpp"
#include "mosq/explain.hpp"
#include "mosq/heads.hpp"
#include "mosq/preprocess.hpp"

namespace mosq {

inline constexpr std::size_t kMaxImagesPerSpecimen = 12;

struct AlertPolicy {
  std::set<Species> watchlist = {Species::Aegypti,    Species::Infirmatus,      Species::Taeniorhynchus,
                                 Species::Crucians,   Species::Quadrimaculatus, Species::Stephensi,
                                 Species::Coronator,  Species::Nigripalpus,     Species::Salinarius};
  std::set<Species> critical = {Species::Aegypti, Species::Stephensi};
  double min_confidence = 0.5;

  void validate() const {
    if (!(min_confidence > 0.0 && min_confidence <= 1.0)) throw Error(ErrorKind::ConfigError, "min_confidence must be in (0, 1]");
    for (auto s : critical)
      if (!watchlist.count(s)) throw Error(ErrorKind::ConfigError, "critical species must be on the watchlist");
  }

  std::optional<Alert> evaluate(Species s, double confidence) const {
    if (!watchlist.count(s) || confidence < min_confidence) return std::nullopt;
    return Alert{std::string(name(s)), critical.count(s) ? "critical" : "warning", confidence, now_iso8601()};
  }
};

enum class ClassifyMode { Direct, Hierarchical };

struct ServiceConfig {
  ClassifyMode mode = ClassifyMode::Direct;
  std::string species_model;                  // direct
  std::string genus_model;                    // hierarchical
  std::map<Genus, std::string> genus_models;  // hierarchical, species within genus
  std::string backbone = "standin";           // "standin" or a feature archive path
  std::uint64_t backbone_seed = 0;
  AlertPolicy alerts;
  double review_threshold = 0.6;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::filesystem::path store = "mosq-store";
  std::string api_token;
  PreprocessConfig preprocess;

  void validate() const {
    alerts.validate();
    if (!(review_threshold >= 0.0 && review_threshold <= 1.0)) throw Error(ErrorKind::ConfigError, "review_threshold must be in [0, 1]");
    preprocess.denoise.validate();
  }
};

inline std::set<Species> species_set(const nlohmann::json& j) {
  std::set<Species> out;
  for (const auto& v : j) {
    auto s = parse_species(v.get<std::string>());
    if (!s) throw Error(ErrorKind::ConfigError, "unknown species " + v.get<std::string>());
    out.insert(*s);
  }
  return out;
}

/// Parses a config document; relative model paths resolve against `base`.
inline ServiceConfig service_config_from_json(const nlohmann::json& j, const std::filesystem::path& base = {}) {
  ServiceConfig c;
  auto path_of = [&](const std::string& p) { return p.empty() || base.empty() ? p : (base / p).lexically_normal().string(); };
  const auto mode = j.value("mode", std::string("direct"));
  if (mode == "direct")
    c.mode = ClassifyMode::Direct;
  else if (mode == "hierarchical")
    c.mode = ClassifyMode::Hierarchical;
  else
    throw Error(ErrorKind::ConfigError, "mode must be direct or hierarchical");
  if (auto m = j.find("models"); m != j.end()) {
    c.species_model = path_of(m->value("species", std::string()));
    c.genus_model = path_of(m->value("genus", std::string()));
    for (int g = 0; g < kNumGenera; ++g) {
      std::string key(name(static_cast<Genus>(g)));
      std::transform(key.begin(), key.end(), key.begin(), [](unsigned char ch) { return std::tolower(ch); });
      if (m->contains(key)) c.genus_models[static_cast<Genus>(g)] = path_of(m->at(key).get<std::string>());
    }
  }
  if (auto b = j.find("backbone"); b != j.end()) {
    const auto kind = b->value("kind", std::string("standin"));
    c.backbone = kind == "standin" ? kind : path_of(b->at("path").get<std::string>());
    c.backbone_seed = b->value("seed", std::uint64_t{0});
  }
  if (auto a = j.find("alert_policy"); a != j.end()) {
    if (a->contains("watchlist")) c.alerts.watchlist = species_set(a->at("watchlist"));
    if (a->contains("critical")) c.alerts.critical = species_set(a->at("critical"));
    c.alerts.min_confidence = a->value("min_confidence", c.alerts.min_confidence);
  }
  c.review_threshold = j.value("review_threshold", c.review_threshold);
  if (auto b = j.find("bind"); b != j.end()) {
    c.host = b->value("host", c.host);
    c.port = b->value("port", c.port);
  }
  if (j.contains("store")) c.store = path_of(j.at("store").get<std::string>());
  c.api_token = j.value("api_token", std::string());
  if (auto p = j.find("preprocess"); p != j.end()) {
    c.preprocess.denoise_enabled = p->value("denoise", true);
    c.preprocess.denoise.window_radius = p->value("window_radius", c.preprocess.denoise.window_radius);
    c.preprocess.denoise.threads = p->value("threads", c.preprocess.denoise.threads);
  }
  c.validate();
  return c;
}

/// MOSQ_BIND ("host:port" or "host") and MOSQ_STORE override the file.
inline void apply_env_overrides(ServiceConfig& c) {
  if (const char* b = std::getenv("MOSQ_BIND"); b && *b) {
    std::string s = b;
    if (const auto colon = s.rfind(':'); colon != std::string::npos) {
      c.host = s.substr(0, colon);
      c.port = std::stoi(s.substr(colon + 1));
    } else {
      c.host = s;
    }
  }
  if (const char* s = std::getenv("MOSQ_STORE"); s && *s) c.store = s;
}

inline ServiceConfig load_service_config(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  auto j = nlohmann::json::parse(bytes.begin(), bytes.end(), nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw Error(ErrorKind::ConfigError, "config is not a JSON object");
  auto c = service_config_from_json(j, path.parent_path());
  apply_env_overrides(c);
  return c;
}

// ---------------------------------------------------------------------------
// Classifiers

struct SpecimenPrediction {
  Prediction prediction;
  Species species = Species::Aegypti;
  std::vector<double> genus_probabilities;  // hierarchical only
};

/// Immutable, shared read-only by request handlers; replaced as a whole.
struct Classifier {
  std::string model_id;
  std::function<SpecimenPrediction(const std::vector<ImageTensor>&)> predict;
  std::function<CamResult(const ImageTensor&, const SpecimenPrediction&)> explain;  // optional
};

namespace detail {

inline std::vector<double> mean_rows(const std::vector<std::vector<double>>& rows) {
  std::vector<double> m(rows.front().size(), 0.0);
  for (const auto& r : rows)
    for (std::size_t i = 0; i < m.size(); ++i) m[i] += r[i];
  for (auto& v : m) v /= static_cast<double>(rows.size());
  return m;
}

/// Set protocol for three images, the same elementwise mean otherwise.
inline std::vector<double> aggregate(const std::vector<std::vector<double>>& rows) {
  return rows.size() == kSetSize ? predict_set(rows).probabilities : mean_rows(rows);
}

}  // namespace detail

inline std::shared_ptr<const Classifier> direct_classifier(std::shared_ptr<const Head> head,
                                                           std::shared_ptr<const Backbone> backbone,
                                                           std::string model_id) {
  if (head->num_classes() != static_cast<std::size_t>(kNumSpecies))
    throw Error(ErrorKind::ConfigError, "direct mode needs a nine-class species head");
  auto c = std::make_shared<Classifier>();
  c->model_id = std::move(model_id);
  c->predict = [head, backbone](const std::vector<ImageTensor>& imgs) {
    std::vector<std::vector<double>> rows;
    for (const auto& img : imgs) rows.push_back(head_probabilities(*head, *backbone, img));
    SpecimenPrediction out;
    out.prediction.classes = species_classes();
    out.prediction.probabilities = detail::aggregate(rows);
    out.species = static_cast<Species>(argmax(out.prediction.probabilities));
    out.prediction.label = std::string(name(out.species));
    return out;
  };
  c->explain = [head, backbone](const ImageTensor& img, const SpecimenPrediction& p) {
    return cam(*head, *backbone, img, static_cast<int>(p.species));
  };
  return c;
}

/// Genus head on the mean genus vector, then the routed within-genus head on
/// its own mean. The two vectors are reported separately.
inline std::shared_ptr<const Classifier> hierarchical_classifier(std::shared_ptr<const Head> genus,
                                                                 std::map<Genus, std::shared_ptr<const Head>> species,
                                                                 std::shared_ptr<const Backbone> backbone,
                                                                 std::string model_id) {
  auto c = std::make_shared<Classifier>();
  c->model_id = std::move(model_id);
  c->predict = [genus, species, backbone](const std::vector<ImageTensor>& imgs) {
    std::vector<std::vector<double>> grows;
    for (const auto& img : imgs) grows.push_back(head_probabilities(*genus, *backbone, img));
    SpecimenPrediction out;
    out.genus_probabilities = detail::aggregate(grows);
    const auto g = static_cast<Genus>(argmax(out.genus_probabilities));
    auto it = species.find(g);
    if (it == species.end() || !it->second) throw Error(ErrorKind::ModelNotLoaded, "species head for " + std::string(name(g)));
    std::vector<std::vector<double>> srows;
    for (const auto& img : imgs) srows.push_back(head_probabilities(*it->second, *backbone, img));
    out.prediction.classes = species_classes(g);
    out.prediction.probabilities = detail::aggregate(srows);
    out.species = species_in_genus(g, argmax(out.prediction.probabilities));
    out.prediction.label = std::string(name(out.species));
    return out;
  };
  c->explain = [species, backbone](const ImageTensor& img, const SpecimenPrediction& p) {
    const auto& head = species.at(genus_of(p.species));
    return cam(*head, *backbone, img, index_within_genus(p.species));
  };
  return c;
}

inline std::shared_ptr<const Backbone> make_backbone(const ServiceConfig& c) {
  if (c.backbone == "standin") return std::make_shared<StandinBackbone>(c.backbone_seed);
  return std::make_shared<ImportedBackbone>(ImportedBackbone::load(c.backbone));
}

/// Null when the configured models are absent, so the service answers 503.
inline std::shared_ptr<const Classifier> load_classifier(const ServiceConfig& c) {
  auto backbone = make_backbone(c);
  auto load = [](const std::string& p) -> std::shared_ptr<const Head> {
    if (p.empty() || !std::filesystem::exists(p)) return nullptr;
    return std::make_shared<const Head>(load_head(p));
  };
  if (c.mode == ClassifyMode::Direct) {
    auto head = load(c.species_model);
    if (!head) return nullptr;
    return direct_classifier(head, backbone, fmap_digest(head_checkpoint(*head, 0)).substr(0, 16));
  }
  auto genus = load(c.genus_model);
  if (!genus) return nullptr;
  std::map<Genus, std::shared_ptr<const Head>> species;
  std::string id = fmap_digest(head_checkpoint(*genus, 0)).substr(0, 8);
  for (const auto& [g, p] : c.genus_models) {
    auto h = load(p);
    if (!h) return nullptr;
    id += fmap_digest(head_checkpoint(*h, 0)).substr(0, 8);
    species[g] = h;
  }
  if (species.size() != static_cast<std::size_t>(kNumGenera)) return nullptr;
  return hierarchical_classifier(genus, std::move(species), backbone, id);
}

// ---------------------------------------------------------------------------
// Service

inline std::string base64(std::span<const std::uint8_t> bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(), static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

struct HttpError : std::runtime_error {
  HttpError(int s, const std::string& m) : std::runtime_error(m), status(s) {}
  int status;
};

struct IngestImage {
  std::string filename;
  std::string bytes;
};

class Service {
public:
  explicit Service(ServiceConfig cfg, std::shared_ptr<const Classifier> classifier = nullptr)
      : cfg_(std::move(cfg)), classifier_(std::move(classifier)) {
    cfg_.validate();
    std::filesystem::create_directories(cfg_.store / "images");
    std::filesystem::create_directories(cfg_.store / "cams");
    reload();
  }

  const ServiceConfig& config() const { return cfg_; }
  std::filesystem::path records_path() const { return cfg_.store / "records.jsonl"; }
  std::filesystem::path alerts_path() const { return cfg_.store / "alerts.jsonl"; }

  /// Swaps the model between requests.
  void set_classifier(std::shared_ptr<const Classifier> c) {
    std::lock_guard lock(model_mu_);
    classifier_ = std::move(c);
  }
  std::shared_ptr<const Classifier> classifier() const {
    std::lock_guard lock(model_mu_);
    return classifier_;
  }

  /// Replays the record log into memory.
  std::vector<LineError> reload() {
    std::unique_lock lock(mu_);
    auto res = load_records(records_path());
    records_.clear();
    order_.clear();
    for (auto& r : res.records) {
      order_.push_back(r.specimen_id);
      records_[r.specimen_id] = std::move(r);
    }
    return res.errors;
  }

  std::optional<SpecimenRecord> record(const std::string& id) const {
    std::shared_lock lock(mu_);
    auto it = records_.find(id);
    if (it == records_.end()) return std::nullopt;
    return it->second;
  }

  /// Decodes, preprocesses, classifies and persists one specimen.
  nlohmann::json ingest(const std::vector<IngestImage>& files, const nlohmann::json& metadata) {
    if (files.empty() || files.size() > kMaxImagesPerSpecimen) throw HttpError(400, "expected 1 to 12 images");
    if (!metadata.is_object()) throw HttpError(400, "metadata must be a JSON object");
    const auto model = classifier();
    if (!model) throw HttpError(503, "model not loaded");

    SpecimenRecord rec;
    try {
      rec.specimen_id = metadata.value("specimen_id", std::string());
      rec.trap_id = metadata.value("trap_id", std::string());
      rec.capture_date = metadata.value("capture_date", std::string());
      if (!rec.capture_date.empty() && !parse_date(rec.capture_date)) throw HttpError(400, "bad capture_date");
      if (auto l = metadata.find("location"); l != metadata.end() && !l->is_null())
        rec.location = Location{l->at("lat").get<double>(), l->at("lon").get<double>()};
      rec.label = detail::species_field(metadata, "label");
    } catch (const HttpError&) {
      throw;
    } catch (const std::exception& e) {
      throw HttpError(400, std::string("bad metadata: ") + e.what());
    }
    const auto per_image = metadata.value("images", nlohmann::json::array());

    std::vector<ImageTensor> prepared;
    std::vector<ImageTensor> originals;
    for (std::size_t i = 0; i < files.size(); ++i) {
      ImageTensor img;
      try {
        img = decode_image(files[i].bytes);
      } catch (const std::exception& e) {
        throw HttpError(422, "image " + std::to_string(i) + ": " + e.what());
      }
      ImageRef ref;
      ref.image_id = content_digest(img);
      const auto& m = i < per_image.size() ? per_image[i] : nlohmann::json::object();
      ref.phone = m.value("phone", std::string());
      ref.background = m.value("background", std::string());
      ref.orientation = m.value("orientation", std::string());
      ref.path = (std::filesystem::path("images") / (ref.image_id + ".png")).string();
      rec.images.push_back(ref);
      prepared.push_back(preprocess(img, cfg_.preprocess));
      originals.push_back(std::move(img));
    }
    std::set<std::string> ids;
    for (const auto& r : rec.images)
      if (!ids.insert(r.image_id).second) throw HttpError(400, "duplicate image in one specimen");
    if (rec.specimen_id.empty()) rec.specimen_id = rec.images.front().image_id.substr(0, 16);

    SpecimenPrediction sp;
    try {
      sp = model->predict(prepared);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::ModelNotLoaded) throw HttpError(503, e.what());
      throw;
    }
    sp.prediction.model_id = model->model_id;
    sp.prediction.timestamp = now_iso8601();
    const double confidence = sp.prediction.confidence();
    rec.predictions.push_back(sp.prediction);
    rec.alert = cfg_.alerts.evaluate(sp.species, confidence);
    rec.needs_review = rec.alert.has_value() || confidence < cfg_.review_threshold;
    rec.created = sp.prediction.timestamp;

    for (std::size_t i = 0; i < originals.size(); ++i)
      write_file_bytes(cfg_.store / rec.images[i].path, encode_png(originals[i]));
    if (rec.alert && model->explain) {
      for (std::size_t i = 0; i < prepared.size(); ++i) {
        const auto c = model->explain(prepared[i], sp);
        const auto rel = std::filesystem::path("cams") / (rec.specimen_id + "_" + std::to_string(i) + ".png");
        write_file_bytes(cfg_.store / rel, encode_png(c.overlay));
        rec.cam_paths.push_back(rel.string());
      }
    }

    {
      std::unique_lock lock(mu_);
      if (records_.count(rec.specimen_id)) throw HttpError(409, "specimen already ingested: " + rec.specimen_id);
      append_record(records_path(), rec);
      records_[rec.specimen_id] = rec;
      order_.push_back(rec.specimen_id);
    }
    if (rec.alert) {
      append_line(alerts_path(), {{"v", kRecordSchemaVersion}, {"specimen_id", rec.specimen_id}, {"alert", to_json(*rec.alert)}});
    }
    nlohmann::json out = {{"specimen_id", rec.specimen_id},
                          {"prediction", to_json(sp.prediction)},
                          {"needs_review", rec.needs_review}};
    out["alert"] = rec.alert ? to_json(*rec.alert) : nlohmann::json(nullptr);
    if (!sp.genus_probabilities.empty()) out["genus_probabilities"] = sp.genus_probabilities;
    if (auto s = rec.status()) out["review_status"] = name(*s);
    return out;
  }

  nlohmann::json review_item(const SpecimenRecord& r, bool with_bytes) const {
    nlohmann::json j = {{"specimen_id", r.specimen_id}, {"trap_id", r.trap_id}, {"capture_date", r.capture_date},
                        {"created", r.created},        {"status", name(*r.status())}};
    j["prediction"] = r.latest_prediction() ? to_json(*r.latest_prediction()) : nlohmann::json(nullptr);
    j["alert"] = r.alert ? to_json(*r.alert) : nlohmann::json(nullptr);
    j["severity"] = r.alert ? nlohmann::json(r.alert->severity) : nlohmann::json(nullptr);
    j["images"] = nlohmann::json::array();
    for (const auto& im : r.images) {
      nlohmann::json e = to_json(im);
      e["url"] = "/images/" + im.image_id;
      if (with_bytes) e["png_base64"] = file_base64(im.path);
      j["images"].push_back(std::move(e));
    }
    j["cams"] = nlohmann::json::array();
    for (std::size_t i = 0; i < r.cam_paths.size(); ++i) {
      nlohmann::json e = {{"url", "/cams/" + std::filesystem::path(r.cam_paths[i]).filename().string()}};
      if (with_bytes) e["png_base64"] = file_base64(r.cam_paths[i]);
      j["cams"].push_back(std::move(e));
    }
    j["review_history"] = nlohmann::json::array();
    for (const auto& d : r.review_history) j["review_history"].push_back(to_json(d));
    j["review"] = r.review ? to_json(*r.review) : nlohmann::json(nullptr);
    return j;
  }

  /// Pending items, newest first.
  nlohmann::json pending() const {
    std::shared_lock lock(mu_);
    nlohmann::json out = nlohmann::json::array();
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
      const auto& r = records_.at(*it);
      if (r.status() == ReviewStatus::Pending) out.push_back(review_item(r, false));
    }
    return out;
  }

  nlohmann::json item(const std::string& id) const {
    std::shared_lock lock(mu_);
    auto it = records_.find(id);
    if (it == records_.end() || !it->second.status()) throw HttpError(404, "no review item " + id);
    return review_item(it->second, true);
  }

  nlohmann::json decide(const std::string& id, const nlohmann::json& body) {
    ReviewDecision d;
    bool force = false;
    try {
      d = review_from_json(body);
      force = body.value("force", false);
    } catch (const std::exception& e) {
      throw HttpError(400, std::string("bad decision: ") + e.what());
    }
    d.forced = force;
    std::unique_lock lock(mu_);
    auto it = records_.find(id);
    if (it == records_.end() || !it->second.status()) throw HttpError(404, "no review item " + id);
    auto& r = it->second;
    if (r.status() != ReviewStatus::Pending && !force) throw HttpError(409, "already decided");
    d.timestamp = now_iso8601();
    if (r.review && d.timestamp <= r.review->timestamp) d.timestamp = r.review->timestamp;
    append_review(records_path(), id, d);
    r.review_history.push_back(d);
    r.review = d;
    return review_item(r, false);
  }

  /// Reviewed specimens with their ground-truth label, one row per image.
  nlohmann::json training_corpus() const {
    std::shared_lock lock(mu_);
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& id : order_) {
      const auto& r = records_.at(id);
      if (!r.review) continue;
      const auto label = r.effective_label();
      if (!label) continue;
      for (const auto& im : r.images) {
        rows.push_back({{"image_id", im.image_id},
                        {"path", im.path},
                        {"specimen_id", r.specimen_id},
                        {"label", *label},
                        {"source", r.review->decision == Decision::Override ? "override" : "confirm"}});
      }
    }
    return {{"rows", rows}};
  }

  nlohmann::json summary(const std::string& since) const {
    std::optional<std::string> from;
    if (!since.empty()) {
      from = parse_date(since);
      if (!from) throw HttpError(400, "bad date: " + since);
    }
    nlohmann::json species = nlohmann::json::object();
    for (auto n : kSpeciesNames) species[std::string(n)] = 0;
    nlohmann::json alerts = {{"total", 0}, {"critical", 0}, {"warning", 0}};
    nlohmann::json traps = nlohmann::json::object();
    std::size_t n = 0;
    std::shared_lock lock(mu_);
    for (const auto& id : order_) {
      const auto& r = records_.at(id);
      const std::string date = !r.capture_date.empty() ? r.capture_date : r.created.substr(0, 10);
      if (from && date < *from) continue;
      ++n;
      if (r.alert) {
        alerts["total"] = alerts["total"].get<int>() + 1;
        alerts[r.alert->severity] = alerts.value(r.alert->severity, 0) + 1;
      }
      const auto label = r.effective_label();
      if (!label) continue;
      species[*label] = species[*label].get<int>() + 1;
      auto& t = traps[r.trap_id.empty() ? "unknown" : r.trap_id];
      if (t.is_null()) t = nlohmann::json::object();
      t[*label] = t.value(*label, 0) + 1;
    }
    return {{"since", from ? nlohmann::json(*from) : nlohmann::json(nullptr)},
            {"specimens", n},
            {"species", species},
            {"alerts", alerts},
            {"traps", traps}};
  }

  std::string file_bytes(const std::filesystem::path& rel) const {
    const auto bytes = read_file_bytes(cfg_.store / rel);
    return {bytes.begin(), bytes.end()};
  }

  /// Registers the HTTP routes.
  void bind(httplib::Server& srv) {
    auto guard = [this](const httplib::Request& req, httplib::Response& res, auto&& body) {
      try {
        if (!cfg_.api_token.empty()) {
          const auto auth = req.get_header_value("Authorization");
          if (auth != "Bearer " + cfg_.api_token && req.get_header_value("X-API-Token") != cfg_.api_token)
            throw HttpError(401, "missing or wrong API token");
        }
        body();
      } catch (const HttpError& e) {
        res.status = e.status;
        res.set_content(nlohmann::json{{"error", e.what()}}.dump(), "application/json");
      } catch (const Error& e) {
        res.status = e.kind() == ErrorKind::ModelNotLoaded ? 503 : 500;
        res.set_content(nlohmann::json{{"error", e.what()}, {"kind", to_string(e.kind())}}.dump(), "application/json");
      } catch (const std::exception& e) {
        res.status = 500;
        res.set_content(nlohmann::json{{"error", e.what()}}.dump(), "application/json");
      }
    };
    auto json = [](httplib::Response& res, const nlohmann::json& j, int status = 200) {
      res.status = status;
      res.set_content(j.dump(), "application/json");
    };

    srv.Get("/health", [=, this](const httplib::Request& req, httplib::Response& res) {
      guard(req, res, [&] { json(res, {{"status", "ok"}, {"model_loaded", classifier() != nullptr}}); });
    });
    srv.Post("/specimens", [=, this](const httplib::Request& req, httplib::Response& res) {
      guard(req, res, [&] {
        if (!req.is_multipart_form_data()) throw HttpError(400, "expected multipart/form-data");
        std::vector<IngestImage> files;
        for (const auto& f : req.get_file_values("images")) files.push_back({f.filename, f.content});
        nlohmann::json meta = nlohmann::json::object();
        if (req.has_file("metadata")) {
          meta = nlohmann::json::parse(req.get_file_value("metadata").content, nullptr, false);
          if (meta.is_discarded()) throw HttpError(400, "metadata is not valid JSON");
        }
        json(res, ingest(files, meta), 201);
      });
    });
    srv.Get("/review/pending", [=, this](const httplib::Request& req, httplib::Response& res) {
      guard(req, res, [&] { json(res, {{"items", pending()}}); });
    });
    srv.Get(R"(/review/([^/]+))", [=, this](const httplib::Request& req, httplib::Response& res) {
      guard(req, res, [&] { json(res, item(req.matches[1])); });
    });
    srv.Post(R"(/review/([^/]+)/decision)", [=, this](const httplib::Request& req, httplib::Response& res) {
      guard(req, res, [&] {
        auto body = nlohmann::json::parse(req.body, nullptr, false);
        if (body.is_discarded() || !body.is_object()) throw HttpError(400, "body must be a JSON object");
        json(res, decide(req.matches[1], body));
      });
    });
    srv.Get("/export/training-corpus", [=, this](const httplib::Request& req, httplib::Response& res) {
      guard(req, res, [&] {
        const auto corpus = training_corpus();
        if (req.get_param_value("format") == "csv") {
          DatasetManifest m;
          for (const auto& row : corpus["rows"])
            m.entries.push_back({row["image_id"], row["specimen_id"], row["label"], Partition::Train, std::nullopt, row["path"]});
          res.set_content(manifest_csv(m), "text/csv");
        } else {
          json(res, corpus);
        }
      });
    });
    srv.Get("/summary", [=, this](const httplib::Request& req, httplib::Response& res) {
      guard(req, res, [&] { json(res, summary(req.get_param_value("since"))); });
    });
    srv.Get(R"(/images/([0-9a-f]{64}))", [=, this](const httplib::Request& req, httplib::Response& res) {
      guard(req, res, [&] {
        const auto rel = std::filesystem::path("images") / (std::string(req.matches[1]) + ".png");
        if (!std::filesystem::exists(cfg_.store / rel)) throw HttpError(404, "no such image");
        res.set_content(file_bytes(rel), "image/png");
      });
    });
    srv.Get(R"(/cams/([A-Za-z0-9_.-]+\.png))", [=, this](const httplib::Request& req, httplib::Response& res) {
      guard(req, res, [&] {
        const auto rel = std::filesystem::path("cams") / std::string(req.matches[1]);
        if (!std::filesystem::exists(cfg_.store / rel)) throw HttpError(404, "no such overlay");
        res.set_content(file_bytes(rel), "image/png");
      });
    });
  }

private:
  std::string file_base64(const std::string& rel) const {
    const auto p = cfg_.store / rel;
    if (!std::filesystem::exists(p)) return {};
    return base64(read_file_bytes(p));
  }

  ServiceConfig cfg_;
  std::shared_ptr<const Classifier> classifier_;
  mutable std::mutex model_mu_;
  mutable std::shared_mutex mu_;
  std::map<std::string, SpecimenRecord> records_;
  std::vector<std::string> order_;
};

}  // namespace mosq
