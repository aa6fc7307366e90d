#pragma once

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <cerrno>
#include <cmath>
#include <chrono>
#include <cstdio>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mosq/augment.hpp"
#include "mosq/core.hpp"

namespace mosq {

inline constexpr int kRecordSchemaVersion = 1;

/// UTC timestamp with milliseconds, e.g. 2026-03-01T12:00:00.250Z.
inline std::string now_iso8601() {
  const auto now = std::chrono::system_clock::now();
  const auto t = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[40];
  const auto n = std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  std::snprintf(buf + n, sizeof buf - n, ".%03dZ", static_cast<int>(ms));
  return buf;
}

/// Accepts YYYY-MM-DD with an optional time suffix; returns the date part.
inline std::optional<std::string> parse_date(std::string_view s) {
  if (s.size() < 10) return std::nullopt;
  for (int i : {0, 1, 2, 3, 5, 6, 8, 9})
    if (!std::isdigit(static_cast<unsigned char>(s[i]))) return std::nullopt;
  if (s[4] != '-' || s[7] != '-') return std::nullopt;
  const int month = std::stoi(std::string(s.substr(5, 2)));
  const int day = std::stoi(std::string(s.substr(8, 2)));
  if (month < 1 || month > 12 || day < 1 || day > 31) return std::nullopt;
  if (s.size() > 10 && s[10] != 'T' && s[10] != ' ') return std::nullopt;
  return std::string(s.substr(0, 10));
}

// ---------------------------------------------------------------------------
// Specimen records

struct ImageRef {
  std::string image_id;  // content digest
  std::string path;
  std::string phone;
  std::string background;
  std::string orientation;
  bool operator==(const ImageRef&) const = default;
};

struct Location {
  double lat = 0, lon = 0;
  bool operator==(const Location&) const = default;
};

struct Prediction {
  std::string model_id;
  std::vector<std::string> classes;
  std::vector<double> probabilities;
  std::string label;
  std::string timestamp;
  bool operator==(const Prediction&) const = default;

  double confidence() const {
    return probabilities.empty() ? 0.0 : *std::max_element(probabilities.begin(), probabilities.end());
  }
};

enum class Decision { Confirm, Override };

struct ReviewDecision {
  Decision decision = Decision::Confirm;
  std::optional<Species> label;  // Override only
  std::string reviewer;
  std::string timestamp;
  bool forced = false;
  bool operator==(const ReviewDecision&) const = default;
};

struct Alert {
  std::string species;
  std::string severity;
  double confidence = 0;
  std::string timestamp;
  bool operator==(const Alert&) const = default;
};

enum class ReviewStatus { Pending, Confirmed, Overridden };

inline std::string_view name(ReviewStatus s) {
  switch (s) {
    case ReviewStatus::Pending: return "pending";
    case ReviewStatus::Confirmed: return "confirmed";
    case ReviewStatus::Overridden: return "overridden";
  }
  return "?";
}

struct SpecimenRecord {
  std::string specimen_id;
  std::string trap_id;
  std::string capture_date;
  std::optional<Location> location;
  std::vector<ImageRef> images;
  std::optional<Species> label;
  std::vector<Prediction> predictions;
  std::optional<Alert> alert;
  bool needs_review = false;
  std::vector<std::string> cam_paths;
  std::string created;
  std::vector<ReviewDecision> review_history;  // file order
  std::optional<ReviewDecision> review;        // active decision: latest timestamp, later line on ties

  bool operator==(const SpecimenRecord&) const = default;

  const Prediction* latest_prediction() const { return predictions.empty() ? nullptr : &predictions.back(); }

  std::optional<ReviewStatus> status() const {
    if (!needs_review && !review) return std::nullopt;
    if (!review) return ReviewStatus::Pending;
    return review->decision == Decision::Confirm ? ReviewStatus::Confirmed : ReviewStatus::Overridden;
  }

  /// Reviewed label where present, else the latest predicted species.
  std::optional<std::string> effective_label() const {
    if (review && review->decision == Decision::Override && review->label) return std::string(name(*review->label));
    if (const auto* p = latest_prediction()) return p->label;
    if (label) return std::string(name(*label));
    return std::nullopt;
  }
};

inline nlohmann::json to_json(const ImageRef& r) {
  return {{"image_id", r.image_id}, {"path", r.path}, {"phone", r.phone}, {"background", r.background},
          {"orientation", r.orientation}};
}

inline nlohmann::json to_json(const Prediction& p) {
  return {{"model_id", p.model_id}, {"classes", p.classes}, {"probabilities", p.probabilities},
          {"label", p.label}, {"timestamp", p.timestamp}};
}

inline nlohmann::json to_json(const ReviewDecision& d) {
  nlohmann::json j = {{"decision", d.decision == Decision::Confirm ? "confirm" : "override"},
                      {"reviewer", d.reviewer},
                      {"timestamp", d.timestamp},
                      {"forced", d.forced}};
  j["label"] = d.label ? nlohmann::json(name(*d.label)) : nlohmann::json(nullptr);
  return j;
}

inline nlohmann::json to_json(const Alert& a) {
  return {{"species", a.species}, {"severity", a.severity}, {"confidence", a.confidence}, {"timestamp", a.timestamp}};
}

namespace detail {

inline std::string str_or(const nlohmann::json& j, const char* key, std::string fallback = {}) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return fallback;
  return it->get<std::string>();
}

inline std::optional<Species> species_field(const nlohmann::json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  auto s = parse_species(it->get<std::string>());
  if (!s) throw Error(ErrorKind::UnknownLabel, "unknown species " + it->get<std::string>());
  return s;
}

}  // namespace detail

inline ImageRef image_ref_from_json(const nlohmann::json& j) {
  return {j.at("image_id").get<std::string>(), detail::str_or(j, "path"), detail::str_or(j, "phone"),
          detail::str_or(j, "background"), detail::str_or(j, "orientation")};
}

inline Prediction prediction_from_json(const nlohmann::json& j) {
  Prediction p;
  p.model_id = detail::str_or(j, "model_id");
  if (j.contains("classes")) p.classes = j.at("classes").get<std::vector<std::string>>();
  p.probabilities = j.at("probabilities").get<std::vector<double>>();
  p.label = j.at("label").get<std::string>();
  p.timestamp = detail::str_or(j, "timestamp");
  return p;
}

inline ReviewDecision review_from_json(const nlohmann::json& j) {
  ReviewDecision d;
  const auto kind = j.at("decision").get<std::string>();
  if (kind == "confirm")
    d.decision = Decision::Confirm;
  else if (kind == "override")
    d.decision = Decision::Override;
  else
    throw Error(ErrorKind::ConfigError, "unknown decision " + kind);
  d.label = detail::species_field(j, "label");
  if (d.decision == Decision::Override && !d.label) throw Error(ErrorKind::UnknownLabel, "override without a label");
  d.reviewer = detail::str_or(j, "reviewer");
  d.timestamp = detail::str_or(j, "timestamp");
  d.forced = j.value("forced", false);
  return d;
}

inline Alert alert_from_json(const nlohmann::json& j) {
  return {j.at("species").get<std::string>(), j.at("severity").get<std::string>(), j.at("confidence").get<double>(),
          detail::str_or(j, "timestamp")};
}

/// The "specimen" line: everything except the review history, which lives on "review" lines.
inline nlohmann::json to_json(const SpecimenRecord& r) {
  nlohmann::json j = {{"v", kRecordSchemaVersion},
                      {"type", "specimen"},
                      {"specimen_id", r.specimen_id},
                      {"trap_id", r.trap_id},
                      {"capture_date", r.capture_date},
                      {"created", r.created},
                      {"needs_review", r.needs_review},
                      {"cam_paths", r.cam_paths}};
  j["location"] = r.location ? nlohmann::json{{"lat", r.location->lat}, {"lon", r.location->lon}} : nlohmann::json(nullptr);
  j["label"] = r.label ? nlohmann::json(name(*r.label)) : nlohmann::json(nullptr);
  j["images"] = nlohmann::json::array();
  for (const auto& im : r.images) j["images"].push_back(to_json(im));
  j["predictions"] = nlohmann::json::array();
  for (const auto& p : r.predictions) j["predictions"].push_back(to_json(p));
  j["alert"] = r.alert ? to_json(*r.alert) : nlohmann::json(nullptr);
  return j;
}

inline SpecimenRecord record_from_json(const nlohmann::json& j) {
  SpecimenRecord r;
  r.specimen_id = j.at("specimen_id").get<std::string>();
  if (r.specimen_id.empty()) throw Error(ErrorKind::ConfigError, "empty specimen_id");
  r.trap_id = detail::str_or(j, "trap_id");
  r.capture_date = detail::str_or(j, "capture_date");
  r.created = detail::str_or(j, "created");
  r.needs_review = j.value("needs_review", false);
  if (j.contains("cam_paths")) r.cam_paths = j.at("cam_paths").get<std::vector<std::string>>();
  if (auto it = j.find("location"); it != j.end() && !it->is_null())
    r.location = Location{it->at("lat").get<double>(), it->at("lon").get<double>()};
  r.label = detail::species_field(j, "label");
  std::set<std::string> ids;
  for (const auto& im : j.value("images", nlohmann::json::array())) {
    r.images.push_back(image_ref_from_json(im));
    if (!ids.insert(r.images.back().image_id).second)
      throw Error(ErrorKind::ConfigError, "duplicate image_id " + r.images.back().image_id);
  }
  for (const auto& p : j.value("predictions", nlohmann::json::array())) r.predictions.push_back(prediction_from_json(p));
  if (auto it = j.find("alert"); it != j.end() && !it->is_null()) r.alert = alert_from_json(*it);
  return r;
}

// ---------------------------------------------------------------------------
// Append-only JSON-lines log

struct LineError {
  std::size_t line = 0;  // 1-based
  std::string message;
};

namespace detail {

class FdGuard {
public:
  explicit FdGuard(int fd) : fd_(fd) {}
  ~FdGuard() {
    if (fd_ >= 0) ::close(fd_);
  }
  FdGuard(const FdGuard&) = delete;
  FdGuard& operator=(const FdGuard&) = delete;
  int get() const { return fd_; }

private:
  int fd_;
};

inline void write_all(int fd, std::string_view s, const std::string& path) {
  while (!s.empty()) {
    const auto n = ::write(fd, s.data(), s.size());
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(ErrorKind::IoError, "write " + path + ": " + std::strerror(errno));
    }
    s.remove_prefix(static_cast<std::size_t>(n));
  }
}

}  // namespace detail

/// Appends one JSON document as a line under an exclusive lock. A torn tail
/// left by an interrupted writer is terminated first so that it stays an
/// isolated malformed line instead of corrupting the new one.
inline void append_line(const std::filesystem::path& path, const nlohmann::json& doc, bool sync = true) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  detail::FdGuard fd(::open(path.c_str(), O_RDWR | O_CREAT | O_APPEND | O_CLOEXEC, 0644));
  if (fd.get() < 0) throw Error(ErrorKind::IoError, "open " + path.string() + ": " + std::strerror(errno));
  if (::flock(fd.get(), LOCK_EX) != 0) throw Error(ErrorKind::IoError, "lock " + path.string());
  std::string line = doc.dump();
  line.push_back('\n');
  const off_t size = ::lseek(fd.get(), 0, SEEK_END);
  if (size > 0) {
    char last = '\n';
    if (::pread(fd.get(), &last, 1, size - 1) == 1 && last != '\n') line.insert(line.begin(), '\n');
  }
  detail::write_all(fd.get(), line, path.string());
  if (sync) ::fsync(fd.get());
  ::flock(fd.get(), LOCK_UN);
}

/// Parses each line independently; undecodable lines are reported and skipped.
inline std::vector<nlohmann::json> read_lines(const std::filesystem::path& path, std::vector<LineError>* errors) {
  std::vector<nlohmann::json> out;
  if (!std::filesystem::exists(path)) return out;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  std::string line;
  std::size_t no = 0;
  while (std::getline(in, line)) {
    ++no;
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      if (errors) errors->push_back({no, "not a JSON object"});
      continue;
    }
    j["__line"] = no;
    out.push_back(std::move(j));
  }
  return out;
}

struct LoadResult {
  std::vector<SpecimenRecord> records;  // first-appearance order
  std::vector<LineError> errors;

  const SpecimenRecord* find(std::string_view id) const {
    for (const auto& r : records)
      if (r.specimen_id == id) return &r;
    return nullptr;
  }
};

inline void append_record(const std::filesystem::path& store, const SpecimenRecord& r) {
  append_line(store, to_json(r));
}

inline void append_review(const std::filesystem::path& store, const std::string& specimen_id,
                          const ReviewDecision& d) {
  append_line(store, {{"v", kRecordSchemaVersion}, {"type", "review"}, {"specimen_id", specimen_id}, {"review", to_json(d)}});
}

inline void append_prediction(const std::filesystem::path& store, const std::string& specimen_id, const Prediction& p) {
  append_line(store,
              {{"v", kRecordSchemaVersion}, {"type", "prediction"}, {"specimen_id", specimen_id}, {"prediction", to_json(p)}});
}

/// Replays the log. A repeated "specimen" line replaces the stored fields but
/// keeps accumulated predictions and reviews; the active review is the one
/// with the latest timestamp.
inline LoadResult load_records(const std::filesystem::path& store) {
  LoadResult res;
  std::map<std::string, std::size_t> index;
  for (auto& j : read_lines(store, &res.errors)) {
    const auto no = j["__line"].get<std::size_t>();
    try {
      if (j.value("v", 0) != kRecordSchemaVersion) throw Error(ErrorKind::MalformedLine, "unsupported schema version");
      const auto type = j.at("type").get<std::string>();
      const auto id = j.at("specimen_id").get<std::string>();
      if (type == "specimen") {
        auto rec = record_from_json(j);
        if (auto it = index.find(id); it != index.end()) {
          auto& old = res.records[it->second];
          rec.predictions.insert(rec.predictions.begin(), old.predictions.begin(), old.predictions.end());
          rec.review_history = std::move(old.review_history);
          rec.review = std::move(old.review);
          old = std::move(rec);
        } else {
          index[id] = res.records.size();
          res.records.push_back(std::move(rec));
        }
        continue;
      }
      auto it = index.find(id);
      if (it == index.end()) throw Error(ErrorKind::MalformedLine, "event for unknown specimen " + id);
      auto& rec = res.records[it->second];
      if (type == "review") {
        auto d = review_from_json(j.at("review"));
        rec.review_history.push_back(d);
        if (!rec.review || d.timestamp >= rec.review->timestamp) rec.review = d;
      } else if (type == "prediction") {
        rec.predictions.push_back(prediction_from_json(j.at("prediction")));
      } else {
        throw Error(ErrorKind::MalformedLine, "unknown line type " + type);
      }
    } catch (const std::exception& e) {
      res.errors.push_back({no, e.what()});
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Dataset manifests

enum class Partition { Train, Validation, Test };

inline std::string_view name(Partition p) {
  switch (p) {
    case Partition::Train: return "train";
    case Partition::Validation: return "validation";
    case Partition::Test: return "test";
  }
  return "?";
}

inline std::optional<Partition> parse_partition(std::string_view s) {
  if (s == "train") return Partition::Train;
  if (s == "validation" || s == "val") return Partition::Validation;
  if (s == "test") return Partition::Test;
  return std::nullopt;
}

struct ManifestEntry {
  std::string image_id;
  std::string specimen_id;
  std::string label;  // species or genus name
  std::optional<Partition> partition;
  std::optional<std::string> augmented_from;
  std::string path;  // image file, relative to the manifest's directory when not absolute
  bool operator==(const ManifestEntry&) const = default;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;

  std::vector<const ManifestEntry*> in(Partition p) const {
    std::vector<const ManifestEntry*> out;
    for (const auto& e : entries)
      if (e.partition == p) out.push_back(&e);
    return out;
  }
};

/// Augmented entries only in Train; no specimen on both sides of Train/Validation.
inline void validate(const DatasetManifest& m) {
  std::set<std::string> ids;
  std::map<std::string, std::set<Partition>> parts;
  for (const auto& e : m.entries) {
    if (!ids.insert(e.image_id).second) throw Error(ErrorKind::ConfigError, "duplicate image_id " + e.image_id);
    if (e.augmented_from && e.partition != Partition::Train)
      throw Error(ErrorKind::ConfigError, "augmented image outside Train: " + e.image_id);
    if (e.partition) parts[e.specimen_id].insert(*e.partition);
  }
  for (const auto& [spec, ps] : parts)
    if (ps.count(Partition::Train) && ps.count(Partition::Validation))
      throw Error(ErrorKind::ConfigError, "specimen in both Train and Validation: " + spec);
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        out.back().push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        out.back().push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.emplace_back();
    } else if (c != '\r') {
      out.back().push_back(c);
    }
  }
  return out;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q.push_back('"');
    q.push_back(c);
  }
  return q + '"';
}

}  // namespace detail

inline constexpr std::array<std::string_view, 6> kManifestColumns = {"image_id",  "specimen_id",    "label",
                                                                     "partition", "augmented_from", "path"};

inline std::string manifest_csv(const DatasetManifest& m) {
  std::ostringstream out;
  for (std::size_t i = 0; i < kManifestColumns.size(); ++i) out << (i ? "," : "") << kManifestColumns[i];
  out << '\n';
  for (const auto& e : m.entries) {
    out << detail::csv_field(e.image_id) << ',' << detail::csv_field(e.specimen_id) << ',' << detail::csv_field(e.label)
        << ',' << (e.partition ? name(*e.partition) : "") << ',' << detail::csv_field(e.augmented_from.value_or(""))
        << ',' << detail::csv_field(e.path) << '\n';
  }
  return out.str();
}

inline DatasetManifest parse_manifest_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::ConfigError, "empty manifest");
  const auto header = detail::split_csv_line(line);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  for (auto req : {"image_id", "label"})
    if (!col.count(req)) throw Error(ErrorKind::ConfigError, std::string("manifest lacks column ") + req);
  DatasetManifest m;
  std::size_t no = 1;
  while (std::getline(in, line)) {
    ++no;
    if (line.empty() || line == "\r") continue;
    const auto f = detail::split_csv_line(line);
    auto get = [&](const char* k) -> std::string {
      auto it = col.find(k);
      return it != col.end() && it->second < f.size() ? f[it->second] : std::string();
    };
    ManifestEntry e;
    e.image_id = get("image_id");
    e.specimen_id = get("specimen_id");
    e.label = get("label");
    e.path = get("path");
    if (e.image_id.empty()) throw Error(ErrorKind::ConfigError, "manifest line " + std::to_string(no) + ": empty image_id");
    if (auto p = get("partition"); !p.empty()) {
      e.partition = parse_partition(p);
      if (!e.partition) throw Error(ErrorKind::ConfigError, "manifest line " + std::to_string(no) + ": bad partition " + p);
    }
    if (auto a = get("augmented_from"); !a.empty()) e.augmented_from = a;
    m.entries.push_back(std::move(e));
  }
  return m;
}

inline nlohmann::json to_json(const DatasetManifest& m) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& e : m.entries) {
    nlohmann::json j = {{"image_id", e.image_id}, {"specimen_id", e.specimen_id}, {"label", e.label}, {"path", e.path}};
    j["partition"] = e.partition ? nlohmann::json(name(*e.partition)) : nlohmann::json(nullptr);
    j["augmented_from"] = e.augmented_from ? nlohmann::json(*e.augmented_from) : nlohmann::json(nullptr);
    arr.push_back(std::move(j));
  }
  return {{"entries", arr}};
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
  DatasetManifest m;
  for (const auto& e : j.at("entries")) {
    ManifestEntry x;
    x.image_id = e.at("image_id").get<std::string>();
    x.specimen_id = detail::str_or(e, "specimen_id");
    x.label = detail::str_or(e, "label");
    x.path = detail::str_or(e, "path");
    if (auto p = detail::str_or(e, "partition"); !p.empty()) {
      x.partition = parse_partition(p);
      if (!x.partition) throw Error(ErrorKind::ConfigError, "bad partition " + p);
    }
    if (auto a = detail::str_or(e, "augmented_from"); !a.empty()) x.augmented_from = a;
    m.entries.push_back(std::move(x));
  }
  return m;
}

/// CSV or JSON by extension; validated on every load.
inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  DatasetManifest m;
  if (path.extension() == ".json") {
    auto j = nlohmann::json::parse(ss.str(), nullptr, false);
    if (j.is_discarded()) throw Error(ErrorKind::ConfigError, "manifest is not valid JSON");
    m = manifest_from_json(j);
  } else {
    m = parse_manifest_csv(ss.str());
  }
  validate(m);
  return m;
}

inline void save_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  validate(m);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  if (path.extension() == ".json")
    out << to_json(m).dump(2) << '\n';
  else
    out << manifest_csv(m);
}

/// Specimen-grouped, class-stratified split. Entries already marked Test are
/// kept as they are; everything else becomes Train or Validation. Per class,
/// specimens are visited in a seeded order and moved to Validation while that
/// brings the image count closer to the target.
inline DatasetManifest split(const DatasetManifest& input, double val_fraction, std::uint64_t seed) {
  if (!(val_fraction >= 0.0 && val_fraction <= 1.0)) throw Error(ErrorKind::ConfigError, "val_fraction must be in [0, 1]");
  DatasetManifest m = input;
  std::map<std::string, std::map<std::string, std::vector<std::size_t>>> by_class;  // label -> specimen -> rows
  std::map<std::string, std::string> specimen_label;
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    auto& e = m.entries[i];
    if (e.partition == Partition::Test) continue;
    if (e.augmented_from) throw Error(ErrorKind::ConfigError, "split expects original images only: " + e.image_id);
    if (e.specimen_id.empty() || e.label.empty())
      throw Error(ErrorKind::ConfigError, "entry without specimen_id or label: " + e.image_id);
    auto [it, fresh] = specimen_label.emplace(e.specimen_id, e.label);
    if (!fresh && it->second != e.label)
      throw Error(ErrorKind::ConfigError, "specimen " + e.specimen_id + " carries two labels");
    by_class[e.label][e.specimen_id].push_back(i);
  }
  for (auto& [label, specimens] : by_class) {
    if (val_fraction > 0.0 && val_fraction < 1.0 && specimens.size() < 2)
      throw Error(ErrorKind::TooFewSpecimens, "class " + label + " has fewer than 2 specimens");
    std::vector<std::string> order;
    std::size_t total = 0;
    for (const auto& [s, rows] : specimens) {
      order.push_back(s);
      total += rows.size();
    }
    Rng rng = Rng::substream(seed, "split/" + label);
    rng.shuffle(order);
    const double target = val_fraction * static_cast<double>(total);
    std::set<std::string> val;
    double taken = 0;
    for (const auto& s : order) {
      const double n = static_cast<double>(specimens[s].size());
      if (std::abs(taken + n - target) < std::abs(taken - target)) {
        val.insert(s);
        taken += n;
      }
    }
    if (val_fraction > 0.0 && val.empty()) val.insert(order.front());
    if (val_fraction < 1.0 && val.size() == order.size()) val.erase(order.back());
    for (const auto& [s, rows] : specimens)
      for (auto r : rows) m.entries[r].partition = val.count(s) ? Partition::Validation : Partition::Train;
  }
  validate(m);
  return m;
}

/// Adds the four augmented variants of every original Train entry. Variant ids
/// are "<source>~<kind>" until the pixels exist; the drawn factor is returned
/// alongside each new entry.
struct AugmentedEntry {
  ManifestEntry entry;
  AugmentKind kind;
  double factor;
};

inline std::vector<AugmentedEntry> augmented_entries(const DatasetManifest& m, const AugmentationSpec& spec) {
  spec.validate();
  std::vector<AugmentedEntry> out;
  for (const auto& e : m.entries) {
    if (e.partition != Partition::Train || e.augmented_from) continue;
    const auto f = draw_factors(spec, e.image_id);
    for (auto k : kAugmentKinds) {
      ManifestEntry v = e;
      v.image_id = e.image_id + "~" + std::string(name(k));
      v.augmented_from = e.image_id;
      v.path.clear();
      out.push_back({std::move(v), k, f[static_cast<int>(k)]});
    }
  }
  return out;
}

inline DatasetManifest expand_manifest(const DatasetManifest& m, const AugmentationSpec& spec) {
  DatasetManifest out = m;
  for (auto& a : augmented_entries(m, spec)) out.entries.push_back(std::move(a.entry));
  validate(out);
  return out;
}

}  // namespace mosq
