// mosq: command-line entry point for the mosquito classification pipeline.
//
// Exit codes: 0 success, 1 bad input or expected failure, 2 internal error.

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mosq/augment.hpp"
#include "mosq/catalog.hpp"
#include "mosq/denoise.hpp"
#include "mosq/eval.hpp"
#include "mosq/explain.hpp"
#include "mosq/heads.hpp"
#include "mosq/pipeline.hpp"
#include "mosq/preprocess.hpp"
#include "mosq/service.hpp"
#include "mosq/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct BackboneOpts {
  std::string backbone = "standin";
  std::uint64_t seed = 0;

  void add(CLI::App* app) {
    app->add_option("--backbone", backbone, "\"standin\" or a feature archive (.fmap)")->capture_default_str();
    app->add_option("--backbone-seed", seed, "stand-in backbone seed")->capture_default_str();
  }
  std::shared_ptr<const mosq::Backbone> make() const {
    if (backbone == "standin") return std::make_shared<mosq::StandinBackbone>(seed);
    return std::make_shared<mosq::ImportedBackbone>(mosq::ImportedBackbone::load(backbone));
  }
};

struct PreprocessOpts {
  bool no_denoise = false;
  int window = 10;
  unsigned threads = 0;

  void add(CLI::App* app) {
    app->add_flag("--no-denoise", no_denoise, "skip non-local means");
    app->add_option("--window", window, "NLM search radius")->capture_default_str();
    app->add_option("--threads", threads, "worker threads (0: all cores)")->capture_default_str();
  }
  mosq::PreprocessConfig make() const {
    mosq::PreprocessConfig c;
    c.denoise_enabled = !no_denoise;
    c.denoise.window_radius = window;
    c.denoise.threads = threads;
    return c;
  }
};

void emit(const json& j, bool as_json, const std::string& text) {
  if (as_json)
    std::cout << j.dump(2) << '\n';
  else
    std::cout << text;
}

std::string format_probs(const std::vector<std::string>& classes, const std::vector<double>& p) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(3);
  for (std::size_t i = 0; i < p.size(); ++i) out << "  " << classes[i] << ' ' << p[i] << '\n';
  return out.str();
}

fs::path sibling(const fs::path& p, const std::string& ext) {
  auto q = p;
  q.replace_extension(ext);
  return q;
}

// ---------------------------------------------------------------------------

int cmd_denoise(const std::string& in, const std::string& out, double h, int patch, const std::string& window,
                bool do_resize, unsigned threads) {
  mosq::DenoiseConfig cfg;
  cfg.h = h;
  cfg.patch_radius = patch;
  cfg.threads = threads;
  if (window == "exact") {
    cfg.search = mosq::DenoiseConfig::Search::Exact;
  } else {
    try {
      cfg.window_radius = std::stoi(window);
    } catch (const std::exception&) {
      throw UsageError("--window must be an integer radius or \"exact\"");
    }
  }
  auto img = mosq::load_image(in);
  if (do_resize) img = mosq::resize(img, mosq::ResizePolicy{});
  mosq::save_image(mosq::denoise(img, cfg), out);
  return 0;
}

int cmd_augment(const fs::path& manifest_path, const fs::path& out_dir, std::uint64_t seed, bool prep,
                const PreprocessOpts& po) {
  auto m = mosq::load_manifest(manifest_path);
  const auto base = manifest_path.parent_path();
  bool any_partition = false;
  for (const auto& e : m.entries) any_partition |= e.partition.has_value();
  if (!any_partition)
    for (auto& e : m.entries) e.partition = mosq::Partition::Train;

  mosq::AugmentationSpec spec;
  spec.seed = seed;
  fs::create_directories(out_dir);
  const auto sidecar = out_dir / "augment.jsonl";
  fs::remove(sidecar);
  mosq::DatasetManifest out;
  const auto pcfg = po.make();
  std::size_t written = 0;
  for (auto e : m.entries) {
    if (!e.path.empty()) e.path = fs::absolute(mosq::entry_path(e, base)).string();
    out.entries.push_back(e);
    if (e.partition != mosq::Partition::Train || e.augmented_from) continue;
    auto img = mosq::load_image(e.path);
    if (prep) img = mosq::prepare_bytes(img, pcfg);
    const auto set = mosq::augment_one(e.image_id, std::move(img), spec);
    for (const auto& v : set.variants) {
      const auto id = mosq::content_digest(v.image);
      const auto file = out_dir / (id + ".png");
      mosq::save_image(v.image, file);
      mosq::append_line(sidecar, {{"source_id", e.image_id},
                                  {"kind", mosq::name(v.kind)},
                                  {"factor", v.factor},
                                  {"image_id", id},
                                  {"path", file.filename().string()}},
                        false);
      mosq::ManifestEntry a = e;
      a.image_id = id;
      a.augmented_from = e.image_id;
      a.path = fs::absolute(file).string();
      out.entries.push_back(std::move(a));
      ++written;
    }
  }
  mosq::save_manifest(out, out_dir / "manifest.csv");
  std::cerr << "wrote " << written << " variants; manifest has " << out.entries.size() << " entries\n";
  return 0;
}

int cmd_split(const fs::path& in, const fs::path& out, double val, std::uint64_t seed, bool as_json) {
  auto m = mosq::split(mosq::load_manifest(in), val, seed);
  mosq::save_manifest(m, out);
  std::map<std::string, std::array<std::size_t, 3>> counts;
  for (const auto& e : m.entries) ++counts[e.label][static_cast<int>(*e.partition)];
  json j = json::object();
  std::ostringstream text;
  for (const auto& [label, c] : counts) {
    j[label] = {{"train", c[0]}, {"validation", c[1]}, {"test", c[2]}};
    text << label << ": train " << c[0] << ", validation " << c[1] << ", test " << c[2] << '\n';
  }
  emit(j, as_json, text.str());
  return 0;
}

struct TrainOpts {
  fs::path manifest, out;
  std::string head = "genus";
  std::uint64_t seed = 0;
  int epochs1 = -1, epochs2 = -1, batch = 32, patience = -1;
  bool paper_scale = false, no_augment = false, no_bn = false;
  double val = 0.3, dropout = 0.3;
};

int cmd_train(const TrainOpts& o, const BackboneOpts& bo, const PreprocessOpts& po, bool as_json) {
  const auto head = mosq::parse_head_name(o.head);
  if (!head) throw UsageError("unknown head " + o.head);
  auto m = mosq::load_manifest(o.manifest);
  bool partitioned = false;
  for (const auto& e : m.entries) partitioned |= e.partition.has_value();
  if (!partitioned) m = mosq::split(m, o.val, o.seed);

  mosq::TrainConfig cfg;
  cfg.seed = o.seed;
  if (o.paper_scale) cfg.plan = mosq::PhasePlan::paper_scale();
  if (o.epochs1 >= 0) cfg.plan.phase1_epochs = o.epochs1;
  if (o.epochs2 >= 0) cfg.plan.phase2_epochs = o.epochs2;
  if (o.patience > 0) cfg.plan.early_stopping.patience = o.patience;
  cfg.batch_size = o.batch;
  cfg.dropout_rate = o.dropout;
  cfg.batch_norm = !o.no_bn;

  mosq::PipelineConfig pc;
  pc.preprocess = po.make();
  pc.augment.seed = o.seed;
  pc.augment_train = !o.no_augment;
  pc.threads = po.threads;
  const auto backbone = bo.make();
  auto data = mosq::build_features(m, mosq::file_loader(o.manifest.parent_path()), *head, *backbone, pc);

  auto model = mosq::build_head(*head, o.seed, cfg.head_options());
  const auto result = mosq::fit(model, data.train, data.validation, cfg, backbone->trainable());
  mosq::write_run_dir(o.out, cfg, result, model,
                      {{"backbone", bo.backbone}, {"backbone_seed", bo.seed}, {"manifest", o.manifest.string()},
                       {"train_items", data.train.size()}, {"validation_items", data.validation.size()}});
  const auto v = mosq::evaluate_head(model, data.validation);
  const auto digest = mosq::sha256_hex(mosq::read_file_bytes(o.out / "checkpoint.fmap"));
  json j = {{"run_dir", o.out.string()},
            {"checkpoint_sha256", digest},
            {"best_epoch", result.best_epoch},
            {"validation_loss", v.loss},
            {"validation_accuracy", v.accuracy},
            {"train_items", data.train.size()},
            {"validation_items", data.validation.size()},
            {"log", result.log}};
  std::ostringstream text;
  for (const auto& l : result.log) text << l << '\n';
  text << "best epoch " << result.best_epoch << ", validation accuracy " << std::fixed << std::setprecision(4)
       << v.accuracy << ", loss " << v.loss << '\n'
       << "checkpoint " << (o.out / "checkpoint.fmap").string() << " sha256 " << digest << '\n';
  emit(j, as_json, text.str());
  return 0;
}

mosq::ProbabilityFn head_fn(std::shared_ptr<const mosq::Head> model, std::shared_ptr<const mosq::Backbone> backbone) {
  return [model, backbone](const mosq::ImageTensor& img) { return mosq::head_probabilities(*model, *backbone, img); };
}

int cmd_eval(const fs::path& model_path, const fs::path& manifest_path, const std::string& protocol_name,
             const std::string& partition_name, const fs::path& out, const BackboneOpts& bo, const PreprocessOpts& po,
             bool as_json) {
  const auto protocol = mosq::parse_protocol(protocol_name);
  if (!protocol) throw UsageError("--protocol must be per-image or per-set");
  auto model = std::make_shared<const mosq::Head>(mosq::load_head(model_path));
  const auto head = mosq::head_name(model->spec());
  const auto classes = mosq::class_names(head);
  const auto m = mosq::load_manifest(manifest_path);

  std::optional<mosq::Partition> part;
  if (partition_name != "all") {
    part = mosq::parse_partition(partition_name);
    if (!part) throw UsageError("--partition must be train, validation, test or all");
  }
  std::vector<const mosq::ManifestEntry*> chosen;
  for (const auto& e : m.entries) {
    if (e.augmented_from) continue;
    if (part && e.partition && e.partition != part) continue;
    if (mosq::label_for(head, e.label)) chosen.push_back(&e);
  }
  if (chosen.empty()) throw mosq::Error(mosq::ErrorKind::EmptyDataset, "no manifest entries to evaluate");

  const auto base = manifest_path.parent_path();
  const auto pcfg = po.make();
  auto prepared = [&](const mosq::ManifestEntry& e) { return mosq::preprocess(mosq::load_image(mosq::entry_path(e, base)), pcfg); };
  const auto classify = head_fn(model, bo.make());
  mosq::EvalReport report;
  if (*protocol == mosq::Protocol::PerImage) {
    std::vector<mosq::LabeledImage> items;
    for (const auto* e : chosen) items.push_back({prepared(*e), *mosq::label_for(head, e->label)});
    report = mosq::evaluate(classes, items, classify, 1);
  } else {
    // consecutive triples of one specimen, in manifest order
    std::map<std::string, std::vector<const mosq::ManifestEntry*>> by_specimen;
    std::vector<std::string> order;
    for (const auto* e : chosen) {
      if (!by_specimen.count(e->specimen_id)) order.push_back(e->specimen_id);
      by_specimen[e->specimen_id].push_back(e);
    }
    std::vector<mosq::SpecimenSet> sets;
    std::vector<std::string> truths;
    for (const auto& id : order) {
      const auto& rows = by_specimen[id];
      if (rows.size() % mosq::kSetSize != 0)
        throw mosq::Error(mosq::ErrorKind::WrongSetSize, "specimen " + id + " has " + std::to_string(rows.size()) +
                                                             " images; sets need exactly three each");
      for (std::size_t k = 0; k < rows.size(); k += mosq::kSetSize) {
        mosq::SpecimenSet s;
        s.specimen_id = id;
        for (std::size_t t = 0; t < mosq::kSetSize; ++t) s.images.push_back(prepared(*rows[k + t]));
        sets.push_back(std::move(s));
        truths.push_back(*mosq::label_for(head, rows[k]->label));
      }
    }
    std::map<const mosq::SpecimenSet*, std::string> truth_of;
    for (std::size_t i = 0; i < sets.size(); ++i) truth_of[&sets[i]] = truths[i];
    report = mosq::evaluate(classes, sets, [&](const mosq::SpecimenSet& s) { return truth_of.at(&s); }, classify, 1);
  }
  const auto j = mosq::to_json(report);
  if (!out.empty()) {
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    std::ofstream(out) << j.dump(2) << '\n';
    std::ofstream(sibling(out, ".csv")) << mosq::confusion_csv(report.confusion);
    std::ofstream(sibling(out, ".txt")) << mosq::text_table(report);
  }
  emit(j, as_json, mosq::text_table(report));
  return 0;
}

int cmd_classify(const std::string& model_path, const std::map<std::string, std::string>& hier,
                 const std::vector<std::string>& set_files, const std::vector<std::string>& images,
                 const BackboneOpts& bo, const PreprocessOpts& po, bool as_json) {
  const bool set_mode = !set_files.empty();
  if (set_mode && set_files.size() != mosq::kSetSize) throw UsageError("set requires exactly three images");
  const auto& files = set_mode ? set_files : images;
  if (files.empty()) throw UsageError("no images given");
  const bool hierarchical = !hier.empty();
  if (!hierarchical && model_path.empty()) throw UsageError("--model (or --genus with --aedes/--anopheles/--culex) is required");

  const auto backbone = bo.make();
  std::shared_ptr<const mosq::Classifier> clf;
  std::vector<std::string> classes;
  std::shared_ptr<const mosq::Head> direct;
  if (hierarchical) {
    for (auto k : {"genus", "aedes", "anopheles", "culex"})
      if (!hier.count(k) || hier.at(k).empty()) throw UsageError(std::string("hierarchical mode needs --") + k);
    auto load = [&](const char* k) { return std::make_shared<const mosq::Head>(mosq::load_head(hier.at(k))); };
    clf = mosq::hierarchical_classifier(load("genus"),
                                        {{mosq::Genus::Aedes, load("aedes")},
                                         {mosq::Genus::Anopheles, load("anopheles")},
                                         {mosq::Genus::Culex, load("culex")}},
                                        backbone, "hierarchical");
  } else {
    direct = std::make_shared<const mosq::Head>(mosq::load_head(model_path));
    classes = mosq::class_names(mosq::head_name(direct->spec()));
  }
  const auto pcfg = po.make();
  std::vector<mosq::ImageTensor> prepared;
  for (const auto& f : files) prepared.push_back(mosq::preprocess(mosq::load_image(f), pcfg));

  json results = json::array();
  std::ostringstream text;
  auto report = [&](const std::string& what, const std::vector<std::string>& cls, const std::vector<double>& p,
                    const std::string& label, const json& extra) {
    json r = {{"input", what}, {"classes", cls}, {"probabilities", p}, {"label", label}};
    for (auto it = extra.begin(); it != extra.end(); ++it) r[it.key()] = it.value();
    results.push_back(r);
    text << what << ": " << label << '\n' << format_probs(cls, p);
  };
  if (hierarchical) {
    auto run = [&](const std::vector<mosq::ImageTensor>& imgs, const std::string& what) {
      const auto sp = clf->predict(imgs);
      report(what, sp.prediction.classes, sp.prediction.probabilities, sp.prediction.label,
             {{"genus_probabilities", sp.genus_probabilities}, {"genus", mosq::name(mosq::genus_of(sp.species))}});
    };
    if (set_mode)
      run(prepared, "set");
    else
      for (std::size_t i = 0; i < files.size(); ++i) run({prepared[i]}, files[i]);
  } else {
    std::vector<std::vector<double>> per;
    for (const auto& img : prepared) per.push_back(mosq::head_probabilities(*direct, *backbone, img));
    if (set_mode) {
      const auto sp = mosq::predict_set(per);
      report("set", classes, sp.probabilities, classes[sp.label], json::object());
    } else {
      for (std::size_t i = 0; i < files.size(); ++i)
        report(files[i], classes, per[i], classes[mosq::argmax(per[i])], json::object());
    }
  }
  emit(results, as_json, text.str());
  return 0;
}

int cmd_explain(const fs::path& model_path, const fs::path& image, const std::string& cls, const fs::path& out,
                const BackboneOpts& bo, const PreprocessOpts& po, bool as_json) {
  const auto model = mosq::load_head(model_path);
  const auto classes = mosq::class_names(mosq::head_name(model.spec()));
  const auto backbone = bo.make();
  const auto img = mosq::preprocess(mosq::load_image(image), po.make());
  int c = -1;
  if (cls.empty()) {
    c = mosq::predicted_class(model, *backbone, img);
  } else if (auto it = std::find(classes.begin(), classes.end(), cls); it != classes.end()) {
    c = static_cast<int>(it - classes.begin());
  } else {
    try {
      std::size_t used = 0;
      c = std::stoi(cls, &used);
      if (used != cls.size()) throw std::invalid_argument(cls);
    } catch (const std::exception&) {
      throw UsageError("--class must be a class name or index of this head");
    }
  }
  const auto r = mosq::cam(model, *backbone, img, c);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  mosq::save_image(r.overlay, out);
  std::ofstream(sibling(out, ".csv")) << mosq::raw_map_csv(r);
  json j = {{"class_index", c}, {"class", classes[c]}, {"overlay", out.string()}, {"raw_map", sibling(out, ".csv").string()}};
  emit(j, as_json, "class " + classes[c] + ": wrote " + out.string() + " and " + sibling(out, ".csv").string() + "\n");
  return 0;
}

int cmd_export_features(const fs::path& manifest_path, const std::vector<std::string>& images, const fs::path& out,
                        std::vector<std::string> endpoints, const BackboneOpts& bo, const PreprocessOpts& po,
                        bool as_json) {
  std::vector<fs::path> files(images.begin(), images.end());
  if (!manifest_path.empty()) {
    const auto m = mosq::load_manifest(manifest_path);
    for (const auto& e : m.entries)
      if (!e.augmented_from) files.push_back(mosq::entry_path(e, manifest_path.parent_path()));
  }
  if (files.empty()) throw UsageError("no images given");
  if (endpoints.empty())
    for (const auto& e : mosq::kEndpoints) endpoints.emplace_back(e.name);
  std::vector<std::string_view> names(endpoints.begin(), endpoints.end());
  for (auto n : names) mosq::endpoint(n);
  const auto pcfg = po.make();
  std::vector<mosq::ImageTensor> prepared;
  for (const auto& f : files) prepared.push_back(mosq::preprocess(mosq::load_image(f), pcfg));
  auto archive = mosq::export_features(*bo.make(), prepared, names);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  mosq::fmap_write(archive, out);
  json j = {{"archive", out.string()}, {"entries", archive.entries.size()}, {"images", prepared.size()}};
  emit(j, as_json, "wrote " + std::to_string(archive.entries.size()) + " feature maps to " + out.string() + "\n");
  return 0;
}

httplib::Server* g_server = nullptr;

int cmd_serve(const fs::path& config_path) {
  auto cfg = mosq::load_service_config(config_path);
  auto clf = mosq::load_classifier(cfg);
  if (!clf) std::cerr << "warning: models not loaded; ingest will answer 503\n";
  mosq::Service service(cfg, clf);
  httplib::Server srv;
  service.bind(srv);
  g_server = &srv;
  std::signal(SIGINT, [](int) { if (g_server) g_server->stop(); });
  std::signal(SIGTERM, [](int) { if (g_server) g_server->stop(); });
  int port = cfg.port;
  if (port == 0) {
    port = srv.bind_to_any_port(cfg.host);
  } else if (!srv.bind_to_port(cfg.host, port)) {
    throw mosq::Error(mosq::ErrorKind::IoError, "cannot bind " + cfg.host + ":" + std::to_string(port));
  }
  std::cout << "listening on " << cfg.host << ':' << port << std::endl;
  srv.listen_after_bind();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mosquito vector classification pipeline"};
  app.require_subcommand(1);
  app.fallthrough();
  bool as_json = false;
  app.add_flag("--json", as_json, "machine-readable output on stdout");

  // denoise
  auto* dn = app.add_subcommand("denoise", "non-local means on one image");
  std::string dn_in, dn_out, dn_window = "10";
  double dn_h = 10.0;
  int dn_patch = 3;
  bool dn_resize = false;
  unsigned dn_threads = 0;
  dn->add_option("--in", dn_in, "input image (PNG or PPM)")->required();
  dn->add_option("--out", dn_out, "output image (.ppm for P6, otherwise PNG)")->required();
  dn->add_option("--filter-h", dn_h, "NLM filtering degree h")->capture_default_str();
  dn->add_option("--patch", dn_patch, "patch radius (3 gives 7x7)")->capture_default_str();
  dn->add_option("--window", dn_window, "search radius, or \"exact\" for every pixel")->capture_default_str();
  dn->add_flag("--resize", dn_resize, "resize to 299x299 first");
  dn->add_option("--threads", dn_threads, "worker threads (0: all cores)");

  // augment
  auto* au = app.add_subcommand("augment", "expand the Train partition x5 with zoom and gain variants");
  std::string au_manifest, au_out;
  std::uint64_t au_seed = 0;
  bool au_prep = false;
  PreprocessOpts au_po;
  au->add_option("--manifest", au_manifest, "manifest (CSV or JSON)")->required();
  au->add_option("--out-dir", au_out, "directory for variants, sidecar and manifest")->required();
  au->add_option("--seed", au_seed, "augmentation seed")->capture_default_str();
  au->add_flag("--preprocess", au_prep, "resize and denoise before augmenting");
  au_po.add(au);

  // split
  auto* sp = app.add_subcommand("split", "specimen-grouped, class-stratified train/validation split");
  std::string sp_in, sp_out;
  double sp_val = 0.3;
  std::uint64_t sp_seed = 0;
  sp->add_option("--manifest", sp_in, "unpartitioned manifest")->required();
  sp->add_option("--out", sp_out, "partitioned manifest (.csv or .json)")->required();
  sp->add_option("--val", sp_val, "validation fraction")->capture_default_str();
  sp->add_option("--seed", sp_seed, "split seed")->capture_default_str();

  // train
  auto* tr = app.add_subcommand("train", "train a head and write a run directory");
  TrainOpts to;
  BackboneOpts tr_bo;
  PreprocessOpts tr_po;
  tr->add_option("--manifest", to.manifest, "manifest with train/validation partitions (split if absent)")->required();
  tr->add_option("--out", to.out, "run directory")->required();
  tr->add_option("--head", to.head, "genus, aedes, anopheles, culex or species")->capture_default_str();
  tr->add_option("--seed", to.seed, "seed for init, dropout, shuffling, augmentation and split")->capture_default_str();
  tr->add_option("--epochs1", to.epochs1, "phase 1 epochs (default 50)");
  tr->add_option("--epochs2", to.epochs2, "phase 2 epochs (default 50)");
  tr->add_flag("--paper-scale", to.paper_scale, "500/1200 epochs");
  tr->add_option("--patience", to.patience, "early-stopping patience (default 50)");
  tr->add_option("--batch-size", to.batch, "minibatch size")->capture_default_str();
  tr->add_option("--dropout", to.dropout, "dropout rate")->capture_default_str();
  tr->add_flag("--no-batch-norm", to.no_bn, "drop batch normalization from the head");
  tr->add_flag("--no-augment", to.no_augment, "train on originals only");
  tr->add_option("--val", to.val, "validation fraction when the manifest is unpartitioned")->capture_default_str();
  tr_bo.add(tr);
  tr_po.add(tr);

  // eval
  auto* ev = app.add_subcommand("eval", "per-class recall and confusion matrix");
  std::string ev_model, ev_manifest, ev_protocol = "per-image", ev_partition = "test", ev_out;
  BackboneOpts ev_bo;
  PreprocessOpts ev_po;
  ev->add_option("--model", ev_model, "head checkpoint (.fmap)")->required();
  ev->add_option("--manifest", ev_manifest, "labelled manifest")->required();
  ev->add_option("--protocol", ev_protocol, "per-image or per-set")->capture_default_str();
  ev->add_option("--partition", ev_partition, "train, validation, test or all (unpartitioned entries always count)")
      ->capture_default_str();
  ev->add_option("--out", ev_out, "report JSON; .csv confusion and .txt table are written alongside");
  ev_bo.add(ev);
  ev_po.add(ev);

  // explain
  auto* ex = app.add_subcommand("explain", "class activation map overlay");
  std::string ex_model, ex_image, ex_class, ex_out;
  BackboneOpts ex_bo;
  PreprocessOpts ex_po;
  ex->add_option("--model", ex_model, "head checkpoint (.fmap)")->required();
  ex->add_option("--image", ex_image, "input image")->required();
  ex->add_option("--class", ex_class, "class name or index (default: predicted)");
  ex->add_option("--out", ex_out, "overlay PNG; the raw map is written next to it as CSV")->required();
  ex_bo.add(ex);
  ex_po.add(ex);

  // classify
  auto* cl = app.add_subcommand("classify", "classify images, or one three-image set");
  std::string cl_model;
  std::map<std::string, std::string> cl_hier;
  std::vector<std::string> cl_set, cl_images;
  BackboneOpts cl_bo;
  PreprocessOpts cl_po;
  cl->add_option("--model", cl_model, "head checkpoint for direct classification");
  for (auto k : {"genus", "aedes", "anopheles", "culex"})
    cl->add_option(std::string("--") + k, cl_hier[k], std::string(k) + " head (hierarchical mode)");
  cl->add_option("--set", cl_set, "three images of one specimen; probabilities are averaged");
  cl->add_option("images", cl_images, "images classified one by one");
  cl_bo.add(cl);
  cl_po.add(cl);

  // serve
  auto* sv = app.add_subcommand("serve", "HTTP surveillance service");
  std::string sv_config;
  sv->add_option("--config", sv_config, "service config (JSON)")->required();

  // export-features
  auto* xf = app.add_subcommand("export-features", "write backbone endpoint features to an FMAP archive");
  std::string xf_manifest, xf_out;
  std::vector<std::string> xf_images, xf_endpoints;
  BackboneOpts xf_bo;
  PreprocessOpts xf_po;
  xf->add_option("--manifest", xf_manifest, "images to export (originals only)");
  xf->add_option("--out", xf_out, "archive path")->required();
  xf->add_option("--endpoint", xf_endpoints, "endpoint name (repeatable; default all four)");
  xf->add_option("images", xf_images, "images to export");
  xf_bo.add(xf);
  xf_po.add(xf);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*dn) return cmd_denoise(dn_in, dn_out, dn_h, dn_patch, dn_window, dn_resize, dn_threads);
    if (*au) return cmd_augment(au_manifest, au_out, au_seed, au_prep, au_po);
    if (*sp) return cmd_split(sp_in, sp_out, sp_val, sp_seed, as_json);
    if (*tr) return cmd_train(to, tr_bo, tr_po, as_json);
    if (*ev) return cmd_eval(ev_model, ev_manifest, ev_protocol, ev_partition, ev_out, ev_bo, ev_po, as_json);
    if (*ex) return cmd_explain(ex_model, ex_image, ex_class, ex_out, ex_bo, ex_po, as_json);
    if (*cl) {
      std::erase_if(cl_hier, [](const auto& kv) { return kv.second.empty(); });
      return cmd_classify(cl_model, cl_hier, cl_set, cl_images, cl_bo, cl_po, as_json);
    }
    if (*sv) return cmd_serve(sv_config);
    if (*xf) return cmd_export_features(xf_manifest, xf_images, xf_out, xf_endpoints, xf_bo, xf_po, as_json);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const mosq::Error& e) {
    std::cerr << "error (" << mosq::to_string(e.kind()) << "): " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
