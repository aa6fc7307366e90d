#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mosq/augment.hpp"
#include "mosq/catalog.hpp"
#include "mosq/eval.hpp"
#include "mosq/heads.hpp"
#include "mosq/preprocess.hpp"
#include "mosq/train.hpp"

namespace mosq {

/// Class names of a head in dataset-table order.
inline std::vector<std::string> class_names(HeadName h) {
  switch (h) {
    case HeadName::Genus: return genus_classes();
    case HeadName::Aedes: return species_classes(Genus::Aedes);
    case HeadName::Anopheles: return species_classes(Genus::Anopheles);
    case HeadName::Culex: return species_classes(Genus::Culex);
    case HeadName::SpeciesOnly: return species_classes();
  }
  return {};
}

/// Class name of a manifest label under a head. Species labels map to their
/// genus for the genus head; labels of other genera are out of scope for a
/// within-genus head (nullopt). Unknown labels throw UnknownLabel.
inline std::optional<std::string> label_for(HeadName h, const std::string& label) {
  const auto species = parse_species(label);
  const auto genus = parse_genus(label);
  if (!species && !genus) throw Error(ErrorKind::UnknownLabel, "unknown label " + label);
  switch (h) {
    case HeadName::Genus:
      return std::string(name(species ? genus_of(*species) : *genus));
    case HeadName::SpeciesOnly:
      if (!species) throw Error(ErrorKind::UnknownLabel, "species head needs species labels: " + label);
      return label;
    default: {
      if (!species) throw Error(ErrorKind::UnknownLabel, "within-genus head needs species labels: " + label);
      if (head_for(genus_of(*species)) != h) return std::nullopt;
      return label;
    }
  }
}

inline std::optional<int> class_index(HeadName h, const std::string& label) {
  const auto cls = label_for(h, label);
  if (!cls) return std::nullopt;
  const auto names = class_names(h);
  return static_cast<int>(std::find(names.begin(), names.end(), *cls) - names.begin());
}

struct PipelineConfig {
  PreprocessConfig preprocess;
  AugmentationSpec augment;
  bool augment_train = true;
  unsigned threads = 1;
};

/// Resolves an entry's image file against the manifest directory.
inline std::filesystem::path entry_path(const ManifestEntry& e, const std::filesystem::path& base) {
  if (e.path.empty()) throw Error(ErrorKind::MissingImage, "manifest entry without a path: " + e.image_id);
  std::filesystem::path p(e.path);
  return p.is_absolute() || base.empty() ? p : base / p;
}

struct FeatureSplits {
  FeatureDataset train, validation, test;
};

/// resize, denoise, augment (Train originals only, x5), normalize, extract,
/// pool. Entries are processed in parallel and appended in manifest order so
/// the result does not depend on the thread count.
inline FeatureSplits build_features(const DatasetManifest& m, const std::function<ImageTensor(const ManifestEntry&)>& load,
                                    HeadName head, const Backbone& backbone, const PipelineConfig& cfg) {
  const auto spec = head_spec(head);
  struct Item {
    const ManifestEntry* entry;
    int label;
  };
  std::vector<Item> items;
  for (const auto& e : m.entries) {
    if (e.augmented_from) continue;  // variants are regenerated from their sources
    const auto y = class_index(head, e.label);
    if (y) items.push_back({&e, *y});
  }
  std::vector<std::vector<std::vector<float>>> pooled(items.size());
  PreprocessConfig prep = cfg.preprocess;
  if (cfg.threads != 1) prep.denoise.threads = 1;  // parallel over images instead
  detail::parallel_for(items.size(), cfg.threads, [&](std::size_t i) {
    const auto& e = *items[i].entry;
    ImageTensor img;
    try {
      img = load(e);
    } catch (const Error&) {
      throw;
    } catch (const std::exception& ex) {
      throw Error(ErrorKind::MissingImage, e.image_id + ": " + ex.what());
    }
    auto bytes = prepare_bytes(img, prep);
    std::vector<ImageTensor> views;
    if (cfg.augment_train && e.partition == Partition::Train) {
      auto set = augment_one(e.image_id, std::move(bytes), cfg.augment);
      views.push_back(std::move(set.original));
      for (auto& v : set.variants) views.push_back(std::move(v.image));
    } else {
      views.push_back(std::move(bytes));
    }
    for (const auto& v : views) {
      const auto g = nn::global_average_pool(backbone.extract(normalize(v), spec.endpoint));
      pooled[i].emplace_back(g.data.begin(), g.data.end());
    }
  });
  FeatureSplits out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    auto& dst = items[i].entry->partition == Partition::Train        ? out.train
                : items[i].entry->partition == Partition::Validation ? out.validation
                                                                     : out.test;
    for (const auto& f : pooled[i]) dst.add(f, items[i].label);
  }
  return out;
}

inline std::function<ImageTensor(const ManifestEntry&)> file_loader(std::filesystem::path base) {
  return [base = std::move(base)](const ManifestEntry& e) { return load_image(entry_path(e, base)); };
}

}  // namespace mosq
