#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "mosq/core.hpp"
#include "mosq/image.hpp"

namespace mosq {

enum class Protocol { PerImage, PerSet };

inline std::string_view name(Protocol p) { return p == Protocol::PerImage ? "per-image" : "per-set"; }

inline std::optional<Protocol> parse_protocol(std::string_view s) {
  if (s == "per-image") return Protocol::PerImage;
  if (s == "per-set") return Protocol::PerSet;
  return std::nullopt;
}

inline constexpr std::size_t kSetSize = 3;

/// Three orientations of one specimen, same phone and background.
struct SpecimenSet {
  std::string specimen_id;
  std::vector<ImageTensor> images;
  std::string phone;
  std::string background;
  TaxonLabel true_label;
};

/// Class probabilities for one preprocessed image.
using ProbabilityFn = std::function<std::vector<double>(const ImageTensor&)>;

struct SetPrediction {
  std::vector<double> probabilities;
  int label = 0;
};

/// Elementwise mean of the three per-image vectors, then argmax.
inline SetPrediction predict_set(const std::vector<std::vector<double>>& per_image) {
  if (per_image.size() != kSetSize) throw Error(ErrorKind::WrongSetSize, "set requires exactly three images");
  const std::size_t k = per_image[0].size();
  SetPrediction out;
  out.probabilities.assign(k, 0.0);
  for (const auto& p : per_image) {
    if (p.size() != k) throw Error(ErrorKind::ShapeMismatch, "probability vectors differ in length");
    for (std::size_t c = 0; c < k; ++c) out.probabilities[c] += p[c];
  }
  for (auto& v : out.probabilities) v /= static_cast<double>(kSetSize);
  out.label = argmax(out.probabilities);
  return out;
}

inline SetPrediction predict_set(const SpecimenSet& s, const ProbabilityFn& classify) {
  if (s.images.size() != kSetSize) throw Error(ErrorKind::WrongSetSize, "set requires exactly three images");
  std::vector<std::vector<double>> per_image;
  for (const auto& img : s.images) per_image.push_back(classify(img));
  return predict_set(per_image);
}

// ---------------------------------------------------------------------------
// Class lists in dataset-table order.

inline std::vector<std::string> genus_classes() { return {kGenusNames.begin(), kGenusNames.end()}; }

inline std::vector<std::string> species_classes() { return {kSpeciesNames.begin(), kSpeciesNames.end()}; }

inline std::vector<std::string> species_classes(Genus g) {
  std::vector<std::string> out;
  for (int i = 0; i < 3; ++i) out.emplace_back(name(species_in_genus(g, i)));
  return out;
}

struct ConfusionMatrix {
  std::vector<std::string> classes;
  std::vector<std::vector<std::int64_t>> counts;  // rows = true, columns = predicted

  explicit ConfusionMatrix(std::vector<std::string> cls = {})
      : classes(std::move(cls)), counts(classes.size(), std::vector<std::int64_t>(classes.size(), 0)) {}

  std::size_t size() const { return classes.size(); }

  void add(std::size_t truth, std::size_t predicted) {
    if (truth >= size() || predicted >= size()) throw Error(ErrorKind::BadClass, "class index out of range");
    ++counts[truth][predicted];
  }

  std::int64_t row_sum(std::size_t k) const {
    std::int64_t s = 0;
    for (auto v : counts[k]) s += v;
    return s;
  }

  std::int64_t total() const {
    std::int64_t s = 0;
    for (std::size_t k = 0; k < size(); ++k) s += row_sum(k);
    return s;
  }

  /// counts[k][k] / rowsum_k; empty when the class has no items.
  std::optional<double> recall(std::size_t k) const {
    const auto n = row_sum(k);
    if (n == 0) return std::nullopt;
    return static_cast<double>(counts[k][k]) / static_cast<double>(n);
  }

  std::int64_t correct() const {
    std::int64_t s = 0;
    for (std::size_t k = 0; k < size(); ++k) s += counts[k][k];
    return s;
  }
};

struct EvalReport {
  std::vector<std::pair<std::string, std::optional<double>>> per_class_recall;
  ConfusionMatrix confusion;
  std::size_t n_items = 0;
  Protocol protocol = Protocol::PerImage;

  double accuracy() const {
    return n_items ? static_cast<double>(confusion.correct()) / static_cast<double>(n_items) : 0.0;
  }
};

/// One evaluated item: the true label (a class name) and the predicted index.
struct Outcome {
  std::string truth;
  int predicted = 0;
};

inline EvalReport evaluate_outcomes(const std::vector<std::string>& classes, const std::vector<Outcome>& items,
                                    Protocol protocol) {
  if (items.empty()) throw Error(ErrorKind::EmptyDataset, "nothing to evaluate");
  EvalReport r;
  r.protocol = protocol;
  r.confusion = ConfusionMatrix(classes);
  for (const auto& it : items) {
    const auto pos = std::find(classes.begin(), classes.end(), it.truth);
    if (pos == classes.end()) throw Error(ErrorKind::UnknownLabel, "label not in class set: " + it.truth);
    r.confusion.add(static_cast<std::size_t>(pos - classes.begin()), static_cast<std::size_t>(it.predicted));
  }
  r.n_items = items.size();
  for (std::size_t k = 0; k < classes.size(); ++k) r.per_class_recall.emplace_back(classes[k], r.confusion.recall(k));
  return r;
}

namespace detail {

/// Parallel map over [0, n) with results stored by index.
template <class F>
void parallel_for(std::size_t n, unsigned threads, F&& f) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(n, 1)));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        try {
          for (std::size_t i = t; i < n; i += threads) f(i);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace detail

struct LabeledImage {
  ImageTensor image;
  std::string truth;
};

/// Per-image protocol over preprocessed images.
inline EvalReport evaluate(const std::vector<std::string>& classes, const std::vector<LabeledImage>& items,
                           const ProbabilityFn& classify, unsigned threads = 1) {
  if (items.empty()) throw Error(ErrorKind::EmptyDataset, "nothing to evaluate");
  for (const auto& it : items)
    if (std::find(classes.begin(), classes.end(), it.truth) == classes.end())
      throw Error(ErrorKind::UnknownLabel, "label not in class set: " + it.truth);
  std::vector<Outcome> out(items.size());
  detail::parallel_for(items.size(), threads, [&](std::size_t i) {
    out[i] = {items[i].truth, argmax(classify(items[i].image))};
  });
  return evaluate_outcomes(classes, out, Protocol::PerImage);
}

/// Per-set protocol; `truth_of` names the class of each set under the classifier's class list.
inline EvalReport evaluate(const std::vector<std::string>& classes, const std::vector<SpecimenSet>& sets,
                           const std::function<std::string(const SpecimenSet&)>& truth_of,
                           const ProbabilityFn& classify, unsigned threads = 1) {
  if (sets.empty()) throw Error(ErrorKind::EmptyDataset, "nothing to evaluate");
  for (const auto& s : sets) {
    if (s.images.size() != kSetSize) throw Error(ErrorKind::WrongSetSize, "set requires exactly three images");
    const auto t = truth_of(s);
    if (std::find(classes.begin(), classes.end(), t) == classes.end())
      throw Error(ErrorKind::UnknownLabel, "label not in class set: " + t);
  }
  std::vector<Outcome> out(sets.size());
  detail::parallel_for(sets.size(), threads, [&](std::size_t i) {
    out[i] = {truth_of(sets[i]), predict_set(sets[i], classify).label};
  });
  return evaluate_outcomes(classes, out, Protocol::PerSet);
}

// ---------------------------------------------------------------------------
// Output

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json recall = nlohmann::json::object();
  for (const auto& [cls, v] : r.per_class_recall) recall[cls] = v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  return {{"protocol", name(r.protocol)},
          {"n_items", r.n_items},
          {"accuracy", r.accuracy()},
          {"classes", r.confusion.classes},
          {"per_class_recall", recall},
          {"confusion", r.confusion.counts}};
}

inline std::string text_table(const EvalReport& r) {
  std::size_t w = 5;
  for (const auto& c : r.confusion.classes) w = std::max(w, c.size());
  std::ostringstream out;
  out << "protocol " << name(r.protocol) << ", " << r.n_items << " items\n";
  out << std::left << std::setw(static_cast<int>(w)) << "class" << "  " << std::right << std::setw(7) << "recall"
      << "  " << std::setw(6) << "n" << '\n';
  for (std::size_t k = 0; k < r.confusion.size(); ++k) {
    const auto rc = r.confusion.recall(k);
    std::ostringstream cell;
    if (rc)
      cell << std::fixed << std::setprecision(1) << *rc * 100.0 << '%';
    else
      cell << '-';
    out << std::left << std::setw(static_cast<int>(w)) << r.confusion.classes[k] << "  " << std::right << std::setw(7)
        << cell.str();
    out << "  " << std::setw(6) << r.confusion.row_sum(k) << '\n';
  }
  return out.str();
}

inline std::string confusion_csv(const ConfusionMatrix& m) {
  std::ostringstream out;
  out << "true\\predicted";
  for (const auto& c : m.classes) out << ',' << c;
  out << '\n';
  for (std::size_t i = 0; i < m.size(); ++i) {
    out << m.classes[i];
    for (auto v : m.counts[i]) out << ',' << v;
    out << '\n';
  }
  return out.str();
}

}  // namespace mosq
