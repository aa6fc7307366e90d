#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mosq/core.hpp"
#include "mosq/fmap.hpp"
#include "mosq/image.hpp"
#include "mosq/nn.hpp"

namespace mosq {

using FeatureTensor = nn::Tensor<float>;  // [17, 17, C]

inline constexpr std::size_t kFeatureGrid = 17;

// ---------------------------------------------------------------------------
// Backbone endpoints

struct BackboneEndpoint {
  std::string_view name;
  std::size_t channels;
  int source_layer;  // depth of the cut in the pretrained network

  std::array<std::size_t, 3> out_shape() const { return {kFeatureGrid, kFeatureGrid, channels}; }
};

inline constexpr std::array<BackboneEndpoint, 4> kEndpoints = {{
    {"block17_10_conv", 1088, 433},
    {"conv2d_93", 192, 346},
    {"block17_8_conv", 1088, 401},
    {"conv2d_111", 160, 407},
}};

inline const BackboneEndpoint& endpoint(std::string_view name) {
  for (const auto& e : kEndpoints)
    if (e.name == name) return e;
  throw Error(ErrorKind::UnknownSpec, "unknown backbone endpoint " + std::string(name));
}

/// Feature extractor cut at a named endpoint. Implementations must be
/// deterministic for a fixed state and safe for concurrent extract() calls.
class Backbone {
public:
  virtual ~Backbone() = default;
  virtual FeatureTensor extract(const ImageTensor& img, std::string_view endpoint_name) const = 0;
  virtual bool trainable() const = 0;
  virtual std::vector<BackboneEndpoint> endpoints() const {
    return {kEndpoints.begin(), kEndpoints.end()};
  }
};

/// Desk-scale substitute for a pretrained network: adaptive average pooling
/// to 17x17x3, then a fixed seeded pointwise projection 3 -> C and ReLU.
class StandinBackbone final : public Backbone {
public:
  explicit StandinBackbone(std::uint64_t seed) : seed_(seed) {
    for (const auto& e : kEndpoints) {
      Rng rng = Rng::substream(seed, e.name);
      std::vector<float> p(3 * e.channels);
      for (auto& v : p) v = static_cast<float>(rng.uniform(-1.0, 1.0));
      projections_.emplace(std::string(e.name), std::move(p));
    }
  }

  std::uint64_t seed() const { return seed_; }
  bool trainable() const override { return false; }

  FeatureTensor extract(const ImageTensor& img, std::string_view endpoint_name) const override {
    const auto& ep = endpoint(endpoint_name);
    if (img.height < static_cast<int>(kFeatureGrid) || img.width < static_cast<int>(kFeatureGrid)) {
      throw Error(ErrorKind::ShapeMismatch, "backbone input must be at least 17x17");
    }
    const auto pooled = pool(img);
    const auto& proj = projections_.at(std::string(ep.name));
    const std::size_t C = ep.channels;
    FeatureTensor f({kFeatureGrid, kFeatureGrid, C});
    for (std::size_t p = 0; p < kFeatureGrid * kFeatureGrid; ++p) {
      const float r = pooled[p * 3], g = pooled[p * 3 + 1], b = pooled[p * 3 + 2];
      float* dst = f.data.data() + p * C;
      for (std::size_t k = 0; k < C; ++k) {
        dst[k] = std::max(0.0f, r * proj[k] + g * proj[C + k] + b * proj[2 * C + k]);
      }
    }
    return f;
  }

private:
  static std::vector<float> pool(const ImageTensor& img) {
    const int n = static_cast<int>(kFeatureGrid);
    std::vector<float> out(kFeatureGrid * kFeatureGrid * 3);
    for (int gy = 0; gy < n; ++gy) {
      const int y0 = gy * img.height / n, y1 = ((gy + 1) * img.height + n - 1) / n;
      for (int gx = 0; gx < n; ++gx) {
        const int x0 = gx * img.width / n, x1 = ((gx + 1) * img.width + n - 1) / n;
        double s[3] = {0, 0, 0};
        for (int y = y0; y < y1; ++y)
          for (int x = x0; x < x1; ++x)
            for (int c = 0; c < 3; ++c) s[c] += img.at(y, x, c);
        const double cnt = static_cast<double>((y1 - y0) * (x1 - x0));
        for (int c = 0; c < 3; ++c) out[(gy * n + gx) * 3 + c] = static_cast<float>(s[c] / cnt);
      }
    }
    return out;
  }

  std::uint64_t seed_;
  std::map<std::string, std::vector<float>> projections_;
};

/// Entry name used for one image/endpoint pair inside a feature archive.
inline std::string feature_key(std::string_view image_digest, std::string_view endpoint_name) {
  return std::string(image_digest) + "/" + std::string(endpoint_name);
}

/// Serves features exported offline, looked up by the image content digest.
class ImportedBackbone final : public Backbone {
public:
  explicit ImportedBackbone(FmapFile archive) : archive_(std::move(archive)) {
    for (const auto& e : archive_.entries) {
      const auto slash = e.name.rfind('/');
      if (slash == std::string::npos) throw Error(ErrorKind::CorruptContainer, "feature entry without endpoint: " + e.name);
      const auto& ep = endpoint(std::string_view(e.name).substr(slash + 1));
      if (e.dims.size() != 3 || e.dims[0] != kFeatureGrid || e.dims[1] != kFeatureGrid || e.dims[2] != ep.channels) {
        throw Error(ErrorKind::CorruptContainer, "feature entry has wrong shape: " + e.name);
      }
    }
  }

  static ImportedBackbone load(const std::filesystem::path& path) { return ImportedBackbone(fmap_read(path)); }

  bool trainable() const override { return false; }

  FeatureTensor extract(const ImageTensor& img, std::string_view endpoint_name) const override {
    endpoint(endpoint_name);
    const auto key = feature_key(content_digest(img), endpoint_name);
    const auto* e = archive_.find(key);
    if (!e) throw Error(ErrorKind::MissingFeature, key);
    return FeatureTensor({e->dims[0], e->dims[1], e->dims[2]}, e->data);
  }

  std::size_t size() const { return archive_.entries.size(); }

private:
  FmapFile archive_;
};

/// Runs a backbone over images and collects an archive for ImportedBackbone.
inline FmapFile export_features(const Backbone& backbone, const std::vector<ImageTensor>& images,
                                const std::vector<std::string_view>& endpoint_names) {
  FmapFile out;
  out.metadata = {{"kind", "feature-archive"}};
  for (const auto& img : images) {
    const auto digest = content_digest(img);
    for (auto ep : endpoint_names) {
      const auto key = feature_key(digest, ep);
      if (out.find(key)) continue;
      auto f = backbone.extract(img, ep);
      out.entries.push_back({key, {static_cast<std::uint32_t>(f.dim(0)), static_cast<std::uint32_t>(f.dim(1)),
                                   static_cast<std::uint32_t>(f.dim(2))},
                             std::move(f.data)});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Head specifications

enum class HeadName { Genus, Aedes, Anopheles, Culex, SpeciesOnly };

inline constexpr std::array<HeadName, 5> kHeadNames = {HeadName::Genus, HeadName::Aedes, HeadName::Anopheles,
                                                       HeadName::Culex, HeadName::SpeciesOnly};

inline std::string_view name(HeadName h) {
  switch (h) {
    case HeadName::Genus: return "genus";
    case HeadName::Aedes: return "aedes";
    case HeadName::Anopheles: return "anopheles";
    case HeadName::Culex: return "culex";
    case HeadName::SpeciesOnly: return "species";
  }
  return "?";
}

inline std::optional<HeadName> parse_head_name(std::string_view s) {
  for (auto h : kHeadNames)
    if (name(h) == s) return h;
  return std::nullopt;
}

/// Declarative head: GAP over the endpoint, a chain of dense layers, an
/// optional concatenation of selected dense outputs, and a softmax layer.
struct HeadSpec {
  std::string name;
  std::string endpoint;
  std::size_t in_channels = 0;
  std::vector<std::size_t> hidden;      // dense_1 .. dense_n widths
  std::vector<std::size_t> concat_of;   // 1-based dense indices; empty: last dense feeds softmax
  std::size_t num_classes = 0;

  std::size_t classifier_in() const {
    if (concat_of.empty()) return hidden.empty() ? in_channels : hidden.back();
    std::size_t w = 0;
    for (auto i : concat_of) w += hidden.at(i - 1);
    return w;
  }

  bool operator==(const HeadSpec&) const = default;
};

/// The five registered heads. The Culex chain uses dense_5 = 512 -> 256 and a
/// concat width of 1664; the published table lists dense_5 input 256 and a
/// concat width of 2484, which the listed layer widths cannot produce.
inline HeadSpec head_spec(HeadName h) {
  switch (h) {
    case HeadName::Genus:
      return {"genus", "block17_10_conv", 1088, {512, 256, 128, 256}, {1, 2, 3, 4}, 3};
    case HeadName::Aedes:
      return {"aedes", "conv2d_93", 192, {512, 512, 256, 128}, {1, 4}, 3};
    case HeadName::Anopheles:
      return {"anopheles", "block17_8_conv", 1088, {512, 512, 256, 256, 256}, {}, 3};
    case HeadName::Culex:
      return {"culex", "conv2d_111", 160, {512, 128, 256, 512, 256}, {1, 2, 3, 4, 5}, 3};
    case HeadName::SpeciesOnly:
      return {"species", "block17_10_conv", 1088, {512, 256, 128, 256}, {1, 2, 3, 4}, 9};
  }
  throw Error(ErrorKind::UnknownSpec, "unregistered head");
}

inline HeadName head_name(const HeadSpec& s) {
  const auto h = parse_head_name(s.name);
  if (!h) throw Error(ErrorKind::UnknownSpec, "unregistered head " + s.name);
  return *h;
}

inline HeadName head_for(Genus g) {
  switch (g) {
    case Genus::Aedes: return HeadName::Aedes;
    case Genus::Anopheles: return HeadName::Anopheles;
    case Genus::Culex: return HeadName::Culex;
  }
  return HeadName::Aedes;
}

/// Regularization placement: dense -> [batch norm] -> ReLU -> [dropout].
struct HeadOptions {
  bool batch_norm = true;
  double dropout = 0.3;
  bool operator==(const HeadOptions&) const = default;
};

struct LayerRow {
  std::string layer;
  std::size_t in = 0;
  std::size_t out = 0;
};

// ---------------------------------------------------------------------------
// Head model

template <class T>
class HeadModel {
public:
  struct ParamRef {
    std::string name;
    nn::Tensor<T>* value;
    nn::Tensor<T>* grad;
  };

  HeadModel() = default;

  HeadModel(HeadSpec spec, std::uint64_t seed, HeadOptions options = {})
      : spec_(std::move(spec)), options_(options), seed_(seed), rng_(Rng::substream(seed, "dropout")) {
    if (spec_.in_channels == 0 || spec_.num_classes == 0) throw Error(ErrorKind::UnknownSpec, "head dims must be positive");
    for (auto i : spec_.concat_of) {
      if (i == 0 || i > spec_.hidden.size()) throw Error(ErrorKind::UnknownSpec, "concat source out of range");
    }
    std::size_t in = spec_.in_channels;
    for (std::size_t i = 0; i < spec_.hidden.size(); ++i) {
      Block b;
      b.dense = nn::Dense<T>(in, spec_.hidden[i], nn::Activation::None, splitmix64(seed + 1 + i));
      if (options_.batch_norm) b.bn = nn::BatchNorm<T>(spec_.hidden[i]);
      b.dropout = nn::Dropout<T>(options_.dropout);
      blocks_.push_back(std::move(b));
      in = spec_.hidden[i];
    }
    output_ = nn::Dense<T>(spec_.classifier_in(), spec_.num_classes, nn::Activation::None, splitmix64(seed + 1000));
  }

  const HeadSpec& spec() const { return spec_; }
  const HeadOptions& options() const { return options_; }
  std::uint64_t seed() const { return seed_; }
  std::size_t num_classes() const { return spec_.num_classes; }

  /// Logits for pooled features [batch, in_channels]; records the graph.
  nn::Tensor<T> forward(const nn::Tensor<T>& pooled, nn::Mode mode, bool reuse_dropout_masks = false) {
    std::size_t bi = 0;
    const nn::Tensor<T>* x = &pooled;
    for (auto& b : blocks_) {
      auto z = b.dense.forward(*x);
      if (b.bn) z = b.bn->forward(z, mode);
      relu_forward(z, b.relu_mask);
      b.out = b.dropout.forward(z, mode, &rng_, reuse_dropout_masks);
      x = &b.out;
      ++bi;
    }
    nn::Tensor<T> logits = output_.forward(classifier_input(x));
    recorded_ = true;
    return logits;
  }

  /// Logits for feature maps [batch, H, W, C] (or a single [H, W, C]).
  nn::Tensor<T> forward_features(const nn::Tensor<T>& features, nn::Mode mode, bool reuse_dropout_masks = false) {
    if (features.rank() < 3) throw Error(ErrorKind::ShapeMismatch, "feature map rank must be 3 or 4");
    feat_h_ = features.dim(features.rank() - 3);
    feat_w_ = features.dim(features.rank() - 2);
    if (features.dim(features.rank() - 1) != spec_.in_channels) {
      throw Error(ErrorKind::ShapeMismatch, "feature channels " + std::to_string(features.dim(features.rank() - 1)) +
                                                " do not match head input " + std::to_string(spec_.in_channels));
    }
    return forward(nn::global_average_pool(features), mode, reuse_dropout_masks);
  }

  /// Backpropagates dL/dlogits; accumulates parameter gradients and returns
  /// dL/dpooled (empty when need_input_grad is false).
  nn::Tensor<T> backward(const nn::Tensor<T>& dlogits, bool need_input_grad = true) {
    if (!recorded_) throw Error(ErrorKind::GraphNotRecorded, "head backward before forward");
    const bool direct = blocks_.empty();
    nn::Tensor<T> dcls = output_.backward(dlogits, true);
    if (direct) return dcls;
    const std::size_t batch = dlogits.dim(0);
    std::vector<nn::Tensor<T>> g;
    for (auto& b : blocks_) g.emplace_back(std::vector<std::size_t>{batch, b.dense.out_dim});
    if (spec_.concat_of.empty()) {
      g.back() = std::move(dcls);
    } else {
      std::size_t off = 0;
      for (auto src : spec_.concat_of) {
        auto& dst = g[src - 1];
        const std::size_t w = dst.dim(1);
        for (std::size_t r = 0; r < batch; ++r)
          for (std::size_t j = 0; j < w; ++j) dst.row(r)[j] += dcls.row(r)[off + j];
        off += w;
      }
    }
    nn::Tensor<T> dx;
    for (std::size_t i = blocks_.size(); i-- > 0;) {
      auto& b = blocks_[i];
      auto d = b.dropout.backward(std::move(g[i]));
      for (std::size_t k = 0; k < d.size(); ++k)
        if (!b.relu_mask[k]) d[k] = T{0};
      if (b.bn) d = b.bn->backward(d);
      dx = b.dense.backward(d, i > 0 || need_input_grad);
      if (i > 0) {
        for (std::size_t k = 0; k < dx.size(); ++k) g[i - 1][k] += dx[k];
      }
    }
    return dx;
  }

  /// dL/dfeatures for the last forward_features() call.
  nn::Tensor<T> backward_features(const nn::Tensor<T>& dlogits) {
    auto dpooled = backward(dlogits, true);
    return nn::global_average_pool_backward(dpooled, feat_h_, feat_w_);
  }

  std::vector<T> predict_probabilities(const FeatureTensor& features) const {
    auto pooled = nn::global_average_pool(features.cast<T>());
    auto logits = infer(pooled);
    return nn::softmax(std::span<const T>(logits.row(0), logits.dim(1)));
  }

  std::vector<ParamRef> parameters() {
    std::vector<ParamRef> out;
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      auto& b = blocks_[i];
      const auto n = std::to_string(i + 1);
      out.push_back({"dense_" + n + ".weight", &b.dense.weight, &b.dense.grad_weight});
      out.push_back({"dense_" + n + ".bias", &b.dense.bias, &b.dense.grad_bias});
      if (b.bn) {
        out.push_back({"bn_" + n + ".gamma", &b.bn->gamma, &b.bn->grad_gamma});
        out.push_back({"bn_" + n + ".beta", &b.bn->beta, &b.bn->grad_beta});
      }
    }
    out.push_back({"output.weight", &output_.weight, &output_.grad_weight});
    out.push_back({"output.bias", &output_.bias, &output_.grad_bias});
    return out;
  }

  /// Non-trainable state saved with checkpoints (batch-norm running stats).
  std::vector<std::pair<std::string, nn::Tensor<T>*>> buffers() {
    std::vector<std::pair<std::string, nn::Tensor<T>*>> out;
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      if (!blocks_[i].bn) continue;
      const auto n = std::to_string(i + 1);
      out.emplace_back("bn_" + n + ".running_mean", &blocks_[i].bn->running_mean);
      out.emplace_back("bn_" + n + ".running_var", &blocks_[i].bn->running_var);
    }
    return out;
  }

  void zero_grad() {
    for (auto& b : blocks_) {
      b.dense.zero_grad();
      if (b.bn) b.bn->zero_grad();
    }
    output_.zero_grad();
  }

  void set_running_stat_updates(bool on) {
    for (auto& b : blocks_)
      if (b.bn) b.bn->update_running = on;
  }

  /// Concatenated ReLU activity pattern of the last recorded forward pass.
  std::vector<bool> relu_signature() const {
    std::vector<bool> sig;
    for (const auto& b : blocks_) sig.insert(sig.end(), b.relu_mask.begin(), b.relu_mask.end());
    return sig;
  }

  /// (layer, in, out) rows in table order: GAP, dense_i, concat_1, softmax.
  std::vector<LayerRow> layer_rows() const {
    std::vector<LayerRow> rows;
    rows.push_back({"GlobalAveragePooling", spec_.in_channels, spec_.in_channels});
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      rows.push_back({"dense_" + std::to_string(i + 1), blocks_[i].dense.in_dim, blocks_[i].dense.out_dim});
    }
    if (!spec_.concat_of.empty()) rows.push_back({"concat_1", spec_.classifier_in(), spec_.classifier_in()});
    rows.push_back({"softmax", output_.in_dim, output_.out_dim});
    return rows;
  }

  // -- persistence ---------------------------------------------------------

  std::vector<NamedTensor> named_tensors() const {
    auto& self = const_cast<HeadModel&>(*this);
    std::vector<NamedTensor> out;
    auto add = [&](const std::string& n, const nn::Tensor<T>& t) {
      NamedTensor e{n, {}, {}};
      for (auto d : t.shape) e.dims.push_back(static_cast<std::uint32_t>(d));
      e.data.assign(t.data.begin(), t.data.end());
      out.push_back(std::move(e));
    };
    for (auto& p : self.parameters()) add(p.name, *p.value);
    for (auto& [n, t] : self.buffers()) add(n, *t);
    return out;
  }

  void load_tensors(const std::vector<NamedTensor>& entries) {
    auto find = [&](const std::string& n) -> const NamedTensor& {
      for (const auto& e : entries)
        if (e.name == n) return e;
      throw Error(ErrorKind::CorruptContainer, "checkpoint is missing " + n);
    };
    auto load = [&](const std::string& n, nn::Tensor<T>& t) {
      const auto& e = find(n);
      if (e.data.size() != t.size()) throw Error(ErrorKind::ShapeMismatch, "checkpoint tensor " + n + " has wrong size");
      std::copy(e.data.begin(), e.data.end(), t.data.begin());
    };
    for (auto& p : parameters()) load(p.name, *p.value);
    for (auto& [n, t] : buffers()) load(n, *t);
  }

  template <class U>
  HeadModel<U> cast() const {
    HeadModel<U> out(spec_, seed_, options_);
    out.load_tensors(named_tensors());
    return out;
  }

private:
  struct Block {
    nn::Dense<T> dense;
    std::optional<nn::BatchNorm<T>> bn;
    nn::Dropout<T> dropout;
    std::vector<bool> relu_mask;
    nn::Tensor<T> out;
  };

  static void relu_forward(nn::Tensor<T>& z, std::vector<bool>& mask) {
    mask.resize(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) {
      mask[i] = z[i] > T{0};
      if (!mask[i]) z[i] = T{0};
    }
  }

  static nn::Tensor<T> bn_eval(const nn::BatchNorm<T>& bn, const nn::Tensor<T>& x) {
    nn::Tensor<T> y(x.shape);
    for (std::size_t j = 0; j < bn.dim; ++j) {
      const double inv = 1.0 / std::sqrt(static_cast<double>(bn.running_var[j]) + bn.epsilon);
      for (std::size_t b = 0; b < x.dim(0); ++b) {
        y.row(b)[j] = static_cast<T>(bn.gamma[j] * (x.row(b)[j] - bn.running_mean[j]) * inv + bn.beta[j]);
      }
    }
    return y;
  }

  nn::Tensor<T> classifier_input(const nn::Tensor<T>* last) const {
    if (spec_.concat_of.empty()) return *last;
    std::vector<const nn::Tensor<T>*> parts;
    for (auto i : spec_.concat_of) parts.push_back(&blocks_[i - 1].out);
    return nn::concat(parts);
  }

public:
  /// Eval-mode logits without touching recorded state; safe to call concurrently.
  nn::Tensor<T> infer(const nn::Tensor<T>& pooled) const {
    std::vector<nn::Tensor<T>> outs;
    const nn::Tensor<T>* x = &pooled;
    for (const auto& b : blocks_) {
      auto z = b.dense.apply(*x);
      if (b.bn) z = bn_eval(*b.bn, z);
      for (auto& v : z.data) v = std::max(v, T{0});
      outs.push_back(std::move(z));
      x = &outs.back();
    }
    if (spec_.concat_of.empty()) return output_.apply(*x);
    std::vector<const nn::Tensor<T>*> parts;
    for (auto i : spec_.concat_of) parts.push_back(&outs[i - 1]);
    return output_.apply(nn::concat(parts));
  }

private:
  HeadSpec spec_;
  HeadOptions options_;
  std::uint64_t seed_ = 0;
  Rng rng_;
  std::vector<Block> blocks_;
  nn::Dense<T> output_;
  std::size_t feat_h_ = kFeatureGrid, feat_w_ = kFeatureGrid;
  bool recorded_ = false;
};

using Head = HeadModel<float>;

/// Instantiates one of the registered heads with Glorot-initialized weights.
inline Head build_head(const HeadSpec& spec, std::uint64_t seed, HeadOptions options = {}) {
  for (auto h : kHeadNames) {
    if (head_spec(h) == spec) return Head(spec, seed, options);
  }
  throw Error(ErrorKind::UnknownSpec, "not a registered head: " + spec.name);
}

inline Head build_head(HeadName h, std::uint64_t seed, HeadOptions options = {}) {
  return Head(head_spec(h), seed, options);
}

// ---------------------------------------------------------------------------
// Checkpoints

inline nlohmann::json to_json(const HeadSpec& s) {
  return {{"name", s.name}, {"endpoint", s.endpoint}, {"in_channels", s.in_channels},
          {"hidden", s.hidden}, {"concat_of", s.concat_of}, {"num_classes", s.num_classes}};
}

inline HeadSpec head_spec_from_json(const nlohmann::json& j) {
  HeadSpec s;
  s.name = j.at("name").get<std::string>();
  s.endpoint = j.at("endpoint").get<std::string>();
  s.in_channels = j.at("in_channels").get<std::size_t>();
  s.hidden = j.at("hidden").get<std::vector<std::size_t>>();
  s.concat_of = j.at("concat_of").get<std::vector<std::size_t>>();
  s.num_classes = j.at("num_classes").get<std::size_t>();
  return s;
}

inline FmapFile head_checkpoint(const Head& model, int epoch) {
  FmapFile f;
  f.metadata = {{"head_name", model.spec().name},
                {"epoch", epoch},
                {"seed", model.seed()},
                {"spec", to_json(model.spec())},
                {"options", {{"batch_norm", model.options().batch_norm}, {"dropout", model.options().dropout}}}};
  f.entries = model.named_tensors();
  return f;
}

inline void save_head(const Head& model, const std::filesystem::path& path, int epoch = 0) {
  fmap_write(head_checkpoint(model, epoch), path);
}

inline Head head_from_checkpoint(const FmapFile& f) {
  try {
    const auto& m = f.metadata;
    HeadOptions opt;
    opt.batch_norm = m.at("options").at("batch_norm").get<bool>();
    opt.dropout = m.at("options").at("dropout").get<double>();
    Head model(head_spec_from_json(m.at("spec")), m.at("seed").get<std::uint64_t>(), opt);
    model.load_tensors(f.entries);
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::CorruptContainer, std::string("checkpoint metadata: ") + e.what());
  }
}

inline Head load_head(const std::filesystem::path& path) { return head_from_checkpoint(fmap_read(path)); }

// ---------------------------------------------------------------------------
// Classification

/// Class probabilities of one preprocessed image under a head.
inline std::vector<double> head_probabilities(const Head& model, const Backbone& backbone, const ImageTensor& img) {
  const auto f = backbone.extract(img, model.spec().endpoint);
  const auto p = model.predict_probabilities(f);
  return {p.begin(), p.end()};
}

struct HierarchicalResult {
  std::vector<double> genus_probabilities;    // 3
  std::vector<double> species_probabilities;  // 3, within the routed genus
  TaxonLabel label;
};

/// Genus head first, then the species head of the argmax genus (ties to the
/// lowest index). Both probability vectors are reported as-is.
inline HierarchicalResult classify_hierarchical(const ImageTensor& img, const Head* genus_model,
                                                const std::map<Genus, const Head*>& species_models,
                                                const Backbone& backbone) {
  if (!genus_model) throw Error(ErrorKind::ModelNotLoaded, "genus head");
  HierarchicalResult r;
  r.genus_probabilities = head_probabilities(*genus_model, backbone, img);
  const auto genus = static_cast<Genus>(argmax(r.genus_probabilities));
  auto it = species_models.find(genus);
  if (it == species_models.end() || !it->second) {
    throw Error(ErrorKind::ModelNotLoaded, "species head for " + std::string(name(genus)));
  }
  r.species_probabilities = head_probabilities(*it->second, backbone, img);
  r.label = TaxonLabel::of(species_in_genus(genus, argmax(r.species_probabilities)));
  return r;
}

struct DirectResult {
  std::vector<double> probabilities;  // 9, dataset table order
  TaxonLabel label;
};

/// Species-only head; the genus follows from the predicted species.
inline DirectResult classify_direct(const ImageTensor& img, const Head* species_model, const Backbone& backbone) {
  if (!species_model) throw Error(ErrorKind::ModelNotLoaded, "species-only head");
  DirectResult r;
  r.probabilities = head_probabilities(*species_model, backbone, img);
  r.label = TaxonLabel::of(static_cast<Species>(argmax(r.probabilities)));
  return r;
}

}  // namespace mosq
