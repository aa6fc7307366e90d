#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mosq/core.hpp"
#include "mosq/heads.hpp"
#include "mosq/nn.hpp"

namespace mosq {

// ---------------------------------------------------------------------------
// Optimizer

struct AdamConfig {
  double beta1 = 0.89;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const {
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
      throw Error(ErrorKind::ConfigError, "Adam betas must lie in [0, 1)");
    }
  }
};

/// First and second moment estimates of one parameter tensor.
struct AdamMoments {
  std::vector<double> m, v;
};

/// One bias-corrected Adam update of params in place at step t (t >= 1).
template <class T>
void adam_step(std::span<T> params, std::span<const T> grads, AdamMoments& state, double lr,
               const AdamConfig& cfg, long t) {
  if (params.size() != grads.size()) throw Error(ErrorKind::ShapeMismatch, "adam: params and grads differ in size");
  if (t < 1) throw Error(ErrorKind::ConfigError, "adam step index starts at 1");
  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  if (state.m.size() != params.size()) throw Error(ErrorKind::ShapeMismatch, "adam: state size mismatch");
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    params[i] = static_cast<T>(params[i] - lr * mhat / (std::sqrt(vhat) + cfg.epsilon));
  }
}

/// Adam over every parameter of a head.
class Adam {
public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) { cfg_.validate(); }

  template <class T>
  void step(HeadModel<T>& model, double lr) {
    ++t_;
    for (auto& p : model.parameters()) {
      adam_step(std::span<T>(p.value->data), std::span<const T>(p.grad->data), moments_[p.name], lr, cfg_, t_);
    }
  }

  long steps() const { return t_; }

private:
  AdamConfig cfg_;
  long t_ = 0;
  std::map<std::string, AdamMoments> moments_;
};

// ---------------------------------------------------------------------------
// Learning-rate schedule

/// Triangular cyclical learning rate starting at base_lr; period 2 * step_size.
struct CLRSchedule {
  double base_lr = 2e-7;
  double max_lr = 2e-5;
  long step_size = 1;

  void validate() const {
    if (!(base_lr > 0.0 && base_lr < max_lr)) throw Error(ErrorKind::ConfigError, "CLR requires 0 < base_lr < max_lr");
    if (step_size < 1) throw Error(ErrorKind::ConfigError, "CLR step size must be >= 1");
  }
};

inline double clr_at(long iteration, const CLRSchedule& s) {
  s.validate();
  if (iteration < 0) throw Error(ErrorKind::ConfigError, "negative iteration");
  const long pos = iteration % (2 * s.step_size);
  const long up = pos <= s.step_size ? pos : 2 * s.step_size - pos;
  const double frac = static_cast<double>(up) / static_cast<double>(s.step_size);
  // (1 - f) * base + f * max hits both endpoints exactly.
  return (1.0 - frac) * s.base_lr + frac * s.max_lr;
}

// ---------------------------------------------------------------------------
// Configuration

struct EarlyStoppingConfig {
  int patience = 50;
  double min_delta = 1e-4;
};

struct PhasePlan {
  int phase1_epochs = 50;          // backbone frozen, cyclical rate
  double clr_base = 2e-7;
  double clr_max = 2e-5;
  int clr_step_epochs = 8;         // half-cycle length in epochs
  int phase2_epochs = 50;          // backbone unfrozen when possible, fixed rate
  double phase2_lr = 1e-5;
  EarlyStoppingConfig early_stopping;

  static PhasePlan paper_scale() {
    PhasePlan p;
    p.phase1_epochs = 500;
    p.phase2_epochs = 1200;
    return p;
  }

  void validate() const {
    if (phase1_epochs < 0 || phase2_epochs < 0) throw Error(ErrorKind::ConfigError, "epoch counts must be >= 0");
    if (early_stopping.patience < 1) throw Error(ErrorKind::ConfigError, "patience must be >= 1");
    if (clr_step_epochs < 1) throw Error(ErrorKind::ConfigError, "CLR step must be >= 1 epoch");
    if (!(phase2_lr > 0.0)) throw Error(ErrorKind::ConfigError, "phase 2 learning rate must be positive");
    CLRSchedule{clr_base, clr_max, 1}.validate();
  }
};

struct TrainConfig {
  AdamConfig adam;
  PhasePlan plan;
  int batch_size = 32;
  double dropout_rate = 0.3;
  bool batch_norm = true;
  std::uint64_t seed = 0;

  HeadOptions head_options() const { return {batch_norm, dropout_rate}; }

  void validate() const {
    adam.validate();
    plan.validate();
    if (batch_size < 1) throw Error(ErrorKind::ConfigError, "batch size must be >= 1");
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"adam", {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"epsilon", c.adam.epsilon}}},
          {"plan",
           {{"phase1_epochs", c.plan.phase1_epochs},
            {"clr_base", c.plan.clr_base},
            {"clr_max", c.plan.clr_max},
            {"clr_step_epochs", c.plan.clr_step_epochs},
            {"phase2_epochs", c.plan.phase2_epochs},
            {"phase2_lr", c.plan.phase2_lr},
            {"patience", c.plan.early_stopping.patience},
            {"min_delta", c.plan.early_stopping.min_delta}}},
          {"batch_size", c.batch_size},
          {"dropout_rate", c.dropout_rate},
          {"batch_norm", c.batch_norm},
          {"seed", c.seed},
          {"loss", "categorical_cross_entropy"}};
}

// ---------------------------------------------------------------------------
// Data

/// Pooled backbone features with integer class labels.
///
/// Heads begin with global average pooling, so while the backbone is frozen
/// the pooled vector carries everything a head sees of an image.
struct FeatureDataset {
  nn::Tensor<float> pooled;  // [N, C]
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return pooled.rank() == 2 ? pooled.dim(1) : 0; }

  void add(std::span<const float> feature, int label) {
    if (pooled.rank() != 2) pooled = nn::Tensor<float>({0, feature.size()});
    if (feature.size() != pooled.dim(1)) throw Error(ErrorKind::ShapeMismatch, "feature width differs within dataset");
    pooled.data.insert(pooled.data.end(), feature.begin(), feature.end());
    pooled.shape[0] += 1;
    labels.push_back(label);
  }

  void add(const FeatureTensor& map, int label) {
    auto g = nn::global_average_pool(map);
    add(std::span<const float>(g.data), label);
  }

  nn::Tensor<float> rows(std::span<const std::size_t> idx) const {
    nn::Tensor<float> out({idx.size(), dim()});
    for (std::size_t i = 0; i < idx.size(); ++i) std::copy(pooled.row(idx[i]), pooled.row(idx[i]) + dim(), out.row(i));
    return out;
  }
};

// ---------------------------------------------------------------------------
// Training

struct EpochRecord {
  int epoch = 0;
  std::string phase;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double train_acc = 0.0;
  double val_acc = 0.0;
};

/// Validation-loss early stopping with best-state tracking.
class EarlyStopping {
public:
  explicit EarlyStopping(EarlyStoppingConfig cfg) : cfg_(cfg) {}

  /// Returns true when the loss is a new best (by at least min_delta).
  bool update(double val_loss) {
    ++seen_;
    if (val_loss < best_ - cfg_.min_delta) {
      best_ = val_loss;
      since_best_ = 0;
      return true;
    }
    ++since_best_;
    return false;
  }

  bool should_stop() const { return since_best_ >= cfg_.patience; }
  void reset_patience() { since_best_ = 0; }
  double best() const { return best_; }

private:
  EarlyStoppingConfig cfg_;
  double best_ = std::numeric_limits<double>::infinity();
  int since_best_ = 0;
  int seen_ = 0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
  bool stopped_early = false;
  std::vector<std::string> log;
};

struct EvalStats {
  double loss = 0.0;
  double accuracy = 0.0;
};

inline EvalStats evaluate_head(const Head& model, const FeatureDataset& data, std::size_t chunk = 256) {
  EvalStats s;
  if (data.size() == 0) return s;
  std::size_t correct = 0;
  double loss = 0.0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += chunk) {
    idx.clear();
    for (std::size_t i = start; i < std::min(data.size(), start + chunk); ++i) idx.push_back(i);
    auto logits = model.infer(data.rows(idx));
    auto probs = nn::softmax_rows(logits);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const int y = data.labels[idx[r]];
      std::span<const float> p(probs.row(r), probs.dim(1));
      loss -= std::log(std::clamp(static_cast<double>(p[y]), nn::kProbabilityFloor, 1.0));
      if (argmax(p) == y) ++correct;
    }
  }
  s.loss = loss / static_cast<double>(data.size());
  s.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  return s;
}

/// Two-phase training of a head on pooled features.
///
/// Phase 1 trains the head under the cyclical rate. Phase 2 runs at the fixed
/// rate; with a frozen backbone it continues head-only and is logged as
/// "phase2-degraded". Validation-loss early stopping ends a phase, and the
/// best weights seen are restored before returning.
inline TrainResult fit(Head& model, const FeatureDataset& train, const FeatureDataset& val, const TrainConfig& cfg,
                       bool backbone_trainable = false) {
  cfg.validate();
  if (train.size() == 0) throw Error(ErrorKind::EmptyDataset, "training set is empty");
  if (val.size() == 0) throw Error(ErrorKind::EmptyDataset, "validation set is empty");
  if (train.dim() != model.spec().in_channels || val.dim() != model.spec().in_channels) {
    throw Error(ErrorKind::ShapeMismatch, "feature width does not match head input");
  }
  for (int y : train.labels)
    if (y < 0 || static_cast<std::size_t>(y) >= model.num_classes()) throw Error(ErrorKind::BadClass, "label out of range");
  if (backbone_trainable) {
    throw Error(ErrorKind::ConfigError, "pooled-feature training cannot update backbone weights");
  }

  TrainResult result;
  Adam adam(cfg.adam);
  Rng shuffle_rng = Rng::substream(cfg.seed, "shuffle");
  const std::size_t n = train.size();
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  const long steps_per_epoch = static_cast<long>((n + bs - 1) / bs);
  const CLRSchedule clr{cfg.plan.clr_base, cfg.plan.clr_max, std::max(1L, cfg.plan.clr_step_epochs * steps_per_epoch)};

  EarlyStopping stopper(cfg.plan.early_stopping);
  auto best_state = model.named_tensors();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  long iteration = 0;
  int epoch = 0;

  auto run_phase = [&](int epochs, bool cyclical, const std::string& phase) {
    stopper.reset_patience();
    for (int e = 0; e < epochs; ++e) {
      ++epoch;
      shuffle_rng.shuffle(order);
      double loss_sum = 0.0;
      std::size_t correct = 0;
      double lr = 0.0;
      for (std::size_t start = 0; start < n; start += bs) {
        const std::size_t end = std::min(n, start + bs);
        std::span<const std::size_t> idx(order.data() + start, end - start);
        std::vector<int> labels;
        for (auto i : idx) labels.push_back(train.labels[i]);
        lr = cyclical ? clr_at(iteration, clr) : cfg.plan.phase2_lr;
        model.zero_grad();
        nn::LossAndGrad<float> lg;
        try {
          auto logits = model.forward(train.rows(idx), nn::Mode::Train);
          lg = nn::softmax_cross_entropy(logits, std::span<const int>(labels));
        } catch (const Error& err) {
          if (err.kind() == ErrorKind::NonFinite || err.kind() == ErrorKind::DivergedLoss) {
            throw Error(ErrorKind::DivergedLoss, std::string("epoch ") + std::to_string(epoch) + ": " + err.what());
          }
          throw;
        }
        model.backward(lg.dlogits, false);
        adam.step(model, lr);
        ++iteration;
        loss_sum += static_cast<double>(lg.loss) * static_cast<double>(idx.size());
        for (std::size_t r = 0; r < idx.size(); ++r) {
          if (argmax(std::span<const float>(lg.probabilities.row(r), model.num_classes())) == labels[r]) ++correct;
        }
      }
      const auto v = evaluate_head(model, val);
      if (!std::isfinite(v.loss)) throw Error(ErrorKind::DivergedLoss, "validation loss is not finite");
      result.history.push_back({epoch, phase, lr, loss_sum / static_cast<double>(n), v.loss,
                                static_cast<double>(correct) / static_cast<double>(n), v.accuracy});
      if (stopper.update(v.loss)) {
        best_state = model.named_tensors();
        result.best_epoch = epoch;
        result.best_val_loss = v.loss;
      }
      if (stopper.should_stop()) {
        result.stopped_early = true;
        result.log.push_back(phase + ": early stop at epoch " + std::to_string(epoch) + ", best epoch " +
                             std::to_string(result.best_epoch));
        break;
      }
    }
    model.load_tensors(best_state);
  };

  run_phase(cfg.plan.phase1_epochs, true, "phase1");
  if (cfg.plan.phase2_epochs > 0) {
    result.log.push_back("phase2-degraded: backbone is not trainable; continuing head-only");
    run_phase(cfg.plan.phase2_epochs, false, "phase2-degraded");
  }
  return result;
}

// ---------------------------------------------------------------------------
// Run directory

inline std::string history_csv(const std::vector<EpochRecord>& history) {
  std::ostringstream out;
  out << "epoch,phase,lr,train_loss,val_loss,train_acc,val_acc\n";
  out << std::setprecision(9);
  for (const auto& r : history) {
    out << r.epoch << ',' << r.phase << ',' << r.lr << ',' << r.train_loss << ',' << r.val_loss << ','
        << r.train_acc << ',' << r.val_acc << '\n';
  }
  return out.str();
}

/// config.json, history.csv and checkpoint.fmap (best weights).
inline void write_run_dir(const std::filesystem::path& dir, const TrainConfig& cfg, const TrainResult& result,
                          const Head& model, const nlohmann::json& extra = nlohmann::json::object()) {
  std::filesystem::create_directories(dir);
  nlohmann::json config = to_json(cfg);
  config["head"] = to_json(model.spec());
  for (auto it = extra.begin(); it != extra.end(); ++it) config[it.key()] = it.value();
  {
    std::ofstream out(dir / "config.json");
    out << config.dump(2) << '\n';
  }
  {
    std::ofstream out(dir / "history.csv");
    out << history_csv(result.history);
  }
  save_head(model, dir / "checkpoint.fmap", result.best_epoch);
}

}  // namespace mosq
