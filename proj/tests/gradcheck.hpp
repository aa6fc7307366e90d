#pragma once

// Central finite-difference checks in double precision. Each check returns
// the worst relative error over the probed coordinates; coordinates whose
// +/- eps or +/- 2 eps perturbation flips a ReLU are skipped.
//
// The reference derivative is the five-point central stencil at step eps,
// (8 (f(x+e) - f(x-e)) - (f(x+2e) - f(x-2e))) / 12e. The three-point value
// (f(x+e) - f(x-e)) / 2e from the same evaluations is tracked as well.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "mosq/heads.hpp"
#include "mosq/nn.hpp"

namespace mosq::gradcheck {

using nn::Tensor;

inline constexpr double kEps = 1e-3;
inline constexpr double kTolerance = 1e-4;

struct Report {
  std::string what;
  double max_rel = 0.0;
  double max_rel_three_point = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;

  static double relative(double a, double n) {
    const double scale = std::max(std::abs(a), std::abs(n));
    // both sides below 1e-10 count as agreeing zeros
    return scale < 1e-10 ? 0.0 : std::abs(a - n) / scale;
  }
  void add(double analytic, double numeric, double three_point) {
    max_rel = std::max(max_rel, relative(analytic, numeric));
    max_rel_three_point = std::max(max_rel_three_point, relative(analytic, three_point));
    ++checked;
  }
  void merge(const Report& o) {
    max_rel = std::max(max_rel, o.max_rel);
    max_rel_three_point = std::max(max_rel_three_point, o.max_rel_three_point);
    checked += o.checked;
    skipped += o.skipped;
  }
  bool ok() const { return checked > 0 && max_rel <= kTolerance; }
};

using Signature = std::function<std::vector<bool>()>;

inline void probe(Report& r, double& x, double analytic, const std::function<double()>& loss,
                  const Signature& sig = {}, double eps = kEps) {
  const auto base = sig ? sig() : std::vector<bool>{};
  const double x0 = x;
  bool kink = false;
  auto at = [&](double step) {
    x = x0 + step;
    const double l = loss();
    kink = kink || (sig && sig() != base);
    return l;
  };
  const double p1 = at(eps), m1 = at(-eps), p2 = at(2 * eps), m2 = at(-2 * eps);
  x = x0;
  loss();  // restore recorded state
  if (kink) {
    ++r.skipped;
    return;
  }
  r.add(analytic, (8 * (p1 - m1) - (p2 - m2)) / (12 * eps), (p1 - m1) / (2 * eps));
}

/// Indices to probe: all of them when small, otherwise a seeded sample.
inline std::vector<std::size_t> sample(std::size_t n, std::size_t max_count, Rng& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  if (n <= max_count) return idx;
  rng.shuffle(idx);
  idx.resize(max_count);
  return idx;
}

inline Tensor<double> random_tensor(std::vector<std::size_t> shape, Rng& rng, double lo = -1, double hi = 1) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

inline double dot(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline Report dense(nn::Activation act, std::uint64_t seed) {
  Rng rng(seed);
  nn::Dense<double> layer(7, 5, act, seed);
  for (auto& v : layer.bias.data) v = rng.uniform(-0.5, 0.5);
  auto x = random_tensor({4, 7}, rng);
  const auto r = random_tensor({4, 5}, rng);
  auto loss = [&] { return dot(layer.forward(x), r); };
  Signature sig;
  if (act == nn::Activation::ReLU) sig = [&] { return layer.active_mask(); };
  loss();
  layer.zero_grad();
  const auto dx = layer.backward(r);
  Report rep{act == nn::Activation::ReLU ? "dense+relu" : "dense"};
  for (std::size_t i = 0; i < x.size(); ++i) probe(rep, x[i], dx[i], loss, sig);
  const auto gw = layer.grad_weight, gb = layer.grad_bias;
  for (std::size_t i = 0; i < gw.size(); ++i) probe(rep, layer.weight[i], gw[i], loss, sig);
  for (std::size_t i = 0; i < gb.size(); ++i) probe(rep, layer.bias[i], gb[i], loss, sig);
  return rep;
}

inline Report batch_norm(nn::Mode mode, std::uint64_t seed) {
  Rng rng(seed);
  nn::BatchNorm<double> bn(6);
  bn.update_running = false;
  for (auto& v : bn.gamma.data) v = rng.uniform(0.5, 1.5);
  for (auto& v : bn.beta.data) v = rng.uniform(-0.5, 0.5);
  for (auto& v : bn.running_mean.data) v = rng.uniform(-0.5, 0.5);
  for (auto& v : bn.running_var.data) v = rng.uniform(0.5, 2.0);
  auto x = random_tensor({5, 6}, rng, -2, 2);
  const auto r = random_tensor({5, 6}, rng);
  auto loss = [&] { return dot(bn.forward(x, mode), r); };
  loss();
  bn.zero_grad();
  const auto dx = bn.backward(r);
  Report rep{mode == nn::Mode::Train ? "batchnorm(train)" : "batchnorm(eval)"};
  for (std::size_t i = 0; i < x.size(); ++i) probe(rep, x[i], dx[i], loss);
  if (mode == nn::Mode::Train) {
    const auto gg = bn.grad_gamma, gb = bn.grad_beta;
    for (std::size_t i = 0; i < gg.size(); ++i) probe(rep, bn.gamma[i], gg[i], loss);
    for (std::size_t i = 0; i < gb.size(); ++i) probe(rep, bn.beta[i], gb[i], loss);
  }
  return rep;
}

inline Report dropout(std::uint64_t seed) {
  Rng rng(seed);
  nn::Dropout<double> d(0.3);
  Rng masks(seed + 1);
  auto x = random_tensor({4, 9}, rng);
  const auto r = random_tensor({4, 9}, rng);
  d.forward(x, nn::Mode::Train, &masks);
  auto loss = [&] { return dot(d.forward(x, nn::Mode::Train, &masks, true), r); };
  const auto dx = d.backward(r);
  Report rep{"dropout"};
  for (std::size_t i = 0; i < x.size(); ++i) probe(rep, x[i], dx[i], loss);
  return rep;
}

inline Report gap(std::uint64_t seed) {
  Rng rng(seed);
  auto f = random_tensor({2, 3, 4, 5}, rng);
  const auto r = random_tensor({2, 5}, rng);
  auto loss = [&] { return dot(nn::global_average_pool(f), r); };
  const auto df = nn::global_average_pool_backward(r, 3, 4);
  Report rep{"global-average-pool"};
  for (std::size_t i = 0; i < f.size(); ++i) probe(rep, f[i], df[i], loss);
  return rep;
}

inline Report softmax_ce(std::uint64_t seed) {
  Rng rng(seed);
  auto z = random_tensor({4, 5}, rng, -3, 3);
  const std::vector<int> y{0, 3, 4, 1};
  auto loss = [&] { return nn::softmax_cross_entropy(z, y).loss; };
  const auto dz = nn::softmax_cross_entropy(z, y).dlogits;
  Report rep{"softmax+cross-entropy"};
  for (std::size_t i = 0; i < z.size(); ++i) probe(rep, z[i], dz[i], loss);
  return rep;
}

/// Full head over a training-size minibatch: batch-norm in train mode with running-stat updates off, dropout
/// masks frozen after the first pass. Probes up to `per_tensor` coordinates
/// of every parameter tensor and of the input.
inline Report head(HeadModel<double> model, std::uint64_t seed, std::size_t batch = 32, std::size_t per_tensor = 40,
                   double eps = kEps) {
  Rng rng(seed);
  model.set_running_stat_updates(false);
  const std::size_t C = model.spec().in_channels;
  auto x = random_tensor({batch, C}, rng, 0.0, 1.0);
  std::vector<int> y(batch);
  for (auto& v : y) v = static_cast<int>(rng.below(model.num_classes()));
  auto loss = [&] { return nn::softmax_cross_entropy(model.forward(x, nn::Mode::Train, true), y).loss; };
  Signature sig = [&] { return model.relu_signature(); };
  const double l0 = loss();
  (void)l0;
  model.zero_grad();
  const auto dx = model.backward(nn::softmax_cross_entropy(model.forward(x, nn::Mode::Train, true), y).dlogits);
  Report rep{"head " + model.spec().name};
  for (auto i : sample(x.size(), per_tensor, rng)) probe(rep, x[i], dx[i], loss, sig, eps);
  for (auto& p : model.parameters()) {
    const auto g = *p.grad;
    for (auto i : sample(p.value->size(), per_tensor, rng)) probe(rep, (*p.value)[i], g[i], loss, sig, eps);
  }
  return rep;
}

inline std::vector<Report> all_layers(std::uint64_t seed) {
  return {dense(nn::Activation::None, seed),      dense(nn::Activation::ReLU, seed + 1),
          batch_norm(nn::Mode::Train, seed + 2), batch_norm(nn::Mode::Eval, seed + 3),
          dropout(seed + 4),                     gap(seed + 5),
          softmax_ce(seed + 6)};
}

}  // namespace mosq::gradcheck
