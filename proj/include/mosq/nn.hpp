#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "mosq/core.hpp"

namespace mosq::nn {

// ---------------------------------------------------------------------------
// Tensor

template <class T>
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s, T fill = T{0}) : shape(std::move(s)) {
    data.assign(numel(shape), fill);
  }
  Tensor(std::vector<std::size_t> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != numel(shape)) throw Error(ErrorKind::ShapeMismatch, "tensor data length does not match shape");
  }

  static std::size_t numel(const std::vector<std::size_t>& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
  }

  std::size_t size() const { return data.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }
  std::size_t rank() const { return shape.size(); }
  T& operator[](std::size_t i) { return data[i]; }
  const T& operator[](std::size_t i) const { return data[i]; }
  T* row(std::size_t r) { return data.data() + r * shape.back(); }
  const T* row(std::size_t r) const { return data.data() + r * shape.back(); }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  template <class U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.assign(data.begin(), data.end());
    return out;
  }

  bool operator==(const Tensor&) const = default;
};

template <class T>
void require_finite(const Tensor<T>& t, const char* where) {
  for (const T& v : t.data) {
    if (!std::isfinite(v)) throw Error(ErrorKind::NonFinite, std::string("non-finite value after ") + where);
  }
}

inline std::string shape_str(const std::vector<std::size_t>& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? ", " : "") + std::to_string(s[i]);
  return out + ")";
}

// ---------------------------------------------------------------------------
// Initialization

inline double glorot_limit(std::size_t in_dim, std::size_t out_dim) {
  return std::sqrt(6.0 / static_cast<double>(in_dim + out_dim));
}

/// in_dim x out_dim matrix, entries i.i.d. uniform on [-L, L].
template <class T = float>
Tensor<T> glorot_init(std::size_t in_dim, std::size_t out_dim, std::uint64_t seed) {
  if (in_dim == 0 || out_dim == 0) throw Error(ErrorKind::ShapeMismatch, "glorot_init dims must be positive");
  const double limit = glorot_limit(in_dim, out_dim);
  Rng rng(seed);
  Tensor<T> w({in_dim, out_dim});
  for (auto& v : w.data) v = static_cast<T>(rng.uniform(-limit, limit));
  return w;
}

enum class Activation { None, ReLU };
enum class Mode { Train, Eval };

// ---------------------------------------------------------------------------
// Dense

template <class T>
struct Dense {
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  Activation activation = Activation::None;
  Tensor<T> weight;  // in_dim x out_dim
  Tensor<T> bias;    // out_dim
  Tensor<T> grad_weight;
  Tensor<T> grad_bias;

  Dense() = default;
  Dense(std::size_t in, std::size_t out, Activation act, std::uint64_t seed)
      : in_dim(in), out_dim(out), activation(act), weight(glorot_init<T>(in, out, seed)),
        bias({out}), grad_weight({in, out}), grad_bias({out}) {}

  /// y = act(x W + b) for x of shape [batch, in_dim].
  Tensor<T> forward(const Tensor<T>& x) {
    auto y = apply(x);
    input_ = x;
    output_ = y;
    recorded_ = true;
    return y;
  }

  /// Same as forward without recording the graph.
  Tensor<T> apply(const Tensor<T>& x) const {
    if (x.rank() != 2 || x.dim(1) != in_dim) {
      throw Error(ErrorKind::ShapeMismatch, "dense expects [batch, " + std::to_string(in_dim) + "], got " + shape_str(x.shape));
    }
    const std::size_t batch = x.dim(0);
    Tensor<T> y({batch, out_dim});
    for (std::size_t b = 0; b < batch; ++b) {
      T* yr = y.row(b);
      std::copy(bias.data.begin(), bias.data.end(), yr);
      const T* xr = x.row(b);
      for (std::size_t k = 0; k < in_dim; ++k) {
        const T xv = xr[k];
        if (xv == T{0}) continue;
        const T* wr = weight.row(k);
        for (std::size_t j = 0; j < out_dim; ++j) yr[j] += xv * wr[j];
      }
      if (activation == Activation::ReLU) {
        for (std::size_t j = 0; j < out_dim; ++j) yr[j] = std::max(yr[j], T{0});
      }
    }
    require_finite(y, "dense");
    return y;
  }

  /// Accumulates parameter gradients; returns dL/dx unless need_input_grad is false.
  Tensor<T> backward(Tensor<T> dy, bool need_input_grad = true) {
    if (!recorded_) throw Error(ErrorKind::GraphNotRecorded, "dense backward before forward");
    const std::size_t batch = input_.dim(0);
    if (activation == Activation::ReLU) {
      for (std::size_t i = 0; i < dy.size(); ++i) {
        if (!(output_[i] > T{0})) dy[i] = T{0};
      }
    }
    for (std::size_t b = 0; b < batch; ++b) {
      const T* xr = input_.row(b);
      const T* dr = dy.row(b);
      for (std::size_t j = 0; j < out_dim; ++j) grad_bias[j] += dr[j];
      for (std::size_t k = 0; k < in_dim; ++k) {
        const T xv = xr[k];
        if (xv == T{0}) continue;
        T* gw = grad_weight.row(k);
        for (std::size_t j = 0; j < out_dim; ++j) gw[j] += xv * dr[j];
      }
    }
    if (!need_input_grad) return {};
    Tensor<T> dx({batch, in_dim});
    for (std::size_t b = 0; b < batch; ++b) {
      const T* dr = dy.row(b);
      T* dxr = dx.row(b);
      for (std::size_t k = 0; k < in_dim; ++k) {
        const T* wr = weight.row(k);
        T s{0};
        for (std::size_t j = 0; j < out_dim; ++j) s += wr[j] * dr[j];
        dxr[k] = s;
      }
    }
    return dx;
  }

  /// Units whose ReLU was active in the last recorded forward pass.
  std::vector<bool> active_mask() const {
    std::vector<bool> m(output_.size());
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = output_[i] > T{0};
    return m;
  }

  void zero_grad() {
    grad_weight.fill(T{0});
    grad_bias.fill(T{0});
  }

private:
  Tensor<T> input_, output_;
  bool recorded_ = false;
};

template <class T>
Tensor<T> dense_forward(const Dense<T>& layer, const Tensor<T>& x) {
  return layer.apply(x);
}

// ---------------------------------------------------------------------------
// Batch normalization over the feature axis of [batch, dim].

template <class T>
struct BatchNorm {
  std::size_t dim = 0;
  double momentum = 0.99;  // running = momentum * running + (1 - momentum) * batch
  double epsilon = 1e-3;
  Tensor<T> gamma, beta;
  Tensor<T> running_mean, running_var;
  Tensor<T> grad_gamma, grad_beta;
  bool update_running = true;

  BatchNorm() = default;
  explicit BatchNorm(std::size_t d)
      : dim(d), gamma({d}, T{1}), beta({d}), running_mean({d}), running_var({d}, T{1}),
        grad_gamma({d}), grad_beta({d}) {}

  Tensor<T> forward(const Tensor<T>& x, Mode mode) {
    if (x.rank() != 2 || x.dim(1) != dim) throw Error(ErrorKind::ShapeMismatch, "batch norm dim mismatch");
    const std::size_t batch = x.dim(0);
    mode_ = mode;
    Tensor<T> y({batch, dim});
    if (mode == Mode::Eval) {
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t j = 0; j < dim; ++j) {
          const double inv = 1.0 / std::sqrt(static_cast<double>(running_var[j]) + epsilon);
          y.row(b)[j] = static_cast<T>(gamma[j] * (x.row(b)[j] - running_mean[j]) * inv + beta[j]);
        }
      recorded_ = true;
      return y;
    }
    xhat_ = Tensor<T>({batch, dim});
    inv_std_.assign(dim, T{0});
    for (std::size_t j = 0; j < dim; ++j) {
      T mean{0};
      for (std::size_t b = 0; b < batch; ++b) mean += x.row(b)[j];
      mean /= static_cast<T>(batch);
      T var{0};
      for (std::size_t b = 0; b < batch; ++b) {
        const T d = x.row(b)[j] - mean;
        var += d * d;
      }
      var /= static_cast<T>(batch);
      const T inv = T{1} / std::sqrt(var + static_cast<T>(epsilon));
      inv_std_[j] = inv;
      for (std::size_t b = 0; b < batch; ++b) {
        const T xh = (x.row(b)[j] - mean) * inv;
        xhat_.row(b)[j] = xh;
        y.row(b)[j] = gamma[j] * xh + beta[j];
      }
      if (update_running) {
        running_mean[j] = static_cast<T>(momentum * running_mean[j] + (1.0 - momentum) * mean);
        running_var[j] = static_cast<T>(momentum * running_var[j] + (1.0 - momentum) * var);
      }
    }
    recorded_ = true;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    if (!recorded_) throw Error(ErrorKind::GraphNotRecorded, "batch norm backward before forward");
    const std::size_t batch = dy.dim(0);
    Tensor<T> dx({batch, dim});
    if (mode_ == Mode::Eval) {
      for (std::size_t j = 0; j < dim; ++j) {
        const T inv = static_cast<T>(1.0 / std::sqrt(static_cast<double>(running_var[j]) + epsilon));
        for (std::size_t b = 0; b < batch; ++b) dx.row(b)[j] = dy.row(b)[j] * gamma[j] * inv;
      }
      return dx;
    }
    const T n = static_cast<T>(batch);
    for (std::size_t j = 0; j < dim; ++j) {
      T sum_dy{0}, sum_dy_xh{0};
      for (std::size_t b = 0; b < batch; ++b) {
        sum_dy += dy.row(b)[j];
        sum_dy_xh += dy.row(b)[j] * xhat_.row(b)[j];
      }
      grad_beta[j] += sum_dy;
      grad_gamma[j] += sum_dy_xh;
      const T k = gamma[j] * inv_std_[j] / n;
      for (std::size_t b = 0; b < batch; ++b) {
        dx.row(b)[j] = k * (n * dy.row(b)[j] - sum_dy - xhat_.row(b)[j] * sum_dy_xh);
      }
    }
    return dx;
  }

  void zero_grad() {
    grad_gamma.fill(T{0});
    grad_beta.fill(T{0});
  }

private:
  Mode mode_ = Mode::Eval;
  Tensor<T> xhat_;
  std::vector<T> inv_std_;
  bool recorded_ = false;
};

// ---------------------------------------------------------------------------
// Dropout (inverted: survivors scaled by 1/(1-rate) in train mode)

template <class T>
struct Dropout {
  double rate = 0.0;

  Dropout() = default;
  explicit Dropout(double r) : rate(r) {
    if (!(r >= 0.0 && r < 1.0)) throw Error(ErrorKind::ConfigError, "dropout rate must be in [0, 1)");
  }

  /// Train mode draws a fresh mask from rng unless reuse_mask is set.
  Tensor<T> forward(const Tensor<T>& x, Mode mode, Rng* rng, bool reuse_mask = false) {
    mode_ = mode;
    recorded_ = true;
    if (mode == Mode::Eval || rate == 0.0) return x;
    if (!reuse_mask || mask_.size() != x.size()) {
      if (!rng) throw Error(ErrorKind::ConfigError, "dropout in train mode needs a random stream");
      const T scale = static_cast<T>(1.0 / (1.0 - rate));
      mask_.resize(x.size());
      for (auto& m : mask_) m = rng->uniform() < rate ? T{0} : scale;
    }
    Tensor<T> y = x;
    for (std::size_t i = 0; i < y.size(); ++i) y[i] *= mask_[i];
    return y;
  }

  Tensor<T> backward(Tensor<T> dy) const {
    if (!recorded_) throw Error(ErrorKind::GraphNotRecorded, "dropout backward before forward");
    if (mode_ == Mode::Eval || rate == 0.0) return dy;
    for (std::size_t i = 0; i < dy.size(); ++i) dy[i] *= mask_[i];
    return dy;
  }

private:
  Mode mode_ = Mode::Eval;
  std::vector<T> mask_;
  bool recorded_ = false;
};

// ---------------------------------------------------------------------------
// Parameter-free ops

/// [batch, H, W, C] (or [H, W, C]) -> [batch, C] per-channel spatial mean.
template <class T>
Tensor<T> global_average_pool(const Tensor<T>& f) {
  if (f.rank() != 3 && f.rank() != 4) throw Error(ErrorKind::ShapeMismatch, "GAP expects [H,W,C] or [B,H,W,C]");
  const std::size_t batch = f.rank() == 4 ? f.dim(0) : 1;
  const std::size_t h = f.dim(f.rank() - 3), w = f.dim(f.rank() - 2), c = f.dim(f.rank() - 1);
  if (h == 0 || w == 0) throw Error(ErrorKind::ShapeMismatch, "GAP needs positive spatial dims");
  const std::size_t positions = h * w;
  Tensor<T> out({batch, c});
  for (std::size_t b = 0; b < batch; ++b) {
    const T* src = f.data.data() + b * positions * c;
    T* dst = out.row(b);
    for (std::size_t p = 0; p < positions; ++p)
      for (std::size_t k = 0; k < c; ++k) dst[k] += src[p * c + k];
    for (std::size_t k = 0; k < c; ++k) dst[k] /= static_cast<T>(positions);
  }
  return out;
}

/// Gradient of GAP: broadcast dy / (H*W) over the spatial grid.
template <class T>
Tensor<T> global_average_pool_backward(const Tensor<T>& dy, std::size_t h, std::size_t w) {
  const std::size_t batch = dy.dim(0), c = dy.dim(1);
  Tensor<T> df({batch, h, w, c});
  const T scale = T{1} / static_cast<T>(h * w);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t p = 0; p < h * w; ++p)
      for (std::size_t k = 0; k < c; ++k) df.data[(b * h * w + p) * c + k] = dy.row(b)[k] * scale;
  return df;
}

/// Row-wise concatenation of [batch, n_i] tensors in the given order.
template <class T>
Tensor<T> concat(const std::vector<const Tensor<T>*>& parts) {
  if (parts.empty()) throw Error(ErrorKind::ShapeMismatch, "concat of nothing");
  const std::size_t batch = parts.front()->dim(0);
  std::size_t width = 0;
  for (auto* p : parts) {
    if (p->rank() != 2 || p->dim(0) != batch) throw Error(ErrorKind::ShapeMismatch, "concat batch mismatch");
    width += p->dim(1);
  }
  Tensor<T> out({batch, width});
  for (std::size_t b = 0; b < batch; ++b) {
    T* dst = out.row(b);
    for (auto* p : parts) dst = std::copy(p->row(b), p->row(b) + p->dim(1), dst);
  }
  return out;
}

/// Plain vector concatenation.
template <class T>
std::vector<T> concat(const std::vector<std::vector<T>>& parts) {
  std::vector<T> out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

/// Numerically stable softmax of one vector.
template <class T>
std::vector<T> softmax(std::span<const T> z) {
  if (z.empty()) return {};
  const T m = *std::max_element(z.begin(), z.end());
  std::vector<T> p(z.size());
  T sum{0};
  for (std::size_t i = 0; i < z.size(); ++i) {
    p[i] = std::exp(z[i] - m);
    sum += p[i];
  }
  for (auto& v : p) v /= sum;
  return p;
}

template <class T>
std::vector<T> softmax(const std::vector<T>& z) {
  return softmax(std::span<const T>(z));
}

/// Row-wise softmax of [batch, K] logits.
template <class T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
  Tensor<T> p(logits.shape);
  const std::size_t k = logits.dim(1);
  for (std::size_t b = 0; b < logits.dim(0); ++b) {
    auto row = softmax(std::span<const T>(logits.row(b), k));
    std::copy(row.begin(), row.end(), p.row(b));
  }
  return p;
}

inline constexpr double kProbabilityFloor = 1e-12;

/// -sum_k y_k log(clamp(p_k, 1e-12, 1)).
template <class T>
T cross_entropy(std::span<const T> p, std::span<const T> y) {
  if (p.size() != y.size()) throw Error(ErrorKind::ShapeMismatch, "cross entropy length mismatch");
  T loss{0};
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (y[k] != T{0}) loss -= y[k] * std::log(std::clamp(p[k], static_cast<T>(kProbabilityFloor), T{1}));
  }
  return loss;
}

template <class T>
struct LossAndGrad {
  T loss{0};
  Tensor<T> dlogits;
  Tensor<T> probabilities;
};

/// Fused softmax + categorical cross entropy, averaged over the batch.
/// dlogits = (p - onehot) / batch.
template <class T>
LossAndGrad<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  const std::size_t batch = logits.dim(0), k = logits.dim(1);
  if (labels.size() != batch) throw Error(ErrorKind::ShapeMismatch, "label count does not match batch");
  LossAndGrad<T> out;
  out.probabilities = softmax_rows(logits);
  out.dlogits = out.probabilities;
  for (std::size_t b = 0; b < batch; ++b) {
    const int y = labels[b];
    if (y < 0 || static_cast<std::size_t>(y) >= k) throw Error(ErrorKind::BadClass, "label out of range");
    const T p = std::clamp(out.probabilities.row(b)[y], static_cast<T>(kProbabilityFloor), T{1});
    out.loss -= std::log(p);
    out.dlogits.row(b)[y] -= T{1};
  }
  out.loss /= static_cast<T>(batch);
  for (auto& v : out.dlogits.data) v /= static_cast<T>(batch);
  if (!std::isfinite(out.loss)) throw Error(ErrorKind::DivergedLoss, "loss is not finite");
  return out;
}

}  // namespace mosq::nn
