#pragma once

// Dense feed-forward substrate: layers, masked forward/backward passes, Adam,
// and a finite-difference gradient checker.
//
// Dropout is applied on the activation side: a hidden unit's output is
// multiplied by r / keep_prob with r in {0, 1}. Masking the activation of unit
// j is the same as masking column j of that layer's weight product, so this is
// equivalent to the weight-side form r ⊙ (Wᵀ x) when masks are per unit.

#include "dcnpd/errors.hpp"
#include "dcnpd/matrix.hpp"
#include "dcnpd/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace dcnpd {

enum class Activation { ReLU, Sigmoid, Identity };

inline std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::ReLU: return "relu";
    case Activation::Sigmoid: return "sigmoid";
    case Activation::Identity: return "identity";
  }
  return "identity";
}

inline Activation activation_from_string(std::string_view s) {
  if (s == "relu") return Activation::ReLU;
  if (s == "sigmoid") return Activation::Sigmoid;
  if (s == "identity") return Activation::Identity;
  throw std::invalid_argument("unknown activation '" + std::string(s) + "'");
}

struct DenseLayer {
  Matrix W;  // fan_in x fan_out
  Vector b;  // fan_out
  Activation activation = Activation::Identity;

  std::size_t fan_in() const { return static_cast<std::size_t>(W.rows()); }
  std::size_t fan_out() const { return static_cast<std::size_t>(W.cols()); }
};

/// An ordered stack of dense layers.
///
/// Dropout sites are the outputs of every layer except the last. When
/// `mask_output` is set the last layer's output is a dropout site too; that is
/// the case for a stack whose output is itself a hidden representation (the
/// shared trunk of the counterfactual network).
struct MLPParams {
  std::vector<DenseLayer> layers;
  bool mask_output = false;

  std::size_t input_width() const { return layers.empty() ? 0 : layers.front().fan_in(); }
  std::size_t output_width() const { return layers.empty() ? 0 : layers.back().fan_out(); }

  std::size_t num_masked() const {
    if (layers.empty()) return 0;
    return mask_output ? layers.size() : layers.size() - 1;
  }

  std::vector<std::size_t> hidden_widths() const {
    std::vector<std::size_t> w;
    for (std::size_t l = 0; l < num_masked(); ++l) w.push_back(layers[l].fan_out());
    return w;
  }

  std::size_t num_parameters() const {
    std::size_t n = 0;
    for (const auto& L : layers) n += static_cast<std::size_t>(L.W.size() + L.b.size());
    return n;
  }

  void validate() const {
    detail::require(!layers.empty(), "MLP has no layers");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto& L = layers[l];
      detail::require(L.W.rows() > 0 && L.W.cols() > 0, "layer " + std::to_string(l) + " is empty");
      detail::require(L.b.size() == L.W.cols(),
                      "layer " + std::to_string(l) + ": bias length does not match fan_out");
      if (l + 1 < layers.size())
        detail::require(L.fan_out() == layers[l + 1].fan_in(),
                        "layer " + std::to_string(l) + " fan_out != layer " + std::to_string(l + 1) +
                            " fan_in");
    }
  }

  friend bool operator==(const MLPParams& a, const MLPParams& b) {
    if (a.layers.size() != b.layers.size() || a.mask_output != b.mask_output) return false;
    for (std::size_t l = 0; l < a.layers.size(); ++l) {
      const auto& x = a.layers[l];
      const auto& y = b.layers[l];
      if (x.activation != y.activation || x.W.rows() != y.W.rows() || x.W.cols() != y.W.cols() ||
          x.b.size() != y.b.size() || x.W != y.W || x.b != y.b)
        return false;
    }
    return true;
  }
};

/// Glorot/Xavier uniform: entries i.i.d. U[-a, a] with a = sqrt(6 / (fan_in + fan_out)).
inline Matrix xavier_init(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  detail::require(fan_in >= 1 && fan_out >= 1, "xavier_init: fan dimensions must be >= 1");
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Matrix W(static_cast<Eigen::Index>(fan_in), static_cast<Eigen::Index>(fan_out));
  for (Eigen::Index i = 0; i < W.size(); ++i) W.data()[i] = (2.0 * uniform01(rng) - 1.0) * a;
  return W;
}

/// Builds a stack with `widths.back()` as the output width. Weights Xavier, biases zero.
inline MLPParams make_mlp(std::size_t input, const std::vector<std::size_t>& widths,
                          Activation hidden, Activation output, bool mask_output, Rng& rng) {
  detail::require(input >= 1 && !widths.empty(), "make_mlp: need an input width and >= 1 layer");
  MLPParams p;
  p.mask_output = mask_output;
  std::size_t in = input;
  for (std::size_t l = 0; l < widths.size(); ++l) {
    DenseLayer L;
    L.W = xavier_init(in, widths[l], rng);
    L.b = Vector::Zero(static_cast<Eigen::Index>(widths[l]));
    L.activation = (l + 1 == widths.size()) ? output : hidden;
    p.layers.push_back(std::move(L));
    in = widths[l];
  }
  return p;
}

/// Per-unit binary masks for one example.
struct DropoutMask {
  std::vector<Vector> units;  // one {0,1} vector per dropout site
  double keep_prob = 1.0;
};

/// Masks for a batch. Row i of `units[l]` belongs to example i, whose keep
/// probability is `keep_prob(i)`; keep probabilities may differ per example.
struct BatchMask {
  std::vector<Matrix> units;
  Vector keep_prob;

  static BatchMask from_single(const DropoutMask& m) {
    BatchMask b;
    for (const auto& u : m.units) b.units.push_back(as_row(u));
    b.keep_prob = Vector::Constant(1, m.keep_prob);
    return b;
  }
};

/// Draws Bernoulli(keep_prob(i)) entries for each example and each site width.
inline BatchMask sample_batch_mask(const Vector& keep_prob, const std::vector<std::size_t>& widths,
                                   Rng& rng) {
  BatchMask m;
  m.keep_prob = keep_prob;
  const Eigen::Index n = keep_prob.size();
  for (auto w : widths) {
    Matrix u(n, static_cast<Eigen::Index>(w));
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < u.cols(); ++j) u(i, j) = uniform01(rng) < keep_prob(i) ? 1.0 : 0.0;
    m.units.push_back(std::move(u));
  }
  return m;
}

struct ForwardCache {
  std::vector<Matrix> inputs;  // input to each layer
  std::vector<Matrix> pre;     // pre-activations
  std::vector<Matrix> scale;   // mask / keep_prob per site; empty matrix where unmasked
  Matrix output;               // post-activation (and post-mask) output of the last layer
};

namespace detail {

inline Matrix activate(const Matrix& z, Activation a) {
  switch (a) {
    case Activation::ReLU: return z.cwiseMax(0.0);
    case Activation::Sigmoid:
      return z.unaryExpr([](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      });
    case Activation::Identity: return z;
  }
  return z;
}

// d activation / d z, evaluated given z and the activation value.
inline Matrix activation_grad(const Matrix& z, const Matrix& out, Activation a) {
  switch (a) {
    case Activation::ReLU: return z.unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; });
    case Activation::Sigmoid: return out.array() * (1.0 - out.array());
    case Activation::Identity: return Matrix::Ones(z.rows(), z.cols());
  }
  return Matrix::Ones(z.rows(), z.cols());
}

}  // namespace detail

/// Forward pass over a batch (one example per row). With `masks`, each dropout
/// site's activations are multiplied by mask / keep_prob (inverted dropout).
inline ForwardCache mlp_forward(const MLPParams& params, const Matrix& x,
                                const BatchMask* masks = nullptr) {
  params.validate();
  detail::require(static_cast<std::size_t>(x.cols()) == params.input_width(),
                  "mlp_forward: input has " + std::to_string(x.cols()) + " columns, expected " +
                      std::to_string(params.input_width()));
  const std::size_t n_masked = params.num_masked();
  if (masks) {
    detail::require(masks->units.size() == n_masked,
                    "mlp_forward: expected " + std::to_string(n_masked) + " mask vectors, got " +
                        std::to_string(masks->units.size()));
    detail::require(masks->keep_prob.size() == x.rows(), "mlp_forward: keep_prob length != batch size");
    for (Eigen::Index i = 0; i < masks->keep_prob.size(); ++i)
      detail::require(masks->keep_prob(i) > 0.0 && masks->keep_prob(i) <= 1.0,
                      "mlp_forward: keep_prob must lie in (0, 1]");
  }

  ForwardCache c;
  c.inputs.reserve(params.layers.size());
  c.pre.reserve(params.layers.size());
  c.scale.resize(params.layers.size());
  Matrix a = x;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& L = params.layers[l];
    Matrix z = a * L.W;
    z.rowwise() += L.b.transpose();
    c.inputs.push_back(std::move(a));
    a = detail::activate(z, L.activation);
    c.pre.push_back(std::move(z));
    if (masks && l < n_masked) {
      const Matrix& u = masks->units[l];
      detail::require(u.rows() == a.rows() && u.cols() == a.cols(),
                      "mlp_forward: mask " + std::to_string(l) + " is " + detail::shape(u) +
                          ", activations are " + detail::shape(a));
      Matrix s = u.array().colwise() / masks->keep_prob.array();
      a.array() *= s.array();
      c.scale[l] = std::move(s);
    }
  }
  c.output = std::move(a);
  return c;
}

/// Single-example convenience overload.
inline ForwardCache mlp_forward(const MLPParams& params, const Matrix& x, const DropoutMask& mask) {
  detail::require(x.rows() == 1, "mlp_forward: a DropoutMask applies to a single example");
  const BatchMask b = BatchMask::from_single(mask);
  return mlp_forward(params, x, &b);
}

struct MLPGrads {
  std::vector<Matrix> dW;
  std::vector<Vector> db;
  Matrix input_grad;  // dLoss/dx, for chaining into an upstream stack

  static MLPGrads zeros_like(const MLPParams& p) {
    MLPGrads g;
    for (const auto& L : p.layers) {
      g.dW.push_back(Matrix::Zero(L.W.rows(), L.W.cols()));
      g.db.push_back(Vector::Zero(L.b.size()));
    }
    return g;
  }
};

/// Whether a gradient handed to mlp_backward is taken w.r.t. the output
/// activation or already w.r.t. the last pre-activation (e.g. the logit-space
/// gradient p - w of a sigmoid + cross-entropy pair).
enum class OutputGrad { PostActivation, PreActivation };

inline MLPGrads mlp_backward(const MLPParams& params, const ForwardCache& cache,
                             const Matrix& grad_output,
                             OutputGrad kind = OutputGrad::PostActivation) {
  const std::size_t L = params.layers.size();
  detail::require(cache.pre.size() == L && cache.inputs.size() == L && cache.scale.size() == L,
                  "mlp_backward: cache does not match parameter stack");
  detail::require(grad_output.rows() == cache.output.rows() && grad_output.cols() == cache.output.cols(),
                  "mlp_backward: grad_output is " + detail::shape(grad_output) + ", output is " +
                      detail::shape(cache.output));
  MLPGrads g;
  g.dW.resize(L);
  g.db.resize(L);
  Matrix G = grad_output;
  for (std::size_t k = L; k-- > 0;) {
    const auto& layer = params.layers[k];
    detail::require(cache.pre[k].cols() == layer.W.cols() && cache.inputs[k].cols() == layer.W.rows(),
                    "mlp_backward: cache layer " + std::to_string(k) + " does not match parameters");
    if (cache.scale[k].size() != 0) G.array() *= cache.scale[k].array();
    if (!(k + 1 == L && kind == OutputGrad::PreActivation)) {
      const Matrix out = detail::activate(cache.pre[k], layer.activation);
      G.array() *= detail::activation_grad(cache.pre[k], out, layer.activation).array();
    }
    g.dW[k] = cache.inputs[k].transpose() * G;
    g.db[k] = G.colwise().sum().transpose();
    G = G * layer.W.transpose();
  }
  g.input_grad = std::move(G);
  return g;
}

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::vector<Matrix> mW, vW;
  std::vector<Vector> mb, vb;
  std::uint64_t t = 0;
  AdamConfig config;

  static AdamState for_params(const MLPParams& p, AdamConfig cfg = {}) {
    AdamState s;
    s.config = cfg;
    for (const auto& L : p.layers) {
      s.mW.push_back(Matrix::Zero(L.W.rows(), L.W.cols()));
      s.vW.push_back(Matrix::Zero(L.W.rows(), L.W.cols()));
      s.mb.push_back(Vector::Zero(L.b.size()));
      s.vb.push_back(Vector::Zero(L.b.size()));
    }
    return s;
  }
};

namespace detail {

template <class P, class G, class M>
void adam_update(P& param, const G& grad, M& m, M& v, const AdamConfig& c, double bc1, double bc2) {
  m = c.beta1 * m + (1.0 - c.beta1) * grad;
  v.array() = c.beta2 * v.array() + (1.0 - c.beta2) * grad.array().square();
  param.array() -= c.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + c.epsilon);
}

}  // namespace detail

/// One bias-corrected Adam update. Increments `state.t`.
inline void adam_step(MLPParams& params, const MLPGrads& grads, AdamState& state) {
  const std::size_t L = params.layers.size();
  if (state.mW.empty() && L > 0) state = AdamState::for_params(params, state.config);
  detail::require(grads.dW.size() == L && grads.db.size() == L && state.mW.size() == L,
                  "adam_step: layer count mismatch");
  for (std::size_t l = 0; l < L; ++l) {
    const auto& layer = params.layers[l];
    detail::require(grads.dW[l].rows() == layer.W.rows() && grads.dW[l].cols() == layer.W.cols() &&
                        grads.db[l].size() == layer.b.size() && state.mW[l].rows() == layer.W.rows() &&
                        state.mW[l].cols() == layer.W.cols() && state.mb[l].size() == layer.b.size(),
                    "adam_step: shape mismatch at layer " + std::to_string(l));
  }
  ++state.t;
  const auto& c = state.config;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.t));
  for (std::size_t l = 0; l < L; ++l) {
    auto& layer = params.layers[l];
    detail::adam_update(layer.W, grads.dW[l], state.mW[l], state.vW[l], c, bc1, bc2);
    detail::adam_update(layer.b, grads.db[l], state.mb[l], state.vb[l], c, bc1, bc2);
    if (!layer.W.allFinite() || !layer.b.allFinite())
      throw NumericFailure("adam_step: non-finite parameter at layer " + std::to_string(l));
  }
}

struct LossAndGrad {
  double loss = 0.0;
  MLPGrads grads;
};

/// Mean squared error over a column of predictions; gradient w.r.t. predictions.
inline LossAndGrad mse_loss(const Matrix& pred, const Vector& target) {
  detail::require(pred.cols() == 1 && pred.rows() == target.size() && target.size() > 0,
                  "mse_loss: predictions and targets disagree in shape");
  const Vector r = pred.col(0) - target;
  const double n = static_cast<double>(target.size());
  LossAndGrad out;
  out.loss = r.squaredNorm() / n;
  out.grads.input_grad = Matrix(r.size(), 1);
  out.grads.input_grad.col(0) = r * (2.0 / n);
  return out;
}

/// Max relative error between `fn(params).grads` and central finite differences
/// of `fn(params).loss`. `fn` maps MLPParams to LossAndGrad.
template <class LossFn>
double grad_check(const MLPParams& params, LossFn&& fn, double epsilon = 1e-5) {
  detail::require(epsilon > 0.0, "grad_check: epsilon must be positive");
  const LossAndGrad base = fn(params);
  if (!std::isfinite(base.loss)) throw NumericFailure("grad_check: non-finite loss");
  detail::require(base.grads.dW.size() == params.layers.size(), "grad_check: gradient layer count mismatch");

  auto eval = [&](const MLPParams& p) {
    const double v = fn(p).loss;
    if (!std::isfinite(v)) throw NumericFailure("grad_check: non-finite loss under perturbation");
    return v;
  };
  auto rel = [](double a, double n) {
    return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-12});
  };

  double worst = 0.0;
  MLPParams p = params;
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    auto& W = p.layers[l].W;
    for (Eigen::Index i = 0; i < W.size(); ++i) {
      const double orig = W.data()[i];
      W.data()[i] = orig + epsilon;
      const double up = eval(p);
      W.data()[i] = orig - epsilon;
      const double down = eval(p);
      W.data()[i] = orig;
      worst = std::max(worst, rel(base.grads.dW[l].data()[i], (up - down) / (2.0 * epsilon)));
    }
    auto& b = p.layers[l].b;
    for (Eigen::Index i = 0; i < b.size(); ++i) {
      const double orig = b(i);
      b(i) = orig + epsilon;
      const double up = eval(p);
      b(i) = orig - epsilon;
      const double down = eval(p);
      b(i) = orig;
      worst = std::max(worst, rel(base.grads.db[l](i), (up - down) / (2.0 * epsilon)));
    }
  }
  return worst;
}

}  // namespace dcnpd
