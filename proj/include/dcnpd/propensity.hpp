#pragma once

// Propensity network and the entropy-based dropout schedule.
//
// The schedule maps a propensity estimate p to a dropout probability
//   1 - gamma/2 - H(p)/2,   H = base-2 binary entropy,
// so balanced subjects (p = 0.5) get the least dropout and subjects with
// extreme propensity the most. Masks are drawn with keep probability
// gamma/2 + H(p)/2.

#include "dcnpd/data.hpp"
#include "dcnpd/nn.hpp"

#include <cmath>
#include <vector>

namespace dcnpd {

inline constexpr double kPropensityClamp = 1e-12;

struct PropensityModel {
  MLPParams net;  // ends in a single sigmoid unit
  FeatureScaler scaler;

  std::size_t input_width() const { return net.input_width(); }
};

struct DropoutSchedule {
  double gamma = 1.0;
  static constexpr int entropy_base = 2;

  void validate() const {
    detail::require(gamma >= 0.0 && gamma <= 1.0, "dropout schedule: gamma must lie in [0, 1]");
  }
};

struct PropensityConfig {
  std::vector<std::size_t> hidden = {25, 25};
  std::size_t epochs = 1000;  // full-batch Adam steps
  AdamConfig adam;
};

/// Base-2 binary entropy with 0 log 0 = 0.
inline double binary_entropy(double p) {
  detail::require(p >= 0.0 && p <= 1.0, "binary_entropy: p must lie in [0, 1]");
  double h = 0.0;
  if (p > 0.0) h -= p * std::log2(p);
  if (p < 1.0) h -= (1.0 - p) * std::log2(1.0 - p);
  return h;
}

inline double dropout_probability(double p_tilde, const DropoutSchedule& schedule = {}) {
  schedule.validate();
  return 1.0 - schedule.gamma / 2.0 - binary_entropy(p_tilde) / 2.0;
}

/// gamma/2 + H(p)/2, evaluated directly rather than as 1 - dropout_probability.
inline double keep_probability(double p_tilde, const DropoutSchedule& schedule = {}) {
  schedule.validate();
  return schedule.gamma / 2.0 + binary_entropy(p_tilde) / 2.0;
}

inline double clamp_propensity(double p) {
  return std::clamp(p, kPropensityClamp, 1.0 - kPropensityClamp);
}

/// Propensity scores for each row of raw (unstandardized) features.
inline Vector predict_propensity(const PropensityModel& model, const Matrix& X) {
  detail::require(static_cast<std::size_t>(X.cols()) == model.input_width(),
                  "predict_propensity: feature dimension mismatch");
  const Matrix out = mlp_forward(model.net, model.scaler.apply(X)).output;
  return out.col(0).unaryExpr([](double p) { return clamp_propensity(p); });
}

inline double predict_propensity(const PropensityModel& model, const Vector& x) {
  return predict_propensity(model, as_row(x))(0);
}

/// Mean binary cross-entropy of clamped scores against labels.
inline double binary_cross_entropy(const Vector& p, const IndexVector& w) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double q = clamp_propensity(p(i));
    s -= w(i) == 1 ? std::log(q) : std::log(1.0 - q);
  }
  return s / static_cast<double>(p.size());
}

/// Full-batch Adam on binary cross-entropy of W given standardized X. When
/// `loss_log` is given, the loss before each step is appended to it.
inline PropensityModel train_propensity(const ObservationalDataset& ds, const PropensityConfig& cfg, Rng& rng,
                                        std::vector<double>* loss_log = nullptr) {
  ds.validate();
  const std::size_t treated = ds.num_treated();
  detail::require(ds.n() > 0 && treated > 0 && treated < ds.n(),
                  "train_propensity: dataset needs both treated and control subjects");
  detail::require(cfg.epochs >= 1, "train_propensity: epochs must be >= 1");

  PropensityModel model;
  model.scaler = FeatureScaler::fit(ds.X);
  const Matrix Xs = model.scaler.apply(ds.X);
  std::vector<std::size_t> widths = cfg.hidden;
  widths.push_back(1);
  model.net = make_mlp(ds.d(), widths, Activation::ReLU, Activation::Sigmoid, false, rng);
  AdamState adam = AdamState::for_params(model.net, cfg.adam);

  const double n = static_cast<double>(ds.n());
  const Vector w = ds.W.cast<double>();
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    const ForwardCache cache = mlp_forward(model.net, Xs);
    const Vector p = cache.output.col(0);
    if (loss_log) loss_log->push_back(binary_cross_entropy(p, ds.W));
    // Sigmoid + cross-entropy: the logit-space gradient is (p - w) / n.
    Matrix g(p.size(), 1);
    g.col(0) = (p - w) / n;
    adam_step(model.net, mlp_backward(model.net, cache, g, OutputGrad::PreActivation), adam);
  }
  if (loss_log) loss_log->push_back(binary_cross_entropy(predict_propensity(model, ds.X), ds.W));
  return model;
}

}  // namespace dcnpd
