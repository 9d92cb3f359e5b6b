#pragma once

// Multitask potential-outcomes network: a shared trunk feeding two scalar
// regression heads, one per treatment arm, plus Monte Carlo dropout inference
// of the individualized treatment effect.
//
// dcn_forward and the batch helpers operate on network inputs (already
// standardized). predict_deterministic and estimate_ite take raw features and
// apply the model's scaler.

#include "dcnpd/nn.hpp"
#include "dcnpd/propensity.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

namespace dcnpd {

struct DCNShape {
  std::vector<std::size_t> shared = {200, 200};
  std::vector<std::size_t> head = {200};  // hidden widths of each head; a scalar output layer follows
};

struct DCNParams {
  MLPParams shared;
  MLPParams head0;  // control outcome
  MLPParams head1;  // treated outcome
  FeatureScaler scaler;

  std::size_t input_width() const { return shared.input_width(); }

  void validate() const {
    shared.validate();
    head0.validate();
    head1.validate();
    detail::require(shared.mask_output, "DCN shared stack must expose its output as a dropout site");
    detail::require(head0.input_width() == shared.output_width() && head1.input_width() == shared.output_width(),
                    "DCN head input width must equal shared output width");
    detail::require(head0.output_width() == 1 && head1.output_width() == 1, "DCN heads must be scalar");
    detail::require(scaler.empty() || static_cast<std::size_t>(scaler.mean.size()) == input_width(),
                    "DCN scaler dimension mismatch");
  }

  MLPParams& head(int arm) { return arm == 1 ? head1 : head0; }
  const MLPParams& head(int arm) const { return arm == 1 ? head1 : head0; }
};

inline DCNParams init_dcn(std::size_t input, const DCNShape& shape, Rng& rng) {
  detail::require(!shape.shared.empty(), "DCN needs at least one shared layer");
  DCNParams p;
  p.shared = make_mlp(input, shape.shared, Activation::ReLU, Activation::ReLU, true, rng);
  std::vector<std::size_t> head = shape.head;
  head.push_back(1);
  p.head0 = make_mlp(shape.shared.back(), head, Activation::ReLU, Activation::Identity, false, rng);
  p.head1 = make_mlp(shape.shared.back(), head, Activation::ReLU, Activation::Identity, false, rng);
  return p;
}

enum class Head { Control, Treated, Both };

struct DCNMasks {
  DropoutMask shared, head0, head1;
};

struct DCNOutput {
  std::optional<double> y0, y1;
};

namespace detail {

inline DropoutMask sample_mask(double keep_prob, const std::vector<std::size_t>& widths, Rng& rng) {
  DropoutMask m;
  m.keep_prob = keep_prob;
  for (auto w : widths) {
    Vector u(static_cast<Eigen::Index>(w));
    for (Eigen::Index j = 0; j < u.size(); ++j) u(j) = uniform01(rng) < keep_prob ? 1.0 : 0.0;
    m.units.push_back(std::move(u));
  }
  return m;
}

}  // namespace detail

/// Independent Bernoulli(keep_prob) masks for every dropout site, drawn in the
/// order shared, head0, head1.
inline DCNMasks sample_masks(double keep_prob, const DCNParams& params, Rng& rng) {
  detail::require(keep_prob > 0.0 && keep_prob <= 1.0, "sample_masks: keep_prob must lie in (0, 1]");
  DCNMasks m;
  m.shared = detail::sample_mask(keep_prob, params.shared.hidden_widths(), rng);
  m.head0 = detail::sample_mask(keep_prob, params.head0.hidden_widths(), rng);
  m.head1 = detail::sample_mask(keep_prob, params.head1.hidden_widths(), rng);
  return m;
}

/// Forward pass for one network-space input. The shared stack runs once and
/// the requested head(s) read its output.
inline DCNOutput dcn_forward(const DCNParams& params, const Vector& x, const DCNMasks* masks = nullptr,
                             Head head = Head::Both) {
  params.validate();
  detail::require(static_cast<std::size_t>(x.size()) == params.input_width(), "dcn_forward: dimension mismatch");
  const Matrix xr = as_row(x);
  const Matrix s = masks ? mlp_forward(params.shared, xr, masks->shared).output : mlp_forward(params.shared, xr).output;
  DCNOutput out;
  if (head != Head::Treated)
    out.y0 = (masks ? mlp_forward(params.head0, s, masks->head0) : mlp_forward(params.head0, s)).output(0, 0);
  if (head != Head::Control)
    out.y1 = (masks ? mlp_forward(params.head1, s, masks->head1) : mlp_forward(params.head1, s)).output(0, 0);
  return out;
}

struct PotentialOutcomes {
  Vector y0, y1;
  Vector ite() const { return y1 - y0; }
};

/// Maskless predictions for each row of network-space inputs.
inline PotentialOutcomes dcn_predict_batch(const DCNParams& params, const Matrix& Xs) {
  params.validate();
  detail::require(static_cast<std::size_t>(Xs.cols()) == params.input_width(), "dcn_predict: dimension mismatch");
  const Matrix s = mlp_forward(params.shared, Xs).output;
  return {mlp_forward(params.head0, s).output.col(0), mlp_forward(params.head1, s).output.col(0)};
}

struct DeterministicPrediction {
  double y0 = 0.0, y1 = 0.0, ite = 0.0;
};

inline DeterministicPrediction predict_deterministic(const DCNParams& params, const Vector& x) {
  const auto o = dcn_forward(params, params.scaler.apply(x));
  return {*o.y0, *o.y1, *o.y1 - *o.y0};
}

/// Raw-feature batch version of predict_deterministic.
inline PotentialOutcomes predict_deterministic(const DCNParams& params, const Matrix& X) {
  return dcn_predict_batch(params, params.scaler.apply(X));
}

struct ITEEstimate {
  std::vector<double> samples;
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 for a single draw
  double q025 = 0.0, q975 = 0.0;
  double y0_mean = 0.0, y1_mean = 0.0;
  double keep_prob = 1.0;
};

namespace detail {

// Welford accumulation: identical samples give a mean equal to the sample and
// exactly zero spread.
struct RunningMoments {
  std::size_t n = 0;
  double mean = 0.0, m2 = 0.0;
  void add(double x) {
    ++n;
    const double delta = x - mean;
    mean += delta / static_cast<double>(n);
    m2 += delta * (x - mean);
  }
  double sample_std() const { return n > 1 ? std::sqrt(std::max(0.0, m2 / static_cast<double>(n - 1))) : 0.0; }
};

// Linear interpolation between order statistics (the R type-7 rule).
inline double quantile_sorted(const std::vector<double>& s, double q) {
  if (s.size() == 1) return s.front();
  const double pos = q * static_cast<double>(s.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, s.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return s[lo] + frac * (s[hi] - s[lo]);
}

}  // namespace detail

inline ITEEstimate summarize_samples(std::vector<double> samples, const std::vector<double>& y0,
                                     const std::vector<double>& y1) {
  detail::require(!samples.empty(), "summarize_samples: no samples");
  ITEEstimate e;
  detail::RunningMoments t, a, b;
  for (double s : samples) t.add(s);
  for (double s : y0) a.add(s);
  for (double s : y1) b.add(s);
  e.mean = t.mean;
  e.std = t.sample_std();
  e.y0_mean = a.mean;
  e.y1_mean = b.mean;
  std::vector<double> sorted = samples;
  std::sort(sorted.begin(), sorted.end());
  e.q025 = detail::quantile_sorted(sorted, 0.025);
  e.q975 = detail::quantile_sorted(sorted, 0.975);
  e.samples = std::move(samples);
  return e;
}

/// Whether the two heads draw their own masks within one Monte Carlo sample
/// (the default) or reuse head0's mask for head1.
enum class HeadMasking { Independent, Shared };

/// Monte Carlo propensity-dropout: every draw re-samples all masks with
/// keep_prob = gamma/2 + H(p(x))/2 and records y1 - y0.
inline ITEEstimate estimate_ite(const DCNParams& params, const PropensityModel& prop,
                                const DropoutSchedule& schedule, const Vector& x, std::size_t n_samples,
                                Rng& rng, HeadMasking head_masking = HeadMasking::Independent) {
  detail::require(n_samples >= 1, "estimate_ite: n_samples must be >= 1");
  const double p = predict_propensity(prop, x);
  const double keep = keep_probability(p, schedule);
  detail::require(keep > 0.0, "estimate_ite: keep probability is zero");
  const Vector xs = params.scaler.apply(x);
  std::vector<double> t, y0, y1;
  t.reserve(n_samples);
  y0.reserve(n_samples);
  y1.reserve(n_samples);
  for (std::size_t s = 0; s < n_samples; ++s) {
    DCNMasks m = sample_masks(keep, params, rng);
    if (head_masking == HeadMasking::Shared) m.head1 = m.head0;
    const auto o = dcn_forward(params, xs, &m);
    y0.push_back(*o.y0);
    y1.push_back(*o.y1);
    t.push_back(*o.y1 - *o.y0);
  }
  ITEEstimate e = summarize_samples(std::move(t), y0, y1);
  e.keep_prob = keep;
  return e;
}

}  // namespace dcnpd
