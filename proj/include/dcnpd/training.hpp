#pragma once

// Alternating-phase training of the counterfactual network.
//
// Epoch k = 1..K: odd k trains (shared, head0) on the control batch, even k
// trains (shared, head1) on the treated batch. Each epoch is one shuffled pass
// over the active batch in mini-batches, with a fresh dropout mask for every
// example. Shared, head0 and head1 each keep their own Adam moments for the
// whole run.

#include "dcnpd/data.hpp"
#include "dcnpd/dcn.hpp"
#include "dcnpd/propensity.hpp"

#include <functional>
#include <ostream>
#include <string>

namespace dcnpd {

struct TrainConfig {
  std::size_t epochs = 100;
  double gamma = 1.0;
  AdamConfig adam;
  DCNShape shape;
  std::size_t batch_size = 32;

  void validate() const {
    detail::require(epochs >= 1, "epochs must be >= 1");
    detail::require(gamma >= 0.0 && gamma <= 1.0, "gamma must lie in [0, 1]");
    detail::require(batch_size >= 1, "batch_size must be >= 1");
    detail::require(adam.lr > 0.0 && adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 &&
                        adam.beta2 < 1.0 && adam.epsilon > 0.0,
                    "invalid Adam hyperparameters");
  }
};

struct EpochMetrics {
  std::size_t epoch = 0;
  int phase = 0;  // 0 control, 1 treated
  double factual_mse = 0.0;
};

/// One line of the per-epoch JSON log.
inline std::string to_json_line(const EpochMetrics& m) {
  return R"({"epoch":)" + std::to_string(m.epoch) + R"(,"phase":")" + (m.phase == 1 ? "treated" : "control") +
         R"(","factual_mse":)" + detail::format_double(m.factual_mse) + "}";
}

/// Optional observation points. All default to no-ops.
struct TrainHooks {
  std::function<void(const EpochMetrics&)> on_epoch;
  // (epoch, dataset row, keep probability) for every example visit
  std::function<void(std::size_t, std::size_t, double)> on_keep_prob;
  std::function<void(std::size_t, const DCNParams&)> after_epoch;
  // Called once with the freshly initialized parameters.
  std::function<void(const DCNParams&)> on_init;
};

/// Writes one JSON line per epoch to `sink`.
inline TrainHooks json_epoch_logger(std::ostream& sink) {
  TrainHooks h;
  h.on_epoch = [&sink](const EpochMetrics& m) { sink << to_json_line(m) << '\n'; };
  return h;
}

/// Mean over the batch of (maskless prediction of head W_i - Y_i)^2. Raw features.
inline double factual_mse(const DCNParams& params, const ObservationalDataset& batch) {
  detail::require(batch.n() > 0, "factual_mse: empty batch");
  const auto po = predict_deterministic(params, batch.X);
  double s = 0.0;
  for (Eigen::Index i = 0; i < batch.Y.size(); ++i) {
    const double pred = batch.W(i) == 1 ? po.y1(i) : po.y0(i);
    s += (pred - batch.Y(i)) * (pred - batch.Y(i));
  }
  return s / static_cast<double>(batch.n());
}

namespace detail {

/// Shared training loop. keep(i) is the keep probability of dataset row i.
inline DCNParams train_alternating(const ObservationalDataset& ds, const Vector& keep, const TrainConfig& cfg,
                                   Rng& rng, const TrainHooks& hooks) {
  cfg.validate();
  ds.validate();
  const BatchSplit batches = split_batches(ds);
  require(!batches.treated_rows.empty(), "train_dcn: treated batch is empty");
  require(!batches.control_rows.empty(), "train_dcn: control batch is empty");
  require(keep.size() == ds.Y.size(), "train_dcn: keep-probability vector length mismatch");

  DCNParams params = init_dcn(ds.d(), cfg.shape, rng);
  params.scaler = FeatureScaler::fit(ds.X);
  const Matrix Xs = params.scaler.apply(ds.X);
  if (hooks.on_init) hooks.on_init(params);

  AdamState shared_state = AdamState::for_params(params.shared, cfg.adam);
  AdamState head_state[2] = {AdamState::for_params(params.head0, cfg.adam),
                             AdamState::for_params(params.head1, cfg.adam)};
  const auto shared_widths = params.shared.hidden_widths();

  for (std::size_t k = 1; k <= cfg.epochs; ++k) {
    const int arm = (k % 2 == 0) ? 1 : 0;
    const auto& rows = arm == 1 ? batches.treated_rows : batches.control_rows;
    MLPParams& head = params.head(arm);
    const auto head_widths = head.hidden_widths();
    const auto order = permutation(rows.size(), rng);

    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      std::vector<std::size_t> idx;
      idx.reserve(stop - start);
      for (std::size_t j = start; j < stop; ++j) idx.push_back(rows[order[j]]);

      const Matrix xb = gather_rows(Xs, idx);
      const Vector yb = gather(ds.Y, idx);
      const Vector kb = gather(keep, idx);
      if (hooks.on_keep_prob)
        for (std::size_t j = 0; j < idx.size(); ++j) hooks.on_keep_prob(k, idx[j], kb(static_cast<Eigen::Index>(j)));

      const BatchMask shared_mask = sample_batch_mask(kb, shared_widths, rng);
      const BatchMask head_mask = sample_batch_mask(kb, head_widths, rng);
      const ForwardCache sc = mlp_forward(params.shared, xb, &shared_mask);
      const ForwardCache hc = mlp_forward(head, sc.output, &head_mask);
      const LossAndGrad loss = mse_loss(hc.output, yb);
      if (!std::isfinite(loss.loss)) throw NumericFailure("train_dcn: non-finite loss at epoch " + std::to_string(k));

      const MLPGrads hg = mlp_backward(head, hc, loss.grads.input_grad);
      const MLPGrads sg = mlp_backward(params.shared, sc, hg.input_grad);
      adam_step(head, hg, head_state[arm]);
      adam_step(params.shared, sg, shared_state);
    }

    if (hooks.on_epoch)
      hooks.on_epoch({k, arm, factual_mse(params, arm == 1 ? batches.treated : batches.control)});
    if (hooks.after_epoch) hooks.after_epoch(k, params);
  }
  return params;
}

}  // namespace detail

/// Per-row keep probabilities gamma/2 + H(p(x_i))/2.
inline Vector propensity_keep_probs(const ObservationalDataset& ds, const PropensityModel& prop, double gamma) {
  detail::require(ds.d() == prop.input_width(), "propensity model feature dimension mismatch");
  const DropoutSchedule schedule{gamma};
  const Vector p = predict_propensity(prop, ds.X);
  Vector keep(p.size());
  for (Eigen::Index i = 0; i < p.size(); ++i) keep(i) = keep_probability(p(i), schedule);
  return keep;
}

/// Trains with propensity-dropout.
inline DCNParams train_dcn(const ObservationalDataset& ds, const PropensityModel& prop, const TrainConfig& cfg,
                           Rng& rng, const TrainHooks& hooks = {}) {
  cfg.validate();
  return detail::train_alternating(ds, propensity_keep_probs(ds, prop, cfg.gamma), cfg, rng, hooks);
}

}  // namespace dcnpd
