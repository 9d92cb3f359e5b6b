#pragma once

// Comparison estimators: nearest-neighbor matching, a single network that
// takes the treatment bit as an input feature, and the counterfactual network
// trained with one dropout rate for every example.

#include "dcnpd/training.hpp"

#include <algorithm>
#include <utility>
#include <vector>

namespace dcnpd {

// ---------------------------------------------------------------------------
// k-NN matching

struct KnnConfig {
  std::size_t k = 5;
};

namespace detail {

inline double squared_distance(const Matrix& X, Eigen::Index row, const Vector& x) {
  double s = 0.0;
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    const double d = X(row, j) - x(j);
    s += d * d;
  }
  return s;
}

// Mean outcome of the k rows of `arm` closest to x; ties go to the lower row index.
inline double knn_arm_mean(const ObservationalDataset& train, const Vector& x, int arm, std::size_t k) {
  std::vector<std::pair<double, Eigen::Index>> cand;
  for (Eigen::Index i = 0; i < train.X.rows(); ++i)
    if (train.W(i) == arm) cand.emplace_back(squared_distance(train.X, i, x), i);
  require(cand.size() >= k, "knn_ite: treatment group " + std::to_string(arm) + " has fewer than k members");
  std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
  double s = 0.0;
  for (std::size_t j = 0; j < k; ++j) s += train.Y(cand[j].second);
  return s / static_cast<double>(k);
}

}  // namespace detail

/// Mean outcome of the k nearest treated rows minus that of the k nearest
/// control rows. Distances are Euclidean in the space `train.X` lives in.
inline double knn_ite(const ObservationalDataset& train, const Vector& x, const KnnConfig& cfg = {}) {
  detail::require(cfg.k >= 1, "knn_ite: k must be >= 1");
  detail::require(static_cast<std::size_t>(x.size()) == train.d(), "knn_ite: dimension mismatch");
  return detail::knn_arm_mean(train, x, 1, cfg.k) - detail::knn_arm_mean(train, x, 0, cfg.k);
}

/// k-NN on features standardized with training-set statistics.
struct KnnModel {
  ObservationalDataset train;  // standardized features
  FeatureScaler scaler;
  KnnConfig config;

  static KnnModel fit(const ObservationalDataset& ds, const KnnConfig& cfg) {
    ds.validate();
    const std::size_t treated = ds.num_treated();
    detail::require(cfg.k >= 1 && cfg.k <= std::min(treated, ds.n() - treated),
                    "k-NN: k must be >= 1 and at most the size of the smaller treatment group");
    KnnModel m;
    m.scaler = FeatureScaler::fit(ds.X);
    m.train = ds;
    m.train.X = m.scaler.apply(ds.X);
    m.config = cfg;
    return m;
  }

  double predict_ite(const Vector& x) const { return knn_ite(train, scaler.apply(x), config); }

  Vector predict_ite(const Matrix& X) const {
    Vector out(X.rows());
    for (Eigen::Index i = 0; i < X.rows(); ++i) out(i) = predict_ite(Vector(X.row(i).transpose()));
    return out;
  }
};

// ---------------------------------------------------------------------------
// Direct model: one network on (x, w)

struct DirectConfig {
  std::vector<std::size_t> hidden = {200, 200, 200, 200};
  double dropout = 0.2;
};

struct DirectModel {
  MLPParams net;  // input width d + 1; the last input is the treatment bit
  FeatureScaler scaler;

  std::size_t feature_width() const { return net.input_width() - 1; }

  /// f(x, w) for each row of raw features, with one treatment value for all rows.
  Vector outcome(const Matrix& X, int w) const {
    detail::require(static_cast<std::size_t>(X.cols()) == feature_width(), "DirectModel: dimension mismatch");
    Matrix in(X.rows(), X.cols() + 1);
    in.leftCols(X.cols()) = scaler.apply(X);
    in.col(X.cols()).setConstant(static_cast<double>(w));
    return mlp_forward(net, in).output.col(0);
  }

  /// f(x, 1) - f(x, 0)
  Vector predict_ite(const Matrix& X) const { return outcome(X, 1) - outcome(X, 0); }
  double predict_ite(const Vector& x) const { return predict_ite(as_row(x))(0); }
};

/// Trains the direct model with uniform dropout on every hidden layer. Each
/// epoch is one shuffled pass over all rows, mini-batched as in train_dcn.
inline DirectModel train_direct_nn(const ObservationalDataset& ds, const DirectConfig& arch, const TrainConfig& cfg,
                                   Rng& rng, std::vector<double>* loss_log = nullptr) {
  cfg.validate();
  ds.validate();
  detail::require(ds.n() >= 1, "train_direct_nn: empty dataset");
  detail::require(arch.dropout >= 0.0 && arch.dropout < 1.0, "train_direct_nn: dropout must lie in [0, 1)");
  detail::require(!arch.hidden.empty(), "train_direct_nn: need at least one hidden layer");

  DirectModel m;
  m.scaler = FeatureScaler::fit(ds.X);
  std::vector<std::size_t> widths = arch.hidden;
  widths.push_back(1);
  m.net = make_mlp(ds.d() + 1, widths, Activation::ReLU, Activation::Identity, false, rng);

  Matrix in(ds.X.rows(), ds.X.cols() + 1);
  in.leftCols(ds.X.cols()) = m.scaler.apply(ds.X);
  in.col(ds.X.cols()) = ds.W.cast<double>();

  AdamState adam = AdamState::for_params(m.net, cfg.adam);
  const auto widths_masked = m.net.hidden_widths();
  const double keep = 1.0 - arch.dropout;
  for (std::size_t k = 1; k <= cfg.epochs; ++k) {
    const auto order = permutation(ds.n(), rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(stop));
      const Matrix xb = gather_rows(in, idx);
      const Vector yb = gather(ds.Y, idx);
      const BatchMask mask = sample_batch_mask(Vector::Constant(xb.rows(), keep), widths_masked, rng);
      const ForwardCache c = mlp_forward(m.net, xb, &mask);
      const LossAndGrad loss = mse_loss(c.output, yb);
      if (!std::isfinite(loss.loss)) throw NumericFailure("train_direct_nn: non-finite loss");
      adam_step(m.net, mlp_backward(m.net, c, loss.grads.input_grad), adam);
    }
    if (loss_log) {
      const Vector pred = mlp_forward(m.net, in).output.col(0);
      loss_log->push_back((pred - ds.Y).squaredNorm() / static_cast<double>(ds.n()));
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// DCN with uniform dropout

/// train_dcn with keep probability 1 - dropout_prob for every example; no
/// propensity model is consulted.
inline DCNParams train_dcn_fixed_dropout(const ObservationalDataset& ds, double dropout_prob, const TrainConfig& cfg,
                                         Rng& rng, const TrainHooks& hooks = {}) {
  detail::require(dropout_prob >= 0.0 && dropout_prob < 1.0, "dropout_prob must lie in [0, 1)");
  return detail::train_alternating(ds, Vector::Constant(ds.Y.size(), 1.0 - dropout_prob), cfg, rng, hooks);
}

}  // namespace dcnpd
