#pragma once

// Observational datasets: the (X, W, Y) tuple plus optional ground truth,
// CSV I/O, standardization, train/test splitting and a synthetic generator
// with feature-dependent treatment assignment.

#include "dcnpd/errors.hpp"
#include "dcnpd/matrix.hpp"
#include "dcnpd/rng.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace dcnpd {

struct ObservationalDataset {
  Matrix X;     // n x d
  IndexVector W;  // n, entries in {0, 1}
  Vector Y;     // factual outcomes
  std::optional<Vector> mu0, mu1, true_ite;

  std::size_t n() const { return static_cast<std::size_t>(X.rows()); }
  std::size_t d() const { return static_cast<std::size_t>(X.cols()); }
  bool has_truth() const { return true_ite.has_value(); }

  std::size_t num_treated() const { return static_cast<std::size_t>(W.sum()); }

  /// Sets true_ite = mu1 - mu0. Both means must be present.
  void set_truth(Vector m0, Vector m1) {
    detail::require(m0.size() == m1.size(), "set_truth: mu0/mu1 length mismatch");
    true_ite = m1 - m0;
    mu0 = std::move(m0);
    mu1 = std::move(m1);
  }

  void validate() const {
    const auto rows = X.rows();
    detail::require(W.size() == rows && Y.size() == rows, "dataset columns have unequal lengths");
    for (Eigen::Index i = 0; i < W.size(); ++i)
      if (W(i) != 0 && W(i) != 1) throw ValidationError("treatment must be 0 or 1");
    detail::require(mu0.has_value() == mu1.has_value(), "mu0 and mu1 must be both present or both absent");
    if (mu0) {
      detail::require(mu0->size() == rows && mu1->size() == rows, "ground-truth columns have wrong length");
      detail::require(true_ite && true_ite->size() == rows, "true_ite missing");
    }
  }

  template <class IndexRange>
  ObservationalDataset subset(const IndexRange& idx) const {
    ObservationalDataset s;
    s.X = gather_rows(X, idx);
    s.W = gather(W, idx);
    s.Y = gather(Y, idx);
    if (mu0) {
      s.mu0 = gather(*mu0, idx);
      s.mu1 = gather(*mu1, idx);
      s.true_ite = gather(*true_ite, idx);
    }
    return s;
  }
};

// ---------------------------------------------------------------------------
// Standardization

/// Per-feature affine map x -> (x - mean) / std.
struct FeatureScaler {
  Vector mean;
  Vector std;

  bool empty() const { return mean.size() == 0; }

  Matrix apply(const Matrix& X) const {
    if (empty()) return X;
    detail::require(X.cols() == mean.size(), "FeatureScaler: dimension mismatch");
    Matrix out = X;
    out.rowwise() -= mean.transpose();
    out.array().rowwise() /= std.transpose().array();
    return out;
  }

  Vector apply(const Vector& x) const {
    if (empty()) return x;
    detail::require(x.size() == mean.size(), "FeatureScaler: dimension mismatch");
    return ((x - mean).array() / std.array()).matrix();
  }

  /// Population mean/std per column; zero-variance columns get std = 1.
  static FeatureScaler fit(const Matrix& X) {
    detail::require(X.rows() >= 1, "FeatureScaler::fit: empty matrix");
    FeatureScaler s;
    s.mean = X.colwise().mean().transpose();
    s.std.resize(X.cols());
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
      const double var = (X.col(j).array() - s.mean(j)).square().mean();
      const double sd = std::sqrt(var);
      s.std(j) = sd > 0.0 ? sd : 1.0;
    }
    return s;
  }
};

inline std::pair<ObservationalDataset, FeatureScaler> standardize(const ObservationalDataset& ds) {
  detail::require(ds.n() >= 2, "standardize: need at least 2 rows");
  FeatureScaler s = FeatureScaler::fit(ds.X);
  ObservationalDataset out = ds;
  out.X = s.apply(ds.X);
  // Constant columns: the centered values are exact zeros already.
  return {std::move(out), std::move(s)};
}

// ---------------------------------------------------------------------------
// Treated/control partition and splitting

struct BatchSplit {
  ObservationalDataset treated;
  ObservationalDataset control;
  std::vector<std::size_t> treated_rows;
  std::vector<std::size_t> control_rows;
};

/// Partitions rows by treatment indicator, preserving row order within each side.
inline BatchSplit split_batches(const ObservationalDataset& ds) {
  BatchSplit s;
  for (std::size_t i = 0; i < ds.n(); ++i)
    (ds.W(static_cast<Eigen::Index>(i)) == 1 ? s.treated_rows : s.control_rows).push_back(i);
  s.treated = ds.subset(s.treated_rows);
  s.control = ds.subset(s.control_rows);
  return s;
}

/// Fisher-Yates permutation of 0..n-1.
inline std::vector<std::size_t> permutation(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

struct IndexSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

inline std::size_t train_size(std::size_t n, double fraction) {
  return static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
}

/// Uniform shuffle, then the first ceil(fraction * n) indices go to train.
inline IndexSplit split_indices(std::size_t n, double fraction, Rng& rng) {
  detail::require(fraction > 0.0 && fraction < 1.0, "train fraction must lie in (0, 1)");
  const std::size_t k = train_size(n, fraction);
  detail::require(k >= 1 && k < n, "split would leave the train or test side empty");
  auto perm = permutation(n, rng);
  IndexSplit s;
  s.train.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(k));
  s.test.assign(perm.begin() + static_cast<std::ptrdiff_t>(k), perm.end());
  return s;
}

inline std::pair<ObservationalDataset, ObservationalDataset> train_test_split(
    const ObservationalDataset& ds, double fraction, Rng& rng) {
  const auto s = split_indices(ds.n(), fraction, rng);
  return {ds.subset(s.train), ds.subset(s.test)};
}

// ---------------------------------------------------------------------------
// CSV

/// Column mapping. An empty `features` list means "every column that is not
/// one of the named columns", in header order.
struct CsvSchema {
  std::vector<std::string> features;
  std::string treatment = "w";
  std::string outcome = "y";
  std::string mu0 = "mu0";
  std::string mu1 = "mu1";
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '"')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' || s.back() == '"'))
    s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    cells.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return cells;
}

inline double parse_cell(std::string_view cell, std::size_t row, std::size_t col) {
  double v = 0.0;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  if (!cell.empty() && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (cell.empty() || ec != std::errc() || ptr != last)
    throw ParseError(row, col, "not a number: '" + std::string(cell) + "'");
  if (!std::isfinite(v)) throw ParseError(row, col, "non-finite value");
  return v;
}

inline std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace detail

/// Parses CSV text with one header row. Rows and columns in errors are 1-based,
/// with the header as row 1.
inline ObservationalDataset parse_csv(std::istream& in, const CsvSchema& schema = {}) {
  std::string line;
  if (!std::getline(in, line)) throw SchemaError("CSV is empty (no header row)");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // UTF-8 BOM
  const auto header_views = detail::split_csv_line(line);
  std::vector<std::string> header(header_views.begin(), header_views.end());

  auto find = [&](const std::string& name) -> std::optional<std::size_t> {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) return std::nullopt;
    return static_cast<std::size_t>(it - header.begin());
  };
  auto require_col = [&](const std::string& name) {
    auto c = find(name);
    if (!c) throw SchemaError("missing column '" + name + "'");
    return *c;
  };

  const std::size_t w_col = require_col(schema.treatment);
  const std::size_t y_col = require_col(schema.outcome);
  const auto mu0_col = find(schema.mu0);
  const auto mu1_col = find(schema.mu1);
  if (mu0_col.has_value() != mu1_col.has_value())
    throw SchemaError("columns '" + schema.mu0 + "' and '" + schema.mu1 + "' must appear together");

  std::vector<std::size_t> f_cols;
  if (schema.features.empty()) {
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (c == w_col || c == y_col || (mu0_col && c == *mu0_col) || (mu1_col && c == *mu1_col)) continue;
      f_cols.push_back(c);
    }
  } else {
    for (const auto& f : schema.features) f_cols.push_back(require_col(f));
  }
  if (f_cols.empty()) throw SchemaError("no feature columns");

  std::vector<double> xs, ys, m0, m1;
  std::vector<int> ws;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size())
      throw ParseError(row, cells.size(), "expected " + std::to_string(header.size()) + " cells");
    for (auto c : f_cols) xs.push_back(detail::parse_cell(cells[c], row, c + 1));
    const double w = detail::parse_cell(cells[w_col], row, w_col + 1);
    if (w != 0.0 && w != 1.0)
      throw ValidationError("row " + std::to_string(row) + ": treatment value " + std::string(cells[w_col]) +
                            " is not 0 or 1");
    ws.push_back(static_cast<int>(w));
    ys.push_back(detail::parse_cell(cells[y_col], row, y_col + 1));
    if (mu0_col) {
      m0.push_back(detail::parse_cell(cells[*mu0_col], row, *mu0_col + 1));
      m1.push_back(detail::parse_cell(cells[*mu1_col], row, *mu1_col + 1));
    }
  }

  const auto n = static_cast<Eigen::Index>(ws.size());
  const auto d = static_cast<Eigen::Index>(f_cols.size());
  ObservationalDataset ds;
  ds.X = Eigen::Map<const Matrix>(xs.data(), n, d);
  ds.W = Eigen::Map<const IndexVector>(ws.data(), n);
  ds.Y = Eigen::Map<const Vector>(ys.data(), n);
  if (mu0_col) ds.set_truth(Eigen::Map<const Vector>(m0.data(), n), Eigen::Map<const Vector>(m1.data(), n));
  ds.validate();
  return ds;
}

inline ObservationalDataset load_csv(const std::filesystem::path& path, const CsvSchema& schema = {}) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return parse_csv(in, schema);
}

/// Writes x1..xd, w, y[, mu0, mu1] with shortest round-trip number formatting.
inline void write_csv(std::ostream& out, const ObservationalDataset& ds) {
  for (std::size_t j = 0; j < ds.d(); ++j) out << 'x' << (j + 1) << ',';
  out << "w,y";
  if (ds.mu0) out << ",mu0,mu1";
  out << '\n';
  for (Eigen::Index i = 0; i < ds.X.rows(); ++i) {
    for (Eigen::Index j = 0; j < ds.X.cols(); ++j) out << detail::format_double(ds.X(i, j)) << ',';
    out << ds.W(i) << ',' << detail::format_double(ds.Y(i));
    if (ds.mu0) out << ',' << detail::format_double((*ds.mu0)(i)) << ',' << detail::format_double((*ds.mu1)(i));
    out << '\n';
  }
}

inline void save_csv(const std::filesystem::path& path, const ObservationalDataset& ds) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  write_csv(out, ds);
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

// ---------------------------------------------------------------------------
// Synthetic generator

enum class Surface {
  LinearOffset,  // mu0 = x'b, mu1 = x'b + 2 + x1
  ExpSurface     // mu0 = exp((x + 1/2)'b), mu1 = x'b
};

inline std::string_view to_string(Surface s) {
  return s == Surface::LinearOffset ? "linear" : "exp";
}

inline Surface surface_from_string(std::string_view s) {
  if (s == "linear" || s == "LinearOffset") return Surface::LinearOffset;
  if (s == "exp" || s == "ExpSurface") return Surface::ExpSurface;
  throw std::invalid_argument("unknown surface '" + std::string(s) + "'");
}

struct SyntheticConfig {
  std::size_t n = 750;
  std::size_t d = 25;
  double bias_strength = 3.0;  // scale of the propensity logit
  double noise_std = 1.0;
  Surface surface = Surface::ExpSurface;
  std::uint64_t seed = 0;

  void validate() const {
    detail::require(n >= 2, "synthetic n must be >= 2");
    detail::require(d >= 1, "synthetic d must be >= 1");
    detail::require(bias_strength >= 0.0 && std::isfinite(bias_strength), "bias_strength must be >= 0");
    detail::require(noise_std >= 0.0 && std::isfinite(noise_std), "noise_std must be >= 0");
  }
};

/// Assignment direction a: the normalized all-ones vector.
inline Vector assignment_direction(std::size_t d) {
  return Vector::Constant(static_cast<Eigen::Index>(d), 1.0 / std::sqrt(static_cast<double>(d)));
}

inline double logistic(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/// X ~ N(0, I); W ~ Bernoulli(logistic(bias_strength * x'a)). Y is left empty.
inline ObservationalDataset draw_covariates(const SyntheticConfig& cfg, Rng& rng) {
  cfg.validate();
  const auto n = static_cast<Eigen::Index>(cfg.n);
  const auto d = static_cast<Eigen::Index>(cfg.d);
  std::normal_distribution<double> normal(0.0, 1.0);
  ObservationalDataset ds;
  ds.X.resize(n, d);
  for (Eigen::Index i = 0; i < ds.X.size(); ++i) ds.X.data()[i] = normal(rng);
  const Vector a = assignment_direction(cfg.d);
  const Vector score = ds.X * a;
  ds.W.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) ds.W(i) = uniform01(rng) < logistic(cfg.bias_strength * score(i)) ? 1 : 0;
  ds.Y = Vector::Zero(n);
  return ds;
}

/// Sparse coefficients: each entry from {0, .1, .2, .3, .4} w.p. (.6, .1, .1, .1, .1).
inline Vector draw_coefficients(std::size_t d, Rng& rng) {
  static constexpr double values[] = {0.0, 0.1, 0.2, 0.3, 0.4};
  Vector beta(static_cast<Eigen::Index>(d));
  for (Eigen::Index j = 0; j < beta.size(); ++j) {
    const double u = uniform01(rng);
    const int k = u < 0.6 ? 0 : 1 + std::min(3, static_cast<int>((u - 0.6) / 0.1));
    beta(j) = values[k];
  }
  return beta;
}

/// Draws fresh coefficients and noise; fills mu0, mu1, true_ite and Y. Returns the coefficients.
inline Vector draw_outcomes(ObservationalDataset& ds, const SyntheticConfig& cfg, Rng& rng) {
  detail::require(ds.X.cols() >= 1 && ds.W.size() == ds.X.rows(), "draw_outcomes: covariates missing");
  const Vector beta = draw_coefficients(ds.d(), rng);
  const Vector lin = ds.X * beta;
  Vector m0, m1;
  switch (cfg.surface) {
    case Surface::LinearOffset:
      m0 = lin;
      m1 = lin.array() + 2.0 + ds.X.col(0).array();
      break;
    case Surface::ExpSurface:
      m0 = ((ds.X.array() + 0.5).matrix() * beta).array().exp();
      m1 = lin;
      break;
  }
  std::normal_distribution<double> normal(0.0, 1.0);
  ds.Y.resize(ds.X.rows());
  for (Eigen::Index i = 0; i < ds.X.rows(); ++i) {
    const double mean = ds.W(i) == 1 ? m1(i) : m0(i);
    ds.Y(i) = cfg.noise_std > 0.0 ? mean + cfg.noise_std * normal(rng) : mean;
  }
  ds.set_truth(std::move(m0), std::move(m1));
  return beta;
}

inline ObservationalDataset generate_synthetic(const SyntheticConfig& cfg, Rng& rng) {
  ObservationalDataset ds = draw_covariates(cfg, rng);
  draw_outcomes(ds, cfg, rng);
  return ds;
}

inline ObservationalDataset generate_synthetic(const SyntheticConfig& cfg) {
  Rng rng(cfg.seed);
  return generate_synthetic(cfg, rng);
}

}  // namespace dcnpd
