#pragma once

// Repeated train/test experiments over dataset realizations, with JSON
// configuration and JSON + CSV reporting.
//
// Every repetition r derives its seed from (master seed, r) only. Dataset
// realization, split and model streams hang off that seed, so two models run
// with the same master seed see identical data and splits, and adding
// repetitions never changes earlier ones.

#include "dcnpd/baselines.hpp"
#include "dcnpd/data.hpp"
#include "dcnpd/dcn.hpp"
#include "dcnpd/propensity.hpp"
#include "dcnpd/serialize.hpp"
#include "dcnpd/training.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <variant>
#include <vector>

namespace dcnpd {

inline constexpr int kReportSchemaVersion = 1;

/// Invalid experiment configuration (the CLI maps this to exit code 2).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline double ite_mse(const Vector& predicted, const Vector& truth) {
  detail::require(predicted.size() == truth.size(), "ite_mse: length mismatch");
  detail::require(predicted.size() >= 1, "ite_mse: empty input");
  return (predicted - truth).squaredNorm() / static_cast<double>(predicted.size());
}

struct ModelSpec {
  enum class Kind { DcnPd, DcnFixed, Nn4, Knn };
  Kind kind = Kind::DcnPd;
  double dropout = 0.0;  // DcnFixed
  std::size_t k = 5;     // Knn

  /// "dcn-pd", "dcn-fixed:<p>", "nn4", "knn" or "knn:<k>".
  static ModelSpec parse(std::string_view s) {
    ModelSpec m;
    auto suffix = [&](std::string_view prefix) { return s.substr(prefix.size()); };
    if (s == "dcn-pd") {
      m.kind = Kind::DcnPd;
    } else if (s.rfind("dcn-fixed:", 0) == 0) {
      m.kind = Kind::DcnFixed;
      const auto v = suffix("dcn-fixed:");
      const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), m.dropout);
      if (v.empty() || ec != std::errc() || p != v.data() + v.size() || !(m.dropout >= 0.0 && m.dropout < 1.0))
        throw ConfigError("model '" + std::string(s) + "': dropout must be a number in [0, 1)");
    } else if (s == "nn4") {
      m.kind = Kind::Nn4;
    } else if (s == "knn" || s.rfind("knn:", 0) == 0) {
      m.kind = Kind::Knn;
      if (s != "knn") {
        const auto v = suffix("knn:");
        const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), m.k);
        if (v.empty() || ec != std::errc() || p != v.data() + v.size() || m.k < 1)
          throw ConfigError("model '" + std::string(s) + "': k must be a positive integer");
      }
    } else {
      throw ConfigError("unknown model '" + std::string(s) + "' (expected dcn-pd, dcn-fixed:<p>, nn4, knn:<k>)");
    }
    return m;
  }

  std::string name() const {
    switch (kind) {
      case Kind::DcnPd: return "dcn-pd";
      case Kind::DcnFixed: return "dcn-fixed:" + detail::format_double(dropout);
      case Kind::Nn4: return "nn4";
      case Kind::Knn: return "knn:" + std::to_string(k);
    }
    return "dcn-pd";
  }
};

struct SyntheticSource {
  SyntheticConfig config;
  bool fixed_covariates = false;  // keep X, W from the first draw; redraw outcomes only
};

struct CsvSource {
  std::vector<std::string> paths;  // repetition r reads paths[r % size]
  CsvSchema schema;
};

struct ExperimentConfig {
  std::variant<SyntheticSource, CsvSource> source = SyntheticSource{};
  ModelSpec model;
  TrainConfig train;
  PropensityConfig propensity;
  DirectConfig direct;
  std::size_t mc_samples = 100;  // 0 = maskless prediction for dcn-pd
  std::size_t repetitions = 1;
  double train_fraction = 0.8;
  bool fixed_split = false;
  std::uint64_t seed = 0;
  std::string output;
  std::size_t threads = 1;  // 0 = one per hardware thread

  void validate() const {
    auto check = [](bool ok, const std::string& what) {
      if (!ok) throw ConfigError(what);
    };
    check(repetitions >= 1, "repetitions must be >= 1");
    check(train_fraction > 0.0 && train_fraction < 1.0, "train_fraction must lie in (0, 1)");
    try {
      train.validate();
      if (auto* s = std::get_if<SyntheticSource>(&source)) s->config.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    if (auto* c = std::get_if<CsvSource>(&source)) check(!c->paths.empty(), "csv source needs at least one path");
    check(propensity.epochs >= 1, "propensity.epochs must be >= 1");
    check(direct.dropout >= 0.0 && direct.dropout < 1.0, "nn4.dropout must lie in [0, 1)");
  }
};

// ---------------------------------------------------------------------------
// Config JSON

namespace detail {

template <class T>
void read_opt(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config field '") + key + "': " + e.what());
  }
}

inline const json& sub(const json& j, const char* key) {
  static const json empty = json::object();
  if (!j.contains(key)) return empty;
  if (!j.at(key).is_object()) throw ConfigError(std::string("config field '") + key + "' must be an object");
  return j.at(key);
}

}  // namespace detail

inline ExperimentConfig experiment_config_from_json(const json& j, bool require_seed = true) {
  if (!j.is_object()) throw ConfigError("experiment config must be a JSON object");
  ExperimentConfig c;
  if (j.contains("schema_version") && j.at("schema_version") != kReportSchemaVersion)
    throw ConfigError("unsupported config schema_version");

  const json& src = detail::sub(j, "source");
  std::string type = "synthetic";
  detail::read_opt(src, "type", type);
  if (type == "synthetic") {
    SyntheticSource s;
    detail::read_opt(src, "n", s.config.n);
    detail::read_opt(src, "d", s.config.d);
    detail::read_opt(src, "bias_strength", s.config.bias_strength);
    detail::read_opt(src, "noise_std", s.config.noise_std);
    std::string surface(to_string(s.config.surface));
    detail::read_opt(src, "surface", surface);
    try {
      s.config.surface = surface_from_string(surface);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    detail::read_opt(src, "fixed_covariates", s.fixed_covariates);
    c.source = s;
  } else if (type == "csv") {
    CsvSource s;
    if (src.contains("path")) s.paths.push_back(src.at("path").get<std::string>());
    detail::read_opt(src, "paths", s.paths);
    const json& cols = detail::sub(src, "columns");
    detail::read_opt(cols, "features", s.schema.features);
    detail::read_opt(cols, "treatment", s.schema.treatment);
    detail::read_opt(cols, "outcome", s.schema.outcome);
    detail::read_opt(cols, "mu0", s.schema.mu0);
    detail::read_opt(cols, "mu1", s.schema.mu1);
    c.source = s;
  } else {
    throw ConfigError("source.type must be 'synthetic' or 'csv'");
  }

  std::string model = c.model.name();
  detail::read_opt(j, "model", model);
  c.model = ModelSpec::parse(model);

  const json& t = detail::sub(j, "train");
  detail::read_opt(t, "epochs", c.train.epochs);
  detail::read_opt(t, "gamma", c.train.gamma);
  detail::read_opt(t, "batch_size", c.train.batch_size);
  detail::read_opt(t, "learning_rate", c.train.adam.lr);
  detail::read_opt(t, "beta1", c.train.adam.beta1);
  detail::read_opt(t, "beta2", c.train.adam.beta2);
  detail::read_opt(t, "epsilon", c.train.adam.epsilon);
  detail::read_opt(t, "shared_layers", c.train.shape.shared);
  detail::read_opt(t, "head_layers", c.train.shape.head);

  const json& p = detail::sub(j, "propensity");
  detail::read_opt(p, "hidden_layers", c.propensity.hidden);
  detail::read_opt(p, "epochs", c.propensity.epochs);
  detail::read_opt(p, "learning_rate", c.propensity.adam.lr);

  const json& n = detail::sub(j, "nn4");
  detail::read_opt(n, "hidden_layers", c.direct.hidden);
  detail::read_opt(n, "dropout", c.direct.dropout);

  detail::read_opt(j, "mc_samples", c.mc_samples);
  detail::read_opt(j, "repetitions", c.repetitions);
  detail::read_opt(j, "train_fraction", c.train_fraction);
  detail::read_opt(j, "fixed_split", c.fixed_split);
  detail::read_opt(j, "output", c.output);
  detail::read_opt(j, "threads", c.threads);
  if (j.contains("seed")) {
    detail::read_opt(j, "seed", c.seed);
  } else if (require_seed) {
    throw ConfigError("config must contain a seed");
  }
  c.validate();
  return c;
}

inline json to_json(const ExperimentConfig& c) {
  json src;
  if (const auto* s = std::get_if<SyntheticSource>(&c.source)) {
    src = {{"type", "synthetic"},
           {"n", s->config.n},
           {"d", s->config.d},
           {"bias_strength", s->config.bias_strength},
           {"noise_std", s->config.noise_std},
           {"surface", std::string(to_string(s->config.surface))},
           {"fixed_covariates", s->fixed_covariates}};
  } else {
    const auto& cs = std::get<CsvSource>(c.source);
    src = {{"type", "csv"},
           {"paths", cs.paths},
           {"columns",
            {{"features", cs.schema.features},
             {"treatment", cs.schema.treatment},
             {"outcome", cs.schema.outcome},
             {"mu0", cs.schema.mu0},
             {"mu1", cs.schema.mu1}}}};
  }
  return {{"schema_version", kReportSchemaVersion},
          {"source", src},
          {"model", c.model.name()},
          {"train",
           {{"epochs", c.train.epochs},
            {"gamma", c.train.gamma},
            {"batch_size", c.train.batch_size},
            {"learning_rate", c.train.adam.lr},
            {"beta1", c.train.adam.beta1},
            {"beta2", c.train.adam.beta2},
            {"epsilon", c.train.adam.epsilon},
            {"shared_layers", c.train.shape.shared},
            {"head_layers", c.train.shape.head}}},
          {"propensity",
           {{"hidden_layers", c.propensity.hidden},
            {"epochs", c.propensity.epochs},
            {"learning_rate", c.propensity.adam.lr}}},
          {"nn4", {{"hidden_layers", c.direct.hidden}, {"dropout", c.direct.dropout}}},
          {"mc_samples", c.mc_samples},
          {"repetitions", c.repetitions},
          {"train_fraction", c.train_fraction},
          {"fixed_split", c.fixed_split},
          {"seed", c.seed},
          {"output", c.output},
          {"threads", c.threads}};
}

// ---------------------------------------------------------------------------
// Running

/// Builds the dataset realization for repetition `rep`.
inline ObservationalDataset realize_dataset(const ExperimentConfig& cfg, std::size_t rep,
                                            const std::vector<ObservationalDataset>& csv_cache = {}) {
  const std::uint64_t rep_seed = derive_seed(cfg.seed, rep);
  if (const auto* s = std::get_if<SyntheticSource>(&cfg.source)) {
    Rng rng = make_rng(rep_seed, Stream::Data);
    if (!s->fixed_covariates) return generate_synthetic(s->config, rng);
    Rng cov = make_rng(cfg.seed, Stream::Data);
    ObservationalDataset ds = draw_covariates(s->config, cov);
    draw_outcomes(ds, s->config, rng);
    return ds;
  }
  const auto& paths = std::get<CsvSource>(cfg.source).paths;
  if (!csv_cache.empty()) return csv_cache[rep % csv_cache.size()];
  return load_csv(paths[rep % paths.size()], std::get<CsvSource>(cfg.source).schema);
}

/// Trains the configured model on `train` and returns its ITE predictions for `test` rows.
inline Vector fit_predict_ite(const ExperimentConfig& cfg, const ObservationalDataset& train,
                              const ObservationalDataset& test, std::uint64_t rep_seed) {
  Rng model_rng = make_rng(rep_seed, Stream::Model);
  switch (cfg.model.kind) {
    case ModelSpec::Kind::DcnPd: {
      Rng prop_rng = make_rng(rep_seed, Stream::Propensity);
      const PropensityModel prop = train_propensity(train, cfg.propensity, prop_rng);
      const DCNParams net = train_dcn(train, prop, cfg.train, model_rng);
      if (cfg.mc_samples == 0) return predict_deterministic(net, test.X).ite();
      Rng inf_rng = make_rng(rep_seed, Stream::Inference);
      const DropoutSchedule schedule{cfg.train.gamma};
      Vector out(test.X.rows());
      for (Eigen::Index i = 0; i < test.X.rows(); ++i)
        out(i) = estimate_ite(net, prop, schedule, test.X.row(i).transpose(), cfg.mc_samples, inf_rng).mean;
      return out;
    }
    case ModelSpec::Kind::DcnFixed:
      return predict_deterministic(train_dcn_fixed_dropout(train, cfg.model.dropout, cfg.train, model_rng), test.X)
          .ite();
    case ModelSpec::Kind::Nn4: return train_direct_nn(train, cfg.direct, cfg.train, model_rng).predict_ite(test.X);
    case ModelSpec::Kind::Knn: return KnnModel::fit(train, KnnConfig{cfg.model.k}).predict_ite(test.X);
  }
  throw std::logic_error("unhandled model kind");
}

/// Test-set ITE MSE of repetition `rep`.
inline double run_repetition(const ExperimentConfig& cfg, std::size_t rep,
                             const std::vector<ObservationalDataset>& csv_cache = {}) {
  const std::uint64_t rep_seed = derive_seed(cfg.seed, rep);
  const ObservationalDataset ds = realize_dataset(cfg, rep, csv_cache);
  if (!ds.has_truth()) throw std::invalid_argument("dataset has no ground-truth effects (mu0/mu1) to evaluate against");
  Rng split_rng = cfg.fixed_split ? make_rng(cfg.seed, Stream::Split) : make_rng(rep_seed, Stream::Split);
  const auto [train, test] = train_test_split(ds, cfg.train_fraction, split_rng);
  return ite_mse(fit_predict_ite(cfg, train, test, rep_seed), *test.true_ite);
}

struct ExperimentReport {
  std::string model;
  std::vector<double> mse;  // indexed by repetition
  double mean = 0.0;
  double standard_error = 0.0;  // sample std / sqrt(R); 0 when R = 1
  json config;
  double duration_seconds = 0.0;
};

inline void aggregate(ExperimentReport& r) {
  const double R = static_cast<double>(r.mse.size());
  double s = 0.0;
  for (double v : r.mse) s += v;
  r.mean = s / R;
  double ss = 0.0;
  for (double v : r.mse) ss += (v - r.mean) * (v - r.mean);
  r.standard_error = r.mse.size() > 1 ? std::sqrt(ss / (R - 1.0)) / std::sqrt(R) : 0.0;
}

/// Runs every repetition (concurrently when cfg.threads != 1) and aggregates in
/// repetition order. `on_done(rep, mse)` is called as repetitions finish.
inline ExperimentReport run_experiment(const ExperimentConfig& cfg,
                                       const std::function<void(std::size_t, double)>& on_done = {}) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();

  std::vector<ObservationalDataset> csv_cache;
  if (const auto* c = std::get_if<CsvSource>(&cfg.source))
    for (const auto& p : c->paths) csv_cache.push_back(load_csv(p, c->schema));

  ExperimentReport report;
  report.model = cfg.model.name();
  report.config = to_json(cfg);
  report.mse.assign(cfg.repetitions, 0.0);

  std::vector<std::exception_ptr> errors(cfg.repetitions);
  std::atomic<std::size_t> next{0};
  std::mutex done_mutex;
  auto worker = [&] {
    for (std::size_t r; (r = next.fetch_add(1)) < cfg.repetitions;) {
      try {
        report.mse[r] = run_repetition(cfg, r, csv_cache);
        if (on_done) {
          std::lock_guard lock(done_mutex);
          on_done(r, report.mse[r]);
        }
      } catch (...) {
        errors[r] = std::current_exception();
      }
    }
  };
  std::size_t threads = cfg.threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : cfg.threads;
  threads = std::min(threads, cfg.repetitions);
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < threads; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (std::size_t r = 0; r < errors.size(); ++r) {
    if (!errors[r]) continue;
    try {
      std::rethrow_exception(errors[r]);
    } catch (const std::exception& e) {
      throw std::runtime_error("repetition " + std::to_string(r) + ": " + e.what());
    }
  }

  aggregate(report);
  report.duration_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

// ---------------------------------------------------------------------------
// Reporting

/// Report JSON without the wall-clock field; deterministic for a fixed config.
inline json report_body_json(const ExperimentReport& r) {
  return {{"schema_version", kReportSchemaVersion},
          {"model", r.model},
          {"repetitions", r.mse.size()},
          {"per_repetition_mse", r.mse},
          {"mean_mse", r.mean},
          {"standard_error", r.standard_error},
          {"config", r.config}};
}

inline json report_to_json(const ExperimentReport& r) {
  json j = report_body_json(r);
  j["duration_seconds"] = r.duration_seconds;
  return j;
}

inline ExperimentReport report_from_json(const json& j) {
  ExperimentReport r;
  if (detail::get_field<int>(j, "schema_version") != kReportSchemaVersion)
    throw SchemaError("unsupported report schema_version");
  r.model = detail::get_field<std::string>(j, "model");
  r.mse = detail::get_field<std::vector<double>>(j, "per_repetition_mse");
  r.mean = detail::get_field<double>(j, "mean_mse");
  r.standard_error = detail::get_field<double>(j, "standard_error");
  r.config = j.value("config", json::object());
  r.duration_seconds = j.value("duration_seconds", 0.0);
  return r;
}

inline void write_report_csv(std::ostream& out, const ExperimentReport& r) {
  out << "schema_version,repetition,mse\n";
  for (std::size_t i = 0; i < r.mse.size(); ++i)
    out << kReportSchemaVersion << ',' << i << ',' << detail::format_double(r.mse[i]) << '\n';
}

/// Per-repetition MSEs from the CSV written by write_report_csv.
inline std::vector<double> read_report_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || detail::trim(line) != "schema_version,repetition,mse")
    throw SchemaError("per-repetition CSV has an unexpected header");
  std::vector<double> out;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != 3) throw ParseError(row, cells.size(), "expected 3 cells");
    if (detail::parse_cell(cells[0], row, 1) != kReportSchemaVersion) throw SchemaError("CSV schema_version mismatch");
    const auto idx = static_cast<std::size_t>(detail::parse_cell(cells[1], row, 2));
    if (idx != out.size()) throw ValidationError("repetitions out of order in CSV");
    out.push_back(detail::parse_cell(cells[2], row, 3));
  }
  return out;
}

struct ReportPaths {
  std::filesystem::path json;
  std::filesystem::path csv;
};

/// Writes report.json and per_repetition.csv into `dir`, creating it if needed.
inline ReportPaths emit_report(const ExperimentReport& r, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
  ReportPaths p{dir / "report.json", dir / "per_repetition.csv"};
  write_json_file(p.json, report_to_json(r));
  std::ofstream out(p.csv);
  if (!out) throw IoError("cannot write '" + p.csv.string() + "'");
  write_report_csv(out, r);
  if (!out) throw IoError("write failed for '" + p.csv.string() + "'");
  return p;
}

}  // namespace dcnpd
