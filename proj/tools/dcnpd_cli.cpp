// dcnpd: generate data, train and evaluate treatment-effect models, run benchmarks.
//
// Exit status: 0 ok, 2 bad usage/config/input, 1 anything else.

#include "dcnpd/dcnpd.hpp"

#include "CLI11.hpp"

#include <fstream>
#include <iostream>
#include <optional>

using namespace dcnpd;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 1;

std::filesystem::path sidecar_path(const std::filesystem::path& csv) {
  auto p = csv;
  p.replace_extension();
  return std::filesystem::path(p.string() + ".config.json");
}

// ---------------------------------------------------------------------------
// generate

struct GenerateArgs {
  SyntheticConfig cfg;
  std::string surface = "exp";
  std::string out;
};

int run_generate(const GenerateArgs& a) {
  SyntheticConfig cfg = a.cfg;
  cfg.surface = surface_from_string(a.surface);
  Rng rng(cfg.seed);
  ObservationalDataset ds = draw_covariates(cfg, rng);
  const Vector beta = draw_outcomes(ds, cfg, rng);
  save_csv(a.out, ds);

  const json meta = {{"schema_version", kModelSchemaVersion},
                     {"n", cfg.n},
                     {"d", cfg.d},
                     {"bias_strength", cfg.bias_strength},
                     {"noise_std", cfg.noise_std},
                     {"surface", std::string(to_string(cfg.surface))},
                     {"seed", cfg.seed},
                     {"beta", std::vector<double>(beta.data(), beta.data() + beta.size())},
                     {"num_treated", ds.num_treated()}};
  write_json_file(sidecar_path(a.out), meta);
  std::cout << "wrote " << ds.n() << " rows (" << ds.num_treated() << " treated) to " << a.out << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string data;
  std::string model = "dcn-pd";
  std::string out;
  std::string log;
  std::uint64_t seed = 0;
  TrainConfig train;
  PropensityConfig propensity;
  DirectConfig direct;
};

int run_train(const TrainArgs& a) {
  const ModelSpec spec = ModelSpec::parse(a.model);
  const ObservationalDataset ds = load_csv(a.data);
  std::ofstream log_file;
  TrainHooks hooks;
  if (!a.log.empty()) {
    log_file.open(a.log);
    if (!log_file) throw IoError("cannot write '" + a.log + "'");
    hooks = json_epoch_logger(log_file);
  }

  json doc = {{"schema_version", kModelSchemaVersion}, {"model", spec.name()}};
  Rng model_rng = make_rng(a.seed, Stream::Model);
  switch (spec.kind) {
    case ModelSpec::Kind::DcnPd: {
      Rng prop_rng = make_rng(a.seed, Stream::Propensity);
      const PropensityModel prop = train_propensity(ds, a.propensity, prop_rng);
      doc["propensity"] = to_json(prop, DropoutSchedule{a.train.gamma});
      doc["network"] = to_json(train_dcn(ds, prop, a.train, model_rng, hooks));
      break;
    }
    case ModelSpec::Kind::DcnFixed:
      doc["dropout"] = spec.dropout;
      doc["network"] = to_json(train_dcn_fixed_dropout(ds, spec.dropout, a.train, model_rng, hooks));
      break;
    case ModelSpec::Kind::Nn4:
      doc["network"] = to_json(train_direct_nn(ds, a.direct, a.train, model_rng));
      break;
    case ModelSpec::Kind::Knn:
      doc["knn"] = to_json(KnnModel::fit(ds, KnnConfig{spec.k}));
      break;
  }
  write_json_file(a.out, doc);
  std::cout << "trained " << spec.name() << " on " << ds.n() << " rows; model written to " << a.out << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateArgs {
  std::string model;
  std::string data;
  std::string predictions;
  std::size_t mc_samples = 100;
  std::uint64_t seed = 0;
};

struct Predictions {
  Vector ite;
  std::optional<Matrix> intervals;  // std, q025, q975 per row (MC only)
};

Predictions predict_from_document(const json& doc, const Matrix& X, std::size_t mc_samples, std::uint64_t seed) {
  if (detail::get_field<int>(doc, "schema_version") != kModelSchemaVersion)
    throw SchemaError("unsupported model schema_version");
  const ModelSpec spec = ModelSpec::parse(detail::get_field<std::string>(doc, "model"));
  Predictions out;
  switch (spec.kind) {
    case ModelSpec::Kind::DcnPd: {
      const DCNParams net = dcn_from_json(detail::field(doc, "network"));
      const PropensityDocument prop = propensity_from_json(detail::field(doc, "propensity"));
      if (mc_samples == 0) {
        out.ite = predict_deterministic(net, X).ite();
        break;
      }
      Rng rng = make_rng(seed, Stream::Inference);
      out.ite.resize(X.rows());
      Matrix iv(X.rows(), 3);
      for (Eigen::Index i = 0; i < X.rows(); ++i) {
        const ITEEstimate e = estimate_ite(net, prop.model, prop.schedule, X.row(i).transpose(), mc_samples, rng);
        out.ite(i) = e.mean;
        iv.row(i) << e.std, e.q025, e.q975;
      }
      out.intervals = std::move(iv);
      break;
    }
    case ModelSpec::Kind::DcnFixed:
      out.ite = predict_deterministic(dcn_from_json(detail::field(doc, "network")), X).ite();
      break;
    case ModelSpec::Kind::Nn4:
      out.ite = direct_from_json(detail::field(doc, "network")).predict_ite(X);
      break;
    case ModelSpec::Kind::Knn:
      out.ite = knn_from_json(detail::field(doc, "knn")).predict_ite(X);
      break;
  }
  return out;
}

void write_predictions(const std::filesystem::path& path, const Predictions& p) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << "row,ite" << (p.intervals ? ",ite_std,q025,q975" : "") << '\n';
  for (Eigen::Index i = 0; i < p.ite.size(); ++i) {
    out << i << ',' << detail::format_double(p.ite(i));
    if (p.intervals)
      for (Eigen::Index c = 0; c < 3; ++c) out << ',' << detail::format_double((*p.intervals)(i, c));
    out << '\n';
  }
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

int run_evaluate(const EvaluateArgs& a) {
  const json doc = read_json_file(a.model);
  const ObservationalDataset ds = load_csv(a.data);
  const Predictions p = predict_from_document(doc, ds.X, a.mc_samples, a.seed);
  if (!a.predictions.empty()) write_predictions(a.predictions, p);
  if (ds.has_truth()) {
    std::cout << "ite_mse " << detail::format_double(ite_mse(p.ite, *ds.true_ite)) << '\n';
  } else if (a.predictions.empty()) {
    throw ValidationError("data has no mu0/mu1 columns; pass --predictions to write ITE estimates instead");
  } else {
    std::cout << "no ground truth in " << a.data << "; predictions written to " << a.predictions << '\n';
  }
  return 0;
}

// ---------------------------------------------------------------------------
// benchmark

struct BenchmarkArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string model;
  std::optional<std::size_t> reps;
  std::string out;
  std::optional<std::size_t> threads;
  bool quiet = false;
};

int run_benchmark(const BenchmarkArgs& a) {
  json j = a.config.empty() ? json::object() : read_json_file(a.config);
  if (!j.is_object()) throw ConfigError("experiment config must be a JSON object");
  if (a.seed) j["seed"] = *a.seed;
  if (!a.model.empty()) j["model"] = a.model;
  if (a.reps) j["repetitions"] = *a.reps;
  if (!a.out.empty()) j["output"] = a.out;
  if (a.threads) j["threads"] = *a.threads;
  const ExperimentConfig cfg = experiment_config_from_json(j);

  const auto progress = [&](std::size_t r, double mse) {
    if (!a.quiet)
      std::cerr << "repetition " << r << ": mse " << detail::format_double(mse) << '\n';
  };
  const ExperimentReport report = run_experiment(cfg, progress);
  std::cout << report.model << " mean_mse " << detail::format_double(report.mean) << " standard_error "
            << detail::format_double(report.standard_error) << " repetitions " << report.mse.size() << '\n';
  if (!cfg.output.empty()) {
    const ReportPaths p = emit_report(report, cfg.output);
    std::cout << "report: " << p.json.string() << "\nper-repetition: " << p.csv.string() << '\n';
  }
  return 0;
}

void add_training_options(CLI::App* cmd, TrainConfig& t, PropensityConfig& p) {
  cmd->add_option("--epochs", t.epochs, "Alternating epochs K")->capture_default_str()->check(CLI::PositiveNumber);
  cmd->add_option("--gamma", t.gamma, "Dropout schedule gamma")->capture_default_str()->check(CLI::Range(0.0, 1.0));
  cmd->add_option("--batch-size", t.batch_size)->capture_default_str()->check(CLI::PositiveNumber);
  cmd->add_option("--learning-rate", t.adam.lr)->capture_default_str()->check(CLI::PositiveNumber);
  cmd->add_option("--shared-layers", t.shape.shared, "Shared hidden widths")->expected(1, -1);
  cmd->add_option("--head-layers", t.shape.head, "Per-head hidden widths")->expected(0, -1);
  cmd->add_option("--propensity-epochs", p.epochs)->capture_default_str()->check(CLI::PositiveNumber);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Propensity-dropout counterfactual networks for individual treatment effects"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Draw a synthetic observational dataset");
  g->add_option("--n", gen.cfg.n, "Rows")->capture_default_str()->check(CLI::PositiveNumber);
  g->add_option("--d", gen.cfg.d, "Features")->capture_default_str()->check(CLI::PositiveNumber);
  g->add_option("--bias", gen.cfg.bias_strength, "Selection-bias strength")->capture_default_str();
  g->add_option("--noise", gen.cfg.noise_std, "Outcome noise std")->capture_default_str()->check(CLI::NonNegativeNumber);
  g->add_option("--surface", gen.surface, "Response surface")
      ->capture_default_str()
      ->check(CLI::IsMember({"exp", "linear"}));
  g->add_option("--seed", gen.cfg.seed)->required();
  g->add_option("--out", gen.out, "Output CSV")->required();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Fit a model on a CSV dataset");
  t->add_option("--data", tr.data, "Training CSV")->required()->check(CLI::ExistingFile);
  t->add_option("--model", tr.model, "dcn-pd | dcn-fixed:<p> | nn4 | knn:<k>")->capture_default_str();
  t->add_option("--seed", tr.seed)->required();
  t->add_option("--out", tr.out, "Model JSON")->required();
  t->add_option("--log", tr.log, "Per-epoch JSON-lines log");
  add_training_options(t, tr.train, tr.propensity);
  t->add_option("--nn4-layers", tr.direct.hidden)->expected(1, -1);
  t->add_option("--nn4-dropout", tr.direct.dropout)->capture_default_str()->check(CLI::Range(0.0, 0.999999));

  EvaluateArgs ev;
  auto* e = app.add_subcommand("evaluate", "Predict ITEs and score them against mu1 - mu0");
  e->add_option("--model", ev.model, "Model JSON")->required()->check(CLI::ExistingFile);
  e->add_option("--data", ev.data, "Evaluation CSV")->required()->check(CLI::ExistingFile);
  e->add_option("--predictions", ev.predictions, "Write per-row ITE estimates here");
  e->add_option("--mc-samples", ev.mc_samples, "Dropout samples per row (0 = no dropout)")->capture_default_str();
  e->add_option("--seed", ev.seed)->capture_default_str();

  BenchmarkArgs bm;
  auto* b = app.add_subcommand("benchmark", "Repeated train/test experiment");
  b->add_option("--config", bm.config, "Experiment config JSON")->check(CLI::ExistingFile);
  b->add_option("--seed", bm.seed);
  b->add_option("--model", bm.model);
  b->add_option("--reps", bm.reps)->check(CLI::PositiveNumber);
  b->add_option("--out", bm.out, "Report directory");
  b->add_option("--threads", bm.threads, "Worker threads (0 = all cores)");
  b->add_flag("--quiet", bm.quiet, "No per-repetition progress on stderr");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int rc = app.exit(err);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    if (*g) return run_generate(gen);
    if (*t) return run_train(tr);
    if (*e) return run_evaluate(ev);
    if (*b) return run_benchmark(bm);
  } catch (const std::invalid_argument& err) {  // includes ConfigError
    std::cerr << "error: " << err.what() << '\n';
    return kExitUsage;
  } catch (const SchemaError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kExitUsage;
  } catch (const ValidationError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kExitUsage;
  } catch (const ParseError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kExitRuntime;
  }
  return kExitRuntime;
}
