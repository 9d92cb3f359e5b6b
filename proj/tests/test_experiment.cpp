#include "dcnpd/experiment.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace dcnpd;

namespace {

ExperimentConfig quick(const std::string& model, std::size_t reps) {
  ExperimentConfig c;
  SyntheticSource s;
  s.config.n = 120;
  s.config.d = 4;
  c.source = s;
  c.model = ModelSpec::parse(model);
  c.train.epochs = 4;
  c.train.shape = DCNShape{{10, 10}, {5}};
  c.propensity.epochs = 50;
  c.direct.hidden = {10, 10};
  c.mc_samples = 5;
  c.repetitions = reps;
  c.seed = 1234;
  return c;
}

std::filesystem::path fresh_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(dir);
  return dir;
}

}  // namespace

TEST(IteMse, HandCases) {
  Vector a(3);
  a << 1.0, -2.0, 0.5;
  EXPECT_EQ(ite_mse(a, a), 0.0);
  Vector p(2), z = Vector::Zero(2);
  p << 1.0, 2.0;
  EXPECT_EQ(ite_mse(p, z), 2.5);
  EXPECT_DOUBLE_EQ(ite_mse(a.array() + 0.75, a), 0.5625);
  EXPECT_THROW(ite_mse(a, z), std::invalid_argument);
  EXPECT_THROW(ite_mse(Vector(), Vector()), std::invalid_argument);
}

TEST(ModelSpecParse, AcceptedForms) {
  EXPECT_EQ(ModelSpec::parse("dcn-pd").kind, ModelSpec::Kind::DcnPd);
  const ModelSpec f = ModelSpec::parse("dcn-fixed:0.2");
  EXPECT_EQ(f.kind, ModelSpec::Kind::DcnFixed);
  EXPECT_EQ(f.dropout, 0.2);
  EXPECT_EQ(f.name(), "dcn-fixed:0.2");
  EXPECT_EQ(ModelSpec::parse("nn4").kind, ModelSpec::Kind::Nn4);
  EXPECT_EQ(ModelSpec::parse("knn").k, 5u);
  EXPECT_EQ(ModelSpec::parse("knn:7").k, 7u);
  EXPECT_EQ(ModelSpec::parse("knn:7").name(), "knn:7");
}

TEST(ModelSpecParse, RejectedForms) {
  for (const char* s : {"", "dcn", "dcn-fixed:", "dcn-fixed:1", "dcn-fixed:-0.1", "dcn-fixed:0.2x", "knn:0", "knn:",
                        "knn:2.5", "nn5"})
    EXPECT_THROW(ModelSpec::parse(s), ConfigError) << s;
}

TEST(ConfigJson, DefaultsAndOverrides) {
  const json j = json::parse(R"({
    "seed": 7, "model": "dcn-fixed:0.5", "repetitions": 3,
    "source": {"type": "synthetic", "n": 300, "d": 6, "surface": "linear", "noise_std": 0.5},
    "train": {"epochs": 12, "gamma": 0.8, "shared_layers": [30], "head_layers": [10, 10]},
    "propensity": {"epochs": 40},
    "mc_samples": 0
  })");
  const ExperimentConfig c = experiment_config_from_json(j);
  EXPECT_EQ(c.seed, 7u);
  EXPECT_EQ(c.model.kind, ModelSpec::Kind::DcnFixed);
  EXPECT_EQ(c.repetitions, 3u);
  const auto& s = std::get<SyntheticSource>(c.source);
  EXPECT_EQ(s.config.n, 300u);
  EXPECT_EQ(s.config.d, 6u);
  EXPECT_EQ(s.config.surface, Surface::LinearOffset);
  EXPECT_EQ(s.config.noise_std, 0.5);
  EXPECT_EQ(s.config.bias_strength, SyntheticConfig{}.bias_strength);
  EXPECT_EQ(c.train.epochs, 12u);
  EXPECT_EQ(c.train.gamma, 0.8);
  EXPECT_EQ(c.train.shape.shared, std::vector<std::size_t>{30});
  EXPECT_EQ(c.train.shape.head, (std::vector<std::size_t>{10, 10}));
  EXPECT_EQ(c.propensity.epochs, 40u);
  EXPECT_EQ(c.mc_samples, 0u);
  EXPECT_EQ(c.train.batch_size, 32u);

  // to_json -> from_json is a fixed point.
  EXPECT_EQ(to_json(experiment_config_from_json(to_json(c))), to_json(c));
}

TEST(ConfigJson, Errors) {
  EXPECT_THROW(experiment_config_from_json(json::parse(R"({"model": "knn"})")), ConfigError);
  EXPECT_NO_THROW(experiment_config_from_json(json::parse(R"({"model": "knn"})"), false));
  EXPECT_THROW(experiment_config_from_json(json::parse(R"({"seed": 1, "model": "svm"})")), ConfigError);
  EXPECT_THROW(experiment_config_from_json(json::parse(R"({"seed": 1, "repetitions": 0})")), ConfigError);
  EXPECT_THROW(experiment_config_from_json(json::parse(R"({"seed": 1, "train": {"gamma": 2}})")), ConfigError);
  EXPECT_THROW(experiment_config_from_json(json::parse(R"({"seed": 1, "train": {"epochs": "many"}})")), ConfigError);
  EXPECT_THROW(experiment_config_from_json(json::parse(R"({"seed": 1, "source": {"type": "sql"}})")), ConfigError);
  EXPECT_THROW(experiment_config_from_json(json::parse(R"({"seed": 1, "source": {"type": "csv"}})")), ConfigError);
  EXPECT_THROW(experiment_config_from_json(json::parse(R"({"seed": 1, "source": {"surface": "cubic"}})")),
               ConfigError);
  EXPECT_THROW(experiment_config_from_json(json::parse(R"({"seed": 1, "train_fraction": 1.0})")), ConfigError);
  EXPECT_THROW(experiment_config_from_json(json::parse("[1, 2]")), ConfigError);
}

TEST(RunExperiment, SmokeEveryModel) {
  for (const char* m : {"dcn-pd", "dcn-fixed:0.3", "nn4", "knn:3"}) {
    const ExperimentReport r = run_experiment(quick(m, 2));
    ASSERT_EQ(r.mse.size(), 2u) << m;
    for (double v : r.mse) {
      EXPECT_TRUE(std::isfinite(v)) << m;
      EXPECT_GE(v, 0.0) << m;
    }
    EXPECT_EQ(r.model, m);
  }
}

TEST(RunExperiment, DeterministicForSameSeed) {
  for (const char* m : {"dcn-pd", "nn4"}) {
    const ExperimentReport a = run_experiment(quick(m, 2));
    const ExperimentReport b = run_experiment(quick(m, 2));
    EXPECT_EQ(a.mse, b.mse) << m;
    EXPECT_EQ(report_body_json(a).dump(), report_body_json(b).dump()) << m;
  }
  ExperimentConfig other = quick("dcn-pd", 2);
  other.seed = 99;
  EXPECT_NE(run_experiment(other).mse, run_experiment(quick("dcn-pd", 2)).mse);
}

TEST(RunExperiment, ThreadCountDoesNotChangeResults) {
  ExperimentConfig c = quick("dcn-fixed:0.2", 3);
  const auto serial = run_experiment(c).mse;
  c.threads = 3;
  EXPECT_EQ(run_experiment(c).mse, serial);
}

TEST(RunExperiment, AddingRepetitionsKeepsEarlierOnes) {
  const auto two = run_experiment(quick("knn", 2)).mse;
  const auto four = run_experiment(quick("knn", 4)).mse;
  ASSERT_EQ(four.size(), 4u);
  EXPECT_EQ(four[0], two[0]);
  EXPECT_EQ(four[1], two[1]);
}

TEST(RunExperiment, ModelsSeeTheSameRealizationsAndSplits) {
  // A repetition's k-NN score recomputed from the shared dataset/split streams
  // must match what the runner reports.
  const ExperimentConfig c = quick("knn:2", 3);
  const auto reported = run_experiment(c).mse;
  for (std::size_t r = 0; r < 3; ++r) {
    const ObservationalDataset ds = realize_dataset(c, r);
    Rng split = make_rng(derive_seed(c.seed, r), Stream::Split);
    const auto [train, test] = train_test_split(ds, c.train_fraction, split);
    const auto [scaled, scaler] = standardize(train);
    Vector pred(test.X.rows());
    for (Eigen::Index i = 0; i < pred.size(); ++i)
      pred(i) = oracle::brute_force_knn_ite(scaled, scaler.apply(Vector(test.X.row(i).transpose())), 2);
    EXPECT_EQ(ite_mse(pred, *test.true_ite), reported[r]) << r;
  }
  // Same realization regardless of the model being evaluated.
  ExperimentConfig d = c;
  d.model = ModelSpec::parse("dcn-pd");
  EXPECT_EQ(realize_dataset(d, 1).X, realize_dataset(c, 1).X);
  EXPECT_EQ(realize_dataset(d, 1).Y, realize_dataset(c, 1).Y);
}

TEST(RunExperiment, FixedCovariatesRedrawOutcomesOnly) {
  ExperimentConfig c = quick("knn", 2);
  std::get<SyntheticSource>(c.source).fixed_covariates = true;
  const ObservationalDataset a = realize_dataset(c, 0), b = realize_dataset(c, 1);
  EXPECT_EQ(a.X, b.X);
  EXPECT_EQ(a.W, b.W);
  EXPECT_NE(a.Y, b.Y);
}

TEST(RunExperiment, CsvWithoutTruthRejected) {
  const auto dir = fresh_dir("dcnpd_exp_csv");
  std::filesystem::create_directories(dir);
  {
    std::ofstream f(dir / "d.csv");
    f << "x1,x2,w,y\n";
    for (int i = 0; i < 20; ++i) f << i << ',' << (i * 7) % 5 << ',' << i % 2 << ',' << i * 0.5 << '\n';
  }
  ExperimentConfig c = quick("knn:2", 1);
  c.source = CsvSource{{(dir / "d.csv").string()}, {}};
  EXPECT_THROW(run_experiment(c), std::runtime_error);
  std::filesystem::remove_all(dir);
}

TEST(RunExperiment, CsvSourceWithTruth) {
  const auto dir = fresh_dir("dcnpd_exp_csv_truth");
  SyntheticConfig sc;
  sc.n = 80;
  sc.d = 3;
  save_csv(dir / "d.csv", generate_synthetic(sc));
  ExperimentConfig c = quick("knn:2", 2);
  c.source = CsvSource{{(dir / "d.csv").string()}, {}};
  const ExperimentReport r = run_experiment(c);
  EXPECT_EQ(r.mse.size(), 2u);
  EXPECT_NE(r.mse[0], r.mse[1]);  // same data, different splits
  std::filesystem::remove_all(dir);
}

TEST(Aggregate, MeanAndStandardError) {
  ExperimentReport r;
  r.mse = {1.0, 2.0, 3.0, 6.0};
  aggregate(r);
  EXPECT_EQ(r.mean, 3.0);
  // sample variance 14/3
  EXPECT_NEAR(r.standard_error, std::sqrt(14.0 / 3.0) / 2.0, 1e-15);
  r.mse = {4.0};
  aggregate(r);
  EXPECT_EQ(r.standard_error, 0.0);
}

TEST(Report, EmitAndReadBack) {
  const auto dir = fresh_dir("dcnpd_report") / "a" / "b";
  ExperimentReport r = run_experiment(quick("knn", 100));
  const ReportPaths p = emit_report(r, dir);
  ASSERT_TRUE(std::filesystem::exists(p.json));
  ASSERT_TRUE(std::filesystem::exists(p.csv));

  std::ifstream csv(p.csv);
  const auto rows = read_report_csv(csv);
  ASSERT_EQ(rows.size(), 100u);
  EXPECT_EQ(rows, r.mse);

  const ExperimentReport back = report_from_json(read_json_file(p.json));
  EXPECT_EQ(back.mse, r.mse);
  EXPECT_EQ(back.model, "knn:5");
  EXPECT_EQ(back.config, r.config);

  // Mean recomputed from the CSV agrees with the JSON to 12 significant digits.
  double s = 0.0;
  for (double v : rows) s += v;
  EXPECT_NEAR(s / 100.0, back.mean, 1e-12 * std::abs(back.mean));
  std::filesystem::remove_all(fresh_dir("dcnpd_report"));
}

TEST(Report, CsvErrors) {
  std::istringstream bad_header("rep,mse\n0,1\n");
  EXPECT_THROW(read_report_csv(bad_header), SchemaError);
  std::istringstream order("schema_version,repetition,mse\n1,1,0.5\n");
  EXPECT_THROW(read_report_csv(order), ValidationError);
  std::istringstream cells("schema_version,repetition,mse\n1,0\n");
  EXPECT_THROW(read_report_csv(cells), ParseError);
}
