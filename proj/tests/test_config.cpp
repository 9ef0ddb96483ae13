#include <gtest/gtest.h>

#include <string>

#include "ltnode/config.hpp"
#include "test_util.hpp"

using namespace ltnode;
using nlohmann::json;

namespace {

json minimal(const std::string& task, const std::string& variant, const std::string& dataset) {
  json j;
  j["task"] = task;
  j["variant"] = variant;
  j["dataset"] = {{"name", dataset}};
  return j;
}

void expect_config_error(const json& j, const std::string& needle) {
  try {
    (void)parse_experiment_config(j);
    FAIL() << "expected config_error mentioning " << needle;
  } catch (const config_error& e) {
    EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
  }
}

}  // namespace

TEST(Schema, ShippedFileMatchesEmbeddedText) {
  const std::string path = std::string(LTNODE_SOURCE_DIR) + "/schemas/experiment_config.schema.json";
  const std::string file_text = testutil::slurp(path);
  ASSERT_FALSE(file_text.empty()) << "schema file missing: " << path;
  const json from_file = json::parse(file_text);
  const json embedded = json::parse(experiment_config_schema_text());
  EXPECT_EQ(from_file, embedded);
}

TEST(Schema, AcceptsMinimalConfigWithDefaults) {
  const ExperimentConfig cfg = parse_experiment_config(minimal("classification", "lt_node", "two_moons"));
  EXPECT_EQ(cfg.model.task, Task::classification);
  EXPECT_EQ(cfg.model.variant, Variant::lt_node);
  EXPECT_EQ(cfg.dataset.name, "two_moons");
  EXPECT_EQ(cfg.dataset.n, 500);
  EXPECT_NEAR(cfg.dataset.test_fraction, 0.2, 1e-15);
  EXPECT_EQ(cfg.prediction_samples, 10);
  // posterior initialized at the prior unless pinned explicitly
  EXPECT_NEAR(cfg.model.init_posterior.alpha, cfg.training.elbo.prior.alpha, 1e-15);
  EXPECT_NEAR(cfg.model.init_posterior.beta, cfg.training.elbo.prior.beta, 1e-15);
}

TEST(Schema, RegressionDefaults) {
  const ExperimentConfig cfg = parse_experiment_config(minimal("regression", "alt_node", "foong1d"));
  EXPECT_EQ(cfg.model.task, Task::regression);
  EXPECT_EQ(cfg.model.variant, Variant::alt_node);
  EXPECT_EQ(cfg.dataset.n, 1500);
  EXPECT_NEAR(cfg.dataset.test_fraction, 0.0, 1e-15);
  EXPECT_NEAR(cfg.eval.grid_lo, -1.5, 1e-15);
  EXPECT_NEAR(cfg.eval.grid_hi, 1.5, 1e-15);
  EXPECT_EQ(cfg.eval.grid_points, 301);
}

TEST(Schema, UnknownFieldRejectedWithPath) {
  json j = minimal("classification", "lt_node", "two_moons");
  j["dataset"]["bogus_knob"] = 3;
  expect_config_error(j, "$.dataset");
  json k = minimal("classification", "lt_node", "two_moons");
  k["turbo"] = true;
  expect_config_error(k, "turbo");
}

TEST(Schema, TypeAndEnumViolations) {
  json j = minimal("classification", "lt_node", "two_moons");
  j["seed"] = "twelve";
  expect_config_error(j, "$.seed");

  json k = minimal("classification", "warp_node", "two_moons");
  expect_config_error(k, "$.variant");

  json m = minimal("poetry", "lt", "two_moons");
  expect_config_error(m, "$.task");

  json p = minimal("classification", "lt_node", "two_moons");
  p["training"] = {{"iterations", 10.5}};
  expect_config_error(p, "$.training.iterations");
}

TEST(Schema, RequiredAndBounds) {
  json j;
  j["task"] = "classification";
  j["variant"] = "lt";
  expect_config_error(j, "dataset");

  json k = minimal("classification", "lt_node", "two_moons");
  k["solver"] = {{"atol", 0.0}};
  expect_config_error(k, "$.solver.atol");

  json m = minimal("classification", "lt_node", "two_moons");
  m["attack"] = {{"epsilons", json::array()}};
  expect_config_error(m, "$.attack.epsilons");

  json p = minimal("classification", "lt_node", "two_moons");
  p["dataset"]["test_fraction"] = 1.4;
  expect_config_error(p, "$.dataset.test_fraction");
}

TEST(Schema, CsvDatasetRequiresPath) {
  json j = minimal("regression", "lt_node", "csv");
  expect_config_error(j, "path");
}

TEST(Config, SeedDerivations) {
  json j = minimal("classification", "lt_node", "two_moons");
  j["seed"] = 99;
  j["dataset"]["ood"] = {{"shift", {4.0, 4.0}}};
  const ExperimentConfig cfg = parse_experiment_config(j);
  EXPECT_EQ(cfg.seed, 99u);
  EXPECT_EQ(cfg.dataset.seed, 99u);       // follows the experiment seed
  EXPECT_EQ(cfg.dataset.ood.seed, 100u);  // dataset seed + 1
  EXPECT_TRUE(cfg.dataset.ood.enabled);

  json k = minimal("classification", "lt_node", "two_moons");
  k["seed"] = 7;
  k["dataset"]["seed"] = 1234;
  const ExperimentConfig cfg2 = parse_experiment_config(k);
  EXPECT_EQ(cfg2.dataset.seed, 1234u);
  EXPECT_EQ(cfg2.seed, 7u);
}

TEST(Config, ModelOverridesApply) {
  json j = minimal("classification", "alt_node", "two_moons");
  j["model"] = {{"input_widths", {8, 12}},
                {"node_widths", {12, 12}},
                {"activation", "tanh"},
                {"inference_hidden", {10}},
                {"init_posterior", {{"alpha", 3.0}, {"beta", 1.5}}}};
  const ExperimentConfig cfg = parse_experiment_config(j);
  EXPECT_EQ(cfg.model.input_widths, (std::vector<int>{8, 12}));
  EXPECT_EQ(cfg.model.node_widths, (std::vector<int>{12, 12}));
  EXPECT_EQ(cfg.model.inference_hidden, (std::vector<int>{10}));
  EXPECT_EQ(cfg.model.activation, Act::tanh);
  EXPECT_NEAR(cfg.model.init_posterior.alpha, 3.0, 1e-15);
  EXPECT_NEAR(cfg.model.init_posterior.beta, 1.5, 1e-15);
}

TEST(Config, TrainingAndSolverMapping) {
  json j = minimal("regression", "uni_node", "foong1d");
  j["training"] = {{"iterations", 250},
                   {"batch_size", 32},
                   {"S", 7},
                   {"grid_a", 0.0},
                   {"grid_b", 2.5},
                   {"prior", {{"alpha", 1.0}, {"beta", 0.01}}},
                   {"theta", {{"lr", 0.02}, {"decay_every", 100}, {"decay_factor", 2.0}}},
                   {"variational", {{"lr", 0.005}, {"decay_every", 0}}}};
  j["solver"] = {{"atol", 1e-3}, {"rtol", 1e-4}, {"max_steps", 5000}};
  const ExperimentConfig cfg = parse_experiment_config(j);
  EXPECT_EQ(cfg.training.iterations, 250);
  EXPECT_EQ(cfg.training.batch_size, 32);
  EXPECT_EQ(cfg.training.elbo.S, 7);
  EXPECT_NEAR(cfg.training.elbo.grid_b, 2.5, 1e-15);
  EXPECT_NEAR(cfg.training.elbo.prior.alpha, 1.0, 1e-15);
  EXPECT_NEAR(cfg.training.elbo.prior.beta, 0.01, 1e-15);
  EXPECT_NEAR(cfg.training.theta_opt.lr, 0.02, 1e-15);
  ASSERT_EQ(cfg.training.theta_opt.milestones.size(), 2u);  // at 100 and 200
  EXPECT_NEAR(cfg.training.theta_opt.milestones[0].factor, 2.0, 1e-15);
  EXPECT_TRUE(cfg.training.var_opt.milestones.empty());
  EXPECT_NEAR(cfg.training.elbo.solver.atol, 1e-3, 1e-18);
  EXPECT_NEAR(cfg.training.elbo.solver.rtol, 1e-4, 1e-18);
  EXPECT_EQ(cfg.training.elbo.solver.max_steps, 5000);
  // default weight decay: theta regularized, variational free
  EXPECT_NEAR(cfg.training.theta_opt.weight_decay, 1e-4, 1e-18);
  EXPECT_NEAR(cfg.training.var_opt.weight_decay, 0.0, 1e-18);
}

TEST(Config, TaskDatasetCompatibility) {
  expect_config_error(minimal("regression", "lt_node", "two_moons"), "classification dataset");
  expect_config_error(minimal("classification", "lt_node", "foong1d"), "regression dataset");
}

TEST(Config, LoadFromDiskAndErrors) {
  testutil::TempDir td;
  testutil::spit(td.str("ok.json"), minimal("classification", "node", "two_moons").dump());
  const ExperimentConfig cfg = load_experiment_config(td.str("ok.json"));
  EXPECT_EQ(cfg.model.variant, Variant::node);

  EXPECT_THROW(load_experiment_config(td.str("missing.json")), io_error);

  testutil::spit(td.str("broken.json"), "{ not json");
  EXPECT_THROW(load_experiment_config(td.str("broken.json")), config_error);
}

TEST(Config, BuildDatasetAndOod) {
  json j = minimal("classification", "lt_node", "two_moons");
  j["dataset"]["n"] = 60;
  j["dataset"]["ood"] = {{"shift", {5.0, -5.0}}, {"n", 40}, {"scale", 0.5}};
  const ExperimentConfig cfg = parse_experiment_config(j);
  const Dataset ds = build_dataset(cfg.dataset, cfg.model.task);
  EXPECT_EQ(ds.size(), 60);
  int test_rows = 0;
  for (auto s : ds.split) test_rows += (s == Split::test);
  EXPECT_EQ(test_rows, 12);  // default two_moons split 0.2

  const kernels::RowMat ood = build_ood_inputs(cfg.dataset.ood, ds);
  EXPECT_EQ(ood.rows(), 40);
  EXPECT_EQ(ood.cols(), 2);

  ModelSpec spec = cfg.model;
  finalize_model_spec(spec, ds);
  EXPECT_EQ(spec.input_dim, 2);
  EXPECT_EQ(spec.num_classes, 2);
  EXPECT_EQ(spec.head_widths.back(), 2);
  LatentTimeModel m(spec, 0);  // constructible
  EXPECT_GT(parameter_count(m), 0u);
}

TEST(Config, AttackClipPairValidation) {
  json j = minimal("classification", "lt_node", "two_moons");
  j["attack"] = {{"epsilons", {0.0, 0.1}}, {"clip_lo", 0.0}};
  expect_config_error(j, "clip");

  json k = minimal("classification", "lt_node", "two_moons");
  k["attack"] = {{"epsilons", {0.0, 0.1}}, {"clip_lo", 0.0}, {"clip_hi", 1.0}};
  const ExperimentConfig cfg = parse_experiment_config(k);
  EXPECT_TRUE(cfg.attack.clip);
  EXPECT_NEAR(cfg.attack.clip_hi, 1.0, 1e-15);
}

TEST(Config, EvalBoundsChecked) {
  json j = minimal("regression", "lt_node", "foong1d");
  j["eval"] = {{"grid_lo", 2.0}, {"grid_hi", -2.0}};
  expect_config_error(j, "grid");
}
