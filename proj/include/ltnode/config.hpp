#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ltnode/attack.hpp"
#include "ltnode/datasets.hpp"
#include "ltnode/errors.hpp"
#include "ltnode/model.hpp"
#include "ltnode/training.hpp"

namespace ltnode {

// Embedded copy of schemas/experiment_config.schema.json; a test pins the
// two representations equal so they cannot drift apart.
inline const char* experiment_config_schema_text() {
  return R"json({
  "$schema": "http://json-schema.org/draft-07/schema#",
  "title": "Experiment configuration",
  "type": "object",
  "required": ["task", "variant", "dataset"],
  "additionalProperties": false,
  "properties": {
    "task": {"enum": ["regression", "classification"]},
    "variant": {"enum": ["node", "uni_node", "lt_node", "alt_node"]},
    "seed": {"type": "integer", "minimum": 0},
    "prediction_samples": {"type": "integer", "minimum": 1},
    "dataset": {
      "type": "object",
      "required": ["name"],
      "additionalProperties": false,
      "properties": {
        "name": {"enum": ["foong1d", "two_moons", "csv"]},
        "path": {"type": "string"},
        "n": {"type": "integer", "minimum": 1},
        "noise_std": {"type": "number", "minimum": 0},
        "test_fraction": {"type": "number", "minimum": 0, "maximum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "ood": {
          "type": "object",
          "required": ["shift"],
          "additionalProperties": false,
          "properties": {
            "shift": {"type": "array", "items": {"type": "number"}, "minItems": 1},
            "scale": {"type": "number", "minimum": 0},
            "n": {"type": "integer", "minimum": 1},
            "seed": {"type": "integer", "minimum": 0}
          }
        }
      }
    },
    "model": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "input_widths": {
          "type": "array",
          "items": {"type": "integer", "minimum": 1},
          "minItems": 1
        },
        "node_widths": {
          "type": "array",
          "items": {"type": "integer", "minimum": 1},
          "minItems": 1
        },
        "inference_hidden": {
          "type": "array",
          "items": {"type": "integer", "minimum": 1}
        },
        "activation": {"enum": ["tanh", "relu"]},
        "fixed_time": {"type": "number", "minimum": 0},
        "uniform_a": {"type": "number", "minimum": 0},
        "uniform_b": {"type": "number", "exclusiveMinimum": 0},
        "init_posterior": {
          "type": "object",
          "required": ["alpha", "beta"],
          "additionalProperties": false,
          "properties": {
            "alpha": {"type": "number", "exclusiveMinimum": 0},
            "beta": {"type": "number", "exclusiveMinimum": 0}
          }
        }
      }
    },
    "training": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "iterations": {"type": "integer", "minimum": 0},
        "batch_size": {"type": "integer", "minimum": 0},
        "S": {"type": "integer", "minimum": 1},
        "grid_a": {"type": "number", "minimum": 0},
        "grid_b": {"type": "number", "exclusiveMinimum": 0},
        "prior": {
          "type": "object",
          "required": ["alpha", "beta"],
          "additionalProperties": false,
          "properties": {
            "alpha": {"type": "number", "exclusiveMinimum": 0},
            "beta": {"type": "number", "exclusiveMinimum": 0}
          }
        },
        "theta": {
          "type": "object",
          "additionalProperties": false,
          "properties": {
            "lr": {"type": "number", "minimum": 0},
            "momentum": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
            "weight_decay": {"type": "number", "minimum": 0},
            "decay_every": {"type": "integer", "minimum": 0},
            "decay_factor": {"type": "number", "exclusiveMinimum": 0}
          }
        },
        "variational": {
          "type": "object",
          "additionalProperties": false,
          "properties": {
            "lr": {"type": "number", "minimum": 0},
            "momentum": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
            "weight_decay": {"type": "number", "minimum": 0},
            "decay_every": {"type": "integer", "minimum": 0},
            "decay_factor": {"type": "number", "exclusiveMinimum": 0}
          }
        }
      }
    },
    "solver": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "atol": {"type": "number", "exclusiveMinimum": 0},
        "rtol": {"type": "number", "exclusiveMinimum": 0},
        "max_steps": {"type": "integer", "minimum": 1},
        "initial_step": {"type": "number"}
      }
    },
    "attack": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "epsilons": {
          "type": "array",
          "items": {"type": "number", "minimum": 0},
          "minItems": 1
        },
        "clip_lo": {"type": "number"},
        "clip_hi": {"type": "number"}
      }
    },
    "eval": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "interval_lo": {"type": "number"},
        "interval_hi": {"type": "number"},
        "grid_lo": {"type": "number"},
        "grid_hi": {"type": "number"},
        "grid_points": {"type": "integer", "minimum": 2}
      }
    }
  }
}
)json";
}

inline const nlohmann::json& experiment_config_schema() {
  static const nlohmann::json schema = nlohmann::json::parse(experiment_config_schema_text());
  return schema;
}

namespace detail {

inline std::string json_type_name(const nlohmann::json& v) {
  if (v.is_object()) return "object";
  if (v.is_array()) return "array";
  if (v.is_string()) return "string";
  if (v.is_boolean()) return "boolean";
  if (v.is_number_integer() || v.is_number_unsigned()) return "integer";
  if (v.is_number()) return "number";
  return "null";
}

}  // namespace detail

// Validates `inst` against the subset of JSON Schema the shipped schema
// uses: type, enum, numeric bounds, required, properties,
// additionalProperties:false, items, minItems. Violations carry the
// offending field path.
inline void validate_against_schema(const nlohmann::json& inst, const nlohmann::json& schema,
                                    const std::string& path = "$") {
  if (schema.contains("enum")) {
    for (const auto& allowed : schema["enum"]) {
      if (inst == allowed) return;
    }
    throw config_error(path + ": value " + inst.dump() + " not one of " +
                       schema["enum"].dump());
  }
  if (schema.contains("type")) {
    const std::string want = schema["type"].get<std::string>();
    const std::string got = detail::json_type_name(inst);
    const bool ok = (want == got) || (want == "number" && got == "integer");
    if (!ok) throw config_error(path + ": expected " + want + ", got " + got);
  }
  if (inst.is_number()) {
    const double v = inst.get<double>();
    if (schema.contains("minimum") && v < schema["minimum"].get<double>()) {
      throw config_error(path + ": " + inst.dump() + " below minimum " +
                         schema["minimum"].dump());
    }
    if (schema.contains("exclusiveMinimum") && v <= schema["exclusiveMinimum"].get<double>()) {
      throw config_error(path + ": " + inst.dump() + " must exceed " +
                         schema["exclusiveMinimum"].dump());
    }
    if (schema.contains("maximum") && v > schema["maximum"].get<double>()) {
      throw config_error(path + ": " + inst.dump() + " above maximum " +
                         schema["maximum"].dump());
    }
    if (schema.contains("exclusiveMaximum") && v >= schema["exclusiveMaximum"].get<double>()) {
      throw config_error(path + ": " + inst.dump() + " must be below " +
                         schema["exclusiveMaximum"].dump());
    }
  }
  if (inst.is_object()) {
    if (schema.contains("required")) {
      for (const auto& key : schema["required"]) {
        const auto k = key.get<std::string>();
        if (!inst.contains(k)) throw config_error(path + "." + k + ": required field missing");
      }
    }
    const auto& props = schema.contains("properties") ? schema["properties"]
                                                      : nlohmann::json::object();
    const bool closed = schema.contains("additionalProperties") &&
                        schema["additionalProperties"].is_boolean() &&
                        !schema["additionalProperties"].get<bool>();
    for (const auto& [key, value] : inst.items()) {
      if (props.contains(key)) {
        validate_against_schema(value, props[key], path + "." + key);
      } else if (closed) {
        throw config_error(path + "." + key + ": unknown field");
      }
    }
  }
  if (inst.is_array()) {
    if (schema.contains("minItems") &&
        inst.size() < schema["minItems"].get<std::size_t>()) {
      throw config_error(path + ": needs at least " + schema["minItems"].dump() + " items");
    }
    if (schema.contains("items")) {
      for (std::size_t i = 0; i < inst.size(); ++i) {
        validate_against_schema(inst[i], schema["items"], path + "[" + std::to_string(i) + "]");
      }
    }
  }
}

struct OodSpec {
  bool enabled = false;
  std::vector<double> shift;
  double scale = 1.0;
  int n = 200;
  std::uint64_t seed = 0;
};

struct DatasetSpec {
  std::string name;
  std::string path;  // csv only
  int n = 0;
  double noise_std = -1.0;  // < 0 selects the dataset's default
  double test_fraction = -1.0;
  std::uint64_t seed = 0;
  OodSpec ood;
};

struct EvalSpec {
  double interval_lo = -0.5;  // regression entropy interval
  double interval_hi = 0.5;
  double grid_lo = -1.5;  // regression prediction grid
  double grid_hi = 1.5;
  int grid_points = 301;
};

struct ExperimentConfig {
  ModelSpec model;
  DatasetSpec dataset;
  TrainConfig training;
  AttackConfig attack;
  EvalSpec eval;
  int prediction_samples = 10;
  std::uint64_t seed = 0;
};

namespace detail {

inline SgdConfig parse_optimizer(const nlohmann::json& j, SgdConfig base, long iterations) {
  if (j.contains("lr")) base.lr = j["lr"].get<double>();
  if (j.contains("momentum")) base.momentum = j["momentum"].get<double>();
  if (j.contains("weight_decay")) base.weight_decay = j["weight_decay"].get<double>();
  long every = 1000;
  double factor = 10.0;
  if (j.contains("decay_every")) every = j["decay_every"].get<long>();
  if (j.contains("decay_factor")) factor = j["decay_factor"].get<double>();
  base.milestones = every > 0 ? decay_milestones(every, factor, iterations)
                              : std::vector<Milestone>{};
  return base;
}

}  // namespace detail

// Builds the full runtime configuration from validated JSON. The model spec
// comes out dimension-incomplete for csv datasets; finalize_model_spec fills
// input_dim / num_classes once the data is known.
inline ExperimentConfig parse_experiment_config(const nlohmann::json& j) {
  validate_against_schema(j, experiment_config_schema());

  ExperimentConfig cfg;
  const std::string task = j["task"].get<std::string>();
  const Variant variant = variant_from_name(j["variant"].get<std::string>());
  cfg.seed = j.value("seed", std::uint64_t{0});
  cfg.prediction_samples = j.value("prediction_samples", 10);

  const auto& ds = j["dataset"];
  cfg.dataset.name = ds["name"].get<std::string>();
  if (cfg.dataset.name == "csv") {
    if (!ds.contains("path")) throw config_error("$.dataset.path: required for csv datasets");
    cfg.dataset.path = ds["path"].get<std::string>();
  }
  cfg.dataset.n = ds.value("n", cfg.dataset.name == "foong1d" ? 1500 : 500);
  cfg.dataset.noise_std = ds.value("noise_std", cfg.dataset.name == "foong1d" ? 0.02 : 0.1);
  cfg.dataset.test_fraction = ds.value("test_fraction",
                                       cfg.dataset.name == "foong1d" ? 0.0 : 0.2);
  cfg.dataset.seed = ds.value("seed", cfg.seed);
  if (ds.contains("ood")) {
    const auto& ood = ds["ood"];
    cfg.dataset.ood.enabled = true;
    cfg.dataset.ood.shift = ood["shift"].get<std::vector<double>>();
    cfg.dataset.ood.scale = ood.value("scale", 1.0);
    cfg.dataset.ood.n = ood.value("n", 200);
    cfg.dataset.ood.seed = ood.value("seed", cfg.dataset.seed + 1);
  }

  if (task == "classification") {
    cfg.model = ModelSpec::toy_classifier(variant);
    if (cfg.dataset.name == "foong1d") {
      throw config_error("$.dataset.name: foong1d is a regression dataset");
    }
  } else {
    cfg.model = ModelSpec::synthetic_regression(variant);
    if (cfg.dataset.name == "two_moons") {
      throw config_error("$.dataset.name: two_moons is a classification dataset");
    }
  }
  const bool init_posterior_given = j.contains("model") && j["model"].contains("init_posterior");
  if (j.contains("model")) {
    const auto& m = j["model"];
    if (m.contains("input_widths")) cfg.model.input_widths = m["input_widths"].get<std::vector<int>>();
    if (m.contains("node_widths")) cfg.model.node_widths = m["node_widths"].get<std::vector<int>>();
    if (m.contains("inference_hidden")) {
      cfg.model.inference_hidden = m["inference_hidden"].get<std::vector<int>>();
    }
    if (m.contains("activation")) {
      cfg.model.activation = m["activation"].get<std::string>() == "relu" ? Act::relu : Act::tanh;
    }
    if (m.contains("fixed_time")) cfg.model.fixed_time = m["fixed_time"].get<double>();
    if (m.contains("uniform_a")) cfg.model.uniform_a = m["uniform_a"].get<double>();
    if (m.contains("uniform_b")) cfg.model.uniform_b = m["uniform_b"].get<double>();
    if (m.contains("init_posterior")) {
      cfg.model.init_posterior.alpha = m["init_posterior"]["alpha"].get<double>();
      cfg.model.init_posterior.beta = m["init_posterior"]["beta"].get<double>();
    }
  }

  cfg.training.seed = cfg.seed;
  if (j.contains("training")) {
    const auto& t = j["training"];
    cfg.training.iterations = t.value("iterations", 3000L);
    cfg.training.batch_size = t.value("batch_size", 0);
    cfg.training.elbo.S = t.value("S", 10);
    cfg.training.elbo.grid_a = t.value("grid_a", 0.0);
    cfg.training.elbo.grid_b = t.value("grid_b", 3.0);
    if (t.contains("prior")) {
      cfg.training.elbo.prior.alpha = t["prior"]["alpha"].get<double>();
      cfg.training.elbo.prior.beta = t["prior"]["beta"].get<double>();
    }
    cfg.training.theta_opt = detail::parse_optimizer(
        t.contains("theta") ? t["theta"] : nlohmann::json::object(),
        SgdConfig{0.001, 0.9, 1e-4, {}}, cfg.training.iterations);
    cfg.training.var_opt = detail::parse_optimizer(
        t.contains("variational") ? t["variational"] : nlohmann::json::object(),
        SgdConfig{0.001, 0.9, 0.0, {}}, cfg.training.iterations);
  } else {
    cfg.training.theta_opt = SgdConfig{0.001, 0.9, 1e-4,
                                       decay_milestones(1000, 10.0, cfg.training.iterations)};
    cfg.training.var_opt = SgdConfig{0.001, 0.9, 0.0,
                                     decay_milestones(1000, 10.0, cfg.training.iterations)};
  }
  // The variational posterior starts at the prior unless pinned explicitly.
  if (!init_posterior_given) cfg.model.init_posterior = cfg.training.elbo.prior;

  if (j.contains("solver")) {
    const auto& s = j["solver"];
    cfg.training.elbo.solver.atol = s.value("atol", 1e-2);
    cfg.training.elbo.solver.rtol = s.value("rtol", 1e-2);
    cfg.training.elbo.solver.max_steps = s.value("max_steps", 10000);
    cfg.training.elbo.solver.initial_step = s.value("initial_step", 0.0);
  }

  if (j.contains("attack")) {
    const auto& a = j["attack"];
    if (a.contains("epsilons")) cfg.attack.epsilons = a["epsilons"].get<std::vector<double>>();
    if (a.contains("clip_lo") != a.contains("clip_hi")) {
      throw config_error("$.attack: clip_lo and clip_hi must be given together");
    }
    if (a.contains("clip_lo")) {
      cfg.attack.clip = true;
      cfg.attack.clip_lo = a["clip_lo"].get<double>();
      cfg.attack.clip_hi = a["clip_hi"].get<double>();
    }
    cfg.attack.validate();
  }

  if (j.contains("eval")) {
    const auto& e = j["eval"];
    cfg.eval.interval_lo = e.value("interval_lo", -0.5);
    cfg.eval.interval_hi = e.value("interval_hi", 0.5);
    cfg.eval.grid_lo = e.value("grid_lo", -1.5);
    cfg.eval.grid_hi = e.value("grid_hi", 1.5);
    cfg.eval.grid_points = e.value("grid_points", 301);
    if (!(cfg.eval.interval_lo < cfg.eval.interval_hi)) {
      throw config_error("$.eval.interval_lo: must be below interval_hi");
    }
    if (!(cfg.eval.grid_lo < cfg.eval.grid_hi)) {
      throw config_error("$.eval.grid_lo: must be below grid_hi");
    }
  }
  return cfg;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw io_error("cannot open config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw config_error("config " + path + " is not valid JSON: " + e.what());
  }
  return parse_experiment_config(j);
}

inline Dataset build_dataset(const DatasetSpec& spec, Task task) {
  Dataset ds;
  if (spec.name == "foong1d") {
    ds = gen_foong1d(spec.n, spec.noise_std, spec.seed);
  } else if (spec.name == "two_moons") {
    ds = gen_two_moons(spec.n, spec.noise_std, spec.seed);
  } else if (spec.name == "csv") {
    ds = read_csv(spec.path, task == Task::classification);
  } else {
    throw config_error("$.dataset.name: unknown dataset '" + spec.name + "'");
  }
  if (spec.test_fraction > 0.0 && spec.name != "csv") {
    train_test_split(ds, spec.test_fraction, spec.seed ^ 0x7e57da7aULL);
  }
  if (task == Task::classification && !ds.is_classification()) {
    throw config_error("$.dataset: dataset has no class labels");
  }
  if (task == Task::regression && ds.targets.size() == 0) {
    throw config_error("$.dataset: dataset has no regression targets");
  }
  return ds;
}

inline kernels::RowMat build_ood_inputs(const OodSpec& ood, const Dataset& reference) {
  Eigen::VectorXd shift(static_cast<Eigen::Index>(ood.shift.size()));
  for (std::size_t i = 0; i < ood.shift.size(); ++i) {
    shift[static_cast<Eigen::Index>(i)] = ood.shift[i];
  }
  return gen_ood_inputs(reference, shift, ood.scale, ood.n, ood.seed);
}

// Fills the dataset-dependent spec fields and validates the result.
inline void finalize_model_spec(ModelSpec& spec, const Dataset& ds) {
  spec.input_dim = static_cast<int>(ds.dim());
  if (spec.task == Task::classification) {
    spec.num_classes = ds.num_classes;
    spec.head_widths = {ds.num_classes};
  } else {
    spec.head_widths = {1};
  }
  spec.validate();
}

}  // namespace ltnode
