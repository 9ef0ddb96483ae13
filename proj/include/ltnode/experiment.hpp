#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ltnode/attack.hpp"
#include "ltnode/checkpoint.hpp"
#include "ltnode/config.hpp"
#include "ltnode/metrics.hpp"
#include "ltnode/training.hpp"
#include "ltnode/version.hpp"

namespace ltnode {

namespace detail {

inline std::uint64_t fnv1a_bytes(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return s;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot open " + path.string());
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!f) throw io_error("write failure on " + path.string());
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot open " + path.string());
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

}  // namespace detail

// Every run drops a manifest tying the artifacts to the exact config bytes,
// seed, and library version. No clocks anywhere: reruns are byte-identical.
inline void write_manifest(const std::filesystem::path& out, const std::string& command,
                           const std::string& config_text, std::uint64_t seed) {
  nlohmann::json m;
  m["command"] = command;
  m["config_fnv1a"] = detail::hex64(detail::fnv1a_bytes(config_text));
  m["library_version"] = version_string;
  m["seed"] = seed;
  detail::write_text_file(out / "manifest.json", m.dump(2) + "\n");
}

inline void run_train(const ExperimentConfig& cfg, const std::string& config_text,
                      const std::filesystem::path& out) {
  std::filesystem::create_directories(out);
  Dataset ds = build_dataset(cfg.dataset, cfg.model.task);
  ModelSpec spec = cfg.model;
  finalize_model_spec(spec, ds);
  const Dataset train_ds = subset(ds, Split::train);

  LatentTimeModel model(spec, cfg.seed);
  const TrainResult res = train(model, train_ds, cfg.training);

  write_trace_csv(res, spec.variant, (out / "trace.csv").string());
  CheckpointMeta meta;
  meta.iteration = cfg.training.iterations;
  meta.rng_digest = Rng(cfg.training.seed).state_digest();
  save_checkpoint(model, (out / "model.ckpt").string(), meta);
  write_manifest(out, "train", config_text, cfg.seed);
}

namespace detail {

inline LatentTimeModel load_model_for(const ExperimentConfig& cfg, const Dataset& ds,
                                      const std::filesystem::path& ckpt) {
  ModelSpec spec = cfg.model;
  finalize_model_spec(spec, ds);
  LatentTimeModel model(spec, 0);
  load_checkpoint_into(model, ckpt.string());
  return model;
}

inline void write_predictions_csv(const PredictiveSet& ps, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw io_error("cannot open " + path.string());
  f.precision(17);
  if (ps.task == Task::classification) {
    for (int c = 0; c < ps.num_classes; ++c) f << "mean_p" << c << ',';
    f << "label,ood,entropy\n";
    for (const auto& e : ps.entries) {
      for (Eigen::Index c = 0; c < e.mean.size(); ++c) f << e.mean[c] << ',';
      f << e.label << ',' << (e.ood ? 1 : 0) << ',' << entropy_categorical(e.mean) << '\n';
    }
  } else {
    f << "target,mean,stddev\n";
    for (const auto& e : ps.entries) {
      f << e.target << ',' << e.mean[0] << ',' << e.stddev << '\n';
    }
  }
  if (!f) throw io_error("write failure on " + path.string());
}

inline void run_eval_classification(const ExperimentConfig& cfg, const Dataset& ds,
                                    const LatentTimeModel& model,
                                    const std::filesystem::path& out) {
  const Dataset test_ds = subset(ds, Split::test);
  if (test_ds.size() == 0) {
    throw config_error("$.dataset.test_fraction: eval needs a nonempty test split");
  }
  Rng rng = Rng(cfg.seed).split(3);
  const SolverConfig& solver = cfg.training.elbo.solver;

  PredictiveSet id = predict_probability(model, test_ds.inputs, cfg.prediction_samples, rng,
                                         solver);
  for (std::size_t i = 0; i < id.entries.size(); ++i) {
    id.entries[i].label = test_ds.labels[i];
  }
  const ClassificationMetrics cm = classification_metrics(id);

  nlohmann::json metrics;
  metrics["task"] = "classification";
  metrics["variant"] = variant_name(model.spec().variant);
  metrics["n_test"] = test_ds.size();
  metrics["prediction_samples"] = cfg.prediction_samples;
  metrics["error"] = cm.error;
  metrics["log_likelihood"] = cm.log_likelihood;
  metrics["brier"] = cm.brier;
  metrics["ece"] = cm.ece;

  PredictiveSet merged = id;
  if (cfg.dataset.ood.enabled) {
    const kernels::RowMat ood_x = build_ood_inputs(cfg.dataset.ood, ds);
    const PredictiveSet ood = predict_probability(model, ood_x, cfg.prediction_samples, rng,
                                                  solver);
    std::vector<double> in_scores, out_scores;
    for (const auto& e : id.entries) in_scores.push_back(entropy_categorical(e.mean));
    for (const auto& e : ood.entries) out_scores.push_back(entropy_categorical(e.mean));
    for (const auto& e : ood.entries) {
      merged.entries.push_back(e);
      merged.entries.back().ood = true;
    }
    const OodSeparation sep = auroc_aupr(in_scores, out_scores);
    double mean_in = 0.0, mean_out = 0.0;
    for (double s : in_scores) mean_in += s;
    for (double s : out_scores) mean_out += s;
    nlohmann::json j;
    j["n_ood"] = out_scores.size();
    j["auroc"] = sep.auroc;
    j["aupr_in"] = sep.aupr_in;
    j["aupr_out"] = sep.aupr_out;
    j["mean_entropy_id"] = mean_in / static_cast<double>(in_scores.size());
    j["mean_entropy_ood"] = mean_out / static_cast<double>(out_scores.size());
    metrics["ood"] = std::move(j);
  }

  const OodCurves curves = rejection_and_confidence_curves(merged);
  {
    std::ofstream f(out / "rejection.csv");
    if (!f) throw io_error("cannot open rejection.csv");
    f.precision(17);
    f << "rejected_fraction,accuracy\n";
    for (const auto& p : curves.rejection) f << p.rejected_fraction << ',' << p.accuracy << '\n';
  }
  {
    std::ofstream f(out / "confidence.csv");
    if (!f) throw io_error("cannot open confidence.csv");
    f.precision(17);
    f << "tau,count,accuracy\n";
    for (const auto& p : curves.confidence) {
      f << p.tau << ',' << p.count << ',' << p.accuracy << '\n';
    }
  }
  {
    std::ofstream f(out / "entropy_hist.csv");
    if (!f) throw io_error("cannot open entropy_hist.csv");
    f.precision(17);
    f << "bin_lo,bin_hi,count\n";
    for (std::size_t b = 0; b < curves.entropy_histogram.size(); ++b) {
      f << static_cast<double>(b) * curves.entropy_bin_width << ','
        << static_cast<double>(b + 1) * curves.entropy_bin_width << ','
        << curves.entropy_histogram[b] << '\n';
    }
  }
  write_predictions_csv(merged, out / "predictions.csv");
  detail::write_text_file(out / "metrics.json", metrics.dump(2) + "\n");
}

inline void run_eval_regression(const ExperimentConfig& cfg, const Dataset& ds,
                                const LatentTimeModel& model,
                                const std::filesystem::path& out) {
  Rng rng = Rng(cfg.seed).split(3);
  const SolverConfig& solver = cfg.training.elbo.solver;
  const int gp = cfg.eval.grid_points;
  kernels::RowMat grid(gp, 1);
  for (int i = 0; i < gp; ++i) {
    grid(i, 0) = cfg.eval.grid_lo + (cfg.eval.grid_hi - cfg.eval.grid_lo) *
                                        static_cast<double>(i) / static_cast<double>(gp - 1);
  }
  const PredictiveSet ps = predict_probability(model, grid, cfg.prediction_samples, rng, solver);
  const RegressionUncertainty ru =
      regression_uncertainty(ps, cfg.eval.interval_lo, cfg.eval.interval_hi, grid);

  {
    std::ofstream f(out / "uncertainty.csv");
    if (!f) throw io_error("cannot open uncertainty.csv");
    f.precision(17);
    f << "x,mean,stddev,entropy\n";
    for (int i = 0; i < gp; ++i) {
      const auto u = static_cast<std::size_t>(i);
      f << grid(i, 0) << ',' << ru.mean[u] << ',' << ru.stddev[u] << ',' << ru.entropy[u]
        << '\n';
    }
  }

  const Dataset train_ds = subset(ds, Split::train);
  PredictiveSet train_ps = predict_probability(model, train_ds.inputs, cfg.prediction_samples,
                                               rng, solver);
  double sse = 0.0;
  for (Eigen::Index i = 0; i < train_ds.size(); ++i) {
    auto& e = train_ps.entries[static_cast<std::size_t>(i)];
    e.target = train_ds.targets[i];
    const double d = e.mean[0] - e.target;
    sse += d * d;
  }
  write_predictions_csv(train_ps, out / "predictions.csv");

  nlohmann::json metrics;
  metrics["task"] = "regression";
  metrics["variant"] = variant_name(model.spec().variant);
  metrics["prediction_samples"] = cfg.prediction_samples;
  metrics["grid_lo"] = cfg.eval.grid_lo;
  metrics["grid_hi"] = cfg.eval.grid_hi;
  metrics["n_grid"] = gp;
  metrics["interval_lo"] = cfg.eval.interval_lo;
  metrics["interval_hi"] = cfg.eval.interval_hi;
  metrics["avg_entropy_interval"] = ru.avg_entropy_in_interval;
  metrics["n_in_interval"] = ru.n_in_interval;
  metrics["std_floor"] = k_regression_std_floor;
  metrics["train_mse"] = sse / static_cast<double>(train_ds.size());
  detail::write_text_file(out / "metrics.json", metrics.dump(2) + "\n");
}

}  // namespace detail

inline void run_eval(const ExperimentConfig& cfg, const std::string& config_text,
                     const std::filesystem::path& out, const std::filesystem::path& ckpt) {
  std::filesystem::create_directories(out);
  Dataset ds = build_dataset(cfg.dataset, cfg.model.task);
  LatentTimeModel model = detail::load_model_for(cfg, ds, ckpt);
  if (model.spec().task == Task::classification) {
    detail::run_eval_classification(cfg, ds, model, out);
  } else {
    detail::run_eval_regression(cfg, ds, model, out);
  }
  write_manifest(out, "eval", config_text, cfg.seed);
}

inline void run_attack(const ExperimentConfig& cfg, const std::string& config_text,
                       const std::filesystem::path& out, const std::filesystem::path& ckpt) {
  std::filesystem::create_directories(out);
  Dataset ds = build_dataset(cfg.dataset, cfg.model.task);
  if (cfg.model.task != Task::classification) {
    throw config_error("$.task: the attack subcommand needs a classification task");
  }
  LatentTimeModel model = detail::load_model_for(cfg, ds, ckpt);
  const Dataset test_ds = subset(ds, Split::test);
  if (test_ds.size() == 0) {
    throw config_error("$.dataset.test_fraction: attack needs a nonempty test split");
  }
  Rng rng = Rng(cfg.seed).split(4);
  const auto rows = fgsm_sweep(model, test_ds, cfg.attack, cfg.prediction_samples, rng,
                               cfg.training.elbo.solver);
  write_sweep_csv(rows, (out / "fgsm_sweep.csv").string());
  write_manifest(out, "attack", config_text, cfg.seed);
}

inline void run_posterior_report(const ExperimentConfig& cfg, const std::string& config_text,
                                 const std::filesystem::path& out,
                                 const std::filesystem::path& ckpt) {
  if (cfg.model.variant != Variant::lt_node && cfg.model.variant != Variant::alt_node) {
    throw config_error("$.variant: posterior-report needs lt_node or alt_node");
  }
  std::filesystem::create_directories(out);
  Dataset ds = build_dataset(cfg.dataset, cfg.model.task);
  LatentTimeModel model = detail::load_model_for(cfg, ds, ckpt);

  GammaParams q;
  if (model.spec().variant == Variant::lt_node) {
    q = model.posterior_params();
  } else {
    const Dataset train_ds = subset(ds, Split::train);
    Array alpha, beta;
    model.infer_posterior_raw(train_ds.inputs, alpha, beta);
    q = {alpha.mean(), beta.mean()};
  }
  const GammaParams prior = cfg.training.elbo.prior;

  // Density at 0 by the limit of the Gamma pdf in its shape parameter.
  auto pdf0 = [](const GammaParams& g) {
    if (g.alpha > 1.0) return 0.0;
    if (g.alpha == 1.0) return g.beta;
    return std::numeric_limits<double>::infinity();
  };
  {
    std::ofstream f(out / "posterior.csv");
    if (!f) throw io_error("cannot open posterior.csv");
    f.precision(17);
    f << "t,prior_pdf,posterior_pdf\n";
    for (int i = 0; i <= 600; ++i) {
      const double t = 6.0 * static_cast<double>(i) / 600.0;
      const double pp = t == 0.0 ? pdf0(prior) : gamma_pdf(t, prior.alpha, prior.beta);
      const double qp = t == 0.0 ? pdf0(q) : gamma_pdf(t, q.alpha, q.beta);
      f << t << ',' << pp << ',' << qp << '\n';
    }
  }
  nlohmann::json j;
  j["prior"] = {{"alpha", prior.alpha}, {"beta", prior.beta}};
  j["posterior"] = {{"alpha", q.alpha}, {"beta", q.beta}};
  j["posterior_mean"] = q.alpha / q.beta;
  j["posterior_mode"] = q.alpha >= 1.0 ? (q.alpha - 1.0) / q.beta : 0.0;
  detail::write_text_file(out / "posterior.json", j.dump(2) + "\n");
  write_manifest(out, "posterior-report", config_text, cfg.seed);
}

// Consolidates one run directory into report.json: metric contents inline,
// every CSV artifact by relative path, required-but-absent files listed under
// "missing". Returns 0 when nothing is missing, 1 otherwise.
inline int run_report(const std::filesystem::path& dir) {
  nlohmann::json report;
  std::vector<std::string> missing;
  for (const char* requirement : {"manifest.json", "metrics.json"}) {
    if (!std::filesystem::exists(dir / requirement)) missing.push_back(requirement);
  }
  if (std::filesystem::exists(dir / "manifest.json")) {
    report["manifest"] = nlohmann::json::parse(detail::read_text_file(dir / "manifest.json"));
  }
  if (std::filesystem::exists(dir / "metrics.json")) {
    report["metrics"] = nlohmann::json::parse(detail::read_text_file(dir / "metrics.json"));
  }
  if (std::filesystem::exists(dir / "posterior.json")) {
    report["posterior"] = nlohmann::json::parse(detail::read_text_file(dir / "posterior.json"));
  }
  std::vector<std::string> csvs;
  if (std::filesystem::exists(dir)) {
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
      if (entry.path().extension() == ".csv") csvs.push_back(entry.path().filename().string());
    }
  }
  std::sort(csvs.begin(), csvs.end());
  report["curves"] = csvs;
  if (std::filesystem::exists(dir / "model.ckpt")) report["checkpoint"] = "model.ckpt";
  report["missing"] = missing;
  std::filesystem::create_directories(dir);
  detail::write_text_file(dir / "report.json", report.dump(2) + "\n");
  return missing.empty() ? 0 : 1;
}

}  // namespace ltnode
