#include <cmath>
#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/Core>

#include "ltnode/experiment.hpp"
#include "ltnode/oracles.hpp"

namespace {

struct LoadedConfig {
  ltnode::ExperimentConfig cfg;
  std::string text;
};

LoadedConfig load_config(const std::string& path, std::int64_t seed_override) {
  std::string text = ltnode::detail::read_text_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ltnode::config_error("config " + path + " is not valid JSON: " + e.what());
  }
  if (seed_override >= 0) j["seed"] = static_cast<std::uint64_t>(seed_override);
  return {ltnode::parse_experiment_config(j), std::move(text)};
}

// ---------------------------------------------------------------------------
// verify: oracle cross-checks runnable from a shipped binary
// ---------------------------------------------------------------------------

bool report_check(const char* name, bool ok, const std::string& detail) {
  if (ok) std::cout << "verify " << name << ": ok\n";
  else std::cout << "verify " << name << ": FAIL (" << detail << ")\n";
  return ok;
}

bool check_gamma_kl() {
  ltnode::Rng rng(41);
  double worst = 0.0;
  for (int i = 0; i < 25; ++i) {
    const ltnode::GammaParams q{rng.uniform(0.3, 8.0), rng.uniform(0.3, 8.0)};
    const ltnode::GammaParams p{rng.uniform(0.3, 8.0), rng.uniform(0.3, 8.0)};
    const double closed = ltnode::gamma_kl(q, p);
    const double quad = ltnode::oracles::quad_integrate_halfline([&](double t) {
      const double lq = ltnode::gamma_log_pdf(t, q.alpha, q.beta);
      return std::exp(lq) * (lq - ltnode::gamma_log_pdf(t, p.alpha, p.beta));
    });
    worst = std::max(worst, std::abs(closed - quad));
  }
  return report_check("gamma-kl-quadrature", worst <= 1e-6,
                      "max abs diff " + std::to_string(worst));
}

bool check_solver() {
  ltnode::SolverConfig cfg;
  cfg.atol = cfg.rtol = 1e-6;
  const ltnode::Array y0 = ltnode::Array::Constant(1, 1.0);
  auto f = [](double, const ltnode::Array& y, ltnode::Array& dy) { dy = -y; };
  const auto traj = ltnode::solve(f, y0, 0.0, 1.0, cfg);
  const double got = traj.states.back()[0];
  const double err = std::abs(got - std::exp(-1.0));
  const auto oracle = ltnode::oracles::reference_predict(f, y0, {1.0});
  const double vs_rk4 = std::abs(got - oracle[0][0]);
  return report_check("solver-exp-decay", err <= 1e-4 && vs_rk4 <= 1e-4,
                      "analytic err " + std::to_string(err));
}

bool check_two_phase_gradients() {
  using namespace ltnode;
  Rng rng(7);
  const Eigen::Index batch = 2, h = 4, mid = 6;
  auto randarr = [&rng](Eigen::Index n) {
    Array a(n);
    for (Eigen::Index k = 0; k < n; ++k) a[k] = rng.uniform(-0.5, 0.5);
    return a;
  };
  Tensor w1 = Tensor::param({h, mid}, randarr(h * mid));
  Tensor b1 = Tensor::param({mid}, randarr(mid));
  Tensor w2 = Tensor::param({mid, h}, randarr(mid * h));
  Tensor b2 = Tensor::param({h}, randarr(h));
  Tensor y0 = Tensor::constant({batch, h}, randarr(batch * h));
  auto fn = [&](double, const Tensor& y) {
    return dense_layer(dense_layer(y, w1, b1, Act::tanh), w2, b2, Act::none);
  };
  const std::vector<double> times{0.5, 1.3};
  SolverConfig scfg;
  scfg.atol = scfg.rtol = 1e-6;

  auto cb = callbacks_from_tensor_fn(fn, {batch, h});
  Tape tape;
  double base;
  {
    TapeScope scope(tape);
    auto states = two_phase_solve(cb, y0, times, scfg);
    Tensor loss = add(reduce_sum(states.states[0]), reduce_sum(states.states[1]));
    base = loss.item();
    backward(loss, tape);
  }
  (void)base;

  auto eval_loss = [&]() {
    NoGradScope ng;
    auto states = two_phase_solve(cb, y0, times, scfg);
    return states.states[0].values().sum() + states.states[1].values().sum();
  };
  double worst = 0.0;
  const double eps = 1e-5;
  for (Tensor* p : {&w1, &b1, &w2, &b2}) {
    for (Eigen::Index i = 0; i < p->size(); ++i) {
      const double save = p->values()[i];
      p->values()[i] = save + eps;
      const double fp = eval_loss();
      p->values()[i] = save - eps;
      const double fm = eval_loss();
      p->values()[i] = save;
      const double fd = (fp - fm) / (2.0 * eps);
      const double g = p->grad()[i];
      const double rel = std::abs(fd - g) / std::max({std::abs(fd), std::abs(g), 1e-6});
      worst = std::max(worst, rel);
    }
  }
  return report_check("two-phase-gradients", worst <= 1e-4,
                      "max rel err " + std::to_string(worst));
}

bool check_metrics() {
  using namespace ltnode;
  Rng rng(11);
  double worst = 0.0;
  for (int rep = 0; rep < 10; ++rep) {
    const int n = 30 + static_cast<int>(rng.uniform01() * 50);
    const int c = 2 + static_cast<int>(rng.uniform01() * 5);
    PredictiveSet ps;
    ps.task = Task::classification;
    ps.num_classes = c;
    std::vector<Array> probs;
    std::vector<int> labels;
    for (int i = 0; i < n; ++i) {
      Array p(c);
      for (int k = 0; k < c; ++k) p[k] = -std::log(1.0 - rng.uniform01());
      p /= p.sum();
      const int label = static_cast<int>(rng.uniform01() * c);
      PredictiveEntry e;
      e.samples = Eigen::ArrayXXd(1, c);
      e.samples.row(0) = p.transpose();
      e.mean = p;
      e.label = label;
      ps.entries.push_back(e);
      probs.push_back(p);
      labels.push_back(label);
    }
    const auto m = classification_metrics(ps);
    worst = std::max(worst, std::abs(m.ece - oracles::ece_definitional(probs, labels)));
    worst = std::max(worst, std::abs(m.brier - oracles::brier_definitional(probs, labels)));

    std::vector<double> s_in, s_out;
    for (int i = 0; i < 40; ++i) s_in.push_back(rng.uniform(0.0, 1.0));
    for (int i = 0; i < 30; ++i) s_out.push_back(rng.uniform(0.3, 1.3));
    const auto sep = auroc_aupr(s_in, s_out);
    worst = std::max(worst, std::abs(sep.auroc - oracles::auroc_pairs(s_in, s_out)));
    worst = std::max(worst,
                     std::abs(sep.aupr_out - oracles::average_precision_bruteforce(s_in, s_out, true)));
    worst = std::max(worst,
                     std::abs(sep.aupr_in - oracles::average_precision_bruteforce(s_in, s_out, false)));
  }
  return report_check("metric-oracles", worst <= 1e-12, "max abs diff " + std::to_string(worst));
}

bool check_special_functions() {
  using namespace ltnode;
  double worst = 0.0;
  for (double x = 0.1; x <= 30.0; x += 0.37) {
    const double rel = std::abs(lgamma_fn(x) - std::lgamma(x)) /
                       std::max(1.0, std::abs(std::lgamma(x)));
    worst = std::max(worst, rel);
    const double eps = 1e-6;
    const double fd = (std::lgamma(x + eps) - std::lgamma(x - eps)) / (2.0 * eps);
    worst = std::max(worst, std::abs(digamma_fn(x) - fd) / std::max(1.0, std::abs(fd)));
  }
  return report_check("special-functions", worst <= 1e-5, "max rel err " + std::to_string(worst));
}

bool check_prediction_path() {
  using namespace ltnode;
  ModelSpec spec = ModelSpec::synthetic_regression(Variant::node);
  spec.input_widths = {8};
  spec.node_widths = {8};
  spec.input_dim = 1;
  LatentTimeModel m(spec, 5);
  kernels::RowMat x(3, 1);
  x << -0.7, 0.1, 0.9;
  const std::vector<double> times{0.3, 0.9, 1.7, 2.4};
  SolverConfig cfg;
  cfg.atol = cfg.rtol = 1e-4;
  const auto fast = forward_at_times(m, x, times, cfg);

  Array h0;
  m.input_forward_raw(x, h0);
  auto cb = m.dynamics_callbacks(3);
  const auto states = oracles::reference_predict(cb.raw, h0, times);
  double worst = 0.0;
  for (std::size_t s = 0; s < times.size(); ++s) {
    Array head;
    m.head_forward_raw(states[s], 3, head);
    for (Eigen::Index i = 0; i < 3; ++i) {
      worst = std::max(worst, std::abs(head[i] - fast[s](i, 0)));
    }
  }
  return report_check("prediction-independent-solves", worst <= 1e-3,
                      "max abs diff " + std::to_string(worst));
}

bool check_gamma_sampler() {
  using namespace ltnode;
  Rng rng(99);
  const double alpha = 2.0, beta = 0.5;
  const int n = 200000;
  double sum = 0.0, sumsq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double t = gamma_sample(rng, alpha, beta);
    sum += t;
    sumsq += t * t;
  }
  const double mean = sum / n;
  const double var = sumsq / n - mean * mean;
  const bool ok = std::abs(mean - alpha / beta) < 0.05 &&
                  std::abs(var - alpha / (beta * beta)) < 0.5;
  return report_check("gamma-sampler-moments", ok,
                      "mean " + std::to_string(mean) + " var " + std::to_string(var));
}

bool check_checkpoint_roundtrip() {
  using namespace ltnode;
  ModelSpec spec = ModelSpec::toy_classifier(Variant::lt_node);
  LatentTimeModel m(spec, 3);
  const auto path = std::filesystem::temp_directory_path() / "ltnode_verify.ckpt";
  save_checkpoint(m, path.string());
  const LatentTimeModel back = load_checkpoint(path.string());
  std::filesystem::remove(path);
  bool ok = parameter_count(m) == parameter_count(back);
  if (ok) {
    for (std::size_t i = 0; i < m.params().size(); ++i) {
      const auto& a = m.params()[i].tensor.values();
      const auto& b = back.params()[i].tensor.values();
      if (a.size() != b.size() || (a != b).any()) {
        ok = false;
        break;
      }
    }
  }
  return report_check("checkpoint-roundtrip", ok, "parameters differ after reload");
}

int run_verify() {
  bool ok = true;
  ok &= check_gamma_kl();
  ok &= check_solver();
  ok &= check_two_phase_gradients();
  ok &= check_metrics();
  ok &= check_special_functions();
  ok &= check_prediction_path();
  ok &= check_gamma_sampler();
  ok &= check_checkpoint_roundtrip();
  std::cout << (ok ? "verify: all checks passed\n" : "verify: FAILURES above\n");
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  if (const char* tn = std::getenv("LTNODE_THREADS")) {
    Eigen::setNbThreads(std::max(1, std::atoi(tn)));
  }

  CLI::App app{"latent-time neural ODE experiment runner"};
  app.require_subcommand(1);

  std::string config_path, out_dir, ckpt_path;
  std::int64_t seed_override = -1;

  auto add_common = [&](CLI::App* sub, bool needs_ckpt) {
    sub->add_option("--config", config_path, "experiment config JSON")->required();
    sub->add_option("--out", out_dir, "output directory")->required();
    sub->add_option("--seed", seed_override, "seed override")->check(CLI::NonNegativeNumber);
    if (needs_ckpt) {
      sub->add_option("--ckpt", ckpt_path, "checkpoint path (default <out>/model.ckpt)");
    }
  };

  CLI::App* train = app.add_subcommand("train", "train a model, write trace and checkpoint");
  add_common(train, false);
  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint, write metrics and curves");
  add_common(eval, true);
  CLI::App* attack = app.add_subcommand("attack", "FGSM sweep against a checkpoint");
  add_common(attack, true);
  CLI::App* posterior =
      app.add_subcommand("posterior-report", "prior vs learned posterior densities");
  add_common(posterior, true);

  std::string report_dir;
  CLI::App* report = app.add_subcommand("report", "consolidate run artifacts into report.json");
  report->add_option("--out", report_dir, "artifact directory")->required();

  CLI::App* verify = app.add_subcommand("verify", "run oracle cross-checks");
  verify->group("");  // hidden

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand(verify)) return run_verify();
    if (app.got_subcommand(report)) return ltnode::run_report(report_dir);

    const LoadedConfig lc = load_config(config_path, seed_override);
    const std::filesystem::path out(out_dir);
    const std::filesystem::path ckpt =
        ckpt_path.empty() ? out / "model.ckpt" : std::filesystem::path(ckpt_path);

    if (app.got_subcommand(train)) {
      ltnode::run_train(lc.cfg, lc.text, out);
    } else if (app.got_subcommand(eval)) {
      ltnode::run_eval(lc.cfg, lc.text, out, ckpt);
    } else if (app.got_subcommand(attack)) {
      ltnode::run_attack(lc.cfg, lc.text, out, ckpt);
    } else if (app.got_subcommand(posterior)) {
      ltnode::run_posterior_report(lc.cfg, lc.text, out, ckpt);
    }
  } catch (const ltnode::config_error& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const ltnode::contract_error& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const ltnode::numeric_error& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 3;
  } catch (const std::domain_error& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 3;
  } catch (const ltnode::integrity_error& e) {
    std::cerr << "artifact error: " << e.what() << '\n';
    return 4;
  } catch (const ltnode::io_error& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
