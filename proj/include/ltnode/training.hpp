#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "ltnode/datasets.hpp"
#include "ltnode/errors.hpp"
#include "ltnode/gamma.hpp"
#include "ltnode/model.hpp"
#include "ltnode/optimizer.hpp"

namespace ltnode {

struct ElboConfig {
  GammaParams prior{2.0, 0.5};
  double grid_a = 0.0;  // Uniform(a, b) end-time grid of the expectation term
  double grid_b = 3.0;
  int S = 10;
  SolverConfig solver;
};

// Per-example log-likelihood of an observed target. Classification outputs
// are probability vectors; regression uses the squared-error form
// -(y - yhat)^2 / 2.
inline double likelihood_log_prob(const Array& output, double target, Task task) {
  if (task == Task::regression) {
    if (output.size() != 1) {
      throw shape_error("likelihood_log_prob: regression output must be a single value");
    }
    const double d = target - output[0];
    return -0.5 * d * d;
  }
  const int label = static_cast<int>(target);
  if (label < 0 || label >= output.size()) {
    throw contract_error("likelihood_log_prob: label out of range");
  }
  if (std::abs(output.sum() - 1.0) > 1e-6) {
    throw contract_error("likelihood_log_prob: classification output must be a probability "
                         "vector (sums to 1)");
  }
  return std::log(output[label]);
}

namespace detail {

// Recorded per-example log-likelihood vector (n) at one end-time's outputs.
inline Tensor loglik_vector(const LatentTimeModel& m, const Tensor& state, const Dataset& batch) {
  Tensor head = m.head_forward(state);
  if (m.spec().task == Task::classification) {
    return log_softmax_nll(head, batch.labels);
  }
  const Eigen::Index n = batch.size();
  Tensor pred = reshape(head, {n});
  Tensor y = Tensor::constant({n}, batch.targets.array());
  Tensor d = sub(pred, y);
  return scalar_mul(mul(d, d), -0.5);
}

inline void check_elbo_args(const Dataset& batch, const ElboConfig& cfg,
                            const std::vector<double>& times) {
  if (batch.size() == 0) throw contract_error("elbo: empty batch");
  if (!(cfg.grid_b > cfg.grid_a) || !(cfg.grid_a >= 0.0)) {
    throw contract_error("elbo: requires 0 <= grid_a < grid_b");
  }
  if (times.empty()) throw contract_error("elbo: needs at least one sampled end-time");
  check_positive(cfg.prior.alpha, "elbo: prior.alpha");
  check_positive(cfg.prior.beta, "elbo: prior.beta");
}

}  // namespace detail

// ELBO of the global-posterior model at explicitly given grid samples
// (sorted ascending, drawn Uniform(grid_a, grid_b) by the sampling wrapper):
//   sum_s w_s sum_i log p(y_i | T_s)  -  KL(q || prior),
//   w_s = q(T_s) / sum_s' q(T_s'),
// summed over the batch (not averaged). The grid samples act as importance
// points for E_q[log p]; self-normalizing the weights keeps the likelihood
// term on the same scale regardless of how much posterior mass the grid
// window captures. With raw q(T_s) weights the estimator is maximized by
// pushing q out of the window entirely (all log-likelihoods are negative),
// which stalls training instead of concentrating the posterior.
inline Tensor elbo_lt_at(const LatentTimeModel& m, const Dataset& batch, const ElboConfig& cfg,
                         const std::vector<double>& times) {
  if (m.spec().variant != Variant::lt_node) {
    throw contract_error("elbo_lt_at: model variant is not lt_node");
  }
  detail::check_elbo_args(batch, cfg, times);
  const Eigen::Index n = batch.size();
  Tensor x = Tensor::constant({n, batch.dim()},
                              Eigen::Map<const Array>(batch.inputs.data(), batch.inputs.size()));
  Tensor h0 = m.input_forward(x);
  auto cb = m.dynamics_callbacks(n);
  auto states = two_phase_solve(cb, h0, times, cfg.solver).states;

  Tensor alpha_q = softplus(m.alpha_raw());
  Tensor beta_q = softplus(m.beta_raw());

  std::vector<Tensor> log_q(times.size());
  double max_lq = -std::numeric_limits<double>::infinity();
  for (std::size_t s = 0; s < times.size(); ++s) {
    log_q[s] = gamma_log_pdf_t(alpha_q, beta_q, times[s]);
    max_lq = std::max(max_lq, log_q[s].item());
  }
  // log sum_s q(T_s), shifted by the (constant) max for stability
  Tensor shift = Tensor::scalar(max_lq);
  Tensor norm;
  for (std::size_t s = 0; s < times.size(); ++s) {
    Tensor e = exp(sub(log_q[s], shift));
    norm = norm.defined() ? add(norm, e) : e;
  }
  Tensor log_norm = add(shift, log(norm));

  Tensor expected;
  for (std::size_t s = 0; s < times.size(); ++s) {
    Tensor ll_sum = reduce_sum(detail::loglik_vector(m, states[s], batch));
    Tensor w_s = exp(sub(log_q[s], log_norm));
    Tensor term = mul(ll_sum, w_s);
    expected = expected.defined() ? add(expected, term) : term;
  }
  return sub(expected, gamma_kl_t(alpha_q, beta_q, cfg.prior));
}

// Per-input posterior ELBO (inference network), same estimator with
// q(T_s | x_i) inside the double sum.
inline Tensor elbo_alt_at(const LatentTimeModel& m, const Dataset& batch, const ElboConfig& cfg,
                          const std::vector<double>& times) {
  if (m.spec().variant != Variant::alt_node) {
    throw contract_error("elbo_alt_at: model variant is not alt_node");
  }
  detail::check_elbo_args(batch, cfg, times);
  const Eigen::Index n = batch.size();
  Tensor x = Tensor::constant({n, batch.dim()},
                              Eigen::Map<const Array>(batch.inputs.data(), batch.inputs.size()));
  Tensor h0 = m.input_forward(x);
  auto cb = m.dynamics_callbacks(n);
  auto states = two_phase_solve(cb, h0, times, cfg.solver).states;

  auto [alpha, beta] = m.infer_posterior(x);

  std::vector<Tensor> log_q(times.size());
  Array max_lq;
  for (std::size_t s = 0; s < times.size(); ++s) {
    log_q[s] = gamma_log_pdf_t(alpha, beta, times[s]);
    max_lq = (s == 0) ? Array(log_q[s].values()) : max_lq.max(log_q[s].values());
  }
  // per-example normalizer across the S grid samples
  Tensor shift = Tensor::constant({n}, max_lq);
  Tensor norm;
  for (std::size_t s = 0; s < times.size(); ++s) {
    Tensor e = exp(sub(log_q[s], shift));
    norm = norm.defined() ? add(norm, e) : e;
  }
  Tensor log_norm = add(shift, log(norm));

  Tensor expected;
  for (std::size_t s = 0; s < times.size(); ++s) {
    Tensor ll = detail::loglik_vector(m, states[s], batch);
    Tensor w_s = exp(sub(log_q[s], log_norm));
    Tensor term = reduce_sum(mul(ll, w_s));
    expected = expected.defined() ? add(expected, term) : term;
  }
  Tensor kl = reduce_sum(gamma_kl_t(alpha, beta, cfg.prior));
  return sub(expected, kl);
}

// Sampling wrappers: S grid points drawn Uniform(grid_a, grid_b), sorted.
inline std::vector<double> sample_grid_times(const ElboConfig& cfg, Rng& rng) {
  std::vector<double> times(static_cast<std::size_t>(cfg.S));
  for (auto& t : times) t = rng.uniform(cfg.grid_a, cfg.grid_b);
  std::sort(times.begin(), times.end());
  return times;
}

inline Tensor elbo_lt(const LatentTimeModel& m, const Dataset& batch, const ElboConfig& cfg,
                      Rng& rng) {
  return elbo_lt_at(m, batch, cfg, sample_grid_times(cfg, rng));
}

inline Tensor elbo_alt(const LatentTimeModel& m, const Dataset& batch, const ElboConfig& cfg,
                       Rng& rng) {
  return elbo_alt_at(m, batch, cfg, sample_grid_times(cfg, rng));
}

struct TrainConfig {
  long iterations = 3000;
  int batch_size = 0;  // 0 = full batch
  ElboConfig elbo;
  SgdConfig theta_opt{0.001, 0.9, 1e-4, {}};
  SgdConfig var_opt{0.001, 0.9, 0.0, {}};
  std::uint64_t seed = 0;
};

inline std::vector<Milestone> decay_milestones(long every, double factor, long total) {
  std::vector<Milestone> ms;
  for (long it = every; it < total; it += every) ms.push_back({it, factor});
  return ms;
}

struct TraceRow {
  long iteration = 0;
  double loss = 0.0;      // negative ELBO (sum form) or negative mean log-lik
  double alpha_q = 0.0;   // lt: posterior; alt: batch mean
  double beta_q = 0.0;
};

struct TrainResult {
  std::vector<TraceRow> trace;
};

namespace detail {

inline Dataset gather_batch(const Dataset& ds, const std::vector<Eigen::Index>& idx) {
  Dataset out;
  out.num_classes = ds.num_classes;
  const auto m = static_cast<Eigen::Index>(idx.size());
  out.inputs.resize(m, ds.dim());
  if (ds.targets.size()) out.targets.resize(m);
  if (!ds.labels.empty()) out.labels.resize(static_cast<std::size_t>(m));
  out.split.assign(static_cast<std::size_t>(m), Split::train);
  for (Eigen::Index i = 0; i < m; ++i) {
    const Eigen::Index j = idx[static_cast<std::size_t>(i)];
    out.inputs.row(i) = ds.inputs.row(j);
    if (ds.targets.size()) out.targets[i] = ds.targets[j];
    if (!ds.labels.empty()) out.labels[static_cast<std::size_t>(i)] =
        ds.labels[static_cast<std::size_t>(j)];
  }
  return out;
}

// Likelihood-only objective of the fixed/uniform variants: mean over batch
// and sampled times of log p(y | T_s), negated.
inline Tensor baseline_loss(const LatentTimeModel& m, const Dataset& batch,
                            const std::vector<double>& times, const SolverConfig& solver) {
  const Eigen::Index n = batch.size();
  Tensor x = Tensor::constant({n, batch.dim()},
                              Eigen::Map<const Array>(batch.inputs.data(), batch.inputs.size()));
  Tensor h0 = m.input_forward(x);
  auto cb = m.dynamics_callbacks(n);
  auto states = two_phase_solve(cb, h0, times, solver).states;
  Tensor total;
  for (std::size_t s = 0; s < times.size(); ++s) {
    Tensor ll_sum = reduce_sum(loglik_vector(m, states[s], batch));
    total = total.defined() ? add(total, ll_sum) : ll_sum;
  }
  const double scale = -1.0 / (static_cast<double>(n) * static_cast<double>(times.size()));
  return scalar_mul(total, scale);
}

}  // namespace detail

// Full training loop. Stochasticity flows through streams split from the
// seed (sampling, batching); rerunning with the same seed is bitwise
// reproducible. Returns the per-iteration trace.
inline TrainResult train(LatentTimeModel& m, const Dataset& data, const TrainConfig& cfg) {
  if (cfg.iterations < 0) throw contract_error("train: iterations must be >= 0");
  if (data.size() == 0) throw contract_error("train: empty dataset");
  if (m.spec().task == Task::classification && data.labels.empty()) {
    throw contract_error("train: classification model needs labeled data");
  }
  if (m.spec().task == Task::regression && data.targets.size() == 0) {
    throw contract_error("train: regression model needs targets");
  }

  Rng root(cfg.seed);
  Rng sampling = root.split(1);
  Rng batching = root.split(2);

  SgdOptimizer theta_opt(m.theta_params(), cfg.theta_opt);
  auto var_params = m.variational_params();
  SgdOptimizer var_opt(var_params, cfg.var_opt);

  const Eigen::Index n = data.size();
  const bool full_batch = cfg.batch_size <= 0 || cfg.batch_size >= n;
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();  // triggers a shuffle on first use

  TrainResult result;
  result.trace.reserve(static_cast<std::size_t>(cfg.iterations));

  for (long it = 0; it < cfg.iterations; ++it) {
    Dataset batch_storage;
    const Dataset* batch = &data;
    if (!full_batch) {
      std::vector<Eigen::Index> idx(static_cast<std::size_t>(cfg.batch_size));
      for (auto& v : idx) {
        if (cursor == order.size()) {
          for (Eigen::Index i = n - 1; i > 0; --i) {
            const auto j = static_cast<Eigen::Index>(batching.uniform01() *
                                                     static_cast<double>(i + 1));
            std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
          }
          cursor = 0;
        }
        v = order[cursor++];
      }
      batch_storage = detail::gather_batch(data, idx);
      batch = &batch_storage;
    }

    std::vector<double> times;
    switch (m.spec().variant) {
      case Variant::node:
        times.assign(1, m.spec().fixed_time);
        break;
      case Variant::uni_node: {
        times.resize(static_cast<std::size_t>(cfg.elbo.S));
        for (auto& t : times) t = sampling.uniform(m.spec().uniform_a, m.spec().uniform_b);
        std::sort(times.begin(), times.end());
        break;
      }
      case Variant::lt_node:
      case Variant::alt_node:
        times = sample_grid_times(cfg.elbo, sampling);
        break;
    }

    for (const auto& p : m.params()) p.tensor.node()->grad = Array::Zero(p.tensor.size());

    Tape tape;
    double neg_elbo = 0.0;
    try {
      TapeScope scope(tape);
      Tensor loss;
      const auto bn = static_cast<double>(batch->size());
      if (m.spec().variant == Variant::lt_node) {
        Tensor elbo = elbo_lt_at(m, *batch, cfg.elbo, times);
        neg_elbo = -elbo.item();
        loss = scalar_mul(elbo, -1.0 / bn);
      } else if (m.spec().variant == Variant::alt_node) {
        Tensor elbo = elbo_alt_at(m, *batch, cfg.elbo, times);
        neg_elbo = -elbo.item();
        loss = scalar_mul(elbo, -1.0 / bn);
      } else {
        loss = detail::baseline_loss(m, *batch, times, cfg.elbo.solver);
        neg_elbo = loss.item();
      }

      if (!std::isfinite(loss.item())) {
        throw numeric_error("non-finite loss");
      }
      backward(loss, tape);
    } catch (const convergence_error& e) {
      throw convergence_error("train: iteration " + std::to_string(it) + ": " + e.what());
    } catch (const numeric_error& e) {
      throw numeric_error("train: iteration " + std::to_string(it) + ": " + e.what());
    }
    theta_opt.step(it);
    var_opt.step(it);

    TraceRow row;
    row.iteration = it;
    row.loss = neg_elbo;
    if (m.spec().variant == Variant::lt_node) {
      const GammaParams q = m.posterior_params();
      row.alpha_q = q.alpha;
      row.beta_q = q.beta;
    } else if (m.spec().variant == Variant::alt_node) {
      NoGradScope ng;
      Array alpha, beta;
      m.infer_posterior_raw(batch->inputs, alpha, beta);
      row.alpha_q = alpha.mean();
      row.beta_q = beta.mean();
    }
    result.trace.push_back(row);
  }
  return result;
}

inline void write_trace_csv(const TrainResult& result, Variant variant, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw io_error("write_trace_csv: cannot open " + path);
  f.precision(17);
  if (variant == Variant::lt_node) f << "iteration,negative_elbo,alpha_q,beta_q\n";
  else if (variant == Variant::alt_node) f << "iteration,negative_elbo,mean_alpha_q,mean_beta_q\n";
  else f << "iteration,loss\n";
  for (const auto& r : result.trace) {
    f << r.iteration << ',' << r.loss;
    if (variant == Variant::lt_node || variant == Variant::alt_node) {
      f << ',' << r.alpha_q << ',' << r.beta_q;
    }
    f << '\n';
  }
  if (!f) throw io_error("write_trace_csv: write failure on " + path);
}

}  // namespace ltnode
