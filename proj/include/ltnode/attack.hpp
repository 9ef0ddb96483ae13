#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "ltnode/errors.hpp"
#include "ltnode/model.hpp"
#include "ltnode/training.hpp"

namespace ltnode {

struct AttackConfig {
  std::vector<double> epsilons{0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3};
  bool clip = false;  // clamp perturbed inputs to [clip_lo, clip_hi]
  double clip_lo = 0.0;
  double clip_hi = 1.0;

  void validate() const {
    if (epsilons.empty()) throw contract_error("AttackConfig: epsilons must be nonempty");
    double prev = -1.0;
    for (double e : epsilons) {
      if (!(e >= 0.0) || !std::isfinite(e)) {
        throw contract_error("AttackConfig: epsilons must be finite and >= 0");
      }
      if (e < prev) throw contract_error("AttackConfig: epsilons must be sorted ascending");
      prev = e;
    }
    if (clip && !(clip_lo < clip_hi)) {
      throw contract_error("AttackConfig: clip range needs clip_lo < clip_hi");
    }
  }
};

// End-times drawn once per attack and reused for the gradient and every
// post-attack evaluation, so the attack targets the exact predictive
// function being measured.
struct FrozenTimes {
  std::vector<double> shared;                    // node / uni_node / lt_node
  std::vector<std::vector<double>> per_example;  // alt_node
};

inline FrozenTimes freeze_attack_times(const LatentTimeModel& m, const kernels::RowMat& x, int S,
                                       Rng& rng) {
  FrozenTimes ft;
  if (m.spec().variant == Variant::alt_node) {
    if (x.rows() == 0) throw contract_error("freeze_attack_times: empty input batch");
    Array alpha, beta;
    m.infer_posterior_raw(x, alpha, beta);
    ft.per_example.resize(static_cast<std::size_t>(x.rows()));
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      ft.per_example[static_cast<std::size_t>(i)] =
          sample_end_times_gamma(alpha[i], beta[i], S, rng);
    }
  } else {
    ft.shared = sample_end_times(m, S, rng);
  }
  return ft;
}

// Elementwise sign with sign(0) = 0.
inline kernels::RowMat fgsm_sign(const kernels::RowMat& grad) {
  kernels::RowMat s(grad.rows(), grad.cols());
  for (Eigen::Index i = 0; i < grad.rows(); ++i) {
    for (Eigen::Index j = 0; j < grad.cols(); ++j) {
      const double g = grad(i, j);
      s(i, j) = (g > 0.0) ? 1.0 : (g < 0.0 ? -1.0 : 0.0);
    }
  }
  return s;
}

// x + eps * sign(grad); epsilon 0 returns x bitwise.
inline kernels::RowMat apply_perturbation(const kernels::RowMat& x, const kernels::RowMat& grad,
                                          double epsilon, const AttackConfig& cfg = {}) {
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) {
    throw contract_error("apply_perturbation: epsilon must be finite and >= 0");
  }
  if (x.rows() != grad.rows() || x.cols() != grad.cols()) {
    throw shape_error("apply_perturbation: input/gradient shape mismatch");
  }
  kernels::RowMat out = x;
  if (epsilon > 0.0) out += epsilon * fgsm_sign(grad);
  if (cfg.clip) {
    for (Eigen::Index i = 0; i < out.rows(); ++i)
      for (Eigen::Index j = 0; j < out.cols(); ++j)
        out(i, j) = std::clamp(out(i, j), cfg.clip_lo, cfg.clip_hi);
  }
  return out;
}

namespace detail {

// Negative log-likelihood of the targets at the mean prediction over the
// sampled end-times, summed over the batch (the FGSM loss).
inline Tensor mean_prediction_nll(const LatentTimeModel& m, const std::vector<Tensor>& states,
                                  const Dataset& batch) {
  const double inv_s = 1.0 / static_cast<double>(states.size());
  if (m.spec().task == Task::classification) {
    Tensor mean_probs;
    for (const auto& st : states) {
      Tensor p = softmax(m.head_forward(st));
      mean_probs = mean_probs.defined() ? add(mean_probs, p) : p;
    }
    mean_probs = scalar_mul(mean_probs, inv_s);
    Tensor p_true = gather_cols(mean_probs, batch.labels);
    return scalar_mul(reduce_sum(log(p_true)), -1.0);
  }
  const Eigen::Index n = batch.size();
  Tensor mean_pred;
  for (const auto& st : states) {
    Tensor yhat = reshape(m.head_forward(st), {n});
    mean_pred = mean_pred.defined() ? add(mean_pred, yhat) : yhat;
  }
  mean_pred = scalar_mul(mean_pred, inv_s);
  Tensor y = Tensor::constant({n}, batch.targets.array());
  return scalar_mul(squared_error(mean_pred, y), 0.5);
}

inline kernels::RowMat fgsm_gradient_shared(const LatentTimeModel& m, const Dataset& batch,
                                            const std::vector<double>& times,
                                            const SolverConfig& solver) {
  const Eigen::Index n = batch.size(), d = batch.dim();
  Tape tape;
  TapeScope scope(tape);
  Tensor x = Tensor::param({n, d},
                           Eigen::Map<const Array>(batch.inputs.data(), batch.inputs.size()));
  Tensor h0 = m.input_forward(x);
  auto states = two_phase_solve(m.dynamics_callbacks(n), h0, times, solver).states;
  Tensor loss = mean_prediction_nll(m, states, batch);
  backward(loss, tape);
  kernels::RowMat grad(n, d);
  Eigen::Map<Array>(grad.data(), grad.size()) = x.grad();
  return grad;
}

}  // namespace detail

// Gradient of the attack loss w.r.t. the inputs at the frozen end-times.
inline kernels::RowMat fgsm_gradient(const LatentTimeModel& m, const Dataset& batch,
                                     const FrozenTimes& times, const SolverConfig& solver = {}) {
  if (batch.size() == 0) throw contract_error("fgsm_gradient: empty batch");
  if (m.spec().task == Task::classification && batch.labels.empty()) {
    throw contract_error("fgsm_gradient: classification attack needs labels");
  }
  if (m.spec().task == Task::regression && batch.targets.size() == 0) {
    throw contract_error("fgsm_gradient: regression attack needs targets");
  }
  if (m.spec().variant != Variant::alt_node) {
    if (times.shared.empty()) throw contract_error("fgsm_gradient: no frozen times");
    return detail::fgsm_gradient_shared(m, batch, times.shared, solver);
  }
  if (times.per_example.size() != static_cast<std::size_t>(batch.size())) {
    throw contract_error("fgsm_gradient: per-example time count mismatch");
  }
  kernels::RowMat grad(batch.size(), batch.dim());
  for (Eigen::Index i = 0; i < batch.size(); ++i) {
    Dataset one = detail::gather_batch(batch, {i});
    grad.row(i) = detail::fgsm_gradient_shared(m, one, times.per_example[static_cast<std::size_t>(i)],
                                               solver).row(0);
  }
  return grad;
}

// Single-step white-box perturbation at explicitly frozen times.
inline kernels::RowMat fgsm_perturb(const LatentTimeModel& m, const Dataset& batch, double epsilon,
                                    const FrozenTimes& times, const SolverConfig& solver = {},
                                    const AttackConfig& cfg = {}) {
  return apply_perturbation(batch.inputs, fgsm_gradient(m, batch, times, solver), epsilon, cfg);
}

// Convenience overload drawing the S end-times itself.
inline kernels::RowMat fgsm_perturb(const LatentTimeModel& m, const Dataset& batch, double epsilon,
                                    int S, Rng& rng, const SolverConfig& solver = {},
                                    const AttackConfig& cfg = {}) {
  const FrozenTimes ft = freeze_attack_times(m, batch.inputs, S, rng);
  return fgsm_perturb(m, batch, epsilon, ft, solver, cfg);
}

struct SweepRow {
  double epsilon = 0.0;
  double error = 0.0;
  long n_examples = 0;
};

namespace detail {

inline double classification_error_at(const LatentTimeModel& m, const kernels::RowMat& x,
                                      const std::vector<int>& labels, const FrozenTimes& times,
                                      const SolverConfig& solver) {
  const Eigen::Index n = x.rows();
  long mistakes = 0;
  auto count = [&labels, &mistakes](const PredictiveSet& ps, Eigen::Index i, std::size_t entry) {
    Eigen::Index argmax = 0;
    ps.entries[entry].mean.maxCoeff(&argmax);
    if (argmax != labels[static_cast<std::size_t>(i)]) ++mistakes;
  };
  if (m.spec().variant != Variant::alt_node) {
    const PredictiveSet ps = predict_probability_at(m, x, times.shared, solver);
    for (Eigen::Index i = 0; i < n; ++i) count(ps, i, static_cast<std::size_t>(i));
  } else {
    for (Eigen::Index i = 0; i < n; ++i) {
      kernels::RowMat row = x.row(i);
      const PredictiveSet ps =
          predict_probability_at(m, row, times.per_example[static_cast<std::size_t>(i)], solver);
      count(ps, i, 0);
    }
  }
  return static_cast<double>(mistakes) / static_cast<double>(n);
}

}  // namespace detail

// Error-vs-epsilon sweep at explicitly frozen times: one gradient at the
// clean inputs, every epsilon evaluated on its own perturbed copy. The
// epsilon-0 row reruns the clean inputs bit-for-bit.
inline std::vector<SweepRow> fgsm_sweep_at(const LatentTimeModel& m, const Dataset& data,
                                           const AttackConfig& cfg, const FrozenTimes& times,
                                           const SolverConfig& solver = {}) {
  cfg.validate();
  if (m.spec().task != Task::classification) {
    throw contract_error("fgsm_sweep: classification task required");
  }
  if (data.size() == 0 || data.labels.empty()) {
    throw contract_error("fgsm_sweep: labeled data required");
  }
  const kernels::RowMat grad = fgsm_gradient(m, data, times, solver);
  std::vector<SweepRow> rows;
  rows.reserve(cfg.epsilons.size());
  for (double eps : cfg.epsilons) {
    const kernels::RowMat xt = apply_perturbation(data.inputs, grad, eps, cfg);
    SweepRow r;
    r.epsilon = eps;
    r.error = detail::classification_error_at(m, xt, data.labels, times, solver);
    r.n_examples = static_cast<long>(data.size());
    rows.push_back(r);
  }
  return rows;
}

inline std::vector<SweepRow> fgsm_sweep(const LatentTimeModel& m, const Dataset& data,
                                        const AttackConfig& cfg, int S, Rng& rng,
                                        const SolverConfig& solver = {}) {
  const FrozenTimes ft = freeze_attack_times(m, data.inputs, S, rng);
  return fgsm_sweep_at(m, data, cfg, ft, solver);
}

inline void write_sweep_csv(const std::vector<SweepRow>& rows, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw io_error("write_sweep_csv: cannot open " + path);
  f.precision(17);
  f << "epsilon,error,n_examples\n";
  for (const auto& r : rows) f << r.epsilon << ',' << r.error << ',' << r.n_examples << '\n';
  if (!f) throw io_error("write_sweep_csv: write failure on " + path);
}

}  // namespace ltnode
