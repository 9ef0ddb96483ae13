// Acceptance gate: one pass/fail line per criterion, exit code = number of
// failures. Each criterion pins its tolerances locally; training-based
// criteria pin the full experiment setup in the tune namespace below.
//
// Run all:            ltnode_acceptance
// Run a subset:       ltnode_acceptance 1 4 12

#include <unsupported/Eigen/MatrixFunctions>

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ltnode/attack.hpp"
#include "ltnode/checkpoint.hpp"
#include "ltnode/config.hpp"
#include "ltnode/datasets.hpp"
#include "ltnode/metrics.hpp"
#include "ltnode/model.hpp"
#include "ltnode/oracles.hpp"
#include "ltnode/training.hpp"

using namespace ltnode;

namespace {

// ---------------------------------------------------------------------------
// Pinned experiment setups for the training criteria (6, 7, 9, 10).
// ---------------------------------------------------------------------------
namespace tune {

// Synthetic 1-D regression (criteria 6 and 7). Optimizer values are the
// appendix settings read on the unnormalized (summed) ELBO scale; train()
// descends -ELBO/N, so the equivalent per-mean rates are lr*N and wd/N at
// the full batch N=1500.
constexpr long foong_n = 1500;
constexpr double foong_noise = 0.02;
constexpr long foong_iters = 3000;
const std::vector<int> foong_input_widths = {32, 16};
const std::vector<int> foong_node_widths = {32, 16};
constexpr double foong_theta_lr = 1.5;          // 0.001 * 1500
constexpr double foong_theta_wd = 6.6667e-8;    // 1e-4 / 1500
constexpr double foong_var_lr = 1.5;
constexpr int foong_pred_samples = 100;

// Two-moons classification (criteria 9 and 10).
constexpr int moons_n = 500;
constexpr double moons_noise = 0.1;
constexpr double moons_test_fraction = 0.2;
constexpr long moons_iters = 1500;
const std::vector<int> moons_input_widths = {16, 32};
const std::vector<int> moons_node_widths = {32, 32};
constexpr double moons_theta_lr = 0.4;          // 0.001 * 400 (train split)
constexpr double moons_theta_wd = 2.5e-7;       // 1e-4 / 400
constexpr double moons_var_lr = 0.4;
constexpr int moons_ood_n = 200;
const double moons_ood_shift[2] = {4.0, -4.0};
constexpr int moons_pred_samples = 30;

}  // namespace tune

double now_s() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof(buf), f, ap);
  va_end(ap);
  return buf;
}

// ---------------------------------------------------------------------------
// 1. Gradient fidelity on random small dense networks.
// ---------------------------------------------------------------------------
bool criterion1(std::string& msg) {
  const double tol = 1e-4;
  Rng rng(20240801);
  double worst = 0.0;
  long checked = 0;
  for (int net = 0; net < 50; ++net) {
    const int layers = 1 + static_cast<int>(rng.next_u64() % 3);
    const Eigen::Index din = 1 + static_cast<Eigen::Index>(rng.next_u64() % 8);
    const Eigen::Index batch = 2 + static_cast<Eigen::Index>(rng.next_u64() % 3);
    std::vector<Eigen::Index> widths(static_cast<std::size_t>(layers));
    for (auto& w : widths) w = 1 + static_cast<Eigen::Index>(rng.next_u64() % 64);

    std::vector<Tensor> params;
    auto mk = [&](Shape s) {
      Array v(s.size() == 2 ? s[0] * s[1] : s[0]);
      for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = 0.6 * rng.normal();
      params.push_back(Tensor::param(std::move(s), std::move(v)));
      return params.back();
    };
    std::vector<Tensor> ws, bs;
    Eigen::Index prev = din;
    for (int l = 0; l < layers; ++l) {
      ws.push_back(mk({prev, widths[static_cast<std::size_t>(l)]}));
      bs.push_back(mk({widths[static_cast<std::size_t>(l)]}));
      prev = widths[static_cast<std::size_t>(l)];
    }
    Array xv(batch * din), tv(batch * prev);
    for (Eigen::Index i = 0; i < xv.size(); ++i) xv[i] = rng.normal();
    for (Eigen::Index i = 0; i < tv.size(); ++i) tv[i] = rng.normal();
    Tensor x = Tensor::constant({batch, din}, xv);
    Tensor target = Tensor::constant({batch, prev}, tv);

    auto net_loss = [&]() {
      Tensor h = x;
      for (int l = 0; l < layers; ++l) {
        h = dense_layer(h, ws[static_cast<std::size_t>(l)], bs[static_cast<std::size_t>(l)],
                        Act::tanh);
      }
      return reduce_sum(squared_error(h, target));
    };

    Tape tape;
    {
      TapeScope scope(tape);
      backward_gradients(net_loss(), tape);
    }
    const double eps = 1e-5;
    for (Tensor& p : params) {
      for (Eigen::Index i = 0; i < p.size(); ++i) {
        const double save = p.values()[i];
        NoGradScope ng;
        p.values()[i] = save + eps;
        const double fp = net_loss().item();
        p.values()[i] = save - eps;
        const double fm = net_loss().item();
        p.values()[i] = save;
        const double fd = (fp - fm) / (2.0 * eps);
        const double rel = std::abs(p.grad()[i] - fd) / std::max(std::abs(fd), 1e-2);
        worst = std::max(worst, rel);
        ++checked;
      }
    }
  }
  msg = fmt("max rel err %.2e over %ld gradient entries (tol %g)", worst, checked, tol);
  return worst <= tol;
}

// ---------------------------------------------------------------------------
// 2. Gamma KL closed form vs quadrature.
// ---------------------------------------------------------------------------
bool criterion2(std::string& msg) {
  const double tol = 1e-6;
  Rng rng(77);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const GammaParams q{rng.uniform(0.1, 20.0), rng.uniform(0.1, 20.0)};
    const GammaParams p{rng.uniform(0.1, 20.0), rng.uniform(0.1, 20.0)};
    const double closed = gamma_kl(q, p);
    const double quad = oracles::quad_integrate_halfline([&](double t) {
      const double lq = gamma_log_pdf(t, q.alpha, q.beta);
      const double lp = gamma_log_pdf(t, p.alpha, p.beta);
      return std::exp(lq) * (lq - lp);
    });
    worst = std::max(worst, std::abs(closed - quad));
  }
  msg = fmt("max abs diff %.2e over 1000 pairs (tol %g)", worst, tol);
  return worst <= tol;
}

// ---------------------------------------------------------------------------
// 3. Solver accuracy and convergence order on dh/dt = -h.
// ---------------------------------------------------------------------------
bool criterion3(std::string& msg) {
  RawOde f = [](double, const Array& y, Array& dy) { dy = -y; };
  Array y0(1);
  y0 << 1.0;
  SolverConfig cfg;
  cfg.atol = cfg.rtol = 1e-6;
  const double got = solve(f, y0, 0.0, 1.0, cfg).states.back()[0];
  const double exact = std::exp(-1.0);
  const double err_adaptive = std::abs(got - exact);

  std::vector<double> lh, le;
  for (const double h : {0.5, 0.25, 0.125, 0.0625}) {
    const double e = std::abs(solve_fixed_step(f, y0, 0.0, 1.0, h)[0] - exact);
    lh.push_back(std::log(h));
    le.push_back(std::log(e));
  }
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < lh.size(); ++i) {
    mx += lh[i];
    my += le[i];
  }
  mx /= 4.0;
  my /= 4.0;
  double num = 0, den = 0;
  for (std::size_t i = 0; i < lh.size(); ++i) {
    num += (lh[i] - mx) * (le[i] - my);
    den += (lh[i] - mx) * (lh[i] - mx);
  }
  const double order = num / den;
  msg = fmt("|h(1)-e^-1| = %.2e (tol 1e-4), fixed-step order %.2f (need >= 4.5)", err_adaptive,
            order);
  return err_adaptive <= 1e-4 && order >= 4.5;
}

// ---------------------------------------------------------------------------
// 4. Two-phase backprop equivalence.
// ---------------------------------------------------------------------------
struct GradSnapshot {
  std::vector<Array> grads;
  static GradSnapshot take(const std::vector<Tensor>& params) {
    GradSnapshot s;
    for (const auto& p : params) s.grads.push_back(p.grad());
    return s;
  }
};

// Straightforward recorded DP5 sweep over a fixed step grid; the comparison
// target for the library's grid-replay path.
Tensor recorded_sweep(const TensorOde& fn, const Tensor& y0, const std::vector<double>& grid) {
  using namespace dp5;
  Tensor y = y0;
  for (std::size_t i = 0; i + 1 < grid.size(); ++i) {
    const double t = grid[i];
    const double h = grid[i + 1] - grid[i];
    std::vector<Tensor> k;
    k.push_back(fn(t, y));
    Tensor ys;
    for (int s = 0; s < 6; ++s) {
      ys = y;
      for (int j = 0; j <= s; ++j) ys = add(ys, scalar_mul(k[static_cast<std::size_t>(j)], h * stage_a[s][j]));
      k.push_back(fn(t + stage_c[s] * h, ys));
    }
    y = ys;
  }
  return y;
}

bool criterion4(std::string& msg) {
  const double tol = 1e-5;
  Rng rng(4242);
  double worst_pair = 0.0;

  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index d = 2 + static_cast<Eigen::Index>(rng.next_u64() % 5);
    const Eigen::Index mdim = 2 + static_cast<Eigen::Index>(rng.next_u64() % 7);
    auto mkp = [&](Shape s) {
      Array v(s.size() == 2 ? s[0] * s[1] : s[0]);
      for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = 0.5 * rng.normal();
      return Tensor::param(std::move(s), std::move(v));
    };
    Tensor w1 = mkp({d, mdim}), b1 = mkp({mdim}), w2 = mkp({mdim, d}), b2 = mkp({d});
    std::vector<Tensor> params = {w1, b1, w2, b2};
    TensorOde fn = [&](double, const Tensor& y) {
      return dense_layer(dense_layer(y, w1, b1, Act::tanh), w2, b2, Act::none);
    };
    Array y0v(d);
    for (Eigen::Index i = 0; i < d; ++i) y0v[i] = rng.normal();
    const double T = rng.uniform(0.5, 2.0);
    SolverConfig cfg;
    cfg.atol = cfg.rtol = 1e-6;

    Tensor y0a = Tensor::param({1, d}, y0v);
    std::vector<double> accepted;
    Tape ta;
    {
      TapeScope scope(ta);
      auto res = two_phase_solve(callbacks_from_tensor_fn(fn, {1, d}), y0a, {T}, cfg);
      accepted = res.accepted_times;
      backward_gradients(reduce_sum(res.states[0]), ta);
    }
    params.push_back(y0a);
    const GradSnapshot a = GradSnapshot::take(params);
    params.pop_back();

    Tensor y0b = Tensor::param({1, d}, y0v);
    Tape tb;
    {
      TapeScope scope(tb);
      backward_gradients(reduce_sum(recorded_sweep(fn, y0b, accepted)), tb);
    }
    params.push_back(y0b);
    const GradSnapshot b = GradSnapshot::take(params);
    params.pop_back();

    for (std::size_t pi = 0; pi < a.grads.size(); ++pi) {
      for (Eigen::Index i = 0; i < a.grads[pi].size(); ++i) {
        const double ga = a.grads[pi][i], gb = b.grads[pi][i];
        worst_pair = std::max(worst_pair, std::abs(ga - gb) / std::max(1.0, std::abs(gb)));
      }
    }
  }

  // 2-D linear dynamics against the matrix-exponential closed form.
  double worst_lin = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    Array av(4);
    for (int i = 0; i < 4; ++i) av[i] = rng.normal();
    Tensor W = Tensor::param({2, 2}, av);
    Tensor bz = Tensor::constant({2}, Array::Zero(2));
    TensorOde fn = [&](double, const Tensor& y) { return dense_layer(y, W, bz, Act::none); };
    Array y0v(2);
    y0v << rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0);
    const double T = rng.uniform(0.4, 1.2);
    SolverConfig cfg;
    cfg.atol = cfg.rtol = 1e-9;

    Tensor y0t = Tensor::param({1, 2}, y0v);
    Tape tape;
    Array value(2);
    {
      TapeScope scope(tape);
      auto res = two_phase_solve(callbacks_from_tensor_fn(fn, {1, 2}), y0t, {T}, cfg);
      value = res.states[0].values();
      backward_gradients(reduce_sum(res.states[0]), tape);
    }

    // row dynamics dh/dt = h W  <=>  column dynamics dy/dt = M y, M = W^T
    Eigen::Matrix2d M;
    M << av[0], av[2], av[1], av[3];
    const Eigen::Matrix2d MT = M.transpose();
    const Eigen::Vector2d y0c(y0v[0], y0v[1]);
    const Eigen::Vector2d yT = oracles::expm2(M, T) * y0c;
    const Eigen::Vector2d ones(1.0, 1.0);
    const Eigen::Vector2d g_y0 = oracles::expm2(MT, T) * ones;

    // dL/dM via the Van Loan block integral, then transpose back to W layout
    Eigen::Matrix4d van = Eigen::Matrix4d::Zero();
    van.topLeftCorner<2, 2>() = MT * T;
    van.bottomRightCorner<2, 2>() = MT * T;
    van.topRightCorner<2, 2>() = (ones * y0c.transpose()) * T;
    const Eigen::Matrix2d dLdM = van.exp().topRightCorner<2, 2>();

    for (int i = 0; i < 2; ++i) {
      worst_lin = std::max(worst_lin, std::abs(value[i] - yT[i]));
      worst_lin = std::max(worst_lin, std::abs(y0t.grad()[i] - g_y0[i]));
      for (int j = 0; j < 2; ++j) {
        worst_lin = std::max(worst_lin, std::abs(W.grad()[i * 2 + j] - dLdM(j, i)));
      }
    }
  }

  msg = fmt("recorded-solve rel err %.2e, closed-form err %.2e (tol %g)", worst_pair, worst_lin,
            tol);
  return worst_pair <= tol && worst_lin <= tol;
}

// ---------------------------------------------------------------------------
// 5. Single-pass sorted prediction vs independent per-time reference solves.
// ---------------------------------------------------------------------------
bool criterion5(std::string& msg) {
  const double tol = 1e-3;
  Rng rng(505);
  double worst = 0.0;
  for (int inst = 0; inst < 100; ++inst) {
    const bool classify = (inst % 2) == 0;
    ModelSpec spec;
    spec.task = classify ? Task::classification : Task::regression;
    spec.variant = Variant::lt_node;
    spec.input_dim = classify ? 2 : 1;
    spec.num_classes = classify ? 2 + static_cast<int>(rng.next_u64() % 3) : 0;
    const int w1 = 4 + static_cast<int>(rng.next_u64() % 13);
    const int w2 = 4 + static_cast<int>(rng.next_u64() % 13);
    spec.input_widths = {w1};
    spec.node_widths = {w2, w1};
    spec.head_widths = {classify ? spec.num_classes : 1};
    spec.activation = (rng.next_u64() % 2) ? Act::tanh : Act::relu;
    LatentTimeModel m = build_model(spec, 1000 + static_cast<std::uint64_t>(inst));

    kernels::RowMat x(1, spec.input_dim);
    for (Eigen::Index j = 0; j < x.cols(); ++j) x(0, j) = rng.normal();
    std::vector<double> times(10);
    for (auto& t : times) t = rng.uniform(0.0, 3.0);
    std::sort(times.begin(), times.end());

    SolverConfig cfg;
    cfg.atol = cfg.rtol = 1e-4;
    const auto fast = forward_at_times(m, x, times, cfg);

    Array h0;
    m.input_forward_raw(x, h0);
    auto cb = m.dynamics_callbacks(1);
    const auto ref_states = oracles::reference_predict(cb.raw, h0, times, 5e-4);
    for (std::size_t s = 0; s < times.size(); ++s) {
      Array head, probs;
      m.head_forward_raw(ref_states[s], 1, head);
      const Array* out = &head;
      if (classify) {
        kernels::softmax_rows(probs, head, 1, spec.num_classes);
        out = &probs;
      }
      for (Eigen::Index j = 0; j < out->size(); ++j) {
        worst = std::max(worst, std::abs(fast[s](0, j) - (*out)[j]));
      }
    }
  }
  msg = fmt("max output diff %.2e over 100 instances (tol %g)", worst, tol);
  return worst <= tol;
}

// ---------------------------------------------------------------------------
// Shared foong training for criteria 6 and 7.
// ---------------------------------------------------------------------------
struct FoongRun {
  GammaParams posterior{0, 0};
  double in_std = 0, gap_std = 0, far_std = 0;
  double seconds = 0;
  bool ok = false;
  std::string error;
};

FoongRun run_foong(std::uint64_t seed, const GammaParams& prior) {
  FoongRun r;
  const double t0 = now_s();
  try {
    Dataset foong = gen_foong1d(tune::foong_n, tune::foong_noise, seed);
    ModelSpec spec;
    spec.task = Task::regression;
    spec.variant = Variant::lt_node;
    spec.input_dim = 1;
    spec.input_widths = tune::foong_input_widths;
    spec.node_widths = tune::foong_node_widths;
    spec.head_widths = {1};
    spec.activation = Act::tanh;
    spec.init_posterior = prior;
    LatentTimeModel m = build_model(spec, seed);

    TrainConfig tc;
    tc.iterations = tune::foong_iters;
    tc.batch_size = 0;
    tc.elbo.prior = prior;
    tc.elbo.S = 10;
    tc.elbo.grid_a = 0.0;
    tc.elbo.grid_b = 3.0;
    tc.theta_opt = {tune::foong_theta_lr, 0.9, tune::foong_theta_wd,
                    decay_milestones(1000, 10.0, tc.iterations)};
    tc.var_opt = {tune::foong_var_lr, 0.9, 0.0, decay_milestones(1000, 10.0, tc.iterations)};
    tc.seed = seed;
    train(m, foong, tc);

    r.posterior = m.posterior_params();
    const int G = 301;
    kernels::RowMat grid(G, 1);
    for (int i = 0; i < G; ++i) grid(i, 0) = -1.5 + 3.0 * i / (G - 1);
    Rng prng(seed + 1000);
    const auto pred = predict_probability(m, grid, tune::foong_pred_samples, prng);
    double in_sum = 0, gap_sum = 0, far_sum = 0;
    int in_n = 0, gap_n = 0, far_n = 0;
    for (int i = 0; i < G; ++i) {
      const double x = grid(i, 0), s = pred.entries[static_cast<std::size_t>(i)].stddev;
      if (std::abs(x) < 0.5) {
        gap_sum += s;
        ++gap_n;
      } else if (std::abs(x) <= 1.0) {
        in_sum += s;
        ++in_n;
      }
      if (std::abs(x) >= 1.5 - 1e-9) {
        far_sum += s;
        ++far_n;
      }
    }
    r.in_std = in_sum / in_n;
    r.gap_std = gap_sum / gap_n;
    r.far_std = far_sum / far_n;
    r.ok = true;
  } catch (const std::exception& e) {
    r.error = e.what();
  }
  r.seconds = now_s() - t0;
  return r;
}

std::vector<FoongRun> g_foong_ref;   // prior Gamma(2, 0.5), one per seed
std::vector<FoongRun> g_foong_flat;  // prior Gamma(1, 0.01)

const std::vector<std::uint64_t> k_seeds = {0, 1, 2, 3, 4};

bool criterion6(std::string& msg) {
  const double per_seed_limit = 600.0;
  int pass = 0;
  std::string detail;
  g_foong_ref.clear();
  for (const auto seed : k_seeds) {
    const FoongRun r = run_foong(seed, {2.0, 0.5});
    g_foong_ref.push_back(r);
    if (!r.ok) {
      detail += fmt(" s%llu:error(%s)", (unsigned long long)seed, r.error.c_str());
      continue;
    }
    const bool gap_ok = r.gap_std >= 2.0 * r.in_std;
    const bool far_ok = r.far_std >= 1.5 * r.in_std;
    const bool time_ok = r.seconds <= per_seed_limit;
    if (gap_ok && far_ok && time_ok) ++pass;
    detail += fmt(" s%llu:g/i=%.2f,f/i=%.2f,%.0fs%s", (unsigned long long)seed,
                  r.gap_std / r.in_std, r.far_std / r.in_std, r.seconds,
                  (gap_ok && far_ok && time_ok) ? "" : "(x)");
  }
  msg = fmt("%d/5 seeds pass (need 4):%s", pass, detail.c_str());
  return pass >= 4;
}

bool criterion7(std::string& msg) {
  int pass = 0;
  std::string detail;
  g_foong_flat.clear();
  if (g_foong_ref.size() != k_seeds.size()) {
    // criterion 6 was skipped; rerun the reference prior trainings
    g_foong_ref.clear();
    for (const auto seed : k_seeds) g_foong_ref.push_back(run_foong(seed, {2.0, 0.5}));
  }
  for (std::size_t i = 0; i < k_seeds.size(); ++i) {
    const FoongRun flat = run_foong(k_seeds[i], {1.0, 0.01});
    g_foong_flat.push_back(flat);
    const FoongRun& ref = g_foong_ref[i];
    if (!flat.ok || !ref.ok) {
      detail += fmt(" s%llu:error", (unsigned long long)k_seeds[i]);
      continue;
    }
    auto mode = [](const GammaParams& g) {
      return g.alpha > 1.0 ? (g.alpha - 1.0) / g.beta : 0.0;
    };
    const double mean_ref = ref.posterior.alpha / ref.posterior.beta;
    const double mean_flat = flat.posterior.alpha / flat.posterior.beta;
    const bool ok = mode(ref.posterior) < 1.5 && mode(flat.posterior) < 1.5 &&
                    std::abs(mean_ref - mean_flat) < 1.0;
    if (ok) ++pass;
    detail += fmt(" s%llu:q=(%.2f,%.2f)/(%.2f,%.2f)%s", (unsigned long long)k_seeds[i],
                  ref.posterior.alpha, ref.posterior.beta, flat.posterior.alpha,
                  flat.posterior.beta, ok ? "" : "(x)");
  }
  msg = fmt("%d/5 seeds pass (need 4):%s", pass, detail.c_str());
  return pass >= 4;
}

// ---------------------------------------------------------------------------
// 8. Metric oracle equivalence.
// ---------------------------------------------------------------------------
bool criterion8(std::string& msg) {
  const double tol = 1e-12;
  Rng rng(808);
  double worst = 0.0;
  for (int set = 0; set < 100; ++set) {
    const int n = 1 + static_cast<int>(rng.next_u64() % 200);
    const int c = 2 + static_cast<int>(rng.next_u64() % 9);
    PredictiveSet ps;
    ps.task = Task::classification;
    ps.num_classes = c;
    std::vector<Array> probs;
    std::vector<int> labels;
    for (int i = 0; i < n; ++i) {
      PredictiveEntry e;
      e.mean = Array(c);
      double z = 0;
      for (int j = 0; j < c; ++j) {
        e.mean[j] = -std::log(rng.uniform01() + 1e-12);
        z += e.mean[j];
      }
      for (int j = 0; j < c; ++j) e.mean[j] /= z;
      e.label = static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(c));
      ps.entries.push_back(e);
      probs.push_back(e.mean);
      labels.push_back(e.label);
    }
    const ClassificationMetrics got = classification_metrics(ps, BinningConfig{10});
    worst = std::max(worst, std::abs(got.ece - oracles::ece_definitional(probs, labels, 10)));
    worst = std::max(worst, std::abs(got.brier - oracles::brier_definitional(probs, labels)));

    const int n_in = 1 + static_cast<int>(rng.next_u64() % 200);
    const int n_out = 1 + static_cast<int>(rng.next_u64() % 200);
    std::vector<double> in_s, out_s;
    const bool ties = (set % 3) == 0;
    for (int i = 0; i < n_in; ++i) {
      in_s.push_back(ties ? std::floor(rng.uniform(0.0, 6.0)) / 4.0 : rng.uniform01());
    }
    for (int i = 0; i < n_out; ++i) {
      out_s.push_back(ties ? std::floor(rng.uniform(0.0, 6.0)) / 4.0 : rng.uniform01());
    }
    const OodSeparation sep = auroc_aupr(in_s, out_s);
    worst = std::max(worst, std::abs(sep.auroc - oracles::auroc_pairs(in_s, out_s)));
    worst = std::max(worst, std::abs(sep.aupr_out -
                                     oracles::average_precision_bruteforce(in_s, out_s, true)));
    worst = std::max(worst, std::abs(sep.aupr_in -
                                     oracles::average_precision_bruteforce(in_s, out_s, false)));
  }
  msg = fmt("max abs diff %.2e over 100 sets (tol %g)", worst, tol);
  return worst <= tol;
}

// ---------------------------------------------------------------------------
// Shared two-moons training for criteria 9 and 10.
// ---------------------------------------------------------------------------
struct MoonsRun {
  std::shared_ptr<LatentTimeModel> model;
  Dataset test;
  Dataset train_split;
  double mean_id_entropy = 0, mean_ood_entropy = 0, auroc = 0;
  double seconds = 0;
  bool ok = false;
  std::string error;
};

MoonsRun run_moons(std::uint64_t seed, Variant variant) {
  MoonsRun r;
  const double t0 = now_s();
  try {
    Dataset ds = gen_two_moons(tune::moons_n, tune::moons_noise, seed);
    train_test_split(ds, tune::moons_test_fraction, seed);
    const Dataset train_ds = subset(ds, Split::train);
    const Dataset test_ds = subset(ds, Split::test);

    ModelSpec spec;
    spec.task = Task::classification;
    spec.variant = variant;
    spec.input_dim = 2;
    spec.num_classes = 2;
    spec.input_widths = tune::moons_input_widths;
    spec.node_widths = tune::moons_node_widths;
    spec.head_widths = {2};
    spec.activation = Act::tanh;
    if (variant == Variant::alt_node) spec.inference_hidden = {16};
    LatentTimeModel m = build_model(spec, seed);

    TrainConfig tc;
    tc.iterations = tune::moons_iters;
    tc.batch_size = 0;
    tc.elbo.prior = {2.0, 0.5};
    tc.elbo.S = 10;
    tc.theta_opt = {tune::moons_theta_lr, 0.9, tune::moons_theta_wd,
                    decay_milestones(500, 10.0, tc.iterations)};
    tc.var_opt = {tune::moons_var_lr, 0.9, 0.0, decay_milestones(500, 10.0, tc.iterations)};
    tc.seed = seed;
    train(m, train_ds, tc);

    Eigen::VectorXd shift(2);
    shift << tune::moons_ood_shift[0], tune::moons_ood_shift[1];
    const kernels::RowMat ood = gen_ood_inputs(ds, shift, 1.0, tune::moons_ood_n, seed + 5);

    Rng prng(seed + 1000);
    const auto id_pred = predict_probability(m, test_ds.inputs, tune::moons_pred_samples, prng);
    Rng orng(seed + 2000);
    const auto ood_pred = predict_probability(m, ood, tune::moons_pred_samples, orng);
    std::vector<double> id_e, ood_e;
    for (const auto& e : id_pred.entries) id_e.push_back(entropy_categorical(e.mean));
    for (const auto& e : ood_pred.entries) ood_e.push_back(entropy_categorical(e.mean));
    double mi = 0, mo = 0;
    for (double v : id_e) mi += v;
    for (double v : ood_e) mo += v;
    r.mean_id_entropy = mi / static_cast<double>(id_e.size());
    r.mean_ood_entropy = mo / static_cast<double>(ood_e.size());
    r.auroc = auroc_aupr(id_e, ood_e).auroc;
    r.model = std::make_shared<LatentTimeModel>(std::move(m));
    r.test = test_ds;
    r.train_split = train_ds;
    r.ok = true;
  } catch (const std::exception& e) {
    r.error = e.what();
  }
  r.seconds = now_s() - t0;
  return r;
}

std::vector<MoonsRun> g_moons_lt;

bool criterion9(std::string& msg) {
  const double per_seed_limit = 300.0;
  g_moons_lt.clear();
  int pass_lt = 0, pass_alt = 0;
  std::string detail;
  for (const auto seed : k_seeds) {
    const MoonsRun lt = run_moons(seed, Variant::lt_node);
    const MoonsRun alt = run_moons(seed, Variant::alt_node);
    g_moons_lt.push_back(lt);
    auto judge = [&](const MoonsRun& r) {
      return r.ok && r.mean_ood_entropy > r.mean_id_entropy && r.auroc >= 0.9 &&
             r.seconds <= per_seed_limit;
    };
    if (judge(lt)) ++pass_lt;
    if (judge(alt)) ++pass_alt;
    detail += fmt(" s%llu:lt(%.2f>%.2f,A%.2f)%s alt(%.2f>%.2f,A%.2f)%s",
                  (unsigned long long)seed, lt.mean_ood_entropy, lt.mean_id_entropy, lt.auroc,
                  judge(lt) ? "" : "(x)", alt.mean_ood_entropy, alt.mean_id_entropy, alt.auroc,
                  judge(alt) ? "" : "(x)");
  }
  msg = fmt("lt %d/5, alt %d/5 (need 4 each):%s", pass_lt, pass_alt, detail.c_str());
  return pass_lt >= 4 && pass_alt >= 4;
}

bool criterion10(std::string& msg) {
  if (g_moons_lt.size() != k_seeds.size()) {
    g_moons_lt.clear();
    for (const auto seed : k_seeds) g_moons_lt.push_back(run_moons(seed, Variant::lt_node));
  }
  int pass = 0;
  std::string detail;
  for (std::size_t i = 0; i < k_seeds.size(); ++i) {
    const MoonsRun& r = g_moons_lt[i];
    if (!r.ok) {
      detail += fmt(" s%llu:error", (unsigned long long)k_seeds[i]);
      continue;
    }
    Rng arng(k_seeds[i] + 79);
    const FrozenTimes ft = freeze_attack_times(*r.model, r.test.inputs, 10, arng);
    AttackConfig ac;
    ac.epsilons = {0.0, 0.3};
    const auto rows = fgsm_sweep_at(*r.model, r.test, ac, ft);
    const double clean =
        detail::classification_error_at(*r.model, r.test.inputs, r.test.labels, ft, {});
    const bool ok = rows[0].error == clean && rows[1].error > rows[0].error;
    if (ok) ++pass;
    detail += fmt(" s%llu:e0=%.3f,clean=%.3f,e3=%.3f%s", (unsigned long long)k_seeds[i],
                  rows[0].error, clean, rows[1].error, ok ? "" : "(x)");
  }
  msg = fmt("%d/5 seeds pass (need 5):%s", pass, detail.c_str());
  return pass == static_cast<int>(k_seeds.size());
}

// ---------------------------------------------------------------------------
// 11. Parameter-count claim.
// ---------------------------------------------------------------------------
bool criterion11(std::string& msg) {
  ModelSpec node_spec;
  node_spec.task = Task::classification;
  node_spec.variant = Variant::node;
  node_spec.input_dim = 2;
  node_spec.num_classes = 2;
  node_spec.input_widths = {16, 32};
  node_spec.node_widths = {32, 32};
  node_spec.head_widths = {2};
  ModelSpec lt_spec = node_spec;
  lt_spec.variant = Variant::lt_node;

  LatentTimeModel node_m = build_model(node_spec, 3);
  LatentTimeModel lt_m = build_model(lt_spec, 3);

  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "ltnode_accept11";
  fs::create_directories(dir);
  save_checkpoint(node_m, (dir / "node.ckpt").string(), {});
  save_checkpoint(lt_m, (dir / "lt.ckpt").string(), {});
  const RawCheckpoint raw_node = read_checkpoint_file((dir / "node.ckpt").string());
  const RawCheckpoint raw_lt = read_checkpoint_file((dir / "lt.ckpt").string());
  const auto n_node = raw_node.header.at("payload_doubles").get<std::uint64_t>();
  const auto n_lt = raw_lt.header.at("payload_doubles").get<std::uint64_t>();
  fs::remove_all(dir);

  msg = fmt("checkpoint scalars: lt %llu vs node %llu (diff %lld, need 2)",
            (unsigned long long)n_lt, (unsigned long long)n_node,
            (long long)n_lt - (long long)n_node);
  return n_lt == n_node + 2;
}

// ---------------------------------------------------------------------------
// 12. CLI determinism: identical config + seed => byte-identical metrics.
// ---------------------------------------------------------------------------
bool criterion12(std::string& msg) {
#ifndef LTNODE_CLI_PATH
  msg = "LTNODE_CLI_PATH not defined";
  return false;
#else
  namespace fs = std::filesystem;
  const fs::path root = fs::temp_directory_path() / "ltnode_accept12";
  fs::remove_all(root);
  fs::create_directories(root);
  const fs::path cfg_path = root / "config.json";
  {
    std::ofstream f(cfg_path);
    f << R"({
  "task": "classification",
  "variant": "lt_node",
  "seed": 7,
  "prediction_samples": 8,
  "dataset": {"name": "two_moons", "n": 160, "noise_std": 0.1, "test_fraction": 0.25,
              "ood": {"shift": [3.0, -3.0], "n": 40}},
  "model": {"input_widths": [8, 16], "node_widths": [16, 16]},
  "training": {"iterations": 60, "S": 4,
               "theta": {"lr": 0.05, "decay_every": 30},
               "variational": {"lr": 0.05, "decay_every": 30}},
  "attack": {"epsilons": [0.0, 0.1]}
})";
  }
  auto run_pipeline = [&](const fs::path& out) -> bool {
    const std::string base = std::string(LTNODE_CLI_PATH);
    const std::string train_cmd =
        base + " train --config " + cfg_path.string() + " --out " + out.string() + " > /dev/null 2>&1";
    const std::string eval_cmd = base + " eval --config " + cfg_path.string() + " --out " +
                                 out.string() + " --ckpt " + (out / "model.ckpt").string() +
                                 " > /dev/null 2>&1";
    return std::system(train_cmd.c_str()) == 0 && std::system(eval_cmd.c_str()) == 0;
  };
  auto slurp = [](const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
  };
  if (!run_pipeline(root / "a") || !run_pipeline(root / "b")) {
    msg = "CLI pipeline failed (see " + root.string() + ")";
    return false;
  }
  const std::string ma = slurp(root / "a" / "metrics.json");
  const std::string mb = slurp(root / "b" / "metrics.json");
  const bool same = !ma.empty() && ma == mb;
  msg = fmt("metrics.json %zu bytes, reruns %s", ma.size(), same ? "identical" : "DIFFER");
  if (same) fs::remove_all(root);
  return same;
#endif
}

}  // namespace

int main(int argc, char** argv) {
  std::setvbuf(stdout, nullptr, _IOLBF, 0);
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  struct Entry {
    int id;
    const char* label;
    std::function<bool(std::string&)> fn;
  };
  const std::vector<Entry> entries = {
      {1, "gradient fidelity vs central finite differences", criterion1},
      {2, "Gamma KL closed form vs quadrature", criterion2},
      {3, "solver accuracy and convergence order", criterion3},
      {4, "two-phase backprop equivalence", criterion4},
      {5, "single-pass prediction vs reference solves", criterion5},
      {6, "synthetic regression uncertainty pattern", criterion6},
      {7, "posterior model selection across priors", criterion7},
      {8, "metric oracle equivalence", criterion8},
      {9, "two-moons OOD entropy ordering", criterion9},
      {10, "FGSM sanity", criterion10},
      {11, "parameter-count claim", criterion11},
      {12, "CLI determinism", criterion12},
  };

  int failures = 0;
  for (const auto& e : entries) {
    if (!only.empty() && !only.count(e.id)) continue;
    std::string msg;
    const double t0 = now_s();
    bool ok = false;
    try {
      ok = e.fn(msg);
    } catch (const std::exception& ex) {
      msg = std::string("exception: ") + ex.what();
    }
    const double dt = now_s() - t0;
    std::printf("[%s] criterion %d: %s — %s (%.1fs)\n", ok ? "PASS" : "FAIL", e.id, e.label,
                msg.c_str(), dt);
    if (!ok) ++failures;
  }
  return failures;
}
