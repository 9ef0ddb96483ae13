#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "ltnode/errors.hpp"
#include "ltnode/tensor.hpp"

namespace ltnode {

struct SolverConfig {
  double atol = 1e-2;
  double rtol = 1e-2;
  double safety = 0.9;
  double min_scale = 0.2;
  double max_scale = 10.0;
  int max_steps = 10000;
  // <= 0 selects the default 1e-2 * (t1 - t0), bounded below by 1e-6.
  double initial_step = 0.0;
};

using RawOde = std::function<void(double, const Array&, Array&)>;
using TensorOde = std::function<Tensor(double, const Tensor&)>;

// Dormand-Prince 5(4) tableau, FSAL form, with the standard quartic
// dense-output coefficients.
namespace dp5 {

inline constexpr double c2 = 1.0 / 5.0, c3 = 3.0 / 10.0, c4 = 4.0 / 5.0, c5 = 8.0 / 9.0;

inline constexpr double a21 = 1.0 / 5.0;
inline constexpr double a31 = 3.0 / 40.0, a32 = 9.0 / 40.0;
inline constexpr double a41 = 44.0 / 45.0, a42 = -56.0 / 15.0, a43 = 32.0 / 9.0;
inline constexpr double a51 = 19372.0 / 6561.0, a52 = -25360.0 / 2187.0,
                        a53 = 64448.0 / 6561.0, a54 = -212.0 / 729.0;
inline constexpr double a61 = 9017.0 / 3168.0, a62 = -355.0 / 33.0, a63 = 46732.0 / 5247.0,
                        a64 = 49.0 / 176.0, a65 = -5103.0 / 18656.0;
// Row 7 doubles as the 5th-order solution weights (b2 = b7 = 0 omitted where
// convenient but kept in the full rows below for uniform stage handling).
inline constexpr double a71 = 35.0 / 384.0, a72 = 0.0, a73 = 500.0 / 1113.0,
                        a74 = 125.0 / 192.0, a75 = -2187.0 / 6784.0, a76 = 11.0 / 84.0;

// e = b(5th) - b(4th); the embedded error weights.
inline constexpr double e1 = 71.0 / 57600.0, e3 = -71.0 / 16695.0, e4 = 71.0 / 1920.0,
                        e5 = -17253.0 / 339200.0, e6 = 22.0 / 525.0, e7 = -1.0 / 40.0;

// Dense-output combination weights.
inline constexpr double d1 = -12715105075.0 / 11282082432.0;
inline constexpr double d3 = 87487479700.0 / 32700410799.0;
inline constexpr double d4 = -10690763975.0 / 1880347072.0;
inline constexpr double d5 = 701980252875.0 / 199316789632.0;
inline constexpr double d6 = -1453857185.0 / 822651844.0;
inline constexpr double d7 = 69997945.0 / 29380423.0;

inline constexpr std::array<double, 6> stage_c = {c2, c3, c4, c5, 1.0, 1.0};
inline constexpr std::array<std::array<double, 6>, 6> stage_a = {{
    {a21, 0, 0, 0, 0, 0},
    {a31, a32, 0, 0, 0, 0},
    {a41, a42, a43, 0, 0, 0},
    {a51, a52, a53, a54, 0, 0},
    {a61, a62, a63, a64, a65, 0},
    {a71, a72, a73, a74, a75, a76},
}};

}  // namespace dp5

// Accepted-step record with everything dense output needs.
struct TrajectoryStep {
  double t0 = 0.0;
  double h = 0.0;
  std::array<Array, 7> k;  // stage slopes
};

struct Trajectory {
  std::vector<double> times;         // accepted times; times[0] = t0, back() = t1
  std::vector<Array> states;         // state at each accepted time
  std::vector<TrajectoryStep> steps; // times.size() - 1 of them
};

struct StepRecord {
  double t = 0.0;
  double h = 0.0;
};

namespace detail {

inline double resolve_initial_step(const SolverConfig& cfg, double t0, double t1) {
  if (cfg.initial_step > 0.0) return cfg.initial_step;
  return std::max(1e-6, 1e-2 * (t1 - t0));
}

inline void check_derivative(const Array& k, double t) {
  if (!k.allFinite()) {
    throw numeric_error("ode: dynamics returned a non-finite derivative at t=" +
                        std::to_string(t));
  }
}

// One adaptive integration pass. Fills `traj` (states + stage slopes) when
// given, or only `grid` (accepted t/h pairs) for the memory-light phase-1 run.
inline void integrate_adaptive(const RawOde& f, const Array& y0, double t0, double t1,
                               const SolverConfig& cfg, Trajectory* traj,
                               std::vector<StepRecord>* grid) {
  using namespace dp5;
  if (!(t1 >= t0) || !std::isfinite(t0) || !std::isfinite(t1)) {
    throw contract_error("ode: requires finite t1 >= t0");
  }
  if (!y0.allFinite()) throw contract_error("ode: initial state must be finite");

  if (traj) {
    traj->times.assign(1, t0);
    traj->states.assign(1, y0);
    traj->steps.clear();
  }
  if (grid) grid->clear();
  if (t1 == t0) return;

  Array y = y0, y1(y0.size()), yerr(y0.size()), ys(y0.size());
  std::array<Array, 7> k;
  f(t0, y, k[0]);
  check_derivative(k[0], t0);

  double t = t0;
  double h = resolve_initial_step(cfg, t0, t1);
  int attempts = 0;
  while (t < t1) {
    if (++attempts > cfg.max_steps) {
      throw convergence_error("ode: exceeded max_steps=" + std::to_string(cfg.max_steps) +
                              " before reaching t1=" + std::to_string(t1) +
                              "; last accepted t=" + std::to_string(t));
    }
    bool final_step = false;
    if (t + h >= t1) {
      h = t1 - t;
      final_step = true;
    }
    if (t + h == t) {
      throw convergence_error("ode: step size underflow at t=" + std::to_string(t));
    }

    // Stages 2..7 (stage 7 lands on y1 thanks to the FSAL row).
    for (int s = 0; s < 6; ++s) {
      double coefs[6];
      const Array* terms[6];
      for (int j = 0; j <= s; ++j) {
        coefs[j] = h * stage_a[s][j];
        terms[j] = &k[j];
      }
      kernels::axpy_list(ys, y, coefs, terms, static_cast<std::size_t>(s + 1));
      f(t + stage_c[s] * h, ys, k[s + 1]);
      check_derivative(k[s + 1], t + stage_c[s] * h);
      if (s == 5) y1 = ys;
    }

    const double ec[6] = {h * e1, h * e3, h * e4, h * e5, h * e6, h * e7};
    const Array* et[6] = {&k[0], &k[2], &k[3], &k[4], &k[5], &k[6]};
    yerr.setZero(y.size());
    kernels::axpy_list(yerr, yerr, ec, et, 6);

    // Scaled max-norm: every component must sit inside atol + rtol * |state|.
    double err = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      const double sc = cfg.atol + cfg.rtol * std::max(std::abs(y[i]), std::abs(y1[i]));
      err = std::max(err, std::abs(yerr[i]) / sc);
    }
    if (!std::isfinite(err)) {
      h *= cfg.min_scale;
      continue;
    }

    if (err <= 1.0) {
      const double t_new = final_step ? t1 : t + h;
      if (traj) {
        TrajectoryStep st;
        st.t0 = t;
        st.h = h;
        st.k = k;
        traj->steps.push_back(std::move(st));
        traj->times.push_back(t_new);
        traj->states.push_back(y1);
      }
      if (grid) grid->push_back({t, h});
      t = t_new;
      y.swap(y1);
      k[0].swap(k[6]);  // FSAL
    }

    const double scale =
        err == 0.0 ? cfg.max_scale
                   : std::clamp(cfg.safety * std::pow(err, -0.2), cfg.min_scale, cfg.max_scale);
    h *= scale;
  }
}

}  // namespace detail

// Adaptive solve from t0 to t1; returns the full trajectory (accepted times,
// states, stage slopes) for dense evaluation.
inline Trajectory solve(const RawOde& f, const Array& y0, double t0, double t1,
                        const SolverConfig& cfg = {}) {
  Trajectory traj;
  detail::integrate_adaptive(f, y0, t0, t1, cfg, &traj, nullptr);
  return traj;
}

// Phase-1 run: only the accepted step grid is kept in memory.
inline std::vector<StepRecord> adaptive_grid(const RawOde& f, const Array& y0, double t0,
                                             double t1, const SolverConfig& cfg = {}) {
  std::vector<StepRecord> grid;
  detail::integrate_adaptive(f, y0, t0, t1, cfg, nullptr, &grid);
  return grid;
}

namespace detail {

// Builds the five interpolation vectors for one step. Shared shape of the
// computation with the recorded path (same kernels, same order).
inline void make_rcont(const Array& y0, const Array& y1, const TrajectoryStep& st, Array& r2,
                       Array& r3, Array& r4, Array& r5) {
  r2 = y1 - y0;
  r3 = st.h * st.k[0] - r2;
  r4 = r2 - st.h * st.k[6] - r3;
  const double dc[6] = {st.h * dp5::d1, st.h * dp5::d3, st.h * dp5::d4,
                        st.h * dp5::d5, st.h * dp5::d6, st.h * dp5::d7};
  const Array* dt[6] = {&st.k[0], &st.k[2], &st.k[3], &st.k[4], &st.k[5], &st.k[6]};
  r5.setZero(y0.size());
  kernels::axpy_list(r5, r5, dc, dt, 6);
}

}  // namespace detail

// Evaluates the dense-output interpolant at t within the integrated span.
// At an accepted time the stored state is returned exactly.
inline Array dense_eval(const Trajectory& traj, double t) {
  if (traj.times.empty()) throw contract_error("dense_eval: empty trajectory");
  if (t < traj.times.front() || t > traj.times.back()) {
    throw contract_error("dense_eval: t=" + std::to_string(t) + " outside integrated span [" +
                         std::to_string(traj.times.front()) + ", " +
                         std::to_string(traj.times.back()) + "]");
  }
  auto it = std::lower_bound(traj.times.begin(), traj.times.end(), t);
  if (it != traj.times.end() && *it == t) {
    return traj.states[static_cast<std::size_t>(it - traj.times.begin())];
  }
  const std::size_t idx = static_cast<std::size_t>(it - traj.times.begin()) - 1;
  const TrajectoryStep& st = traj.steps[idx];
  const double theta = (t - st.t0) / st.h;
  Array r2, r3, r4, r5, out;
  detail::make_rcont(traj.states[idx], traj.states[idx + 1], st, r2, r3, r4, r5);
  kernels::dense_interp(out, theta, traj.states[idx], r2, r3, r4, r5);
  return out;
}

namespace detail {

inline void check_query_times(const std::vector<double>& times) {
  if (times.empty()) throw contract_error("solve_at_times: times must be nonempty");
  double prev = 0.0;
  bool first = true;
  for (double t : times) {
    if (!std::isfinite(t) || t < 0.0) {
      throw contract_error("solve_at_times: times must be finite and >= 0, got " +
                           std::to_string(t));
    }
    if (!first && t < prev) {
      throw contract_error("solve_at_times: times must be sorted nondecreasing");
    }
    prev = t;
    first = false;
  }
}

}  // namespace detail

// Integrates once from 0 to max(times) and reads every requested time off the
// dense output. times must be sorted nondecreasing, >= 0.
inline std::vector<Array> solve_at_times(const RawOde& f, const Array& y0,
                                         const std::vector<double>& times,
                                         const SolverConfig& cfg = {}) {
  detail::check_query_times(times);
  const double tmax = times.back();
  std::vector<Array> out;
  out.reserve(times.size());
  if (tmax == 0.0) {
    for (std::size_t i = 0; i < times.size(); ++i) out.push_back(y0);
    return out;
  }
  Trajectory traj = solve(f, y0, 0.0, tmax, cfg);
  for (double t : times) out.push_back(dense_eval(traj, t));
  return out;
}

// Fixed-step integration with the same stage rows (no error control); used
// for convergence-order measurements.
inline Array solve_fixed_step(const RawOde& f, const Array& y0, double t0, double t1, double h) {
  using namespace dp5;
  if (!(h > 0.0)) throw contract_error("solve_fixed_step: h must be positive");
  if (!(t1 >= t0)) throw contract_error("solve_fixed_step: requires t1 >= t0");
  Array y = y0, ys(y0.size());
  std::array<Array, 7> k;
  double t = t0;
  f(t, y, k[0]);
  detail::check_derivative(k[0], t);
  while (t < t1) {
    const double hs = std::min(h, t1 - t);
    for (int s = 0; s < 6; ++s) {
      double coefs[6];
      const Array* terms[6];
      for (int j = 0; j <= s; ++j) {
        coefs[j] = hs * stage_a[s][j];
        terms[j] = &k[j];
      }
      kernels::axpy_list(ys, y, coefs, terms, static_cast<std::size_t>(s + 1));
      f(t + stage_c[s] * hs, ys, k[s + 1]);
      detail::check_derivative(k[s + 1], t + stage_c[s] * hs);
    }
    y = ys;
    t = (t1 - t <= h) ? t1 : t + hs;
    k[0].swap(k[6]);
  }
  return y;
}

// A dynamics function with both execution modes. `raw` runs on plain arrays
// (phase 1, prediction); `recorded` builds tape ops (phase 2). Both must
// compute the same function through the shared kernels.
struct OdeCallbacks {
  RawOde raw;
  TensorOde recorded;
};

// Adapts a tensor-only dynamics to both modes (test/utility convenience; the
// raw mode wraps the tensor evaluation in a no-record scope). An explicit
// state shape can be supplied for rank-2 states.
inline OdeCallbacks callbacks_from_tensor_fn(TensorOde fn, Shape state_shape = {}) {
  OdeCallbacks cb;
  cb.recorded = fn;
  cb.raw = [fn, state_shape](double t, const Array& y, Array& out) {
    NoGradScope ng;
    Shape s = state_shape.empty() ? Shape{y.size()} : state_shape;
    Tensor yt = Tensor::constant(std::move(s), y);
    out = fn(t, yt).values();
  };
  return cb;
}

struct TwoPhaseResult {
  std::vector<Tensor> states;          // one per requested time, in order
  std::vector<double> accepted_times;  // phase-1 grid nodes incl. endpoints
};

// Two-phase differentiable solve: an adaptive no-record pass fixes the step
// grid, then the grid is re-executed verbatim with recording enabled and the
// requested times are read off the recorded dense output.
inline TwoPhaseResult two_phase_solve(const OdeCallbacks& f, const Tensor& y0,
                                      const std::vector<double>& times,
                                      const SolverConfig& cfg = {}) {
  using namespace dp5;
  detail::check_query_times(times);
  const double tmax = times.back();

  TwoPhaseResult res;
  if (tmax == 0.0) {
    res.states.assign(times.size(), y0);
    res.accepted_times.assign(1, 0.0);
    return res;
  }

  std::vector<StepRecord> grid;
  {
    NoGradScope ng;
    grid = adaptive_grid(f.raw, y0.values(), 0.0, tmax, cfg);
  }
  res.accepted_times.reserve(grid.size() + 1);
  for (const auto& g : grid) res.accepted_times.push_back(g.t);
  res.accepted_times.push_back(tmax);

  // Phase 2: recorded re-execution of the accepted grid, no error control.
  std::map<double, Tensor> at_time;  // resolved queries (dedup across equal times)
  std::size_t qi = 0;
  while (qi < times.size() && times[qi] == 0.0) {
    at_time[0.0] = y0;
    ++qi;
  }

  Tensor y = y0;
  Tensor k1 = f.recorded(0.0, y);
  detail::ensure_finite(k1.values(), "two_phase_solve: derivative");
  for (std::size_t si = 0; si < grid.size(); ++si) {
    const double t = grid[si].t;
    const double h = grid[si].h;
    const double t_next = (si + 1 < grid.size()) ? grid[si + 1].t : tmax;
    std::array<Tensor, 7> k;
    k[0] = k1;
    Tensor y1;
    for (int s = 0; s < 6; ++s) {
      std::vector<double> coefs(static_cast<std::size_t>(s + 1));
      std::vector<Tensor> terms(static_cast<std::size_t>(s + 1));
      for (int j = 0; j <= s; ++j) {
        coefs[static_cast<std::size_t>(j)] = h * stage_a[s][j];
        terms[static_cast<std::size_t>(j)] = k[j];
      }
      Tensor ys = linear_comb(y, coefs, terms);
      k[s + 1] = f.recorded(t + stage_c[s] * h, ys);
      detail::ensure_finite(k[s + 1].values(), "two_phase_solve: derivative");
      if (s == 5) y1 = ys;
    }

    // Resolve queries inside this step, then at its right endpoint.
    Tensor r2, r3, r4, r5;
    bool have_rcont = false;
    while (qi < times.size() && times[qi] < t_next) {
      const double tq = times[qi];
      if (auto it = at_time.find(tq); it != at_time.end()) {
        ++qi;
        continue;
      }
      if (!have_rcont) {
        r2 = sub(y1, y);
        r3 = sub(scalar_mul(k[0], h), r2);
        r4 = sub(sub(r2, scalar_mul(k[6], h)), r3);
        Tensor zero = Tensor::zeros(y.shape());
        r5 = linear_comb(zero, {h * d1, h * d3, h * d4, h * d5, h * d6, h * d7},
                         {k[0], k[2], k[3], k[4], k[5], k[6]});
        have_rcont = true;
      }
      const double theta = (tq - t) / h;
      at_time[tq] = dense_interp(theta, y, r2, r3, r4, r5);
      ++qi;
    }
    while (qi < times.size() && times[qi] == t_next) {
      at_time[t_next] = y1;
      ++qi;
    }

    y = y1;
    k1 = k[6];  // FSAL carries over exactly as in phase 1
  }

  res.states.reserve(times.size());
  for (double tq : times) res.states.push_back(at_time.at(tq));
  return res;
}

}  // namespace ltnode
