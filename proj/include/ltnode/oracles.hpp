#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "ltnode/errors.hpp"

namespace ltnode::oracles {

// Independent reference implementations used to pin expected values in tests.
// Nothing here shares code with the modules it cross-checks: integration is
// plain recursive Simpson / fixed-step RK4, special functions go through the
// C library, metrics are written out of their textbook definitions.

using Array = Eigen::ArrayXd;

struct QuadratureConfig {
  double tol = 1e-9;
  int max_depth = 50;
};

namespace detail {

inline double simpson(const std::function<double(double)>& f, double a, double fa, double b,
                      double fb, double m, double fm) {
  return (b - a) / 6.0 * (fa + 4.0 * fm + fb);
}

inline double adaptive_simpson(const std::function<double(double)>& f, double a, double fa,
                               double b, double fb, double m, double fm, double whole, double tol,
                               int depth) {
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = f(lm), frm = f(rm);
  const double left = simpson(f, a, fa, m, fm, lm, flm);
  const double right = simpson(f, m, fm, b, fb, rm, frm);
  const double delta = left + right - whole;
  if (depth <= 0 || std::abs(delta) <= 15.0 * tol) {
    return left + right + delta / 15.0;
  }
  return adaptive_simpson(f, a, fa, m, fm, lm, flm, left, 0.5 * tol, depth - 1) +
         adaptive_simpson(f, m, fm, b, fb, rm, frm, right, 0.5 * tol, depth - 1);
}

}  // namespace detail

// Adaptive Simpson quadrature of f over the finite interval [a, b].
inline double quad_integrate(const std::function<double(double)>& f, double a, double b,
                             const QuadratureConfig& cfg = {}) {
  if (!(a <= b) || !std::isfinite(a) || !std::isfinite(b)) {
    throw contract_error("quad_integrate: requires finite a <= b");
  }
  if (a == b) return 0.0;
  const double m = 0.5 * (a + b);
  const double fa = f(a), fb = f(b), fm = f(m);
  const double whole = detail::simpson(f, a, fa, b, fb, m, fm);
  return detail::adaptive_simpson(f, a, fa, b, fb, m, fm, whole, cfg.tol, cfg.max_depth);
}

// Integral of f over (0, inf) via the substitution t = exp(u), which turns
// power-law behaviour at 0 and exponential tails into smooth double decay.
// Suited to gamma-type integrands (smooth, decaying both ways after
// substitution).
inline double quad_integrate_halfline(const std::function<double(double)>& f,
                                      const QuadratureConfig& cfg = {}) {
  auto g = [&f](double u) {
    const double t = std::exp(u);
    const double v = f(t) * t;
    return std::isfinite(v) ? v : 0.0;
  };
  const double cut = cfg.tol * 1e-4;
  double lo = 0.0;
  for (int small = 0; small < 3 && lo > -700.0;) {
    lo -= 5.0;
    small = std::abs(g(lo)) < cut ? small + 1 : 0;
  }
  double hi = 0.0;
  for (int small = 0; small < 3 && hi < 700.0;) {
    hi += 5.0;
    small = std::abs(g(hi)) < cut ? small + 1 : 0;
  }
  return quad_integrate(g, lo, hi, cfg);
}

// Central finite differences of a scalar function at x.
inline Array finite_diff_grad(const std::function<double(const Array&)>& f, const Array& x,
                              double eps = 1e-5) {
  if (!(eps > 0.0)) throw contract_error("finite_diff_grad: eps must be positive");
  Array g(x.size());
  Array xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double xi = x[i];
    xp[i] = xi + eps;
    const double fp = f(xp);
    xp[i] = xi - eps;
    const double fm = f(xp);
    xp[i] = xi;
    g[i] = (fp - fm) / (2.0 * eps);
  }
  return g;
}

using OdeFn = std::function<void(double, const Array&, Array&)>;

// End states at the requested times, each obtained by its own fixed-step
// classic RK4 integration from 0. No trajectory sharing, no dense output.
inline std::vector<Array> reference_predict(const OdeFn& f, const Array& y0,
                                            const std::vector<double>& times,
                                            double max_step = 1e-3) {
  std::vector<Array> out;
  out.reserve(times.size());
  Array k1, k2, k3, k4, ytmp;
  for (double tend : times) {
    if (!(tend >= 0.0) || !std::isfinite(tend)) {
      throw contract_error("reference_predict: times must be finite and >= 0");
    }
    Array y = y0;
    if (tend > 0.0) {
      const int n = std::max(1, static_cast<int>(std::ceil(tend / max_step)));
      const double h = tend / n;
      double t = 0.0;
      for (int i = 0; i < n; ++i) {
        f(t, y, k1);
        ytmp = y + 0.5 * h * k1;
        f(t + 0.5 * h, ytmp, k2);
        ytmp = y + 0.5 * h * k2;
        f(t + 0.5 * h, ytmp, k3);
        ytmp = y + h * k3;
        f(t + h, ytmp, k4);
        y += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        t += h;
      }
    }
    out.push_back(std::move(y));
  }
  return out;
}

// AUROC by explicit pair counting: fraction of (out, in) pairs with the OOD
// score ranked higher, ties counted half.
inline double auroc_pairs(const std::vector<double>& scores_in,
                          const std::vector<double>& scores_out) {
  if (scores_in.empty() || scores_out.empty()) {
    throw contract_error("auroc_pairs: both score sets must be nonempty");
  }
  double wins = 0.0;
  for (double so : scores_out) {
    for (double si : scores_in) {
      if (so > si) wins += 1.0;
      else if (so == si) wins += 0.5;
    }
  }
  return wins / (static_cast<double>(scores_in.size()) * static_cast<double>(scores_out.size()));
}

// Average precision by brute-force threshold scan over the distinct scores in
// descending order (step-wise precision/recall, no interpolation smoothing).
// `positive_is_out` selects which population counts as the positive class.
inline double average_precision_bruteforce(const std::vector<double>& scores_in,
                                           const std::vector<double>& scores_out,
                                           bool positive_is_out) {
  if (scores_in.empty() || scores_out.empty()) {
    throw contract_error("average_precision_bruteforce: both score sets must be nonempty");
  }
  // Positives score "high" when positive_is_out (OOD score ascending in
  // OOD-ness); for positive-is-in the threshold direction flips.
  std::vector<std::pair<double, int>> all;  // (score, is_positive)
  for (double s : scores_in) all.push_back({positive_is_out ? s : -s, positive_is_out ? 0 : 1});
  for (double s : scores_out) all.push_back({positive_is_out ? s : -s, positive_is_out ? 1 : 0});
  std::vector<double> thresholds;
  for (auto& p : all) thresholds.push_back(p.first);
  std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  const double npos = positive_is_out ? static_cast<double>(scores_out.size())
                                      : static_cast<double>(scores_in.size());
  double ap = 0.0, prev_recall = 0.0;
  for (double th : thresholds) {
    double tp = 0.0, fp = 0.0;
    for (auto& p : all) {
      if (p.first >= th) {
        if (p.second) tp += 1.0;
        else fp += 1.0;
      }
    }
    const double precision = tp / (tp + fp);
    const double recall = tp / npos;
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return ap;
}

// Expected calibration error straight from the definition: B equal-width
// confidence bins on [0, 1], confidence = max predicted probability, bin b
// contributes (n_b / N) * |acc_b - conf_b|.
inline double ece_definitional(const std::vector<Array>& probs, const std::vector<int>& labels,
                               int bins = 10) {
  if (probs.size() != labels.size() || probs.empty()) {
    throw contract_error("ece_definitional: probs/labels size mismatch or empty");
  }
  const double n = static_cast<double>(probs.size());
  std::vector<double> conf_sum(bins, 0.0), acc_sum(bins, 0.0), count(bins, 0.0);
  for (std::size_t i = 0; i < probs.size(); ++i) {
    Eigen::Index argmax = 0;
    const double conf = probs[i].maxCoeff(&argmax);
    int b = static_cast<int>(conf * bins);
    b = std::min(b, bins - 1);
    conf_sum[b] += conf;
    acc_sum[b] += (argmax == labels[i]) ? 1.0 : 0.0;
    count[b] += 1.0;
  }
  double ece = 0.0;
  for (int b = 0; b < bins; ++b) {
    if (count[b] == 0.0) continue;
    ece += (count[b] / n) * std::abs(acc_sum[b] / count[b] - conf_sum[b] / count[b]);
  }
  return ece;
}

// Brier score from the definition: mean over examples of the mean squared
// difference between the probability vector and the one-hot target.
inline double brier_definitional(const std::vector<Array>& probs, const std::vector<int>& labels) {
  if (probs.size() != labels.size() || probs.empty()) {
    throw contract_error("brier_definitional: probs/labels size mismatch or empty");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const Eigen::Index c = probs[i].size();
    double s = 0.0;
    for (Eigen::Index j = 0; j < c; ++j) {
      const double target = (j == labels[i]) ? 1.0 : 0.0;
      s += (probs[i][j] - target) * (probs[i][j] - target);
    }
    total += s / static_cast<double>(c);
  }
  return total / static_cast<double>(probs.size());
}

// Regularized lower incomplete gamma P(a, x), series + continued fraction
// (special functions via the C library, not the gamma module).
inline double gamma_cdf(double x, double a) {
  if (!(a > 0.0)) throw contract_error("gamma_cdf: a must be positive");
  if (x <= 0.0) return 0.0;
  const double lg = std::lgamma(a);
  if (x < a + 1.0) {
    double term = 1.0 / a, sum = term, ap = a;
    for (int i = 0; i < 500; ++i) {
      ap += 1.0;
      term *= x / ap;
      sum += term;
      if (std::abs(term) < std::abs(sum) * 1e-16) break;
    }
    return sum * std::exp(-x + a * std::log(x) - lg);
  }
  // Lentz continued fraction for Q(a, x).
  const double tiny = 1e-300;
  double b = x + 1.0 - a, c = 1.0 / tiny, d = 1.0 / b, h = d;
  for (int i = 1; i <= 500; ++i) {
    const double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < 1e-16) break;
  }
  return 1.0 - std::exp(-x + a * std::log(x) - lg) * h;
}

// exp(A t) for a 2x2 matrix, scaling-and-squaring Taylor series.
inline Eigen::Matrix2d expm2(const Eigen::Matrix2d& a, double t) {
  Eigen::Matrix2d m = a * t;
  int squarings = 0;
  double norm = m.cwiseAbs().maxCoeff();
  while (norm > 0.5) {
    m *= 0.5;
    norm *= 0.5;
    ++squarings;
  }
  Eigen::Matrix2d result = Eigen::Matrix2d::Identity();
  Eigen::Matrix2d term = Eigen::Matrix2d::Identity();
  for (int i = 1; i <= 24; ++i) {
    term = (term * m) / static_cast<double>(i);
    result += term;
  }
  for (int i = 0; i < squarings; ++i) result = result * result;
  return result;
}

}  // namespace ltnode::oracles
