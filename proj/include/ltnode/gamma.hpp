#pragma once

#include <cmath>
#include <string>

#include "ltnode/errors.hpp"
#include "ltnode/rng.hpp"
#include "ltnode/tensor.hpp"

namespace ltnode {

struct GammaParams {
  double alpha = 1.0;  // shape
  double beta = 1.0;   // rate
};

namespace detail {

inline void check_positive(double x, const char* what) {
  if (!(x > 0.0) || !std::isfinite(x)) {
    throw std::domain_error(std::string(what) + " must be positive and finite, got " +
                            std::to_string(x));
  }
}

}  // namespace detail

// ln Gamma(x) for x > 0 via the Lanczos approximation (g = 7, 9 coefficients),
// with the reflection formula below 0.5.
inline double lgamma_fn(double x) {
  detail::check_positive(x, "lgamma_fn: x");
  static constexpr double g = 7.0;
  static constexpr double c[9] = {
      0.99999999999980993,     676.5203681218851,      -1259.1392167224028,
      771.32342877765313,      -176.61502916214059,    12.507343278686905,
      -0.13857109526572012,    9.9843695780195716e-6,  1.5056327351493116e-7};
  if (x < 0.5) {
    // ln Gamma(x) = ln(pi / sin(pi x)) - ln Gamma(1 - x)
    return std::log(M_PI / std::sin(M_PI * x)) - lgamma_fn(1.0 - x);
  }
  const double z = x - 1.0;
  double a = c[0];
  for (int i = 1; i < 9; ++i) a += c[i] / (z + i);
  const double t = z + g + 0.5;
  return 0.5 * std::log(2.0 * M_PI) + (z + 0.5) * std::log(t) - t + std::log(a);
}

// Digamma psi(x) for x > 0: upward recurrence to x >= 6, then the asymptotic
// Bernoulli series.
inline double digamma_fn(double x) {
  detail::check_positive(x, "digamma_fn: x");
  double r = 0.0;
  while (x < 6.0) {
    r -= 1.0 / x;
    x += 1.0;
  }
  const double x2 = 1.0 / (x * x);
  return r + std::log(x) - 0.5 / x -
         x2 * (1.0 / 12.0 -
               x2 * (1.0 / 120.0 -
                     x2 * (1.0 / 252.0 -
                           x2 * (1.0 / 240.0 -
                                 x2 * (1.0 / 132.0 -
                                       x2 * (691.0 / 32760.0 - x2 * (1.0 / 12.0)))))));
}

// Trigamma psi'(x) for x > 0, same recurrence + series scheme.
inline double trigamma_fn(double x) {
  detail::check_positive(x, "trigamma_fn: x");
  double r = 0.0;
  while (x < 6.0) {
    r += 1.0 / (x * x);
    x += 1.0;
  }
  const double x2 = 1.0 / (x * x);
  return r + (1.0 / x) *
                 (1.0 +
                  (1.0 / x) * (0.5 +
                               (1.0 / x) * (1.0 / 6.0 -
                                            x2 * (1.0 / 30.0 -
                                                  x2 * (1.0 / 42.0 -
                                                        x2 * (1.0 / 30.0 -
                                                              x2 * (5.0 / 66.0 -
                                                                    x2 * (691.0 / 2730.0 -
                                                                          x2 * (7.0 / 6.0)))))))));
}

// ln p(t | alpha, beta) of Gamma(shape alpha, rate beta).
inline double gamma_log_pdf(double t, double alpha, double beta) {
  detail::check_positive(alpha, "gamma_log_pdf: alpha");
  detail::check_positive(beta, "gamma_log_pdf: beta");
  if (!(t > 0.0)) {
    throw std::domain_error("gamma_log_pdf: t must be positive, got " + std::to_string(t));
  }
  return alpha * std::log(beta) - lgamma_fn(alpha) + (alpha - 1.0) * std::log(t) - beta * t;
}

inline double gamma_pdf(double t, double alpha, double beta) {
  return std::exp(gamma_log_pdf(t, alpha, beta));
}

// Marsaglia-Tsang squeeze sampler; shapes below 1 use the boost
// X = Gamma(alpha + 1) * U^(1/alpha).
inline double gamma_sample(Rng& rng, double alpha, double beta) {
  detail::check_positive(alpha, "gamma_sample: alpha");
  detail::check_positive(beta, "gamma_sample: beta");
  if (alpha < 1.0) {
    const double u = 1.0 - rng.uniform01();  // (0, 1]
    return gamma_sample(rng, alpha + 1.0, beta) * std::pow(u, 1.0 / alpha);
  }
  const double d = alpha - 1.0 / 3.0;
  const double c = 1.0 / (3.0 * std::sqrt(d));
  for (;;) {
    double x, v;
    do {
      x = rng.normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = rng.uniform01();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v / beta;
    if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v / beta;
  }
}

// KL( Gamma(aq, bq) || Gamma(ap, bp) ), closed form.
inline double gamma_kl(const GammaParams& q, const GammaParams& p) {
  detail::check_positive(q.alpha, "gamma_kl: q.alpha");
  detail::check_positive(q.beta, "gamma_kl: q.beta");
  detail::check_positive(p.alpha, "gamma_kl: p.alpha");
  detail::check_positive(p.beta, "gamma_kl: p.beta");
  return q.alpha * std::log(q.beta) - p.alpha * std::log(p.beta) + lgamma_fn(p.alpha) -
         lgamma_fn(q.alpha) + (digamma_fn(q.alpha) - std::log(q.beta)) * (q.alpha - p.alpha) +
         q.alpha * p.beta / q.beta - q.alpha;
}

// Analytic partials of gamma_kl in the posterior parameters.
inline void gamma_kl_grad(const GammaParams& q, const GammaParams& p, double& d_alpha,
                          double& d_beta) {
  detail::check_positive(q.alpha, "gamma_kl_grad: q.alpha");
  detail::check_positive(q.beta, "gamma_kl_grad: q.beta");
  d_alpha = trigamma_fn(q.alpha) * (q.alpha - p.alpha) + p.beta / q.beta - 1.0;
  d_beta = p.alpha / q.beta - q.alpha * p.beta / (q.beta * q.beta);
}

// ---------------------------------------------------------------------------
// Recorded (tensor) counterparts used inside the ELBO graph.
// ---------------------------------------------------------------------------

inline Tensor lgamma(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  for (Eigen::Index i = 0; i < a.size(); ++i) out.values()[i] = lgamma_fn(a.values()[i]);
  detail::ensure_finite(out.values(), "lgamma");
  if (detail::should_record({&a})) {
    auto an = a.node(), on = out.node();
    detail::record_op(
        "lgamma", {&a}, out,
        [an, on] {
          for (Eigen::Index i = 0; i < an->values.size(); ++i)
            on->values[i] = lgamma_fn(an->values[i]);
        },
        [an, on] {
          if (!an->requires_grad) return;
          auto& g = detail::grad_of(an);
          for (Eigen::Index i = 0; i < an->values.size(); ++i)
            g[i] += on->grad[i] * digamma_fn(an->values[i]);
        });
    out.set_requires_grad(true);
  }
  return out;
}

inline Tensor digamma(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  for (Eigen::Index i = 0; i < a.size(); ++i) out.values()[i] = digamma_fn(a.values()[i]);
  detail::ensure_finite(out.values(), "digamma");
  if (detail::should_record({&a})) {
    auto an = a.node(), on = out.node();
    detail::record_op(
        "digamma", {&a}, out,
        [an, on] {
          for (Eigen::Index i = 0; i < an->values.size(); ++i)
            on->values[i] = digamma_fn(an->values[i]);
        },
        [an, on] {
          if (!an->requires_grad) return;
          auto& g = detail::grad_of(an);
          for (Eigen::Index i = 0; i < an->values.size(); ++i)
            g[i] += on->grad[i] * trigamma_fn(an->values[i]);
        });
    out.set_requires_grad(true);
  }
  return out;
}

// ln Gamma-pdf at fixed t as a differentiable function of (alpha, beta);
// alpha and beta may be scalars or same-shape vectors (per-example posteriors).
inline Tensor gamma_log_pdf_t(const Tensor& alpha, const Tensor& beta, double t) {
  if (!(t > 0.0)) {
    throw std::domain_error("gamma_log_pdf_t: t must be positive, got " + std::to_string(t));
  }
  detail::require_same_shape("gamma_log_pdf_t", alpha, beta);
  const double lt = std::log(t);
  Tensor acc = sub(mul(alpha, log(beta)), lgamma(alpha));
  acc = add(acc, add_const(scalar_mul(alpha, lt), -lt));
  return add(acc, scalar_mul(beta, -t));
}

// Elementwise KL( Gamma(alpha, beta) || prior ) as a differentiable function
// of (alpha, beta).
inline Tensor gamma_kl_t(const Tensor& alpha, const Tensor& beta, const GammaParams& prior) {
  detail::check_positive(prior.alpha, "gamma_kl_t: prior.alpha");
  detail::check_positive(prior.beta, "gamma_kl_t: prior.beta");
  detail::require_same_shape("gamma_kl_t", alpha, beta);
  const double cst = -prior.alpha * std::log(prior.beta) + lgamma_fn(prior.alpha);
  Tensor log_beta = log(beta);
  Tensor acc = sub(mul(alpha, log_beta), lgamma(alpha));
  acc = add(acc, mul(sub(digamma(alpha), log_beta), add_const(alpha, -prior.alpha)));
  acc = add(acc, scalar_mul(div(alpha, beta), prior.beta));
  acc = sub(acc, alpha);
  return add_const(acc, cst);
}

}  // namespace ltnode
