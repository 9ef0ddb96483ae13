#pragma once

#include <Eigen/Dense>
#include <cstddef>

namespace ltnode::kernels {

// Low-level numeric kernels shared by the recorded tensor ops and the
// no-record fast paths (solver phase 1, prediction). Keeping a single
// implementation per kernel is what makes "recorded replay reproduces the
// fast path bitwise" hold: both sides execute the same machine code on the
// same data.

using Array = Eigen::ArrayXd;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

// C (m x n) = A (m x k) * B (k x n), all row-major flat arrays.
inline void gemm(Array& c, const Array& a, const Array& b,
                 Eigen::Index m, Eigen::Index k, Eigen::Index n) {
  c.resize(m * n);
  MatMap(c.data(), m, n).noalias() =
      ConstMatMap(a.data(), m, k) * ConstMatMap(b.data(), k, n);
}

// C (m x n) += A^T? * B^T? with the operand shapes implied by the flags.
// Used by the matmul backward: dA += dC * B^T, dB += A^T * dC.
inline void gemm_acc_nt(Array& c, const Array& a, const Array& b,
                        Eigen::Index m, Eigen::Index k, Eigen::Index n) {
  // c (m x k) += a (m x n) * b(k x n)^T
  MatMap(c.data(), m, k).noalias() +=
      ConstMatMap(a.data(), m, n) * ConstMatMap(b.data(), k, n).transpose();
}

inline void gemm_acc_tn(Array& c, const Array& a, const Array& b,
                        Eigen::Index m, Eigen::Index k, Eigen::Index n) {
  // c (k x n) += a (m x k)^T * b (m x n)
  MatMap(c.data(), k, n).noalias() +=
      ConstMatMap(a.data(), m, k).transpose() * ConstMatMap(b.data(), m, n);
}

// M (rows x cols, row-major) += bias (cols) broadcast over rows.
inline void add_bias_rows(Array& m, const Array& bias, Eigen::Index rows, Eigen::Index cols) {
  MatMap(m.data(), rows, cols).rowwise() +=
      Eigen::Map<const Eigen::RowVectorXd>(bias.data(), cols);
}

// Fast elementwise tanh via the exp identity; max abs deviation from
// std::tanh is ~1e-10 and the 1 - y^2 derivative rule stays consistent.
inline void tanh_fast(Array& out, const Array& x) {
  out = 1.0 - 2.0 / ((2.0 * x).exp() + 1.0);
}

inline void relu(Array& out, const Array& x) { out = x.max(0.0); }

// Numerically stable softplus log(1 + e^x).
inline void softplus(Array& out, const Array& x) {
  out = (x.max(0.0)) + (1.0 + (-x.abs()).exp()).log();
}

// out = base + sum_j coef[j] * (*terms[j]); the stage/interp combiner.
// Accumulation order is fixed (j ascending) so every caller agrees bitwise.
inline void axpy_list(Array& out, const Array& base, const double* coef,
                      const Array* const* terms, std::size_t count) {
  out = base;
  for (std::size_t j = 0; j < count; ++j) out += coef[j] * (*terms[j]);
}

// Dormand-Prince dense-output evaluation from the five interpolation
// coefficient vectors; shared by the raw dense_eval and the recorded path.
inline void dense_interp(Array& out, double theta, const Array& r1, const Array& r2,
                         const Array& r3, const Array& r4, const Array& r5) {
  const double om = 1.0 - theta;
  out = r1 + theta * (r2 + om * (r3 + theta * (r4 + om * r5)));
}

// Row-wise softmax for (rows x cols) row-major logits.
inline void softmax_rows(Array& out, const Array& logits, Eigen::Index rows, Eigen::Index cols) {
  out.resize(logits.size());
  for (Eigen::Index i = 0; i < rows; ++i) {
    auto row = logits.segment(i * cols, cols);
    const double m = row.maxCoeff();
    auto orow = out.segment(i * cols, cols);
    orow = (row - m).exp();
    orow /= orow.sum();
  }
}

}  // namespace ltnode::kernels
