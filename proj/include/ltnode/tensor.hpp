#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "ltnode/errors.hpp"
#include "ltnode/kernels.hpp"

namespace ltnode {

using Array = Eigen::ArrayXd;
using Shape = std::vector<Eigen::Index>;

namespace detail {

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ", ";
    os << s[i];
  }
  os << ')';
  return os.str();
}

inline Eigen::Index shape_size(const Shape& s) {
  Eigen::Index n = 1;
  for (auto d : s) n *= d;
  return n;
}

inline void ensure_finite(const Array& a, const char* op) {
  if (!a.allFinite()) {
    throw numeric_error(std::string(op) + ": non-finite value in result");
  }
}

}  // namespace detail

struct TensorNode {
  Shape shape;
  Array values;
  Array grad;  // allocated lazily by backward()
  bool requires_grad = false;
};

// Shared handle to a value in the computation graph. Copying a Tensor
// aliases the same node; values() of leaves may be mutated between forward
// passes (optimizer updates), never mid-graph.
class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Shape shape, Array values) {
    if (values.size() != detail::shape_size(shape)) {
      throw shape_error("Tensor: data size " + std::to_string(values.size()) +
                        " does not match shape " + detail::shape_str(shape));
    }
    Tensor t;
    t.node_ = std::make_shared<TensorNode>();
    t.node_->shape = std::move(shape);
    t.node_->values = std::move(values);
    return t;
  }

  static Tensor param(Shape shape, Array values) {
    Tensor t = constant(std::move(shape), std::move(values));
    t.node_->requires_grad = true;
    return t;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    Tensor t;
    t.node_ = std::make_shared<TensorNode>();
    t.node_->values = Array::Zero(detail::shape_size(shape));
    t.node_->shape = std::move(shape);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    Tensor t;
    t.node_ = std::make_shared<TensorNode>();
    t.node_->shape = {};
    t.node_->values = Array::Constant(1, v);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  Eigen::Index size() const { return node_->values.size(); }
  Eigen::Index rows() const { return node_->shape.empty() ? 1 : node_->shape[0]; }
  Eigen::Index cols() const { return node_->shape.size() < 2 ? 1 : node_->shape[1]; }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool rg) { node_->requires_grad = rg; }

  const Array& values() const { return node_->values; }
  Array& values() { return node_->values; }

  // Gradient accumulated by the last backward() sweep; empty if the tensor
  // took no part in it.
  const Array& grad() const { return node_->grad; }
  bool has_grad() const { return node_->grad.size() == node_->values.size(); }
  void zero_grad() {
    if (node_->grad.size() != node_->values.size()) node_->grad.resize(node_->values.size());
    node_->grad.setZero();
  }

  double item() const {
    if (size() != 1) {
      throw contract_error("Tensor::item: tensor of shape " + detail::shape_str(shape()) +
                           " is not a scalar");
    }
    return node_->values[0];
  }

  std::shared_ptr<TensorNode> node() const { return node_; }

 private:
  std::shared_ptr<TensorNode> node_;
};

// One recorded operation: a forward-replay closure and a backward closure.
struct TapeEntry {
  const char* op;
  std::function<void()> replay;
  std::function<void()> backward;
  std::vector<std::shared_ptr<TensorNode>> inputs;
  std::shared_ptr<TensorNode> output;
};

// Define-by-run gradient tape. A fresh tape is built on every forward pass;
// entries hold shared ownership of the nodes they touch.
class Tape {
 public:
  void record(TapeEntry e) { entries_.push_back(std::move(e)); }
  std::size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }
  const std::vector<TapeEntry>& entries() const { return entries_; }

  // Re-executes every recorded forward closure in order. With unchanged
  // inputs this reproduces all recorded values bitwise.
  void replay() {
    for (auto& e : entries_) e.replay();
  }

 private:
  std::vector<TapeEntry> entries_;
};

namespace detail {

inline Tape*& active_tape_slot() {
  thread_local Tape* t = nullptr;
  return t;
}

inline int& no_grad_depth() {
  thread_local int d = 0;
  return d;
}

}  // namespace detail

inline Tape* active_tape() { return detail::active_tape_slot(); }
inline bool grad_enabled() { return detail::no_grad_depth() == 0; }

// Makes `tape` the recording target for the current thread while in scope.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape) : prev_(detail::active_tape_slot()) {
    detail::active_tape_slot() = &tape;
  }
  ~TapeScope() { detail::active_tape_slot() = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

// Disables recording while in scope (prediction, solver phase 1).
class NoGradScope {
 public:
  NoGradScope() { ++detail::no_grad_depth(); }
  ~NoGradScope() { --detail::no_grad_depth(); }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;
};

namespace detail {

inline bool should_record(std::initializer_list<const Tensor*> ins) {
  if (!grad_enabled() || active_tape() == nullptr) return false;
  for (auto* t : ins)
    if (t->requires_grad()) return true;
  return false;
}

inline Array& grad_of(const std::shared_ptr<TensorNode>& n) {
  if (n->grad.size() != n->values.size()) {
    n->grad = Array::Zero(n->values.size());
  }
  return n->grad;
}

}  // namespace detail

// Runs reverse-mode accumulation from a scalar loss over the given tape.
// Gradients of every tensor touched by the tape are zeroed first, then
// accumulated (fan-out sums naturally).
inline void backward(const Tensor& loss, Tape& tape) {
  if (loss.size() != 1) {
    throw contract_error("backward: loss must be a scalar, got shape " +
                         detail::shape_str(loss.shape()));
  }
  std::unordered_set<TensorNode*> seen;
  for (const auto& e : tape.entries()) {
    for (const auto& n : e.inputs) {
      if (seen.insert(n.get()).second) n->grad = Array::Zero(n->values.size());
    }
    if (seen.insert(e.output.get()).second) e.output->grad = Array::Zero(e.output->values.size());
  }
  auto ln = loss.node();
  if (seen.insert(ln.get()).second) ln->grad = Array::Zero(ln->values.size());
  ln->grad[0] = 1.0;
  const auto& es = tape.entries();
  for (auto it = es.rbegin(); it != es.rend(); ++it) it->backward();
}

inline void backward_gradients(const Tensor& loss, Tape& tape) { backward(loss, tape); }

// ---------------------------------------------------------------------------
// Primitives. Each op validates shapes, computes forward through the shared
// kernels, and (when recording) pushes replay/backward closures.
// ---------------------------------------------------------------------------

namespace detail {

inline void record_op(const char* name, std::initializer_list<const Tensor*> ins,
                      const Tensor& out, std::function<void()> replay,
                      std::function<void()> bw) {
  TapeEntry e;
  e.op = name;
  e.replay = std::move(replay);
  e.backward = std::move(bw);
  for (auto* t : ins) e.inputs.push_back(t->node());
  e.output = out.node();
  active_tape()->record(std::move(e));
}

inline void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw shape_error(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                      shape_str(b.shape()));
  }
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0]) {
    throw shape_error("matmul: incompatible shapes " + detail::shape_str(a.shape()) + " x " +
                      detail::shape_str(b.shape()));
  }
  const Eigen::Index m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  Tensor out = Tensor::zeros({m, n});
  kernels::gemm(out.values(), a.values(), b.values(), m, k, n);
  detail::ensure_finite(out.values(), "matmul");
  if (detail::should_record({&a, &b})) {
    auto an = a.node(), bn = b.node(), on = out.node();
    detail::record_op(
        "matmul", {&a, &b}, out,
        [an, bn, on, m, k, n] { kernels::gemm(on->values, an->values, bn->values, m, k, n); },
        [an, bn, on, m, k, n] {
          if (an->requires_grad)
            kernels::gemm_acc_nt(detail::grad_of(an), on->grad, bn->values, m, k, n);
          if (bn->requires_grad)
            kernels::gemm_acc_tn(detail::grad_of(bn), an->values, on->grad, m, k, n);
        });
    out.set_requires_grad(true);
  }
  return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape("add", a, b);
  Tensor out = Tensor::zeros(a.shape());
  out.values() = a.values() + b.values();
  if (detail::should_record({&a, &b})) {
    auto an = a.node(), bn = b.node(), on = out.node();
    detail::record_op(
        "add", {&a, &b}, out, [an, bn, on] { on->values = an->values + bn->values; },
        [an, bn, on] {
          if (an->requires_grad) detail::grad_of(an) += on->grad;
          if (bn->requires_grad) detail::grad_of(bn) += on->grad;
        });
    out.set_requires_grad(true);
  }
  return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape("sub", a, b);
  Tensor out = Tensor::zeros(a.shape());
  out.values() = a.values() - b.values();
  if (detail::should_record({&a, &b})) {
    auto an = a.node(), bn = b.node(), on = out.node();
    detail::record_op(
        "sub", {&a, &b}, out, [an, bn, on] { on->values = an->values - bn->values; },
        [an, bn, on] {
          if (an->requires_grad) detail::grad_of(an) += on->grad;
          if (bn->requires_grad) detail::grad_of(bn) -= on->grad;
        });
    out.set_requires_grad(true);
  }
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape("mul", a, b);
  Tensor out = Tensor::zeros(a.shape());
  out.values() = a.values() * b.values();
  if (detail::should_record({&a, &b})) {
    auto an = a.node(), bn = b.node(), on = out.node();
    detail::record_op(
        "mul", {&a, &b}, out, [an, bn, on] { on->values = an->values * bn->values; },
        [an, bn, on] {
          if (an->requires_grad) detail::grad_of(an) += on->grad * bn->values;
          if (bn->requires_grad) detail::grad_of(bn) += on->grad * an->values;
        });
    out.set_requires_grad(true);
  }
  return out;
}

inline Tensor div(const Tensor& a, const Tensor& b) {
  detail::require_same_shape("div", a, b);
  Tensor out = Tensor::zeros(a.shape());
  out.values() = a.values() / b.values();
  detail::ensure_finite(out.values(), "div");
  if (detail::should_record({&a, &b})) {
    auto an = a.node(), bn = b.node(), on = out.node();
    detail::record_op(
        "div", {&a, &b}, out, [an, bn, on] { on->values = an->values / bn->values; },
        [an, bn, on] {
          if (an->requires_grad) detail::grad_of(an) += on->grad / bn->values;
          if (bn->requires_grad)
            detail::grad_of(bn) -= on->grad * an->values / (bn->values * bn->values);
        });
    out.set_requires_grad(true);
  }
  return out;
}

// M (r x c) + bias (c) broadcast over rows.
inline Tensor add_bias(const Tensor& m, const Tensor& bias) {
  if (m.shape().size() != 2 || bias.shape().size() != 1 || bias.shape()[0] != m.shape()[1]) {
    throw shape_error("add_bias: incompatible shapes " + detail::shape_str(m.shape()) + " + " +
                      detail::shape_str(bias.shape()));
  }
  const Eigen::Index r = m.shape()[0], c = m.shape()[1];
  Tensor out = Tensor::zeros(m.shape());
  out.values() = m.values();
  kernels::add_bias_rows(out.values(), bias.values(), r, c);
  if (detail::should_record({&m, &bias})) {
    auto mn = m.node(), bn = bias.node(), on = out.node();
    detail::record_op(
        "add_bias", {&m, &bias}, out,
        [mn, bn, on, r, c] {
          on->values = mn->values;
          kernels::add_bias_rows(on->values, bn->values, r, c);
        },
        [mn, bn, on, r, c] {
          if (mn->requires_grad) detail::grad_of(mn) += on->grad;
          if (bn->requires_grad) {
            auto& g = detail::grad_of(bn);
            Eigen::Map<Eigen::RowVectorXd>(g.data(), c) +=
                kernels::ConstMatMap(on->grad.data(), r, c).colwise().sum();
          }
        });
    out.set_requires_grad(true);
  }
  return out;
}

inline Tensor scalar_mul(const Tensor& a, double c) {
  Tensor out = Tensor::zeros(a.shape());
  out.values() = c * a.values();
  if (detail::should_record({&a})) {
    auto an = a.node(), on = out.node();
    detail::record_op(
        "scalar_mul", {&a}, out, [an, on, c] { on->values = c * an->values; },
        [an, on, c] {
          if (an->requires_grad) detail::grad_of(an) += c * on->grad;
        });
    out.set_requires_grad(true);
  }
  return out;
}

inline Tensor add_const(const Tensor& a, double c) {
  Tensor out = Tensor::zeros(a.shape());
  out.values() = a.values() + c;
  if (detail::should_record({&a})) {
    auto an = a.node(), on = out.node();
    detail::record_op(
        "add_const", {&a}, out, [an, on, c] { on->values = an->values + c; },
        [an, on] {
          if (an->requires_grad) detail::grad_of(an) += on->grad;
        });
    out.set_requires_grad(true);
  }
  return out;
}

// a (any shape) scaled by a scalar tensor s.
inline Tensor mul_scalar_tensor(const Tensor& a, const Tensor& s) {
  if (s.size() != 1) {
    throw shape_error("mul_scalar_tensor: scale must be a scalar, got " +
                      detail::shape_str(s.shape()));
  }
  Tensor out = Tensor::zeros(a.shape());
  out.values() = a.values() * s.values()[0];
  if (detail::should_record({&a, &s})) {
    auto an = a.node(), sn = s.node(), on = out.node();
    detail::record_op(
        "mul_scalar_tensor", {&a, &s}, out,
        [an, sn, on] { on->values = an->values * sn->values[0]; },
        [an, sn, on] {
          if (an->requires_grad) detail::grad_of(an) += on->grad * sn->values[0];
          if (sn->requires_grad) detail::grad_of(sn)[0] += (on->grad * an->values).sum();
        });
    out.set_requires_grad(true);
  }
  return out;
}

inline Tensor tanh(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  kernels::tanh_fast(out.values(), a.values());
  if (detail::should_record({&a})) {
    auto an = a.node(), on = out.node();
    detail::record_op(
        "tanh", {&a}, out, [an, on] { kernels::tanh_fast(on->values, an->values); },
        [an, on] {
          if (an->requires_grad)
            detail::grad_of(an) += on->grad * (1.0 - on->values * on->values);
        });
    out.set_requires_grad(true);
  }
  return out;
}

inline Tensor relu(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  kernels::relu(out.values(), a.values());
  if (detail::should_record({&a})) {
    auto an = a.node(), on = out.node();
    detail::record_op(
        "relu", {&a}, out, [an, on] { kernels::relu(on->values, an->values); },
        [an, on] {
          if (an->requires_grad)
            detail::grad_of(an) += on->grad * (an->values > 0.0).cast<double>();
        });
    out.set_requires_grad(true);
  }
  return out;
}

inline Tensor softplus(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  kernels::softplus(out.values(), a.values());
  if (detail::should_record({&a})) {
    auto an = a.node(), on = out.node();
    detail::record_op(
        "softplus", {&a}, out, [an, on] { kernels::softplus(on->values, an->values); },
        [an, on] {
          if (an->requires_grad)
            detail::grad_of(an) += on->grad / (1.0 + (-an->values).exp());
        });
    out.set_requires_grad(true);
  }
  return out;
}

inline Tensor exp(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  out.values() = a.values().exp();
  detail::ensure_finite(out.values(), "exp");
  if (detail::should_record({&a})) {
    auto an = a.node(), on = out.node();
    detail::record_op(
        "exp", {&a}, out, [an, on] { on->values = an->values.exp(); },
        [an, on] {
          if (an->requires_grad) detail::grad_of(an) += on->grad * on->values;
        });
    out.set_requires_grad(true);
  }
  return out;
}

inline Tensor log(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  out.values() = a.values().log();
  detail::ensure_finite(out.values(), "log");
  if (detail::should_record({&a})) {
    auto an = a.node(), on = out.node();
    detail::record_op(
        "log", {&a}, out, [an, on] { on->values = an->values.log(); },
        [an, on] {
          if (an->requires_grad) detail::grad_of(an) += on->grad / an->values;
        });
    out.set_requires_grad(true);
  }
  return out;
}

inline Tensor concat_cols(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[0] != b.shape()[0]) {
    throw shape_error("concat_cols: incompatible shapes " + detail::shape_str(a.shape()) +
                      " | " + detail::shape_str(b.shape()));
  }
  const Eigen::Index r = a.shape()[0], ca = a.shape()[1], cb = b.shape()[1];
  Tensor out = Tensor::zeros({r, ca + cb});
  auto fwd = [r, ca, cb](Array& o, const Array& x, const Array& y) {
    kernels::MatMap om(o.data(), r, ca + cb);
    om.leftCols(ca) = kernels::ConstMatMap(x.data(), r, ca);
    om.rightCols(cb) = kernels::ConstMatMap(y.data(), r, cb);
  };
  fwd(out.values(), a.values(), b.values());
  if (detail::should_record({&a, &b})) {
    auto an = a.node(), bn = b.node(), on = out.node();
    detail::record_op(
        "concat_cols", {&a, &b}, out,
        [an, bn, on, fwd] { fwd(on->values, an->values, bn->values); },
        [an, bn, on, r, ca, cb] {
          kernels::ConstMatMap gm(on->grad.data(), r, ca + cb);
          if (an->requires_grad)
            kernels::MatMap(detail::grad_of(an).data(), r, ca) += gm.leftCols(ca);
          if (bn->requires_grad)
            kernels::MatMap(detail::grad_of(bn).data(), r, cb) += gm.rightCols(cb);
        });
    out.set_requires_grad(true);
  }
  return out;
}

inline Tensor reduce_sum(const Tensor& a) {
  Tensor out = Tensor::zeros({});
  out.values()[0] = a.values().sum();
  if (detail::should_record({&a})) {
    auto an = a.node(), on = out.node();
    detail::record_op(
        "reduce_sum", {&a}, out, [an, on] { on->values[0] = an->values.sum(); },
        [an, on] {
          if (an->requires_grad) detail::grad_of(an) += on->grad[0];
        });
    out.set_requires_grad(true);
  }
  return out;
}

// out = base + sum_j coefs[j] * terms[j]; all same shape. The solver's stage
// and interpolation combiner; forward goes through kernels::axpy_list.
inline Tensor linear_comb(const Tensor& base, const std::vector<double>& coefs,
                          const std::vector<Tensor>& terms) {
  if (coefs.size() != terms.size()) {
    throw contract_error("linear_comb: coefficient/term count mismatch");
  }
  for (const auto& t : terms) detail::require_same_shape("linear_comb", base, t);
  Tensor out = Tensor::zeros(base.shape());
  std::vector<const Array*> ptrs(terms.size());
  for (std::size_t j = 0; j < terms.size(); ++j) ptrs[j] = &terms[j].values();
  kernels::axpy_list(out.values(), base.values(), coefs.data(), ptrs.data(), ptrs.size());

  bool rec = grad_enabled() && active_tape() != nullptr && base.requires_grad();
  for (const auto& t : terms) rec = rec || (grad_enabled() && active_tape() && t.requires_grad());
  if (rec) {
    auto bn = base.node();
    auto on = out.node();
    std::vector<std::shared_ptr<TensorNode>> tns(terms.size());
    for (std::size_t j = 0; j < terms.size(); ++j) tns[j] = terms[j].node();
    auto cf = coefs;
    TapeEntry e;
    e.op = "linear_comb";
    e.replay = [bn, on, tns, cf] {
      std::vector<const Array*> p(tns.size());
      for (std::size_t j = 0; j < tns.size(); ++j) p[j] = &tns[j]->values;
      kernels::axpy_list(on->values, bn->values, cf.data(), p.data(), p.size());
    };
    e.backward = [bn, on, tns, cf] {
      if (bn->requires_grad) detail::grad_of(bn) += on->grad;
      for (std::size_t j = 0; j < tns.size(); ++j)
        if (tns[j]->requires_grad) detail::grad_of(tns[j]) += cf[j] * on->grad;
    };
    e.inputs.push_back(bn);
    for (auto& n : tns) e.inputs.push_back(n);
    e.output = on;
    active_tape()->record(std::move(e));
    out.set_requires_grad(true);
  }
  return out;
}

// Dense-output polynomial u(theta) from the five interpolation vectors.
// Linear in r1..r5; forward shares kernels::dense_interp with the raw path.
inline Tensor dense_interp(double theta, const Tensor& r1, const Tensor& r2, const Tensor& r3,
                           const Tensor& r4, const Tensor& r5) {
  detail::require_same_shape("dense_interp", r1, r2);
  detail::require_same_shape("dense_interp", r1, r3);
  detail::require_same_shape("dense_interp", r1, r4);
  detail::require_same_shape("dense_interp", r1, r5);
  Tensor out = Tensor::zeros(r1.shape());
  kernels::dense_interp(out.values(), theta, r1.values(), r2.values(), r3.values(), r4.values(),
                        r5.values());
  if (detail::should_record({&r1, &r2, &r3, &r4, &r5})) {
    auto n1 = r1.node(), n2 = r2.node(), n3 = r3.node(), n4 = r4.node(), n5 = r5.node();
    auto on = out.node();
    const double om = 1.0 - theta;
    const double c2 = theta, c3 = theta * om, c4 = theta * theta * om,
                 c5 = theta * theta * om * om;
    detail::record_op(
        "dense_interp", {&r1, &r2, &r3, &r4, &r5}, out,
        [n1, n2, n3, n4, n5, on, theta] {
          kernels::dense_interp(on->values, theta, n1->values, n2->values, n3->values, n4->values,
                                n5->values);
        },
        [n1, n2, n3, n4, n5, on, c2, c3, c4, c5] {
          if (n1->requires_grad) detail::grad_of(n1) += on->grad;
          if (n2->requires_grad) detail::grad_of(n2) += c2 * on->grad;
          if (n3->requires_grad) detail::grad_of(n3) += c3 * on->grad;
          if (n4->requires_grad) detail::grad_of(n4) += c4 * on->grad;
          if (n5->requires_grad) detail::grad_of(n5) += c5 * on->grad;
        });
    out.set_requires_grad(true);
  }
  return out;
}

// Row-wise softmax on (N x C) logits.
inline Tensor softmax(const Tensor& logits) {
  if (logits.shape().size() != 2) {
    throw shape_error("softmax: expected rank-2 logits, got " +
                      detail::shape_str(logits.shape()));
  }
  const Eigen::Index r = logits.shape()[0], c = logits.shape()[1];
  Tensor out = Tensor::zeros(logits.shape());
  kernels::softmax_rows(out.values(), logits.values(), r, c);
  if (detail::should_record({&logits})) {
    auto ln = logits.node(), on = out.node();
    detail::record_op(
        "softmax", {&logits}, out,
        [ln, on, r, c] { kernels::softmax_rows(on->values, ln->values, r, c); },
        [ln, on, r, c] {
          if (!ln->requires_grad) return;
          auto& g = detail::grad_of(ln);
          for (Eigen::Index i = 0; i < r; ++i) {
            auto p = on->values.segment(i * c, c);
            auto go = on->grad.segment(i * c, c);
            const double dot = (go * p).sum();
            g.segment(i * c, c) += p * (go - dot);
          }
        });
    out.set_requires_grad(true);
  }
  return out;
}

// Per-example log-likelihood of the labeled class under softmax(logits),
// computed through the stabilized log-sum-exp path. Returns shape (N).
inline Tensor log_softmax_nll(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.shape().size() != 2) {
    throw shape_error("log_softmax_nll: expected rank-2 logits, got " +
                      detail::shape_str(logits.shape()));
  }
  const Eigen::Index r = logits.shape()[0], c = logits.shape()[1];
  if (static_cast<Eigen::Index>(labels.size()) != r) {
    throw shape_error("log_softmax_nll: label count " + std::to_string(labels.size()) +
                      " != rows " + std::to_string(r));
  }
  for (int y : labels) {
    if (y < 0 || y >= c) {
      throw contract_error("log_softmax_nll: label " + std::to_string(y) +
                           " out of range for " + std::to_string(c) + " classes");
    }
  }
  auto fwd = [r, c, labels](Array& o, const Array& x) {
    o.resize(r);
    for (Eigen::Index i = 0; i < r; ++i) {
      auto row = x.segment(i * c, c);
      const double m = row.maxCoeff();
      const double lse = m + std::log((row - m).exp().sum());
      o[i] = row[labels[i]] - lse;
    }
  };
  Tensor out = Tensor::zeros({r});
  fwd(out.values(), logits.values());
  detail::ensure_finite(out.values(), "log_softmax_nll");
  if (detail::should_record({&logits})) {
    auto ln = logits.node(), on = out.node();
    detail::record_op(
        "log_softmax_nll", {&logits}, out, [ln, on, fwd] { fwd(on->values, ln->values); },
        [ln, on, r, c, labels] {
          if (!ln->requires_grad) return;
          Array p;
          kernels::softmax_rows(p, ln->values, r, c);
          auto& g = detail::grad_of(ln);
          for (Eigen::Index i = 0; i < r; ++i) {
            const double go = on->grad[i];
            g.segment(i * c, c) -= go * p.segment(i * c, c);
            g[i * c + labels[i]] += go;
          }
        });
    out.set_requires_grad(true);
  }
  return out;
}

// Picks m[i, labels[i]] from (N x C) into shape (N).
inline Tensor gather_cols(const Tensor& m, const std::vector<int>& labels) {
  if (m.shape().size() != 2) {
    throw shape_error("gather_cols: expected rank-2 input, got " + detail::shape_str(m.shape()));
  }
  const Eigen::Index r = m.shape()[0], c = m.shape()[1];
  if (static_cast<Eigen::Index>(labels.size()) != r) {
    throw shape_error("gather_cols: label count mismatch");
  }
  for (int y : labels) {
    if (y < 0 || y >= c) throw contract_error("gather_cols: label out of range");
  }
  auto fwd = [r, c, labels](Array& o, const Array& x) {
    o.resize(r);
    for (Eigen::Index i = 0; i < r; ++i) o[i] = x[i * c + labels[i]];
  };
  Tensor out = Tensor::zeros({r});
  fwd(out.values(), m.values());
  if (detail::should_record({&m})) {
    auto mn = m.node(), on = out.node();
    detail::record_op(
        "gather_cols", {&m}, out, [mn, on, fwd] { fwd(on->values, mn->values); },
        [mn, on, r, c, labels] {
          if (!mn->requires_grad) return;
          auto& g = detail::grad_of(mn);
          for (Eigen::Index i = 0; i < r; ++i) g[i * c + labels[i]] += on->grad[i];
        });
    out.set_requires_grad(true);
  }
  return out;
}

// Same data, new shape (sizes must agree). Copies; gradient passes through.
inline Tensor reshape(const Tensor& a, Shape shape) {
  if (detail::shape_size(shape) != a.size()) {
    throw shape_error("reshape: cannot reshape " + detail::shape_str(a.shape()) + " to " +
                      detail::shape_str(shape));
  }
  Tensor out = Tensor::zeros(shape);
  out.values() = a.values();
  if (detail::should_record({&a})) {
    auto an = a.node(), on = out.node();
    detail::record_op(
        "reshape", {&a}, out, [an, on] { on->values = an->values; },
        [an, on] {
          if (an->requires_grad) detail::grad_of(an) += on->grad;
        });
    out.set_requires_grad(true);
  }
  return out;
}

enum class Act { none, tanh, relu };

// Fused affine layer: act(x W + b). One tape entry instead of three; the
// activation derivative is recovered from the saved output, so the
// pre-activation never needs to be stored.
inline Tensor dense_layer(const Tensor& x, const Tensor& w, const Tensor& b, Act act) {
  if (x.shape().size() != 2 || w.shape().size() != 2 || x.shape()[1] != w.shape()[0] ||
      b.shape().size() != 1 || b.shape()[0] != w.shape()[1]) {
    throw shape_error("dense_layer: incompatible shapes " + detail::shape_str(x.shape()) + " * " +
                      detail::shape_str(w.shape()) + " + " + detail::shape_str(b.shape()));
  }
  const Eigen::Index m = x.shape()[0], k = x.shape()[1], n = w.shape()[1];
  auto fwd = [m, k, n, act](Array& o, const Array& xv, const Array& wv, const Array& bv) {
    kernels::gemm(o, xv, wv, m, k, n);
    kernels::add_bias_rows(o, bv, m, n);
    if (act == Act::tanh) kernels::tanh_fast(o, o);
    else if (act == Act::relu) kernels::relu(o, o);
  };
  Tensor out = Tensor::zeros({m, n});
  fwd(out.values(), x.values(), w.values(), b.values());
  detail::ensure_finite(out.values(), "dense_layer");
  if (detail::should_record({&x, &w, &b})) {
    auto xn = x.node(), wn = w.node(), bn = b.node(), on = out.node();
    detail::record_op(
        "dense_layer", {&x, &w, &b}, out,
        [xn, wn, bn, on, fwd] { fwd(on->values, xn->values, wn->values, bn->values); },
        [xn, wn, bn, on, m, k, n, act] {
          Array ga;  // gradient w.r.t. the pre-activation
          if (act == Act::tanh) ga = on->grad * (1.0 - on->values * on->values);
          else if (act == Act::relu) ga = on->grad * (on->values > 0.0).cast<double>();
          else ga = on->grad;
          if (xn->requires_grad) kernels::gemm_acc_nt(detail::grad_of(xn), ga, wn->values, m, k, n);
          if (wn->requires_grad) kernels::gemm_acc_tn(detail::grad_of(wn), xn->values, ga, m, k, n);
          if (bn->requires_grad) {
            auto& g = detail::grad_of(bn);
            Eigen::Map<Eigen::RowVectorXd>(g.data(), n) +=
                kernels::ConstMatMap(ga.data(), m, n).colwise().sum();
          }
        });
    out.set_requires_grad(true);
  }
  return out;
}

// Sum of squared differences, scalar output.
inline Tensor squared_error(const Tensor& a, const Tensor& b) {
  detail::require_same_shape("squared_error", a, b);
  Tensor out = Tensor::zeros({});
  out.values()[0] = (a.values() - b.values()).square().sum();
  detail::ensure_finite(out.values(), "squared_error");
  if (detail::should_record({&a, &b})) {
    auto an = a.node(), bn = b.node(), on = out.node();
    detail::record_op(
        "squared_error", {&a, &b}, out,
        [an, bn, on] { on->values[0] = (an->values - bn->values).square().sum(); },
        [an, bn, on] {
          const double g = 2.0 * on->grad[0];
          if (an->requires_grad) detail::grad_of(an) += g * (an->values - bn->values);
          if (bn->requires_grad) detail::grad_of(bn) -= g * (an->values - bn->values);
        });
    out.set_requires_grad(true);
  }
  return out;
}

}  // namespace ltnode
