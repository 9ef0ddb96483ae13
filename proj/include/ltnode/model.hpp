#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "ltnode/datasets.hpp"
#include "ltnode/errors.hpp"
#include "ltnode/gamma.hpp"
#include "ltnode/ode.hpp"
#include "ltnode/predictive.hpp"
#include "ltnode/rng.hpp"
#include "ltnode/tensor.hpp"

namespace ltnode {

enum class Variant { node, uni_node, lt_node, alt_node };

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::node: return "node";
    case Variant::uni_node: return "uni_node";
    case Variant::lt_node: return "lt_node";
    case Variant::alt_node: return "alt_node";
  }
  return "?";
}

inline Variant variant_from_name(const std::string& s) {
  if (s == "node") return Variant::node;
  if (s == "uni_node") return Variant::uni_node;
  if (s == "lt_node") return Variant::lt_node;
  if (s == "alt_node") return Variant::alt_node;
  throw contract_error("unknown variant '" + s + "'");
}

struct ModelSpec {
  Task task = Task::regression;
  Variant variant = Variant::lt_node;
  int input_dim = 1;
  // Layer widths. The input block keeps its activation on the last layer;
  // node block and head end linear. node_widths.back() must match
  // input_widths.back() (the latent width H).
  std::vector<int> input_widths = {50, 100, 150, 50};
  std::vector<int> node_widths = {100, 150, 100, 50};
  std::vector<int> head_widths = {1};
  std::vector<int> inference_hidden = {32, 32};  // alt_node r(x; phi) hidden widths
  Act activation = Act::tanh;
  int num_classes = 0;  // classification only
  double fixed_time = 1.0;                  // node
  double uniform_a = 0.0, uniform_b = 3.0;  // uni_node
  GammaParams init_posterior{2.0, 0.5};     // initial q (and alt bias init)

  static ModelSpec synthetic_regression(Variant v = Variant::lt_node) {
    ModelSpec s;
    s.variant = v;
    return s;
  }

  static ModelSpec toy_classifier(Variant v = Variant::lt_node, int classes = 2) {
    ModelSpec s;
    s.task = Task::classification;
    s.variant = v;
    s.input_dim = 2;
    s.input_widths = {16, 32};
    s.node_widths = {32, 32};
    s.head_widths = {classes};
    s.activation = Act::relu;
    s.num_classes = classes;
    return s;
  }

  int hidden_dim() const { return input_widths.back(); }
  int output_dim() const { return head_widths.back(); }

  void validate() const {
    if (input_dim < 1) throw contract_error("ModelSpec: input_dim must be >= 1");
    if (input_widths.empty() || node_widths.empty() || head_widths.empty()) {
      throw contract_error("ModelSpec: all blocks need at least one layer");
    }
    for (int w : input_widths)
      if (w < 1) throw contract_error("ModelSpec: nonpositive input width");
    for (int w : node_widths)
      if (w < 1) throw contract_error("ModelSpec: nonpositive node width");
    for (int w : head_widths)
      if (w < 1) throw contract_error("ModelSpec: nonpositive head width");
    if (node_widths.back() != input_widths.back()) {
      throw contract_error("ModelSpec: node block must map the latent width to itself (" +
                           std::to_string(node_widths.back()) + " vs " +
                           std::to_string(input_widths.back()) + ")");
    }
    if (task == Task::classification) {
      if (num_classes < 2) throw contract_error("ModelSpec: classification needs >= 2 classes");
      if (head_widths.back() != num_classes) {
        throw contract_error("ModelSpec: head output must equal num_classes");
      }
    } else if (head_widths.back() != 1) {
      throw contract_error("ModelSpec: regression head output must be 1");
    }
    if (variant == Variant::uni_node && !(uniform_b > uniform_a)) {
      throw contract_error("ModelSpec: uni_node needs uniform_b > uniform_a");
    }
    if (variant == Variant::node && !(fixed_time >= 0.0)) {
      throw contract_error("ModelSpec: node fixed_time must be >= 0");
    }
    detail::check_positive(init_posterior.alpha, "ModelSpec: init_posterior.alpha");
    detail::check_positive(init_posterior.beta, "ModelSpec: init_posterior.beta");
  }
};

struct DenseLayerParams {
  Tensor w;  // (in x out), row-major
  Tensor b;  // (out)
};

struct ParamEntry {
  std::string name;
  Tensor tensor;
};

namespace detail {

inline double softplus_inv(double y) {
  check_positive(y, "softplus_inv: y");
  // ln(e^y - 1), stable for small and large y
  return y > 30.0 ? y : std::log(std::expm1(y));
}

inline double softplus_scalar(double x) {
  Array in(1), out(1);
  in[0] = x;
  kernels::softplus(out, in);
  return out[0];
}

inline std::vector<DenseLayerParams> init_layers(int in_dim, const std::vector<int>& widths,
                                                 Rng& rng) {
  std::vector<DenseLayerParams> layers;
  int fan_in = in_dim;
  for (int w : widths) {
    const double k = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Array wv(static_cast<Eigen::Index>(fan_in) * w), bv(w);
    for (Eigen::Index i = 0; i < wv.size(); ++i) wv[i] = rng.uniform(-k, k);
    for (Eigen::Index i = 0; i < bv.size(); ++i) bv[i] = rng.uniform(-k, k);
    layers.push_back({Tensor::param({fan_in, w}, std::move(wv)), Tensor::param({w}, std::move(bv))});
    fan_in = w;
  }
  return layers;
}

// Raw MLP through the shared kernels; `bufs` persists across calls so the
// hot path does no allocation after warmup.
inline void mlp_forward_raw(const std::vector<DenseLayerParams>& layers, Act act,
                            bool act_on_last, const Array& x, Eigen::Index n,
                            std::vector<Array>& bufs, Array& out) {
  bufs.resize(layers.size());
  const Array* src = &x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    Array& dst = (i + 1 == layers.size()) ? out : bufs[i];
    const Eigen::Index in_w = layers[i].w.shape()[0];
    const Eigen::Index out_w = layers[i].w.shape()[1];
    kernels::gemm(dst, *src, layers[i].w.values(), n, in_w, out_w);
    kernels::add_bias_rows(dst, layers[i].b.values(), n, out_w);
    const bool apply = act_on_last || i + 1 < layers.size();
    if (apply && act == Act::tanh) kernels::tanh_fast(dst, dst);
    else if (apply && act == Act::relu) kernels::relu(dst, dst);
    src = &dst;
  }
}

inline Tensor mlp_forward(const std::vector<DenseLayerParams>& layers, Act act, bool act_on_last,
                          const Tensor& x) {
  Tensor h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const bool apply = act_on_last || i + 1 < layers.size();
    h = dense_layer(h, layers[i].w, layers[i].b, apply ? act : Act::none);
  }
  return h;
}

}  // namespace detail

// One latent-time neural ODE model: input block d(x), ODE dynamics f(h, t),
// head g(h), plus the variant's end-time machinery (fixed T, uniform draw,
// global Gamma posterior, or the per-input inference net).
class LatentTimeModel {
 public:
  LatentTimeModel(ModelSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
    spec_.validate();
    Rng rng = Rng(seed).split(0x1417); // init stream
    input_block_ = detail::init_layers(spec_.input_dim, spec_.input_widths, rng);
    node_block_ = detail::init_layers(spec_.hidden_dim() + 1, spec_.node_widths, rng);
    head_ = detail::init_layers(spec_.hidden_dim(), spec_.head_widths, rng);
    if (spec_.variant == Variant::lt_node) {
      alpha_raw_ = Tensor::param({}, Array::Constant(1, detail::softplus_inv(spec_.init_posterior.alpha)));
      beta_raw_ = Tensor::param({}, Array::Constant(1, detail::softplus_inv(spec_.init_posterior.beta)));
    } else if (spec_.variant == Variant::alt_node) {
      std::vector<int> widths = spec_.inference_hidden;
      widths.push_back(2);
      inference_ = detail::init_layers(spec_.input_dim, widths, rng);
      // Start r(x) near the prior for every x.
      auto& bias = inference_.back().b.values();
      bias[0] = detail::softplus_inv(spec_.init_posterior.alpha);
      bias[1] = detail::softplus_inv(spec_.init_posterior.beta);
    }
    build_registry();
  }

  const ModelSpec& spec() const { return spec_; }

  const std::vector<ParamEntry>& params() const { return registry_; }

  // Dynamics / input / head parameters (the theta group).
  std::vector<Tensor> theta_params() const {
    std::vector<Tensor> out;
    for (const auto& block : {&input_block_, &node_block_, &head_}) {
      for (const auto& l : *block) {
        out.push_back(l.w);
        out.push_back(l.b);
      }
    }
    return out;
  }

  // Variational parameters: the two posterior scalars (lt) or the inference
  // net (alt). Empty for node / uni_node.
  std::vector<Tensor> variational_params() const {
    std::vector<Tensor> out;
    if (spec_.variant == Variant::lt_node) {
      out.push_back(alpha_raw_);
      out.push_back(beta_raw_);
    } else if (spec_.variant == Variant::alt_node) {
      for (const auto& l : inference_) {
        out.push_back(l.w);
        out.push_back(l.b);
      }
    }
    return out;
  }

  // Current global posterior (lt_node only).
  GammaParams posterior_params() const {
    if (spec_.variant != Variant::lt_node) {
      throw contract_error("posterior_params: only lt_node carries a global posterior");
    }
    return {detail::softplus_scalar(alpha_raw_.values()[0]),
            detail::softplus_scalar(beta_raw_.values()[0])};
  }

  Tensor alpha_raw() const { return alpha_raw_; }
  Tensor beta_raw() const { return beta_raw_; }

  // --- input block ---

  Tensor input_forward(const Tensor& x) const {
    return detail::mlp_forward(input_block_, spec_.activation, true, x);
  }

  void input_forward_raw(const kernels::RowMat& x, Array& out) const {
    thread_local std::vector<Array> bufs;
    Array flat = Eigen::Map<const Array>(x.data(), x.size());
    detail::mlp_forward_raw(input_block_, spec_.activation, true, flat, x.rows(), bufs, out);
  }

  // --- head ---

  Tensor head_forward(const Tensor& h) const {
    return detail::mlp_forward(head_, spec_.activation, false, h);
  }

  void head_forward_raw(const Array& h, Eigen::Index n, Array& out) const {
    thread_local std::vector<Array> bufs;
    detail::mlp_forward_raw(head_, spec_.activation, false, h, n, bufs, out);
  }

  // --- dynamics ---

  // Both execution modes of f(h, t) for a fixed batch size; the raw mode
  // reuses one workspace so repeated evaluations do not allocate.
  OdeCallbacks dynamics_callbacks(Eigen::Index batch) const {
    struct Ws {
      Array concat;
      std::vector<Array> bufs;
    };
    auto ws = std::make_shared<Ws>();
    const LatentTimeModel* self = this;
    const Eigen::Index h = spec_.hidden_dim();
    OdeCallbacks cb;
    cb.raw = [self, batch, h, ws](double t, const Array& y, Array& out) {
      ws->concat.resize(batch * (h + 1));
      kernels::MatMap cm(ws->concat.data(), batch, h + 1);
      cm.leftCols(h) = kernels::ConstMatMap(y.data(), batch, h);
      cm.rightCols(1).setConstant(t);
      detail::mlp_forward_raw(self->node_block_, self->spec_.activation, false, ws->concat,
                              batch, ws->bufs, out);
    };
    cb.recorded = [self, batch, h](double t, const Tensor& y) {
      Tensor tcol = Tensor::constant({batch, 1}, Array::Constant(batch, t));
      Tensor x = concat_cols(y, tcol);
      return detail::mlp_forward(self->node_block_, self->spec_.activation, false, x);
    };
    return cb;
  }

  // --- alt_node inference net ---

  void infer_posterior_raw(const kernels::RowMat& x, Array& alpha, Array& beta) const {
    if (spec_.variant != Variant::alt_node) {
      throw contract_error("infer_posterior_raw: model has no inference network");
    }
    thread_local std::vector<Array> bufs;
    Array flat = Eigen::Map<const Array>(x.data(), x.size());
    Array raw;
    detail::mlp_forward_raw(inference_, spec_.activation, false, flat, x.rows(), bufs, raw);
    const Eigen::Index n = x.rows();
    Array a(n), b(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      a[i] = raw[2 * i];
      b[i] = raw[2 * i + 1];
    }
    kernels::softplus(alpha, a);
    kernels::softplus(beta, b);
  }

  // Recorded per-example posterior (alpha, beta), each shape (n).
  std::pair<Tensor, Tensor> infer_posterior(const Tensor& x) const {
    if (spec_.variant != Variant::alt_node) {
      throw contract_error("infer_posterior: model has no inference network");
    }
    Tensor raw = detail::mlp_forward(inference_, spec_.activation, false, x);
    const auto n = static_cast<std::size_t>(raw.shape()[0]);
    std::vector<int> c0(n, 0), c1(n, 1);
    return {softplus(gather_cols(raw, c0)), softplus(gather_cols(raw, c1))};
  }

 private:
  void build_registry() {
    auto add_block = [this](const char* prefix, const std::vector<DenseLayerParams>& block) {
      for (std::size_t i = 0; i < block.size(); ++i) {
        registry_.push_back({std::string(prefix) + "." + std::to_string(i) + ".w", block[i].w});
        registry_.push_back({std::string(prefix) + "." + std::to_string(i) + ".b", block[i].b});
      }
    };
    add_block("input", input_block_);
    add_block("node", node_block_);
    add_block("head", head_);
    if (spec_.variant == Variant::lt_node) {
      registry_.push_back({"posterior.alpha_raw", alpha_raw_});
      registry_.push_back({"posterior.beta_raw", beta_raw_});
    } else if (spec_.variant == Variant::alt_node) {
      add_block("inference", inference_);
    }
  }

  ModelSpec spec_;
  std::vector<DenseLayerParams> input_block_, node_block_, head_, inference_;
  Tensor alpha_raw_, beta_raw_;
  std::vector<ParamEntry> registry_;
};

inline LatentTimeModel build_model(const ModelSpec& spec, std::uint64_t seed) {
  return LatentTimeModel(spec, seed);
}

inline std::size_t parameter_count(const LatentTimeModel& m) {
  std::size_t n = 0;
  for (const auto& p : m.params()) n += static_cast<std::size_t>(p.tensor.size());
  return n;
}

// S end-times under the variant's law, sorted ascending. For alt_node use
// sample_end_times_gamma with the per-example posterior.
inline std::vector<double> sample_end_times(const LatentTimeModel& m, int S, Rng& rng) {
  if (S < 1) throw contract_error("sample_end_times: S must be >= 1");
  std::vector<double> times(static_cast<std::size_t>(S));
  switch (m.spec().variant) {
    case Variant::node:
      std::fill(times.begin(), times.end(), m.spec().fixed_time);
      break;
    case Variant::uni_node:
      for (auto& t : times) t = rng.uniform(m.spec().uniform_a, m.spec().uniform_b);
      break;
    case Variant::lt_node: {
      const GammaParams q = m.posterior_params();
      for (auto& t : times) t = gamma_sample(rng, q.alpha, q.beta);
      break;
    }
    case Variant::alt_node:
      throw contract_error("sample_end_times: alt_node end-times are per-example");
  }
  std::sort(times.begin(), times.end());
  return times;
}

inline std::vector<double> sample_end_times_gamma(double alpha, double beta, int S, Rng& rng) {
  if (S < 1) throw contract_error("sample_end_times_gamma: S must be >= 1");
  std::vector<double> times(static_cast<std::size_t>(S));
  for (auto& t : times) t = gamma_sample(rng, alpha, beta);
  std::sort(times.begin(), times.end());
  return times;
}

// Head outputs at the requested times (shared across the batch): one adaptive
// solve to max(times), dense interpolation in between. Classification outputs
// are softmax probabilities. times = {0} short-circuits to g(d(x)).
inline std::vector<Eigen::ArrayXXd> forward_at_times(const LatentTimeModel& m,
                                                     const kernels::RowMat& x,
                                                     const std::vector<double>& times,
                                                     const SolverConfig& cfg = {}) {
  if (x.rows() == 0) throw contract_error("forward_at_times: empty input batch");
  if (x.cols() != m.spec().input_dim) {
    throw shape_error("forward_at_times: input dim " + std::to_string(x.cols()) +
                      " != model input dim " + std::to_string(m.spec().input_dim));
  }
  detail::check_query_times(times);
  NoGradScope ng;
  const Eigen::Index n = x.rows();
  Array h0;
  m.input_forward_raw(x, h0);
  std::vector<Array> states;
  if (times.back() == 0.0) {
    states.assign(times.size(), h0);
  } else {
    auto cb = m.dynamics_callbacks(n);
    states = solve_at_times(cb.raw, h0, times, cfg);
  }
  const Eigen::Index od = m.spec().output_dim();
  std::vector<Eigen::ArrayXXd> out;
  out.reserve(times.size());
  Array head, probs;
  for (const auto& st : states) {
    m.head_forward_raw(st, n, head);
    const Array* res = &head;
    if (m.spec().task == Task::classification) {
      kernels::softmax_rows(probs, head, n, od);
      res = &probs;
    }
    Eigen::ArrayXXd mat(n, od);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < od; ++j) mat(i, j) = (*res)[i * od + j];
    out.push_back(std::move(mat));
  }
  return out;
}

namespace detail {

inline void fill_entry_stats(PredictiveEntry& e, Task task) {
  const Eigen::Index s = e.samples.rows(), c = e.samples.cols();
  e.mean = Array(c);
  for (Eigen::Index j = 0; j < c; ++j) e.mean[j] = e.samples.col(j).mean();
  if (task == Task::regression) {
    const double m = e.mean[0];
    const double m2 = e.samples.col(0).square().mean();
    e.stddev = std::sqrt(std::max(0.0, m2 - m * m));
  }
  (void)s;
}

}  // namespace detail

// Predictions at explicitly given shared end-times (deterministic part of
// the sampling-based prediction; also the hook tests use to pin times).
inline PredictiveSet predict_probability_at(const LatentTimeModel& m, const kernels::RowMat& x,
                                            const std::vector<double>& times,
                                            const SolverConfig& cfg = {}) {
  const auto outs = forward_at_times(m, x, times, cfg);
  const Eigen::Index n = x.rows(), od = m.spec().output_dim();
  const auto S = static_cast<Eigen::Index>(times.size());
  PredictiveSet ps;
  ps.task = m.spec().task;
  ps.num_classes = m.spec().num_classes;
  ps.entries.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    auto& e = ps.entries[static_cast<std::size_t>(i)];
    e.samples.resize(S, od);
    for (Eigen::Index s = 0; s < S; ++s) e.samples.row(s) = outs[static_cast<std::size_t>(s)].row(i);
    detail::fill_entry_stats(e, ps.task);
  }
  return ps;
}

// Sampling prediction. node/uni/lt draw one shared set of S end-times for
// the batch; alt draws per example from its own posterior and shares one
// integration over the union of times.
inline PredictiveSet predict_probability(const LatentTimeModel& m, const kernels::RowMat& x,
                                         int S, Rng& rng, const SolverConfig& cfg = {}) {
  if (S < 1) throw contract_error("predict_probability: S must be >= 1");
  if (m.spec().variant != Variant::alt_node) {
    return predict_probability_at(m, x, sample_end_times(m, S, rng), cfg);
  }

  NoGradScope ng;
  const Eigen::Index n = x.rows();
  if (n == 0) throw contract_error("predict_probability: empty input batch");
  Array alpha, beta;
  m.infer_posterior_raw(x, alpha, beta);
  std::vector<std::vector<double>> times(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i)
    times[static_cast<std::size_t>(i)] =
        sample_end_times_gamma(alpha[i], beta[i], S, rng);

  Array h0;
  m.input_forward_raw(x, h0);
  const Eigen::Index h = m.spec().hidden_dim();

  // Union of distinct times -> (example, sample) pairs wanting each.
  std::map<double, std::vector<std::pair<Eigen::Index, int>>> want;
  for (Eigen::Index i = 0; i < n; ++i)
    for (int s = 0; s < S; ++s) want[times[static_cast<std::size_t>(i)][static_cast<std::size_t>(s)]].push_back({i, s});

  const double tmax = want.rbegin()->first;
  Trajectory traj;
  if (tmax > 0.0) {
    auto cb = m.dynamics_callbacks(n);
    traj = solve(cb.raw, h0, 0.0, tmax, cfg);
  }

  Array gathered(n * static_cast<Eigen::Index>(S) * h);
  for (const auto& [t, pairs] : want) {
    Array state = (t == 0.0 || tmax == 0.0) ? h0 : dense_eval(traj, t);
    for (const auto& [i, s] : pairs) {
      gathered.segment((i * S + s) * h, h) = state.segment(i * h, h);
    }
  }

  Array head, probs;
  const Eigen::Index rows = n * static_cast<Eigen::Index>(S);
  const Eigen::Index od = m.spec().output_dim();
  m.head_forward_raw(gathered, rows, head);
  const Array* res = &head;
  if (m.spec().task == Task::classification) {
    kernels::softmax_rows(probs, head, rows, od);
    res = &probs;
  }

  PredictiveSet ps;
  ps.task = m.spec().task;
  ps.num_classes = m.spec().num_classes;
  ps.entries.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    auto& e = ps.entries[static_cast<std::size_t>(i)];
    e.samples.resize(S, od);
    for (int s = 0; s < S; ++s)
      for (Eigen::Index j = 0; j < od; ++j)
        e.samples(s, j) = (*res)[(i * S + s) * od + j];
    detail::fill_entry_stats(e, ps.task);
  }
  return ps;
}

// Single-input convenience wrapper (one row batch).
inline PredictiveEntry predict_probability_single(const LatentTimeModel& m,
                                                  const Eigen::RowVectorXd& x, int S, Rng& rng,
                                                  const SolverConfig& cfg = {}) {
  kernels::RowMat xm(1, x.size());
  xm.row(0) = x;
  return predict_probability(m, xm, S, rng, cfg).entries[0];
}

}  // namespace ltnode
