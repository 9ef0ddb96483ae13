#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "ltnode/model.hpp"

using namespace ltnode;

namespace {

std::size_t dense_param_count(const std::vector<int>& widths, int in, int extra_in = 0) {
  std::size_t total = 0;
  int prev = in + extra_in;
  for (int w : widths) {
    total += static_cast<std::size_t>(prev) * static_cast<std::size_t>(w) +
             static_cast<std::size_t>(w);
    prev = w;
  }
  return total;
}

}  // namespace

TEST(ModelSpec, ValidateRejectsBadShapes) {
  ModelSpec s = ModelSpec::toy_classifier(Variant::node);
  s.node_widths.back() = s.input_widths.back() + 1;
  EXPECT_THROW(s.validate(), contract_error);

  ModelSpec r = ModelSpec::synthetic_regression(Variant::lt_node);
  r.init_posterior.alpha = -1.0;
  EXPECT_THROW(r.validate(), contract_error);
}

TEST(Model, ParameterCounts) {
  ModelSpec node_spec = ModelSpec::toy_classifier(Variant::node);
  ModelSpec lt_spec = ModelSpec::toy_classifier(Variant::lt_node);
  ModelSpec alt_spec = ModelSpec::toy_classifier(Variant::alt_node);
  LatentTimeModel node_m(node_spec, 1), lt_m(lt_spec, 1), alt_m(alt_spec, 1);

  // latent-time adds exactly the two scalar posterior parameters
  EXPECT_EQ(parameter_count(lt_m), parameter_count(node_m) + 2);

  // adaptive replaces them with the inference net phi
  std::vector<int> widths = alt_spec.inference_hidden;
  widths.push_back(2);
  const std::size_t phi = dense_param_count(widths, alt_spec.input_dim);
  EXPECT_EQ(parameter_count(alt_m), parameter_count(node_m) + phi);

  // hand count of the node model itself: input net, dynamics (state+1 for
  // time), head
  const int state = node_spec.input_widths.back();
  const std::size_t expect = dense_param_count(node_spec.input_widths, node_spec.input_dim) +
                             dense_param_count(node_spec.node_widths, state, 1) +
                             dense_param_count(node_spec.head_widths, state);
  EXPECT_EQ(parameter_count(node_m), expect);
}

TEST(Model, InitDeterministicPerSeed) {
  ModelSpec spec = ModelSpec::synthetic_regression(Variant::lt_node);
  LatentTimeModel a(spec, 42), b(spec, 42), c(spec, 43);
  bool all_equal = true, any_diff_seed = false;
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    all_equal &= (a.params()[i].tensor.values() == b.params()[i].tensor.values()).all();
    any_diff_seed |= (a.params()[i].tensor.values() != c.params()[i].tensor.values()).any();
  }
  EXPECT_TRUE(all_equal);
  EXPECT_TRUE(any_diff_seed);
}

TEST(Model, PosteriorParamsTrackSoftplus) {
  ModelSpec spec = ModelSpec::synthetic_regression(Variant::lt_node);
  spec.init_posterior = {2.0, 0.5};
  LatentTimeModel m(spec, 0);
  const GammaParams q = m.posterior_params();
  EXPECT_NEAR(q.alpha, 2.0, 1e-10);
  EXPECT_NEAR(q.beta, 0.5, 1e-10);

  ModelSpec nspec = ModelSpec::synthetic_regression(Variant::node);
  LatentTimeModel nm(nspec, 0);
  EXPECT_THROW(nm.posterior_params(), contract_error);
}

TEST(Model, InferPosteriorPositive) {
  ModelSpec spec = ModelSpec::toy_classifier(Variant::alt_node);
  LatentTimeModel m(spec, 7);
  kernels::RowMat x(5, 2);
  x << 0.1, -0.2, 1.0, 0.5, -1.2, 0.3, 2.0, -0.7, 0.0, 0.0;
  Array alpha, beta;
  m.infer_posterior_raw(x, alpha, beta);
  ASSERT_EQ(alpha.size(), 5);
  ASSERT_EQ(beta.size(), 5);
  EXPECT_TRUE((alpha > 0.0).all());
  EXPECT_TRUE((beta > 0.0).all());

  // the final bias pins the net output loosely around the configured
  // posterior at init (weights are small but not zero)
  for (Eigen::Index i = 0; i < 5; ++i) {
    EXPECT_GT(alpha[i], 0.3);
    EXPECT_LT(alpha[i], 6.0);
    EXPECT_GT(beta[i], 0.05);
    EXPECT_LT(beta[i], 2.5);
  }

  // deterministic per input
  Array alpha2, beta2;
  m.infer_posterior_raw(x, alpha2, beta2);
  EXPECT_TRUE((alpha == alpha2).all());
}

TEST(Model, SampleEndTimesSortedAndInSupport) {
  Rng rng(9);
  ModelSpec uni = ModelSpec::synthetic_regression(Variant::uni_node);
  uni.uniform_a = 0.0;
  uni.uniform_b = 3.0;
  LatentTimeModel um(uni, 1);
  const auto ts = sample_end_times(um, 16, rng);
  ASSERT_EQ(ts.size(), 16u);
  EXPECT_TRUE(std::is_sorted(ts.begin(), ts.end()));
  for (double t : ts) {
    EXPECT_GE(t, 0.0);
    EXPECT_LE(t, 3.0);
  }

  ModelSpec lt = ModelSpec::synthetic_regression(Variant::lt_node);
  LatentTimeModel lm(lt, 1);
  const auto tg = sample_end_times(lm, 8, rng);
  EXPECT_TRUE(std::is_sorted(tg.begin(), tg.end()));
  for (double t : tg) EXPECT_GT(t, 0.0);

  ModelSpec node = ModelSpec::synthetic_regression(Variant::node);
  node.fixed_time = 1.0;
  LatentTimeModel nm(node, 1);
  const auto tn = sample_end_times(nm, 4, rng);
  for (double t : tn) EXPECT_DOUBLE_EQ(t, 1.0);

  ModelSpec alt = ModelSpec::toy_classifier(Variant::alt_node);
  LatentTimeModel am(alt, 1);
  EXPECT_THROW(sample_end_times(am, 4, rng), contract_error);
}

TEST(Model, ForwardAtZeroShortCircuits) {
  ModelSpec spec = ModelSpec::synthetic_regression(Variant::node);
  LatentTimeModel m(spec, 3);
  kernels::RowMat x(2, 1);
  x << 0.4, -0.9;
  const auto outs = forward_at_times(m, x, {0.0});
  Array h0, head;
  m.input_forward_raw(x, h0);
  m.head_forward_raw(h0, 2, head);
  for (Eigen::Index i = 0; i < 2; ++i) EXPECT_DOUBLE_EQ(outs[0](i, 0), head[i]);
}

TEST(Model, ClassificationOutputsAreProbabilities) {
  ModelSpec spec = ModelSpec::toy_classifier(Variant::node);
  LatentTimeModel m(spec, 4);
  kernels::RowMat x(3, 2);
  x << 0.2, 0.1, -0.5, 0.8, 1.5, -1.0;
  const auto outs = forward_at_times(m, x, {0.5, 1.0});
  for (const auto& o : outs) {
    for (Eigen::Index i = 0; i < 3; ++i) {
      double s = 0.0;
      for (Eigen::Index j = 0; j < o.cols(); ++j) {
        EXPECT_GE(o(i, j), 0.0);
        s += o(i, j);
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Model, PredictProbabilityShapesAndStats) {
  ModelSpec spec = ModelSpec::toy_classifier(Variant::lt_node);
  LatentTimeModel m(spec, 5);
  kernels::RowMat x(4, 2);
  x << 0.0, 0.0, 1.0, -0.5, -1.0, 0.2, 0.5, 0.5;
  Rng rng(17);
  const PredictiveSet ps = predict_probability(m, x, 12, rng);
  ASSERT_EQ(ps.entries.size(), 4u);
  EXPECT_EQ(ps.task, Task::classification);
  for (const auto& e : ps.entries) {
    EXPECT_EQ(e.samples.rows(), 12);
    EXPECT_EQ(e.samples.cols(), 2);
    EXPECT_NEAR(e.mean.sum(), 1.0, 1e-9);
    // mean equals the column average of the samples
    for (Eigen::Index j = 0; j < 2; ++j) {
      EXPECT_NEAR(e.mean[j], e.samples.col(j).mean(), 1e-12);
    }
    EXPECT_GE(e.stddev, 0.0);
  }
}

TEST(Model, PredictProbabilityAltPerExample) {
  ModelSpec spec = ModelSpec::toy_classifier(Variant::alt_node);
  LatentTimeModel m(spec, 6);
  kernels::RowMat x(3, 2);
  x << 0.3, -0.3, 1.2, 0.4, -0.8, -0.1;
  Rng rng(23);
  const PredictiveSet ps = predict_probability(m, x, 7, rng);
  ASSERT_EQ(ps.entries.size(), 3u);
  for (const auto& e : ps.entries) {
    EXPECT_EQ(e.samples.rows(), 7);
    EXPECT_NEAR(e.mean.sum(), 1.0, 1e-9);
  }
}

TEST(Model, RegressionPredictionStats) {
  ModelSpec spec = ModelSpec::synthetic_regression(Variant::lt_node);
  LatentTimeModel m(spec, 8);
  kernels::RowMat x(2, 1);
  x << -0.7, 0.7;
  Rng rng(31);
  const PredictiveSet ps = predict_probability(m, x, 20, rng);
  for (const auto& e : ps.entries) {
    EXPECT_EQ(e.samples.cols(), 1);
    // population standard deviation over the S sampled outputs
    const double mu = e.samples.col(0).mean();
    double var = 0.0;
    for (Eigen::Index s = 0; s < e.samples.rows(); ++s) {
      var += (e.samples(s, 0) - mu) * (e.samples(s, 0) - mu);
    }
    var /= static_cast<double>(e.samples.rows());
    EXPECT_NEAR(e.stddev, std::sqrt(var), 1e-12);
  }
}
