#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <utility>
#include <vector>

#include "ltnode/errors.hpp"
#include "ltnode/predictive.hpp"

namespace ltnode {

struct BinningConfig {
  int num_bins = 10;  // equal-width confidence bins on [0, 1]
};

struct ClassificationMetrics {
  double error = 0.0;
  double log_likelihood = 0.0;  // mean ln p(true class)
  double brier = 0.0;
  double ece = 0.0;
};

namespace detail {

inline void require_labeled_classification(const PredictiveSet& pred, const char* op) {
  if (pred.task != Task::classification) {
    throw contract_error(std::string(op) + ": classification predictions required");
  }
  if (pred.entries.empty()) throw contract_error(std::string(op) + ": empty prediction set");
  for (const auto& e : pred.entries) {
    if (e.mean.size() != pred.num_classes) {
      throw shape_error(std::string(op) + ": prediction width != num_classes");
    }
  }
}

}  // namespace detail

// -Sum p ln p with 0 ln 0 := 0.
inline double entropy_categorical(const Eigen::ArrayXd& p) {
  if (p.size() == 0) throw contract_error("entropy_categorical: empty vector");
  double sum = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p[i] < 0.0) throw contract_error("entropy_categorical: negative probability");
    sum += p[i];
  }
  if (std::abs(sum - 1.0) > 1e-6) {
    throw contract_error("entropy_categorical: probabilities sum to " + std::to_string(sum));
  }
  double h = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) h -= p[i] * std::log(p[i]);
  }
  return h;
}

// Error / LL / Brier / ECE of the mean predictive distribution. Every entry
// must carry its true label; OOD-mixed sets belong to the curve functions.
inline ClassificationMetrics classification_metrics(const PredictiveSet& pred,
                                                    const BinningConfig& bins = {}) {
  detail::require_labeled_classification(pred, "classification_metrics");
  if (bins.num_bins < 1) throw contract_error("classification_metrics: num_bins must be >= 1");
  const double n = static_cast<double>(pred.entries.size());
  const int nb = bins.num_bins;
  std::vector<double> conf_sum(static_cast<std::size_t>(nb), 0.0);
  std::vector<double> acc_sum(static_cast<std::size_t>(nb), 0.0);
  std::vector<double> count(static_cast<std::size_t>(nb), 0.0);
  double errors = 0.0, ll = 0.0, brier = 0.0;
  for (const auto& e : pred.entries) {
    if (e.label < 0 || e.label >= pred.num_classes) {
      throw contract_error("classification_metrics: entry without a valid label");
    }
    Eigen::Index argmax = 0;
    const double conf = e.mean.maxCoeff(&argmax);
    const bool correct = (argmax == e.label);
    if (!correct) errors += 1.0;
    ll += std::log(e.mean[e.label]);
    double s = 0.0;
    for (Eigen::Index j = 0; j < e.mean.size(); ++j) {
      const double target = (j == e.label) ? 1.0 : 0.0;
      s += (e.mean[j] - target) * (e.mean[j] - target);
    }
    brier += s / static_cast<double>(e.mean.size());
    int b = static_cast<int>(conf * nb);
    b = std::min(b, nb - 1);
    conf_sum[static_cast<std::size_t>(b)] += conf;
    acc_sum[static_cast<std::size_t>(b)] += correct ? 1.0 : 0.0;
    count[static_cast<std::size_t>(b)] += 1.0;
  }
  ClassificationMetrics m;
  m.error = errors / n;
  m.log_likelihood = ll / n;
  m.brier = brier / n;
  m.ece = 0.0;
  for (int b = 0; b < nb; ++b) {
    const auto ub = static_cast<std::size_t>(b);
    if (count[ub] == 0.0) continue;
    m.ece += (count[ub] / n) * std::abs(acc_sum[ub] / count[ub] - conf_sum[ub] / count[ub]);
  }
  return m;
}

// ---------------------------------------------------------------------------
// Regression uncertainty
// ---------------------------------------------------------------------------

// Degenerate ensembles (all samples equal) would give ln 0; the std is
// floored here before the log and the floor is surfaced for reports.
inline constexpr double k_regression_std_floor = 1e-6;

struct RegressionUncertainty {
  std::vector<double> mean;     // per example, ensemble mean
  std::vector<double> stddev;   // per example, population std over samples
  std::vector<double> entropy;  // per example, 0.5 ln(2 pi e std^2), floored
  double avg_entropy_in_interval = 0.0;
  long n_in_interval = 0;
};

// Mean/std/entropy curves plus the average differential entropy over the
// inputs falling strictly inside (lo, hi). Inputs must be one-dimensional.
inline RegressionUncertainty regression_uncertainty(const PredictiveSet& pred, double lo,
                                                    double hi,
                                                    const Eigen::MatrixXd& inputs) {
  if (pred.task != Task::regression) {
    throw contract_error("regression_uncertainty: regression predictions required");
  }
  if (pred.entries.empty()) throw contract_error("regression_uncertainty: empty prediction set");
  if (inputs.cols() != 1) {
    throw shape_error("regression_uncertainty: interval filter needs 1-d inputs");
  }
  if (inputs.rows() != static_cast<Eigen::Index>(pred.entries.size())) {
    throw shape_error("regression_uncertainty: inputs/prediction count mismatch");
  }
  if (!(lo < hi)) throw contract_error("regression_uncertainty: requires lo < hi");

  RegressionUncertainty out;
  out.mean.reserve(pred.entries.size());
  out.stddev.reserve(pred.entries.size());
  out.entropy.reserve(pred.entries.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.entries.size(); ++i) {
    const auto& e = pred.entries[i];
    out.mean.push_back(e.mean[0]);
    out.stddev.push_back(e.stddev);
    const double s = std::max(e.stddev, k_regression_std_floor);
    const double h = 0.5 * std::log(2.0 * M_PI * M_E * s * s);
    out.entropy.push_back(h);
    const double x = inputs(static_cast<Eigen::Index>(i), 0);
    if (x > lo && x < hi) {
      acc += h;
      ++out.n_in_interval;
    }
  }
  if (out.n_in_interval == 0) {
    throw contract_error("regression_uncertainty: no inputs inside the interval");
  }
  out.avg_entropy_in_interval = acc / static_cast<double>(out.n_in_interval);
  return out;
}

// ---------------------------------------------------------------------------
// OOD separation scores
// ---------------------------------------------------------------------------

struct OodSeparation {
  double auroc = 0.0;
  double aupr_in = 0.0;   // in-distribution as the positive class
  double aupr_out = 0.0;  // OOD as the positive class
};

namespace detail {

// Average precision over descending distinct thresholds; ties share one
// threshold. Scores come pre-oriented (higher = more positive).
inline double average_precision(std::vector<std::pair<double, int>> scored, double npos) {
  std::sort(scored.begin(), scored.end(),
            [](const auto& a, const auto& b) { return a.first > b.first; });
  double ap = 0.0, prev_recall = 0.0;
  double tp = 0.0, fp = 0.0;
  std::size_t i = 0;
  while (i < scored.size()) {
    const double th = scored[i].first;
    while (i < scored.size() && scored[i].first == th) {
      if (scored[i].second) tp += 1.0;
      else fp += 1.0;
      ++i;
    }
    const double precision = tp / (tp + fp);
    const double recall = tp / npos;
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return ap;
}

}  // namespace detail

// Higher score = more OOD (e.g. predictive entropy). AUROC through the
// rank-sum statistic with midrank ties; AUPRs as average precision.
inline OodSeparation auroc_aupr(const std::vector<double>& in_scores,
                                const std::vector<double>& out_scores) {
  if (in_scores.empty() || out_scores.empty()) {
    throw contract_error("auroc_aupr: both score sets must be nonempty");
  }
  const auto n_in = static_cast<double>(in_scores.size());
  const auto n_out = static_cast<double>(out_scores.size());

  std::vector<std::pair<double, int>> all;  // (score, is_out)
  all.reserve(in_scores.size() + out_scores.size());
  for (double s : in_scores) all.push_back({s, 0});
  for (double s : out_scores) all.push_back({s, 1});
  std::sort(all.begin(), all.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  // Midranks: a run of ties spanning 1-based positions [i+1, j] all get
  // rank (i+1+j)/2.
  double rank_sum_out = 0.0;
  std::size_t i = 0;
  while (i < all.size()) {
    std::size_t j = i;
    while (j < all.size() && all[j].first == all[i].first) ++j;
    const double midrank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
    for (std::size_t k = i; k < j; ++k) {
      if (all[k].second) rank_sum_out += midrank;
    }
    i = j;
  }
  OodSeparation r;
  r.auroc = (rank_sum_out - n_out * (n_out + 1.0) / 2.0) / (n_in * n_out);

  std::vector<std::pair<double, int>> oriented;
  oriented.reserve(all.size());
  for (double s : in_scores) oriented.push_back({s, 0});
  for (double s : out_scores) oriented.push_back({s, 1});
  r.aupr_out = detail::average_precision(oriented, n_out);
  for (auto& p : oriented) {
    p.first = -p.first;
    p.second = 1 - p.second;
  }
  r.aupr_in = detail::average_precision(std::move(oriented), n_in);
  return r;
}

// ---------------------------------------------------------------------------
// Rejection / confidence curves and the entropy histogram
// ---------------------------------------------------------------------------

struct RejectionPoint {
  double rejected_fraction = 0.0;
  double accuracy = 0.0;
};

struct ConfidencePoint {
  double tau = 0.0;
  long count = 0;       // predictions with confidence >= tau
  double accuracy = 0.0;
};

struct OodCurves {
  std::vector<RejectionPoint> rejection;  // N+1 points, k highest-entropy rejected
  std::vector<ConfidencePoint> confidence;
  std::vector<long> entropy_histogram;    // 20 equal bins on [0, ln C]
  double entropy_bin_width = 0.0;
};

inline std::vector<double> default_confidence_taus() {
  std::vector<double> taus;
  for (int i = 0; i <= 20; ++i) taus.push_back(static_cast<double>(i) / 20.0);
  return taus;
}

// Mixed ID/OOD evaluation curves. OOD entries count as errors everywhere; an
// empty kept/selected set reads as accuracy 1 (no prediction, no error).
inline OodCurves rejection_and_confidence_curves(const PredictiveSet& pred,
                                                 const std::vector<double>& taus =
                                                     default_confidence_taus()) {
  if (pred.task != Task::classification) {
    throw contract_error("rejection_and_confidence_curves: classification predictions required");
  }
  if (pred.entries.empty()) {
    throw contract_error("rejection_and_confidence_curves: empty prediction set");
  }
  const std::size_t n = pred.entries.size();
  std::vector<double> ent(n), conf(n);
  std::vector<bool> correct(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& e = pred.entries[i];
    if (e.mean.size() != pred.num_classes) {
      throw shape_error("rejection_and_confidence_curves: prediction width != num_classes");
    }
    ent[i] = entropy_categorical(e.mean);
    Eigen::Index argmax = 0;
    conf[i] = e.mean.maxCoeff(&argmax);
    correct[i] = !e.ood && argmax == e.label;
  }

  OodCurves out;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&ent](std::size_t a, std::size_t b) { return ent[a] > ent[b]; });
  // kept_correct[k] = number correct among the n-k lowest-entropy examples
  std::vector<long> kept_correct(n + 1, 0);
  for (std::size_t k = n; k-- > 0;) {
    kept_correct[k] = kept_correct[k + 1] + (correct[order[k]] ? 1 : 0);
  }
  out.rejection.reserve(n + 1);
  for (std::size_t k = 0; k <= n; ++k) {
    RejectionPoint p;
    p.rejected_fraction = static_cast<double>(k) / static_cast<double>(n);
    const std::size_t kept = n - k;
    p.accuracy = kept == 0 ? 1.0
                           : static_cast<double>(kept_correct[k]) / static_cast<double>(kept);
    out.rejection.push_back(p);
  }

  out.confidence.reserve(taus.size());
  for (double tau : taus) {
    ConfidencePoint p;
    p.tau = tau;
    long hits = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (conf[i] >= tau) {
        ++p.count;
        if (correct[i]) ++hits;
      }
    }
    p.accuracy = p.count == 0 ? 1.0 : static_cast<double>(hits) / static_cast<double>(p.count);
    out.confidence.push_back(p);
  }

  constexpr int hist_bins = 20;
  out.entropy_histogram.assign(hist_bins, 0);
  const double max_ent = std::log(static_cast<double>(pred.num_classes));
  out.entropy_bin_width = max_ent / hist_bins;
  for (std::size_t i = 0; i < n; ++i) {
    int b = static_cast<int>(ent[i] / out.entropy_bin_width);
    b = std::clamp(b, 0, hist_bins - 1);
    ++out.entropy_histogram[static_cast<std::size_t>(b)];
  }
  return out;
}

}  // namespace ltnode
