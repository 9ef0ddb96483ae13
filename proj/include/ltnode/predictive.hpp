#pragma once

#include <Eigen/Dense>
#include <vector>

namespace ltnode {

enum class Task { regression, classification };

// Per-example prediction under S sampled end-times. For classification each
// sample row is a probability vector; for regression a single output.
struct PredictiveEntry {
  Eigen::ArrayXXd samples;   // S x C (probabilities) or S x 1 (outputs)
  Eigen::ArrayXd mean;       // length C or 1
  double stddev = 0.0;       // population std over samples (regression)
  int label = -1;            // classification target, if known
  double target = 0.0;       // regression target, if known
  bool ood = false;
};

struct PredictiveSet {
  Task task = Task::regression;
  int num_classes = 0;
  std::vector<PredictiveEntry> entries;
};

}  // namespace ltnode
