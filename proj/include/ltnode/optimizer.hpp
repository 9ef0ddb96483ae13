#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "ltnode/errors.hpp"
#include "ltnode/tensor.hpp"

namespace ltnode {

struct Milestone {
  long iteration = 0;
  double factor = 1.0;
};

struct SgdConfig {
  double lr = 0.001;
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::vector<Milestone> milestones;  // lr is divided by factor once iteration >= milestone
};

// v <- momentum * v + grad + weight_decay * param; param <- param - lr * v.
inline void sgd_update(Array& param, const Array& grad, Array& velocity, double lr,
                       double momentum, double weight_decay) {
  if (!(lr >= 0.0)) throw contract_error("sgd_update: learning rate must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw contract_error("sgd_update: momentum must be in [0, 1)");
  }
  if (param.size() != grad.size()) {
    throw shape_error("sgd_update: param/grad size mismatch");
  }
  if (velocity.size() != param.size()) velocity = Array::Zero(param.size());
  velocity = momentum * velocity + grad + weight_decay * param;
  param -= lr * velocity;
}

// SGD with momentum over a parameter group, with milestone lr decay.
class SgdOptimizer {
 public:
  SgdOptimizer(std::vector<Tensor> params, SgdConfig cfg)
      : params_(std::move(params)), cfg_(std::move(cfg)) {
    if (!(cfg_.lr >= 0.0)) throw contract_error("SgdOptimizer: learning rate must be >= 0");
    if (!(cfg_.momentum >= 0.0 && cfg_.momentum < 1.0)) {
      throw contract_error("SgdOptimizer: momentum must be in [0, 1)");
    }
    velocity_.resize(params_.size());
  }

  double lr_at(long iteration) const {
    double lr = cfg_.lr;
    for (const auto& m : cfg_.milestones) {
      if (iteration >= m.iteration) lr /= m.factor;
    }
    return lr;
  }

  // Applies one update using each parameter's accumulated gradient.
  void step(long iteration) {
    const double lr = lr_at(iteration);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Tensor& p = params_[i];
      if (!p.has_grad()) continue;  // parameter took no part in this pass
      sgd_update(p.values(), p.grad(), velocity_[i], lr, cfg_.momentum, cfg_.weight_decay);
    }
  }

  const SgdConfig& config() const { return cfg_; }

 private:
  std::vector<Tensor> params_;
  std::vector<Array> velocity_;
  SgdConfig cfg_;
};

}  // namespace ltnode
