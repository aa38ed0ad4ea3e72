#pragma once
// Gradient-descent machinery: SGD with momentum, Adam, and the polynomial
// learning-rate schedule.  Optimizer state is keyed by parameter identity so
// one optimizer instance can own the history for a fixed parameter group.

#include <string>
#include <unordered_map>
#include <vector>

#include "cali/tensor.hpp"

namespace cali {

struct NamedParam {
  std::string name;
  Tensor tensor;
};

void zero_grads(std::vector<NamedParam> params);

// base * (1 - iter/max_iters)^power.  iter beyond max_iters clamps to zero
// with a one-time warning on stderr.
double poly_lr(double base, int64_t iter, int64_t max_iters, double power = 0.9);

enum class OptKind { SgdMomentum, Adam };

struct OptimizerConfig {
  OptKind kind = OptKind::SgdMomentum;
  double lr = 2.5e-4;
  // SGD
  double momentum = 0.9;
  double weight_decay = 5e-4;
  // Adam
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-8;
};

class Optimizer {
 public:
  Optimizer() = default;
  explicit Optimizer(OptimizerConfig cfg);

  // One update per parameter from its accumulated gradient.  lr_scale
  // multiplies the configured base rate (schedule hook).  Non-finite
  // gradients abort with a message naming the parameter.
  void step(std::vector<NamedParam> params, double lr_scale = 1.0);

  const OptimizerConfig& config() const { return cfg_; }

 private:
  struct Slot {
    std::vector<float> m1;  // momentum / first moment
    std::vector<float> m2;  // second moment (Adam)
    int64_t t = 0;
  };

  OptimizerConfig cfg_;
  std::unordered_map<const void*, Slot> slots_;
};

}  // namespace cali
