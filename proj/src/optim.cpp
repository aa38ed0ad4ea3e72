#include "cali/optim.hpp"

#include <cmath>
#include <cstdio>

namespace cali {

void zero_grads(std::vector<NamedParam> params) {
  for (NamedParam& p : params) p.tensor.zero_grad();
}

double poly_lr(double base, int64_t iter, int64_t max_iters, double power) {
  if (max_iters < 1) throw ConfigError("poly_lr: max_iters must be >= 1");
  if (iter < 0) throw ConfigError("poly_lr: negative iter");
  if (iter > max_iters) {
    static bool warned = false;
    if (!warned) {
      std::fprintf(stderr, "warning: poly_lr iter %lld beyond max_iters %lld, clamping to 0\n",
                   static_cast<long long>(iter), static_cast<long long>(max_iters));
      warned = true;
    }
    return 0.0;
  }
  double frac = 1.0 - static_cast<double>(iter) / static_cast<double>(max_iters);
  return base * std::pow(frac, power);
}

Optimizer::Optimizer(OptimizerConfig cfg) : cfg_(cfg) {
  if (cfg_.lr < 0) throw ConfigError("optimizer: negative learning rate");
}

void Optimizer::step(std::vector<NamedParam> params, double lr_scale) {
  const float lr = static_cast<float>(cfg_.lr * lr_scale);
  for (NamedParam& p : params) {
    auto& data = p.tensor.data();
    auto& grad = p.tensor.grad();
    Slot& slot = slots_[p.tensor.node().get()];
    if (slot.m1.empty()) slot.m1.assign(data.size(), 0.0f);

    for (float g : grad) {
      if (!std::isfinite(g))
        throw Error("optimizer_step: non-finite gradient in parameter '" + p.name + "'");
    }

    if (cfg_.kind == OptKind::SgdMomentum) {
      const float mu = static_cast<float>(cfg_.momentum);
      const float wd = static_cast<float>(cfg_.weight_decay);
      for (size_t i = 0; i < data.size(); ++i) {
        float g = grad[i] + wd * data[i];
        slot.m1[i] = mu * slot.m1[i] + g;
        data[i] -= lr * slot.m1[i];
      }
    } else {
      if (slot.m2.empty()) slot.m2.assign(data.size(), 0.0f);
      slot.t += 1;
      const float b1 = static_cast<float>(cfg_.beta1);
      const float b2 = static_cast<float>(cfg_.beta2);
      const float eps = static_cast<float>(cfg_.eps);
      const float wd = static_cast<float>(cfg_.weight_decay);
      const float c1 = 1.0f - std::pow(b1, static_cast<float>(slot.t));
      const float c2 = 1.0f - std::pow(b2, static_cast<float>(slot.t));
      for (size_t i = 0; i < data.size(); ++i) {
        float g = grad[i] + wd * data[i];
        slot.m1[i] = b1 * slot.m1[i] + (1.0f - b1) * g;
        slot.m2[i] = b2 * slot.m2[i] + (1.0f - b2) * g * g;
        float m_hat = slot.m1[i] / c1;
        float v_hat = slot.m2[i] / c2;
        data[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
      }
    }
  }
}

}  // namespace cali
