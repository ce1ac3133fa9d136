#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include "probias/tensor.hpp"

namespace probias::nn {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// Learning rate decays linearly from `base` to zero over `total_steps`.
class LinearDecay {
 public:
  LinearDecay(double base, std::size_t total_steps) : base_(base), total_(total_steps) {}
  double at(std::size_t step) const {
    if (total_ == 0) return base_;
    const double frac = 1.0 - static_cast<double>(step) / static_cast<double>(total_);
    return base_ * std::max(0.0, frac);
  }

 private:
  double base_;
  std::size_t total_;
};

// AdamW with decoupled weight decay and bias correction.
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  const AdamWConfig& config() const noexcept { return cfg_; }
  std::size_t step_count() const noexcept { return step_; }

  // One update over every parameter using its current gradient times
  // `grad_scale` (1 / micro-batch count when gradients were summed).
  void step(ParameterStore& params, double lr, double grad_scale = 1.0) {
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (Parameter& p : params) {
      Moments& mo = moments_[p.name];
      if (mo.m.size() != p.value.size()) {
        mo.m.assign(p.value.size(), 0.0);
        mo.v.assign(p.value.size(), 0.0);
      }
      auto& w = p.value.storage();
      const auto& g = p.grad.storage();
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = g[i] * grad_scale;
        w[i] -= lr * cfg_.weight_decay * w[i];
        mo.m[i] = cfg_.beta1 * mo.m[i] + (1.0 - cfg_.beta1) * gi;
        mo.v[i] = cfg_.beta2 * mo.v[i] + (1.0 - cfg_.beta2) * gi * gi;
        const double mhat = mo.m[i] / bc1;
        const double vhat = mo.v[i] / bc2;
        w[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

  struct Moments {
    std::vector<double> m;
    std::vector<double> v;
  };
  const std::unordered_map<std::string, Moments>& moments() const noexcept { return moments_; }

 private:
  AdamWConfig cfg_;
  std::size_t step_ = 0;
  std::unordered_map<std::string, Moments> moments_;
};

}  // namespace probias::nn
