#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "probias/autodiff.hpp"

namespace probias::nn {

struct GradCheckOptions {
  double step = 1e-5;
  bool training = false;  // must stay false; stochastic forwards are rejected
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

// |a - n| / max(1, |a|, |n|)
inline double grad_relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({1.0, std::abs(analytic), std::abs(numeric)});
}

// Compares the analytic gradient of `loss_fn` with central differences for every
// scalar of every parameter in `params`.
inline GradCheckReport finite_diff_check(ParameterStore& params, const std::function<Var(Tape&)>& loss_fn,
                                         GradCheckOptions opt = {}) {
  auto evaluate = [&](bool want_grad) {
    Tape tape(opt.training, opt.seed);
    Var loss = loss_fn(tape);
    if (tape.used_stochastic_op())
      throw NumericError("gradient check: deterministic mode required (a stochastic op such as dropout ran)");
    const double v = loss.value()[0];
    if (!std::isfinite(v)) throw NumericError("gradient check: non-finite loss");
    if (want_grad) tape.backward(loss);
    return v;
  };

  params.zero_grad();
  evaluate(true);
  std::vector<Tensor> analytic;
  for (const Parameter& p : params) analytic.push_back(p.grad);

  GradCheckReport report;
  std::size_t pi = 0;
  for (Parameter& p : params) {
    auto& w = p.value.storage();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double orig = w[i];
      w[i] = orig + opt.step;
      const double up = evaluate(false);
      w[i] = orig - opt.step;
      const double down = evaluate(false);
      w[i] = orig;
      const double numeric = (up - down) / (2.0 * opt.step);
      const double err = grad_relative_error(analytic[pi][i], numeric);
      ++report.checked;
      if (err > report.max_rel_error || report.worst_parameter.empty()) {
        report.max_rel_error = err;
        report.worst_parameter = p.name;
        report.worst_index = i;
      }
    }
    ++pi;
  }
  params.zero_grad();
  return report;
}

}  // namespace probias::nn
