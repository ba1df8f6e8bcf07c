#pragma once

#include <functional>
#include <vector>

#include "semfuse/tensor.hpp"

namespace semfuse {

// Central-difference verification of reverse-mode gradients.
//
// f must be a deterministic scalar-valued function of x. Returns
// max over coordinates of |analytic - numeric| / max(1, |analytic|).
inline double check_gradients(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                              double h = 1e-5) {
  Tensor probe = Tensor::from(x.shape(), x.values()).set_requires_grad(true);
  Tensor y = f(probe);
  backward(y);
  const std::vector<double> analytic = probe.grad();

  Tensor work = Tensor::from(x.shape(), x.values());
  double worst = 0.0;
  for (std::size_t i = 0; i < work.numel(); ++i) {
    const double orig = work.data()[i];
    work.data()[i] = orig + h;
    const double fp = f(work).item();
    work.data()[i] = orig - h;
    const double fm = f(work).item();
    work.data()[i] = orig;
    const double numeric = (fp - fm) / (2.0 * h);
    const double rel = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
    worst = std::max(worst, rel);
  }
  return worst;
}

// Same check over a module's parameter list: loss_fn rebuilds the forward pass
// on each call using the parameters in place.
inline double check_gradients_params(const std::function<Tensor()>& loss_fn,
                                     const std::vector<Tensor*>& params, double h = 1e-5) {
  for (auto* p : params) p->zero_grad();
  Tensor loss = loss_fn();
  backward(loss);
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (auto* p : params) analytic.push_back(p->has_grad() ? p->grad() : std::vector<double>(p->numel(), 0.0));

  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = *params[pi];
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const double orig = p.data()[i];
      p.data()[i] = orig + h;
      const double fp = loss_fn().item();
      p.data()[i] = orig - h;
      const double fm = loss_fn().item();
      p.data()[i] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[pi][i];
      const double rel = std::abs(a - numeric) / std::max(1.0, std::abs(a));
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace semfuse
