#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "semfuse/tensor.hpp"

namespace semfuse {

// AdamW with decoupled weight decay (decay applied before the Adam update,
// PyTorch semantics). One moment pair per registered parameter.
class AdamW {
 public:
  explicit AdamW(std::vector<Tensor*> params, double beta1 = 0.9, double beta2 = 0.999,
                 double eps = 1e-8, double weight_decay = 0.01)
      : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps),
        weight_decay_(weight_decay) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
      m_[i].assign(params_[i]->numel(), 0.0);
      v_[i].assign(params_[i]->numel(), 0.0);
    }
  }

  // Applies one update in place from each parameter's .grad. Parameters with
  // no populated gradient are treated as zero-gradient.
  void step(double lr) {
    if (lr <= 0.0) throw std::invalid_argument("AdamW::step: lr must be positive");
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Tensor& p = *params_[i];
      const bool has_grad = p.has_grad();
      for (std::size_t j = 0; j < p.numel(); ++j) {
        const double g = has_grad ? p.grad()[j] : 0.0;
        double& w = p.data()[j];
        w -= lr * weight_decay_ * w;
        m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g;
        v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g * g;
        const double mhat = m_[i][j] / bc1;
        const double vhat = v_[i][j] / bc2;
        w -= lr * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

  std::size_t step_count() const { return t_; }

 private:
  std::vector<Tensor*> params_;
  std::vector<std::vector<double>> m_, v_;
  double beta1_, beta2_, eps_, weight_decay_;
  std::size_t t_ = 0;
};

// One-cycle learning rate: linear warmup from max_lr/25 to max_lr over
// warmup_fraction of the run, then cosine decay to max_lr/1e4.
struct OneCycleSchedule {
  double max_lr = 3e-3;
  std::size_t total_steps = 1000;
  double warmup_fraction = 0.3;

  static constexpr double kStartDiv = 25.0;
  static constexpr double kEndDiv = 1e4;

  double lr(std::size_t step) const {
    if (step > total_steps) {
      throw std::invalid_argument("OneCycleSchedule: step " + std::to_string(step) +
                                  " beyond total_steps " + std::to_string(total_steps));
    }
    if (total_steps == 0 || warmup_fraction <= 0.0 || warmup_fraction >= 1.0) {
      throw std::invalid_argument("OneCycleSchedule: invalid schedule parameters");
    }
    const double warmup_end = warmup_fraction * static_cast<double>(total_steps);
    const double start_lr = max_lr / kStartDiv;
    const double end_lr = max_lr / kEndDiv;
    const double s = static_cast<double>(step);
    if (s <= warmup_end) {
      return start_lr + (max_lr - start_lr) * (s / warmup_end);
    }
    const double tau = (s - warmup_end) / (static_cast<double>(total_steps) - warmup_end);
    return end_lr + (max_lr - end_lr) * 0.5 * (1.0 + std::cos(3.14159265358979323846 * tau));
  }
};

}  // namespace semfuse
