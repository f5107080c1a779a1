#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "spatialkd/common.hpp"
#include "spatialkd/tensor.hpp"

namespace skd {

// Linear warmup to base_lr over warmup_steps, then cosine annealing to zero
// at total_steps.
inline double lr_at(int64_t step, int64_t total_steps, int64_t warmup_steps, double base_lr) {
  check(step >= 0 && step <= total_steps, "lr_at: step ", step, " outside [0,", total_steps, "]");
  check(warmup_steps >= 0, "lr_at: warmup must be >= 0");
  if (warmup_steps > 0 && step < warmup_steps)
    return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  if (total_steps <= warmup_steps) return base_lr;
  double t = static_cast<double>(step - warmup_steps) /
             static_cast<double>(total_steps - warmup_steps);
  return base_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * t));
}

// Adam with decoupled weight decay. Decay applies only to matrices and
// embedding tables (shape[0] > 1); biases, layer-norm parameters and the
// log-sigma scalars are exempt.
class AdamW {
 public:
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void init(const std::vector<Tensor*>& params) {
    m_.clear();
    v_.clear();
    for (Tensor* p : params) {
      m_.emplace_back(p->shape);
      v_.emplace_back(p->shape);
    }
    t_ = 0;
  }

  bool initialized() const { return !m_.empty(); }
  int64_t step_count() const { return t_; }

  void step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads, double lr,
            double weight_decay) {
    check(params.size() == m_.size() && grads.size() == m_.size(),
          "adamw: parameter/gradient count mismatch");
    ++t_;
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
    for (size_t i = 0; i < params.size(); ++i) {
      Tensor& p = *params[i];
      const Tensor& g = grads[i];
      check(g.shape == p.shape, "adamw: gradient shape mismatch at slot ", i);
      bool decay = p.shape.size() == 2 && p.shape[0] > 1;
      for (int64_t k = 0; k < p.numel(); ++k) {
        double mk = m_[i][k] = beta1 * m_[i][k] + (1.0 - beta1) * g[k];
        double vk = v_[i][k] = beta2 * v_[i][k] + (1.0 - beta2) * g[k] * g[k];
        double update = (mk / bc1) / (std::sqrt(vk / bc2) + eps);
        if (decay) update += weight_decay * p[k];
        p[k] -= lr * update;
      }
    }
  }

  // Moment access for checkpointing.
  std::vector<Tensor>& moments_m() { return m_; }
  std::vector<Tensor>& moments_v() { return v_; }
  void restore(std::vector<Tensor> m, std::vector<Tensor> v, int64_t t) {
    m_ = std::move(m);
    v_ = std::move(v);
    t_ = t;
  }

 private:
  std::vector<Tensor> m_, v_;
  int64_t t_ = 0;
};

// Global-norm gradient clipping; returns the pre-clip norm.
inline double clip_gradients(std::vector<Tensor>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads)
    for (double v : g.data) sq += v * v;
  double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    double s = max_norm / norm;
    for (auto& g : grads)
      for (double& v : g.data) v *= s;
  }
  return norm;
}

}  // namespace skd
