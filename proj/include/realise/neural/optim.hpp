// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "realise/neural/layers.hpp"

namespace realise::nn {

/// Linear warmup from 0 to `peak` over `warmup_steps`, then linear decay to 0
/// at `total_steps`.
class WarmupLinearSchedule {
 public:
  WarmupLinearSchedule() = default;
  WarmupLinearSchedule(double peak, std::size_t warmup_steps, std::size_t total_steps)
      : peak_(peak), warmup_(warmup_steps), total_(std::max(total_steps, warmup_steps)) {}

  double operator()(std::size_t step) const {
    if (step < warmup_) return peak_ * static_cast<double>(step) / static_cast<double>(warmup_);
    if (total_ == warmup_) return step == warmup_ ? peak_ : 0.0;
    if (step >= total_) return 0.0;
    return peak_ * static_cast<double>(total_ - step) / static_cast<double>(total_ - warmup_);
  }

  double peak() const { return peak_; }
  std::size_t warmup_steps() const { return warmup_; }
  std::size_t total_steps() const { return total_; }

 private:
  double peak_ = 0.0;
  std::size_t warmup_ = 0;
  std::size_t total_ = 0;
};

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

struct StepOutcome {
  bool applied = false;
  double lr = 0.0;
  std::string diagnostic;
};

/// Adam with decoupled weight decay: p <- p - lr*wd*p - lr*mhat/(sqrt(vhat)+eps).
/// Decay touches only parameters flagged for it and never enters the moments.
template <typename T>
class AdamW {
 public:
  AdamW() = default;
  AdamW(ParamList<T> params, AdamWConfig config, WarmupLinearSchedule schedule)
      : params_(std::move(params)), config_(config), schedule_(schedule) {
    for (const auto& p : params_) {
      m_.emplace_back(p.tensor.numel(), T{0});
      v_.emplace_back(p.tensor.numel(), T{0});
    }
  }

  StepOutcome step() {
    StepOutcome outcome;
    outcome.lr = schedule_(step_);
    for (auto& p : params_) {
      if (!p.tensor.has_grad()) continue;
      for (T g : p.tensor.grad()) {
        if (!std::isfinite(g)) {
          outcome.diagnostic = "non-finite gradient in " + p.name + " at step " + std::to_string(step_) +
                               "; update skipped";
          ++skipped_;
          return outcome;
        }
      }
    }
    const double t = static_cast<double>(step_ + 1);
    const double bc1 = 1.0 - std::pow(config_.beta1, t);
    const double bc2 = 1.0 - std::pow(config_.beta2, t);
    const T b1 = static_cast<T>(config_.beta1), b2 = static_cast<T>(config_.beta2);
    const T lr = static_cast<T>(outcome.lr);
    const T decay = static_cast<T>(outcome.lr * config_.weight_decay);
    const T eps = static_cast<T>(config_.eps);
    const T inv_bc1 = static_cast<T>(1.0 / bc1), inv_bc2 = static_cast<T>(1.0 / bc2);
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& p = params_[k];
      if (!p.tensor.has_grad()) continue;
      auto w = p.tensor.data();
      auto g = p.tensor.grad();
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = b1 * m[i] + (T{1} - b1) * g[i];
        v[i] = b2 * v[i] + (T{1} - b2) * g[i] * g[i];
        if (p.decay) w[i] -= decay * w[i];
        const T mhat = m[i] * inv_bc1;
        const T vhat = v[i] * inv_bc2;
        w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    }
    ++step_;
    outcome.applied = true;
    return outcome;
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  std::size_t step_count() const { return step_; }
  std::size_t skipped() const { return skipped_; }
  const ParamList<T>& params() const { return params_; }
  const WarmupLinearSchedule& schedule() const { return schedule_; }

  /// Moment buffers exposed as named tensors for checkpointing.
  std::vector<std::pair<std::string, Tensor<T>>> state() const {
    std::vector<std::pair<std::string, Tensor<T>>> out;
    for (std::size_t k = 0; k < params_.size(); ++k) {
      out.emplace_back("adam.m." + params_[k].name, Tensor<T>(params_[k].tensor.shape(), m_[k]));
      out.emplace_back("adam.v." + params_[k].name, Tensor<T>(params_[k].tensor.shape(), v_[k]));
    }
    return out;
  }

  void restore(std::size_t step, const std::vector<std::vector<T>>& m, const std::vector<std::vector<T>>& v) {
    if (m.size() != m_.size() || v.size() != v_.size()) throw ShapeError("adamw: state size mismatch");
    step_ = step;
    m_ = m;
    v_ = v;
  }

 private:
  ParamList<T> params_;
  AdamWConfig config_;
  WarmupLinearSchedule schedule_;
  std::vector<std::vector<T>> m_;
  std::vector<std::vector<T>> v_;
  std::size_t step_ = 0;
  std::size_t skipped_ = 0;
};

}  // namespace realise::nn
