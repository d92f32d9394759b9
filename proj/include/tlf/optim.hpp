#pragma once

#include <cmath>
#include <vector>

#include "tlf/checkpoint.hpp"
#include "tlf/config.hpp"

namespace tlf {

inline double lr_schedule(int epoch, const TrainConfig& cfg) {
  if (epoch < 0) throw std::invalid_argument("lr_schedule: epoch must be >= 0");
  return cfg.base_lr * std::pow(cfg.lr_decay, epoch);
}

// Bias-corrected Adam over a registry's trainable parameters. Weight decay is
// decoupled (lr * wd * p) and applies only to parameters flagged decayable.
class Adam {
 public:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  explicit Adam(Registry& reg, double weight_decay) : wd_(weight_decay) {
    for (auto& [name, p] : reg.params()) {
      if (!p.trainable) continue;
      Slot s;
      s.param = &p;
      s.m.assign(p.tensor.values().size(), 0.0);
      s.v.assign(p.tensor.values().size(), 0.0);
      slots_.push_back(std::move(s));
    }
  }

  void zero_grad() {
    for (auto& s : slots_) s.param->tensor.zero_grad();
  }

  void step(double lr) {
    if (lr <= 0.0) throw std::invalid_argument("adam: lr must be > 0");
    ++t_;
    const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    for (auto& s : slots_) {
      auto& values = s.param->tensor.values();
      const auto& grad = s.param->tensor.grad();
      for (std::size_t i = 0; i < values.size(); ++i) {
        const double g = grad[i];
        s.m[i] = kBeta1 * s.m[i] + (1.0 - kBeta1) * g;
        s.v[i] = kBeta2 * s.v[i] + (1.0 - kBeta2) * g * g;
        const double mhat = s.m[i] / bc1;
        const double vhat = s.v[i] / bc2;
        values[i] -= lr * mhat / (std::sqrt(vhat) + kEps);
        if (s.param->decay && wd_ > 0.0) values[i] -= lr * wd_ * values[i];
      }
    }
  }

  long long step_count() const { return t_; }

 private:
  struct Slot {
    Registry::Param* param = nullptr;
    std::vector<double> m, v;
  };
  std::vector<Slot> slots_;
  long long t_ = 0;
  double wd_ = 0.0;
};

}  // namespace tlf
