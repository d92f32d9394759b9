#pragma once

#include <cmath>
#include <stdexcept>

#include "tlf/config.hpp"
#include "tlf/ops.hpp"
#include "tlf/tensor.hpp"

namespace tlf {

inline constexpr double kProbClip = 1e-7;

inline void require_one_hot(const Tensor& target, int classes) {
  const int n = target.size() / classes;
  const double* t = target.data();
  for (int j = 0; j < n; ++j) {
    double sum = 0.0;
    for (int k = 0; k < classes; ++k) {
      const double v = t[static_cast<std::size_t>(j) * classes + k];
      if (v != 0.0 && v != 1.0)
        throw std::invalid_argument("target is not one-hot: entry neither 0 nor 1");
      sum += v;
    }
    if (sum != 1.0) throw std::invalid_argument("target is not one-hot: row sum != 1");
  }
}

// Mean over pixels of -sum_c target * log(pred), with predictions clipped to
// [1e-7, 1-1e-7].
inline Tensor cross_entropy(const Tensor& pred_probs, const Tensor& target) {
  require_same_shape(pred_probs, target, "cross_entropy");
  const int classes = pred_probs.shape().back();
  require_one_hot(target, classes);
  const int pixels = pred_probs.size() / classes;
  Tensor logp = log_op(clip(pred_probs, kProbClip, 1.0 - kProbClip));
  return affine(sum_all(mul(target, logp)), -1.0 / pixels, 0.0);
}

// Mean over pixels of -alpha * (1 - p_t)^gamma * log(p_t), the alpha-balanced
// focal term on the true-class probability. The `AsPrinted` form keeps the
// raw two-term expression for ablation runs.
inline Tensor focal_loss(const Tensor& pred_probs, const Tensor& target, const LossConfig& cfg) {
  require_same_shape(pred_probs, target, "focal_loss");
  const int classes = pred_probs.shape().back();
  require_one_hot(target, classes);
  const int pixels = pred_probs.size() / classes;
  Tensor clipped = clip(pred_probs, kProbClip, 1.0 - kProbClip);
  if (cfg.focal_form == FocalForm::Canonical) {
    Tensor p_t = sum_last(mul(target, clipped));
    Tensor modulated = mul(pow_const(affine(p_t, -1.0, 1.0), cfg.gamma), log_op(p_t));
    return affine(mean_all(modulated), -cfg.alpha, 0.0);
  }
  // As printed: -alpha * x^gamma * log(x') + (1-x)^gamma * log(1-x'),
  // summed over classes, averaged over pixels.
  Tensor first = affine(mul(pow_const(target, cfg.gamma), log_op(clipped)), -cfg.alpha, 0.0);
  Tensor second = mul(pow_const(affine(target, -1.0, 1.0), cfg.gamma),
                      log_op(clip(affine(pred_probs, -1.0, 1.0), kProbClip, 1.0 - kProbClip)));
  return affine(sum_all(add(first, second)), 1.0 / pixels, 0.0);
}

// Focal + categorical cross-entropy over the same prediction.
inline Tensor combined_loss(const Tensor& pred_probs, const Tensor& target,
                            const LossConfig& cfg) {
  return add(focal_loss(pred_probs, target, cfg), cross_entropy(pred_probs, target));
}

// log(m * cosh(r_pred - r_true)) averaged over elements, evaluated through
// the overflow-free identity |d| + log1p(exp(-2|d|)) - log 2.
inline Tensor logcosh_loss(const Tensor& r_pred, const Tensor& r_true, double m) {
  require_same_shape(r_pred, r_true, "logcosh_loss");
  if (m <= 0.0) throw std::invalid_argument("logcosh_loss: m must be positive");
  return affine(mean_all(logcosh(sub(r_pred, r_true))), 1.0, std::log(m));
}

// Weighted two-task loss: lambda * (focal + CE) + log-cosh on the measure.
inline Tensor total_loss(const Tensor& mask_pred, const Tensor& mask_target, const Tensor& r_pred,
                         const Tensor& r_true, const LossConfig& cfg) {
  Tensor seg = combined_loss(mask_pred, mask_target, cfg);
  Tensor meas = logcosh_loss(r_pred, r_true, cfg.m);
  return add(affine(seg, cfg.lambda, 0.0), meas);
}

}  // namespace tlf
