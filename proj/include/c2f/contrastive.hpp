#pragma once

#include "c2f/tensor.hpp"

namespace c2f {

// Learnable temperature, stored as log(1/tau). 1/tau is clamped to
// [1, 100] after every optimizer step.
struct TemperatureParam {
  Tensor log_inv_tau;

  static constexpr double kInitTau = 0.07;
  static constexpr double kMinInvTau = 1.0;
  static constexpr double kMaxInvTau = 100.0;

  static TemperatureParam init();
  double tau() const;
  void clamp();
};

// Pairwise similarity logits: entry (i, j) = (p_i . q_j) / tau.
// Rows of p and q are expected to be unit-norm. Uses a fixed accumulation
// order so that logits(p, q) and logits(q, p) are exact transposes.
Tensor logits(const Tensor& p, const Tensor& q, double tau);
Tensor logits(const Tensor& p, const Tensor& q, const Tensor& log_inv_tau);

// Symmetric InfoNCE: softmax cross-entropy over rows (image-to-text) and
// columns (text-to-image) of one logit matrix, averaged.
Tensor info_nce(const Tensor& p, const Tensor& q, const Tensor& log_inv_tau);
Tensor info_nce(const Tensor& p, const Tensor& q, double tau);

}  // namespace c2f
