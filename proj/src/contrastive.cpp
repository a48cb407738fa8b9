#include "c2f/contrastive.hpp"

#include <cmath>
#include <stdexcept>

namespace c2f {

TemperatureParam TemperatureParam::init() {
  TemperatureParam t;
  t.log_inv_tau = Tensor::scalar(std::log(1.0 / kInitTau), true);
  return t;
}

double TemperatureParam::tau() const {
  return 1.0 / std::exp(log_inv_tau.data()[0]);
}

void TemperatureParam::clamp() {
  double& v = log_inv_tau.data()[0];
  const double lo = std::log(kMinInvTau), hi = std::log(kMaxInvTau);
  if (v < lo) v = lo;
  if (v > hi) v = hi;
}

namespace {

// Raw pairwise similarities with a fixed scalar accumulation order, so that
// pairwise_sim(p, q) is the exact bitwise transpose of pairwise_sim(q, p).
Tensor pairwise_sim(const Tensor& p, const Tensor& q) {
  if (p.ndim() != 2 || q.ndim() != 2 || p.dim(1) != q.dim(1)) {
    throw std::invalid_argument("logits: embedding dims disagree");
  }
  if (p.dim(0) != q.dim(0)) {
    throw std::invalid_argument(
        "logits: towers produced different batch sizes, " +
        std::to_string(p.dim(0)) + " vs " + std::to_string(q.dim(0)));
  }
  const int b = p.dim(0), d = p.dim(1);
  Tensor out = make_op_result({b, b}, {p, q});
  for (int i = 0; i < b; ++i) {
    const double* pi = p.data().data() + static_cast<size_t>(i) * d;
    for (int j = 0; j < b; ++j) {
      const double* qj = q.data().data() + static_cast<size_t>(j) * d;
      double s = 0.0;
      for (int k = 0; k < d; ++k) s += pi[k] * qj[k];
      out.data()[static_cast<size_t>(i) * b + j] = s;
    }
  }
  if (out.requires_grad()) {
    out.impl()->backward_fn = [b, d](TensorImpl& o) {
      const Tensor& pp = o.parents[0];
      const Tensor& pq = o.parents[1];
      for (int i = 0; i < b; ++i) {
        for (int j = 0; j < b; ++j) {
          const double g = o.grad[static_cast<size_t>(i) * b + j];
          if (pp.requires_grad()) {
            double* gp = pp.impl()->grad.data() + static_cast<size_t>(i) * d;
            const double* qj = pq.data().data() + static_cast<size_t>(j) * d;
            for (int k = 0; k < d; ++k) gp[k] += g * qj[k];
          }
          if (pq.requires_grad()) {
            double* gq = pq.impl()->grad.data() + static_cast<size_t>(j) * d;
            const double* pi = pp.data().data() + static_cast<size_t>(i) * d;
            for (int k = 0; k < d; ++k) gq[k] += g * pi[k];
          }
        }
      }
    };
  }
  return out;
}

}  // namespace

Tensor logits(const Tensor& p, const Tensor& q, double tau) {
  if (tau <= 0.0) throw std::invalid_argument("logits: tau must be positive");
  return scale(pairwise_sim(p, q), 1.0 / tau);
}

Tensor logits(const Tensor& p, const Tensor& q, const Tensor& log_inv_tau) {
  return scale_by(pairwise_sim(p, q), exp(log_inv_tau));
}

namespace {

Tensor info_nce_from_logits(const Tensor& z) {
  const Tensor i2t = nll_diag(log_softmax(z));
  const Tensor t2i = nll_diag(log_softmax(permute(z, {1, 0})));
  return scale(add(i2t, t2i), 0.5);
}

}  // namespace

Tensor info_nce(const Tensor& p, const Tensor& q, const Tensor& log_inv_tau) {
  return info_nce_from_logits(logits(p, q, log_inv_tau));
}

Tensor info_nce(const Tensor& p, const Tensor& q, double tau) {
  return info_nce_from_logits(logits(p, q, tau));
}

}  // namespace c2f
