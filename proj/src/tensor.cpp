#include "c2f/tensor.hpp"

#include <cblas.h>
#include <malloc.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

#include "c2f/rng.hpp"

namespace c2f {

namespace {

// Tensor buffers of several MB churn every training step; keep them on the
// heap instead of round-tripping through mmap/munmap (page-fault storms).
const bool malloc_tuned = [] {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, -1);
  return true;
}();

size_t shape_numel(const std::vector<int>& shape) {
  size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor dims must be positive");
    n *= static_cast<size_t>(d);
  }
  return n;
}

std::string shape_str(const std::vector<int>& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

void check_finite(const Tensor& t, const char* op) {
#ifndef NDEBUG
  for (double v : t.data()) {
    if (!std::isfinite(v)) {
      throw std::logic_error(std::string(op) + ": non-finite output value");
    }
  }
#else
  (void)t;
  (void)op;
#endif
}

}  // namespace

Tensor make_op_result(std::vector<int> shape, std::vector<Tensor> parents) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data.resize(shape_numel(impl->shape));  // uninitialized on purpose
  for (const auto& p : parents) {
    if (p.requires_grad()) {
      impl->requires_grad = true;
      break;
    }
  }
  if (impl->requires_grad) impl->parents = std::move(parents);
  return Tensor(std::move(impl));
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  auto impl = std::make_shared<TensorImpl>();
  impl->data.assign(shape_numel(shape), 0.0);
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.data().begin(), t.data().end(), value);
  return t;
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<double> data,
                         bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw std::invalid_argument("from_data: shape " + shape_str(shape) +
                                " does not match data length " +
                                std::to_string(data.size()));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data.assign(data.begin(), data.end());
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::from_data(std::vector<int> shape, const DVec& data,
                         bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw std::invalid_argument("from_data: shape " + shape_str(shape) +
                                " does not match data length " +
                                std::to_string(data.size()));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = data;
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({1}, std::vector<double>{value}, requires_grad);
}

Tensor Tensor::randn(std::vector<int> shape, double stddev, Rng& rng,
                     bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (auto& v : t.data()) v = stddev * rng.next_normal();
  return t;
}

const std::vector<int>& Tensor::shape() const { return impl_->shape; }
size_t Tensor::numel() const { return impl_->data.size(); }
int Tensor::dim(int i) const { return impl_->shape.at(static_cast<size_t>(i)); }
int Tensor::ndim() const { return static_cast<int>(impl_->shape.size()); }
bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }
DVec& Tensor::data() { return impl_->data; }
const DVec& Tensor::data() const { return impl_->data; }
DVec& Tensor::grad() {
  impl_->ensure_grad();
  return impl_->grad;
}
const DVec& Tensor::grad() const {
  impl_->ensure_grad();
  return impl_->grad;
}
bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }
void Tensor::zero_grad() {
  if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

double Tensor::item() const {
  if (numel() != 1) {
    throw std::invalid_argument("item: tensor has shape " +
                                shape_str(shape()) + ", expected a scalar");
  }
  return impl_->data[0];
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw std::invalid_argument("backward: loss must be a scalar tensor");
  }
  if (!loss.requires_grad()) {
    throw std::invalid_argument(
        "backward: loss was not produced under a live tape");
  }

  // Topological order over the tape, iterative to bound stack depth.
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> seen;
  struct Frame {
    TensorImpl* node;
    size_t next_child;
  };
  std::vector<Frame> stack{{loss.impl(), 0}};
  seen.insert(loss.impl());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_child < f.node->parents.size()) {
      TensorImpl* child = f.node->parents[f.next_child++].impl();
      if (child->requires_grad && seen.insert(child).second) {
        stack.push_back({child, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  loss.impl()->ensure_grad();
  loss.impl()->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* node = *it;
    if (node->backward_fn) {
      for (auto& p : node->parents) {
        if (p.requires_grad()) p.impl()->ensure_grad();
      }
      node->backward_fn(*node);
    }
  }
  // Release the tape.
  for (TensorImpl* node : order) {
    node->parents.clear();
    node->backward_fn = nullptr;
  }
}

// ----- elementwise --------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  const size_t na = a.numel(), nb = b.numel();
  const bool broadcast = na != nb;
  if (broadcast) {
    // b.shape must be a trailing suffix of a.shape
    bool ok = na % nb == 0 && b.ndim() <= a.ndim();
    for (int i = 0; ok && i < b.ndim(); ++i) {
      ok = b.dim(b.ndim() - 1 - i) == a.dim(a.ndim() - 1 - i);
    }
    if (!ok) {
      throw std::invalid_argument("add: shape " + shape_str(b.shape()) +
                                  " is not a suffix of " +
                                  shape_str(a.shape()));
    }
  }
  Tensor out = make_op_result(a.shape(), {a, b});
  const auto& ad = a.data();
  const auto& bd = b.data();
  auto& od = out.data();
  for (size_t i = 0; i < na; ++i) od[i] = ad[i] + bd[i % nb];
  if (out.requires_grad()) {
    out.impl()->backward_fn = [na, nb](TensorImpl& o) {
      const Tensor& pa = o.parents[0];
      const Tensor& pb = o.parents[1];
      if (pa.requires_grad()) {
        auto& g = pa.impl()->grad;
        for (size_t i = 0; i < na; ++i) g[i] += o.grad[i];
      }
      if (pb.requires_grad()) {
        auto& g = pb.impl()->grad;
        for (size_t i = 0; i < na; ++i) g[i % nb] += o.grad[i];
      }
    };
  }
  check_finite(out, "add");
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("mul: shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
  Tensor out = make_op_result(a.shape(), {a, b});
  const size_t n = a.numel();
  for (size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
  if (out.requires_grad()) {
    out.impl()->backward_fn = [n](TensorImpl& o) {
      const Tensor& pa = o.parents[0];
      const Tensor& pb = o.parents[1];
      if (pa.requires_grad()) {
        auto& g = pa.impl()->grad;
        const auto& bd = pb.data();
        for (size_t i = 0; i < n; ++i) g[i] += o.grad[i] * bd[i];
      }
      if (pb.requires_grad()) {
        auto& g = pb.impl()->grad;
        const auto& ad = pa.data();
        for (size_t i = 0; i < n; ++i) g[i] += o.grad[i] * ad[i];
      }
    };
  }
  check_finite(out, "mul");
  return out;
}

Tensor scale(const Tensor& a, double c) {
  Tensor out = make_op_result(a.shape(), {a});
  const size_t n = a.numel();
  for (size_t i = 0; i < n; ++i) out.data()[i] = c * a.data()[i];
  if (out.requires_grad()) {
    out.impl()->backward_fn = [c, n](TensorImpl& o) {
      auto& g = o.parents[0].impl()->grad;
      for (size_t i = 0; i < n; ++i) g[i] += c * o.grad[i];
    };
  }
  check_finite(out, "scale");
  return out;
}

Tensor scale_by(const Tensor& a, const Tensor& s) {
  if (s.numel() != 1) {
    throw std::invalid_argument("scale_by: scale must be a scalar tensor");
  }
  Tensor out = make_op_result(a.shape(), {a, s});
  const double sv = s.data()[0];
  const size_t n = a.numel();
  for (size_t i = 0; i < n; ++i) out.data()[i] = sv * a.data()[i];
  if (out.requires_grad()) {
    out.impl()->backward_fn = [sv, n](TensorImpl& o) {
      const Tensor& pa = o.parents[0];
      const Tensor& ps = o.parents[1];
      if (pa.requires_grad()) {
        auto& g = pa.impl()->grad;
        for (size_t i = 0; i < n; ++i) g[i] += sv * o.grad[i];
      }
      if (ps.requires_grad()) {
        double acc = 0.0;
        const auto& ad = pa.data();
        for (size_t i = 0; i < n; ++i) acc += o.grad[i] * ad[i];
        ps.impl()->grad[0] += acc;
      }
    };
  }
  check_finite(out, "scale_by");
  return out;
}

Tensor exp(const Tensor& a) {
  Tensor out = make_op_result(a.shape(), {a});
  const size_t n = a.numel();
  for (size_t i = 0; i < n; ++i) out.data()[i] = std::exp(a.data()[i]);
  if (out.requires_grad()) {
    DVec y = out.data();
    out.impl()->backward_fn = [y = std::move(y), n](TensorImpl& o) {
      auto& g = o.parents[0].impl()->grad;
      for (size_t i = 0; i < n; ++i) g[i] += o.grad[i] * y[i];
    };
  }
  check_finite(out, "exp");
  return out;
}

Tensor gelu(const Tensor& a) {
  static constexpr double kInvSqrt2 = 0.70710678118654752440;
  static constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  Tensor out = make_op_result(a.shape(), {a});
  const size_t n = a.numel();
  for (size_t i = 0; i < n; ++i) {
    const double x = a.data()[i];
    out.data()[i] = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
  }
  if (out.requires_grad()) {
    out.impl()->backward_fn = [n](TensorImpl& o) {
      auto& g = o.parents[0].impl()->grad;
      const auto& xd = o.parents[0].data();
      for (size_t i = 0; i < n; ++i) {
        const double x = xd[i];
        const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
        g[i] += o.grad[i] * (cdf + x * pdf);
      }
    };
  }
  check_finite(out, "gelu");
  return out;
}

// ----- matmul --------------------------------------------------------------

namespace {

void gemm(bool ta, bool tb, int m, int n, int k, const double* A, int lda,
          const double* B, int ldb, double* C, int ldc, double beta,
          double alpha = 1.0) {
  cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans,
              tb ? CblasTrans : CblasNoTrans, m, n, k, alpha, A, lda, B, ldb,
              beta, C, ldc);
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
  if (a.ndim() < 2 || b.ndim() < 2) {
    throw std::invalid_argument("matmul: operands must have rank >= 2, got " +
                                shape_str(a.shape()) + " and " +
                                shape_str(b.shape()));
  }
  const int a_rows = a.dim(a.ndim() - 2), a_cols = a.dim(a.ndim() - 1);
  const int b_rows = b.dim(b.ndim() - 2), b_cols = b.dim(b.ndim() - 1);
  const int m = trans_a ? a_cols : a_rows;
  const int ka = trans_a ? a_rows : a_cols;
  const int kb = trans_b ? b_cols : b_rows;
  const int n = trans_b ? b_rows : b_cols;
  if (ka != kb) {
    throw std::invalid_argument("matmul: inner dimensions disagree, " +
                                shape_str(a.shape()) + " x " +
                                shape_str(b.shape()));
  }
  const bool b_shared = b.ndim() == 2 && a.ndim() > 2;
  size_t batch = 1;
  std::vector<int> out_shape;
  if (a.ndim() == 2 && b.ndim() == 2) {
    out_shape = {m, n};
  } else {
    if (!b_shared) {
      if (a.ndim() != b.ndim()) {
        throw std::invalid_argument("matmul: batch rank mismatch " +
                                    shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
      }
      for (int i = 0; i + 2 < a.ndim(); ++i) {
        if (a.dim(i) != b.dim(i)) {
          throw std::invalid_argument("matmul: batch dims disagree " +
                                      shape_str(a.shape()) + " vs " +
                                      shape_str(b.shape()));
        }
      }
    }
    for (int i = 0; i + 2 < a.ndim(); ++i) {
      out_shape.push_back(a.dim(i));
      batch *= static_cast<size_t>(a.dim(i));
    }
    out_shape.push_back(m);
    out_shape.push_back(n);
  }

  Tensor out = make_op_result(out_shape, {a, b});
  const size_t a_sz = static_cast<size_t>(a_rows) * a_cols;
  const size_t b_sz = static_cast<size_t>(b_rows) * b_cols;
  const size_t c_sz = static_cast<size_t>(m) * n;
  const int lda = a_cols, ldb = b_cols, ldc = n;
  for (size_t s = 0; s < batch; ++s) {
    gemm(trans_a, trans_b, m, n, ka, a.data().data() + s * a_sz, lda,
         b.data().data() + (b_shared ? 0 : s * b_sz), ldb,
         out.data().data() + s * c_sz, ldc, 0.0);
  }

  if (out.requires_grad()) {
    out.impl()->backward_fn = [=](TensorImpl& o) {
      const Tensor& pa = o.parents[0];
      const Tensor& pb = o.parents[1];
      for (size_t s = 0; s < batch; ++s) {
        const double* dC = o.grad.data() + s * c_sz;
        const double* A = pa.data().data() + s * a_sz;
        const double* B = pb.data().data() + (b_shared ? 0 : s * b_sz);
        if (pa.requires_grad()) {
          double* dA = pa.impl()->grad.data() + s * a_sz;
          if (!trans_a) {
            // dA = dC . op_b(B)^T
            gemm(false, !trans_b, m, ka, n, dC, ldc, B, ldb, dA, lda, 1.0);
          } else {
            // dA_phys = op_b(B) . dC^T
            gemm(trans_b, true, ka, m, n, B, ldb, dC, ldc, dA, lda, 1.0);
          }
        }
        if (pb.requires_grad()) {
          double* dB = pb.impl()->grad.data() + (b_shared ? 0 : s * b_sz);
          if (!trans_b) {
            // dB = op_a(A)^T . dC
            gemm(!trans_a, false, ka, n, m, A, lda, dC, ldc, dB, ldb, 1.0);
          } else {
            // dB_phys = dC^T . op_a(A)
            gemm(true, trans_a, n, ka, m, dC, ldc, A, lda, dB, ldb, 1.0);
          }
        }
      }
    };
  }
  check_finite(out, "matmul");
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.ndim() < 2 || w.ndim() != 2) {
    throw std::invalid_argument("linear: x must be rank >= 2 and w rank 2, got " +
                                shape_str(x.shape()) + " and " +
                                shape_str(w.shape()));
  }
  const int in = x.dim(x.ndim() - 1);
  const int out_dim = w.dim(1);
  if (w.dim(0) != in || b.numel() != static_cast<size_t>(out_dim)) {
    throw std::invalid_argument("linear: incompatible shapes " +
                                shape_str(x.shape()) + ", " +
                                shape_str(w.shape()) + ", " +
                                shape_str(b.shape()));
  }
  const int rows = static_cast<int>(x.numel() / static_cast<size_t>(in));
  std::vector<int> out_shape = x.shape();
  out_shape.back() = out_dim;
  Tensor out = make_op_result(std::move(out_shape), {x, w, b});
  gemm(false, false, rows, out_dim, in, x.data().data(), in, w.data().data(),
       out_dim, out.data().data(), out_dim, 0.0);
  const double* bd = b.data().data();
  for (int r = 0; r < rows; ++r) {
    double* y = out.data().data() + static_cast<size_t>(r) * out_dim;
    for (int j = 0; j < out_dim; ++j) y[j] += bd[j];
  }
  if (out.requires_grad()) {
    out.impl()->backward_fn = [rows, in, out_dim](TensorImpl& o) {
      const Tensor& px = o.parents[0];
      const Tensor& pw = o.parents[1];
      const Tensor& pb = o.parents[2];
      const double* dy = o.grad.data();
      if (px.requires_grad()) {
        gemm(false, true, rows, in, out_dim, dy, out_dim,
             pw.data().data(), out_dim, px.impl()->grad.data(), in, 1.0);
      }
      if (pw.requires_grad()) {
        gemm(true, false, in, out_dim, rows, px.data().data(), in, dy,
             out_dim, pw.impl()->grad.data(), out_dim, 1.0);
      }
      if (pb.requires_grad()) {
        auto& gb = pb.impl()->grad;
        for (int r = 0; r < rows; ++r) {
          const double* dyr = dy + static_cast<size_t>(r) * out_dim;
          for (int j = 0; j < out_dim; ++j) gb[j] += dyr[j];
        }
      }
    };
  }
  check_finite(out, "linear");
  return out;
}

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            int n_heads, double scale,
                            const std::vector<double>* valid) {
  if (q.ndim() != 3 || q.shape() != k.shape() || q.shape() != v.shape()) {
    throw std::invalid_argument(
        "multi_head_attention: q/k/v must share a rank-3 shape");
  }
  const int B = q.dim(0), N = q.dim(1), w = q.dim(2);
  if (n_heads < 1 || w % n_heads != 0) {
    throw std::invalid_argument("multi_head_attention: width " +
                                std::to_string(w) + " not divisible by " +
                                std::to_string(n_heads) + " heads");
  }
  if (valid && valid->size() != static_cast<size_t>(B) * N) {
    throw std::invalid_argument("multi_head_attention: mask size mismatch");
  }
  const int H = n_heads, dh = w / H;
  Tensor out = make_op_result({B, N, w}, {q, k, v});
  // post-softmax attention maps, kept for the backward pass
  auto attn = std::make_shared<DVec>();
  attn->resize(static_cast<size_t>(B) * H * N * N);
  for (int b = 0; b < B; ++b) {
    const double* vb = valid ? valid->data() + static_cast<size_t>(b) * N
                             : nullptr;
    for (int h = 0; h < H; ++h) {
      // head slices live at column offset h*dh with row stride w
      const size_t off = static_cast<size_t>(b) * N * w + h * dh;
      double* sp = attn->data() + (static_cast<size_t>(b) * H + h) * N * N;
      gemm(false, true, N, N, dh, q.data().data() + off, w,
           k.data().data() + off, w, sp, N, 0.0, scale);
      for (int r = 0; r < N; ++r) {
        double* row = sp + static_cast<size_t>(r) * N;
        if (vb) {
          for (int c = 0; c < N; ++c) {
            if (vb[c] == 0.0) row[c] = -1e30;
          }
        }
        double mx = row[0];
        for (int c = 1; c < N; ++c) mx = std::max(mx, row[c]);
        double sum = 0.0;
        for (int c = 0; c < N; ++c) {
          row[c] = std::exp(row[c] - mx);
          sum += row[c];
        }
        for (int c = 0; c < N; ++c) row[c] /= sum;
      }
      gemm(false, false, N, dh, N, sp, N, v.data().data() + off, w,
           out.data().data() + off, w, 0.0);
    }
  }
  if (out.requires_grad()) {
    out.impl()->backward_fn = [attn, B, H, N, dh, w, scale](TensorImpl& o) {
      const Tensor& pq = o.parents[0];
      const Tensor& pk = o.parents[1];
      const Tensor& pv = o.parents[2];
      DVec dattn(static_cast<size_t>(N) * N);
      for (int b = 0; b < B; ++b) {
        for (int h = 0; h < H; ++h) {
          const size_t off = static_cast<size_t>(b) * N * w + h * dh;
          const double* a = attn->data() +
                            (static_cast<size_t>(b) * H + h) * N * N;
          const double* dctx = o.grad.data() + off;
          // d attn = dctx . v^T ; dv += attn^T . dctx
          gemm(false, true, N, N, dh, dctx, w, pv.data().data() + off, w,
               dattn.data(), N, 0.0);
          if (pv.requires_grad()) {
            gemm(true, false, N, dh, N, a, N, dctx, w,
                 pv.impl()->grad.data() + off, w, 1.0);
          }
          // softmax backward in place: rows with masked keys have attn = 0
          // there, so their score gradient is exactly 0
          for (int r = 0; r < N; ++r) {
            const double* ar = a + static_cast<size_t>(r) * N;
            double* dr = dattn.data() + static_cast<size_t>(r) * N;
            double dot = 0.0;
            for (int c = 0; c < N; ++c) dot += ar[c] * dr[c];
            for (int c = 0; c < N; ++c) dr[c] = ar[c] * (dr[c] - dot);
          }
          if (pq.requires_grad()) {
            gemm(false, false, N, dh, N, dattn.data(), N,
                 pk.data().data() + off, w, pq.impl()->grad.data() + off, w,
                 1.0, scale);
          }
          if (pk.requires_grad()) {
            gemm(true, false, N, dh, N, dattn.data(), N,
                 pq.data().data() + off, w, pk.impl()->grad.data() + off, w,
                 1.0, scale);
          }
        }
      }
    };
  }
  check_finite(out, "multi_head_attention");
  return out;
}

// ----- shape ops -----------------------------------------------------------

Tensor reshape(const Tensor& a, std::vector<int> shape) {
  if (shape_numel(shape) != a.numel()) {
    throw std::invalid_argument("reshape: cannot view " +
                                shape_str(a.shape()) + " as " +
                                shape_str(shape));
  }
  Tensor out = make_op_result(std::move(shape), {a});
  out.data() = a.data();
  if (out.requires_grad()) {
    const size_t n = a.numel();
    out.impl()->backward_fn = [n](TensorImpl& o) {
      auto& g = o.parents[0].impl()->grad;
      for (size_t i = 0; i < n; ++i) g[i] += o.grad[i];
    };
  }
  return out;
}

namespace {

std::vector<size_t> row_major_strides(const std::vector<int>& shape) {
  std::vector<size_t> st(shape.size(), 1);
  for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i) {
    st[i] = st[i + 1] * static_cast<size_t>(shape[i + 1]);
  }
  return st;
}

// out[i] = in[perm_index(i)] mapping for permuted axes
std::vector<size_t> permute_index_map(const std::vector<int>& in_shape,
                                      const std::vector<int>& axes) {
  std::vector<int> out_shape(axes.size());
  for (size_t i = 0; i < axes.size(); ++i) out_shape[i] = in_shape[axes[i]];
  const auto in_st = row_major_strides(in_shape);
  const auto out_st = row_major_strides(out_shape);
  const size_t n = shape_numel(in_shape);
  std::vector<size_t> map(n);
  for (size_t o = 0; o < n; ++o) {
    size_t rem = o, src = 0;
    for (size_t d = 0; d < axes.size(); ++d) {
      const size_t coord = rem / out_st[d];
      rem %= out_st[d];
      src += coord * in_st[axes[d]];
    }
    map[o] = src;
  }
  return map;
}

}  // namespace

Tensor permute(const Tensor& a, const std::vector<int>& axes) {
  if (static_cast<int>(axes.size()) != a.ndim()) {
    throw std::invalid_argument("permute: axes rank mismatch");
  }
  std::vector<int> out_shape(axes.size());
  for (size_t i = 0; i < axes.size(); ++i) out_shape[i] = a.dim(axes[i]);
  Tensor out = make_op_result(out_shape, {a});
  const auto map = permute_index_map(a.shape(), axes);
  const size_t n = a.numel();
  for (size_t i = 0; i < n; ++i) out.data()[i] = a.data()[map[i]];
  if (out.requires_grad()) {
    out.impl()->backward_fn = [map, n](TensorImpl& o) {
      auto& g = o.parents[0].impl()->grad;
      for (size_t i = 0; i < n; ++i) g[map[i]] += o.grad[i];
    };
  }
  return out;
}

// ----- normalizations ------------------------------------------------------

Tensor softmax(const Tensor& a) {
  const int w = a.dim(a.ndim() - 1);
  const size_t rows = a.numel() / static_cast<size_t>(w);
  Tensor out = make_op_result(a.shape(), {a});
  for (size_t r = 0; r < rows; ++r) {
    const double* x = a.data().data() + r * w;
    double* y = out.data().data() + r * w;
    double mx = x[0];
    for (int i = 1; i < w; ++i) mx = std::max(mx, x[i]);
    double sum = 0.0;
    for (int i = 0; i < w; ++i) {
      y[i] = std::exp(x[i] - mx);
      sum += y[i];
    }
    for (int i = 0; i < w; ++i) y[i] /= sum;
  }
  if (out.requires_grad()) {
    DVec y = out.data();
    out.impl()->backward_fn = [y = std::move(y), rows, w](TensorImpl& o) {
      auto& g = o.parents[0].impl()->grad;
      for (size_t r = 0; r < rows; ++r) {
        const double* yr = y.data() + r * w;
        const double* dy = o.grad.data() + r * w;
        double dot = 0.0;
        for (int i = 0; i < w; ++i) dot += yr[i] * dy[i];
        double* gx = g.data() + r * w;
        for (int i = 0; i < w; ++i) gx[i] += yr[i] * (dy[i] - dot);
      }
    };
  }
  check_finite(out, "softmax");
  return out;
}

Tensor log_softmax(const Tensor& a) {
  const int w = a.dim(a.ndim() - 1);
  const size_t rows = a.numel() / static_cast<size_t>(w);
  Tensor out = make_op_result(a.shape(), {a});
  for (size_t r = 0; r < rows; ++r) {
    const double* x = a.data().data() + r * w;
    double* y = out.data().data() + r * w;
    double mx = x[0];
    for (int i = 1; i < w; ++i) mx = std::max(mx, x[i]);
    double sum = 0.0;
    for (int i = 0; i < w; ++i) sum += std::exp(x[i] - mx);
    const double lse = mx + std::log(sum);
    for (int i = 0; i < w; ++i) y[i] = x[i] - lse;
  }
  if (out.requires_grad()) {
    DVec y = out.data();
    out.impl()->backward_fn = [y = std::move(y), rows, w](TensorImpl& o) {
      auto& g = o.parents[0].impl()->grad;
      for (size_t r = 0; r < rows; ++r) {
        const double* yr = y.data() + r * w;
        const double* dy = o.grad.data() + r * w;
        double s = 0.0;
        for (int i = 0; i < w; ++i) s += dy[i];
        double* gx = g.data() + r * w;
        for (int i = 0; i < w; ++i) gx[i] += dy[i] - std::exp(yr[i]) * s;
      }
    };
  }
  check_finite(out, "log_softmax");
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps) {
  const int w = x.dim(x.ndim() - 1);
  if (gamma.numel() != static_cast<size_t>(w) ||
      beta.numel() != static_cast<size_t>(w)) {
    throw std::invalid_argument("layer_norm: affine params must have length " +
                                std::to_string(w));
  }
  if (eps <= 0.0) throw std::invalid_argument("layer_norm: eps must be > 0");
  const size_t rows = x.numel() / static_cast<size_t>(w);
  Tensor out = make_op_result(x.shape(), {x, gamma, beta});
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_std(rows);
  for (size_t r = 0; r < rows; ++r) {
    const double* xr = x.data().data() + r * w;
    double mean = 0.0;
    for (int i = 0; i < w; ++i) mean += xr[i];
    mean /= w;
    double var = 0.0;
    for (int i = 0; i < w; ++i) var += (xr[i] - mean) * (xr[i] - mean);
    var /= w;
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[r] = inv;
    double* xh = xhat.data() + r * w;
    double* y = out.data().data() + r * w;
    for (int i = 0; i < w; ++i) {
      xh[i] = (xr[i] - mean) * inv;
      y[i] = gamma.data()[i] * xh[i] + beta.data()[i];
    }
  }
  if (out.requires_grad()) {
    out.impl()->backward_fn = [xhat = std::move(xhat),
                               inv_std = std::move(inv_std), rows,
                               w](TensorImpl& o) {
      const Tensor& px = o.parents[0];
      const Tensor& pg = o.parents[1];
      const Tensor& pb = o.parents[2];
      for (size_t r = 0; r < rows; ++r) {
        const double* dy = o.grad.data() + r * w;
        const double* xh = xhat.data() + r * w;
        if (pg.requires_grad()) {
          auto& gg = pg.impl()->grad;
          for (int i = 0; i < w; ++i) gg[i] += dy[i] * xh[i];
        }
        if (pb.requires_grad()) {
          auto& gb = pb.impl()->grad;
          for (int i = 0; i < w; ++i) gb[i] += dy[i];
        }
        if (px.requires_grad()) {
          const auto& gamma_d = pg.data();
          double m1 = 0.0, m2 = 0.0;
          for (int i = 0; i < w; ++i) {
            const double dxh = dy[i] * gamma_d[i];
            m1 += dxh;
            m2 += dxh * xh[i];
          }
          m1 /= w;
          m2 /= w;
          auto& gx = px.impl()->grad;
          double* gxr = gx.data() + r * w;
          for (int i = 0; i < w; ++i) {
            const double dxh = dy[i] * gamma_d[i];
            gxr[i] += inv_std[r] * (dxh - m1 - xh[i] * m2);
          }
        }
      }
    };
  }
  check_finite(out, "layer_norm");
  return out;
}

// ----- lookup / pooling ----------------------------------------------------

Tensor embedding(const Tensor& table, const std::vector<int>& ids,
                 std::vector<int> ids_shape) {
  if (table.ndim() != 2) {
    throw std::invalid_argument("embedding: table must be 2-D");
  }
  if (ids.size() != shape_numel(ids_shape)) {
    throw std::invalid_argument("embedding: ids length mismatch");
  }
  const int vocab = table.dim(0), w = table.dim(1);
  for (int id : ids) {
    if (id < 0 || id >= vocab) {
      throw std::invalid_argument("embedding: token id " + std::to_string(id) +
                                  " out of vocabulary of size " +
                                  std::to_string(vocab));
    }
  }
  std::vector<int> out_shape = std::move(ids_shape);
  out_shape.push_back(w);
  Tensor out = make_op_result(out_shape, {table});
  for (size_t i = 0; i < ids.size(); ++i) {
    std::copy_n(table.data().data() + static_cast<size_t>(ids[i]) * w, w,
                out.data().data() + i * w);
  }
  if (out.requires_grad()) {
    out.impl()->backward_fn = [ids, w](TensorImpl& o) {
      auto& g = o.parents[0].impl()->grad;
      for (size_t i = 0; i < ids.size(); ++i) {
        double* row = g.data() + static_cast<size_t>(ids[i]) * w;
        const double* dy = o.grad.data() + i * w;
        for (int j = 0; j < w; ++j) row[j] += dy[j];
      }
    };
  }
  return out;
}

Tensor mean_axis1(const Tensor& x) {
  if (x.ndim() != 3) {
    throw std::invalid_argument("mean_axis1: expected rank-3 input");
  }
  const int B = x.dim(0), N = x.dim(1), w = x.dim(2);
  Tensor out = make_op_result({B, w}, {x});
  std::fill(out.data().begin(), out.data().end(), 0.0);
  for (int b = 0; b < B; ++b) {
    double* y = out.data().data() + static_cast<size_t>(b) * w;
    for (int n = 0; n < N; ++n) {
      const double* xr =
          x.data().data() + (static_cast<size_t>(b) * N + n) * w;
      for (int j = 0; j < w; ++j) y[j] += xr[j];
    }
    for (int j = 0; j < w; ++j) y[j] /= N;
  }
  if (out.requires_grad()) {
    out.impl()->backward_fn = [B, N, w](TensorImpl& o) {
      auto& g = o.parents[0].impl()->grad;
      for (int b = 0; b < B; ++b) {
        const double* dy = o.grad.data() + static_cast<size_t>(b) * w;
        for (int n = 0; n < N; ++n) {
          double* gx = g.data() + (static_cast<size_t>(b) * N + n) * w;
          for (int j = 0; j < w; ++j) gx[j] += dy[j] / N;
        }
      }
    };
  }
  check_finite(out, "mean_axis1");
  return out;
}

Tensor masked_mean_axis1(const Tensor& x, const std::vector<double>& mask) {
  if (x.ndim() != 3) {
    throw std::invalid_argument("masked_mean_axis1: expected rank-3 input");
  }
  const int B = x.dim(0), N = x.dim(1), w = x.dim(2);
  if (mask.size() != static_cast<size_t>(B) * N) {
    throw std::invalid_argument("masked_mean_axis1: mask size mismatch");
  }
  // Rows with no valid position fall back to an unmasked mean.
  std::vector<double> eff = mask;
  std::vector<double> count(B, 0.0);
  for (int b = 0; b < B; ++b) {
    for (int n = 0; n < N; ++n) count[b] += eff[static_cast<size_t>(b) * N + n];
    if (count[b] == 0.0) {
      for (int n = 0; n < N; ++n) eff[static_cast<size_t>(b) * N + n] = 1.0;
      count[b] = N;
    }
  }
  Tensor out = make_op_result({B, w}, {x});
  std::fill(out.data().begin(), out.data().end(), 0.0);
  for (int b = 0; b < B; ++b) {
    double* y = out.data().data() + static_cast<size_t>(b) * w;
    for (int n = 0; n < N; ++n) {
      const double m = eff[static_cast<size_t>(b) * N + n];
      if (m == 0.0) continue;
      const double* xr =
          x.data().data() + (static_cast<size_t>(b) * N + n) * w;
      for (int j = 0; j < w; ++j) y[j] += m * xr[j];
    }
    for (int j = 0; j < w; ++j) y[j] /= count[b];
  }
  if (out.requires_grad()) {
    out.impl()->backward_fn = [eff = std::move(eff), count = std::move(count),
                               B, N, w](TensorImpl& o) {
      auto& g = o.parents[0].impl()->grad;
      for (int b = 0; b < B; ++b) {
        const double* dy = o.grad.data() + static_cast<size_t>(b) * w;
        for (int n = 0; n < N; ++n) {
          const double m = eff[static_cast<size_t>(b) * N + n];
          if (m == 0.0) continue;
          double* gx = g.data() + (static_cast<size_t>(b) * N + n) * w;
          for (int j = 0; j < w; ++j) gx[j] += m * dy[j] / count[b];
        }
      }
    };
  }
  check_finite(out, "masked_mean_axis1");
  return out;
}

Tensor l2_normalize(const Tensor& x, double eps) {
  const int w = x.dim(x.ndim() - 1);
  const size_t rows = x.numel() / static_cast<size_t>(w);
  Tensor out = make_op_result(x.shape(), {x});
  std::vector<double> inv_norm(rows);
  for (size_t r = 0; r < rows; ++r) {
    const double* xr = x.data().data() + r * w;
    double s = 0.0;
    for (int i = 0; i < w; ++i) s += xr[i] * xr[i];
    const double inv = 1.0 / std::sqrt(s + eps);
    inv_norm[r] = inv;
    double* y = out.data().data() + r * w;
    for (int i = 0; i < w; ++i) y[i] = xr[i] * inv;
  }
  if (out.requires_grad()) {
    out.impl()->backward_fn = [inv_norm = std::move(inv_norm), rows,
                               w](TensorImpl& o) {
      auto& g = o.parents[0].impl()->grad;
      const auto& xd = o.parents[0].data();
      for (size_t r = 0; r < rows; ++r) {
        const double* xr = xd.data() + r * w;
        const double* dy = o.grad.data() + r * w;
        const double inv = inv_norm[r];
        double dot = 0.0;
        for (int i = 0; i < w; ++i) dot += xr[i] * dy[i];
        double* gx = g.data() + r * w;
        const double inv3 = inv * inv * inv;
        for (int i = 0; i < w; ++i) gx[i] += inv * dy[i] - xr[i] * dot * inv3;
      }
    };
  }
  check_finite(out, "l2_normalize");
  return out;
}

Tensor gather_rows(const Tensor& x, const std::vector<std::vector<int>>& idx) {
  if (x.ndim() != 3) {
    throw std::invalid_argument("gather_rows: expected rank-3 input");
  }
  const int B = x.dim(0), N = x.dim(1), D = x.dim(2);
  if (idx.size() != static_cast<size_t>(B) || idx.empty() || idx[0].empty()) {
    throw std::invalid_argument("gather_rows: need a non-empty index list per example");
  }
  const int K = static_cast<int>(idx[0].size());
  for (const auto& row : idx) {
    if (static_cast<int>(row.size()) != K) {
      throw std::invalid_argument("gather_rows: ragged index lists");
    }
    for (int i : row) {
      if (i < 0 || i >= N) {
        throw std::invalid_argument("gather_rows: index out of range");
      }
    }
  }
  Tensor out = make_op_result({B, K, D}, {x});
  for (int b = 0; b < B; ++b) {
    for (int k = 0; k < K; ++k) {
      std::copy_n(
          x.data().data() + (static_cast<size_t>(b) * N + idx[b][k]) * D, D,
          out.data().data() + (static_cast<size_t>(b) * K + k) * D);
    }
  }
  if (out.requires_grad()) {
    out.impl()->backward_fn = [idx, B, N, K, D](TensorImpl& o) {
      auto& g = o.parents[0].impl()->grad;
      for (int b = 0; b < B; ++b) {
        for (int k = 0; k < K; ++k) {
          double* gx = g.data() + (static_cast<size_t>(b) * N + idx[b][k]) * D;
          const double* dy =
              o.grad.data() + (static_cast<size_t>(b) * K + k) * D;
          for (int j = 0; j < D; ++j) gx[j] += dy[j];
        }
      }
    };
  }
  return out;
}

Tensor apply_key_padding(const Tensor& scores,
                         const std::vector<double>& valid) {
  if (scores.ndim() != 4) {
    throw std::invalid_argument("apply_key_padding: expected [B,h,N,N] scores");
  }
  const int B = scores.dim(0), H = scores.dim(1), Nq = scores.dim(2),
            Nk = scores.dim(3);
  if (valid.size() != static_cast<size_t>(B) * Nk) {
    throw std::invalid_argument("apply_key_padding: mask size mismatch");
  }
  Tensor out = make_op_result(scores.shape(), {scores});
  size_t p = 0;
  for (int b = 0; b < B; ++b) {
    const double* vb = valid.data() + static_cast<size_t>(b) * Nk;
    for (int h = 0; h < H; ++h) {
      for (int q = 0; q < Nq; ++q) {
        for (int k = 0; k < Nk; ++k, ++p) {
          out.data()[p] = vb[k] != 0.0 ? scores.data()[p] : -1e30;
        }
      }
    }
  }
  if (out.requires_grad()) {
    out.impl()->backward_fn = [valid, B, H, Nq, Nk](TensorImpl& o) {
      auto& g = o.parents[0].impl()->grad;
      size_t q = 0;
      for (int b = 0; b < B; ++b) {
        const double* vb = valid.data() + static_cast<size_t>(b) * Nk;
        for (int h = 0; h < H; ++h) {
          for (int r = 0; r < Nq; ++r) {
            for (int k = 0; k < Nk; ++k, ++q) {
              if (vb[k] != 0.0) g[q] += o.grad[q];
            }
          }
        }
      }
    };
  }
  return out;
}

Tensor sum(const Tensor& a) {
  Tensor out = make_op_result({1}, {a});
  double s = 0.0;
  for (double v : a.data()) s += v;
  out.data()[0] = s;
  if (out.requires_grad()) {
    const size_t n = a.numel();
    out.impl()->backward_fn = [n](TensorImpl& o) {
      auto& g = o.parents[0].impl()->grad;
      for (size_t i = 0; i < n; ++i) g[i] += o.grad[0];
    };
  }
  return out;
}

Tensor nll_diag(const Tensor& logp) {
  if (logp.ndim() != 2 || logp.dim(0) != logp.dim(1)) {
    throw std::invalid_argument("nll_diag: expected a square matrix, got " +
                                shape_str(logp.shape()));
  }
  const int B = logp.dim(0);
  Tensor out = make_op_result({1}, {logp});
  double s = 0.0;
  for (int i = 0; i < B; ++i) s += logp.data()[static_cast<size_t>(i) * B + i];
  out.data()[0] = -s / B;
  if (out.requires_grad()) {
    out.impl()->backward_fn = [B](TensorImpl& o) {
      auto& g = o.parents[0].impl()->grad;
      for (int i = 0; i < B; ++i) {
        g[static_cast<size_t>(i) * B + i] -= o.grad[0] / B;
      }
    };
  }
  check_finite(out, "nll_diag");
  return out;
}

}  // namespace c2f
