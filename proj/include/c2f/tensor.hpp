#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace c2f {

class Rng;

struct TensorImpl;

// Tensor storage skips value-initialization on resize: op outputs are fully
// overwritten, and zero-filling multi-megabyte buffers every step dominated
// the training profile.
template <class T>
struct NoInitAlloc {
  using value_type = T;
  NoInitAlloc() = default;
  template <class U>
  NoInitAlloc(const NoInitAlloc<U>&) {}
  T* allocate(size_t n) { return std::allocator<T>().allocate(n); }
  void deallocate(T* p, size_t n) { std::allocator<T>().deallocate(p, n); }
  template <class U>
  void construct(U* p) {
    ::new (static_cast<void*>(p)) U;
  }
  template <class U, class... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }
  bool operator==(const NoInitAlloc&) const { return true; }
  bool operator!=(const NoInitAlloc&) const { return false; }
};

using DVec = std::vector<double, NoInitAlloc<double>>;

// Dense row-major float64 tensor with reverse-mode differentiation.
// Value type: copying a Tensor copies a handle, not the storage.
// Storage is immutable once created except through explicit mutators
// (optimizer updates, test setup).
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, double value,
                     bool requires_grad = false);
  static Tensor from_data(std::vector<int> shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor from_data(std::vector<int> shape, const DVec& data,
                          bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor randn(std::vector<int> shape, double stddev, Rng& rng,
                      bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<int>& shape() const;
  size_t numel() const;
  int dim(int i) const;
  int ndim() const;
  bool requires_grad() const;

  DVec& data();
  const DVec& data() const;
  // Gradient buffer; allocated on demand for tensors that require grad.
  DVec& grad();
  const DVec& grad() const;
  bool has_grad() const;
  void zero_grad();

  double item() const;  // scalar tensors only

  TensorImpl* impl() const { return impl_.get(); }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorImpl> impl_;
  friend struct TensorImpl;
  friend Tensor make_op_result(std::vector<int> shape,
                               std::vector<Tensor> parents);
};

struct TensorImpl {
  std::vector<int> shape;
  DVec data;
  DVec grad;  // empty until first accumulation
  bool requires_grad = false;

  // Tape node: parents and the rule that scatters this node's grad
  // into its parents' grads. Cleared after backward().
  std::vector<Tensor> parents;
  std::function<void(TensorImpl&)> backward_fn;

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
  }
};

// Allocates a zero-filled op result whose tape records `parents`
// (building block for ops defined outside tensor.cpp).
Tensor make_op_result(std::vector<int> shape, std::vector<Tensor> parents);

// Runs reverse-mode accumulation from a scalar loss. Every node reachable
// from the loss is visited exactly once; the tape (parents + backward
// closures) is released afterwards.
void backward(const Tensor& loss);

// ----- primitive ops ------------------------------------------------------

// elementwise; b may also be a suffix-broadcast (b.shape is a trailing
// suffix of a.shape, e.g. bias rows or positional tables)
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
// y = a * s where s is a trainable scalar tensor
Tensor scale_by(const Tensor& a, const Tensor& s);
Tensor exp(const Tensor& a);
Tensor gelu(const Tensor& a);  // exact erf form

// a: [*batch, m, k], b: [*batch, k, n] or 2-D [k, n] shared across batch.
// trans_a / trans_b transpose the trailing two axes before multiplying.
Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a = false,
              bool trans_b = false);

Tensor reshape(const Tensor& a, std::vector<int> shape);
Tensor permute(const Tensor& a, const std::vector<int>& axes);

Tensor softmax(const Tensor& a);      // over last axis, max-subtracted
Tensor log_softmax(const Tensor& a);  // over last axis

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps);

// y = x . w + b over the last axis; x: [..., in], w: [in, out], b: [out].
// One fused GEMM over all leading rows (much faster than per-example
// matmul + broadcast add on small desk-scale matrices).
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// Fused scaled-dot-product attention over n_heads head slices of width
// w / n_heads. q, k, v: [B, N, w]; valid (optional): key-padding mask of
// size B*N, invalid keys get -1e30 before the softmax. Heads are addressed
// by stride, so no reshape/permute copies are made.
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            int n_heads, double scale,
                            const std::vector<double>* valid = nullptr);

// table: [V, w]; ids: flat index list with logical shape ids_shape
Tensor embedding(const Tensor& table, const std::vector<int>& ids,
                 std::vector<int> ids_shape);

Tensor mean_axis1(const Tensor& x);  // [B, N, w] -> [B, w]
// mask[b][n] in {0,1}; rows with no valid position fall back to a full mean
Tensor masked_mean_axis1(const Tensor& x, const std::vector<double>& mask);

Tensor l2_normalize(const Tensor& x, double eps = 1e-12);  // last axis

// x: [B, N, D]; idx[b] lists K kept positions (ascending) -> [B, K, D]
Tensor gather_rows(const Tensor& x, const std::vector<std::vector<int>>& idx);

// scores: [B, h, N, N]; valid[b][n] in {0,1}; invalid key columns get -1e30
Tensor apply_key_padding(const Tensor& scores,
                         const std::vector<double>& valid);

Tensor sum(const Tensor& a);  // -> scalar

// logp: [B, B] row-wise log-probabilities; returns -(1/B) sum_i logp[i][i]
Tensor nll_diag(const Tensor& logp);

}  // namespace c2f
