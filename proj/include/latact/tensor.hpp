#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "latact/prng.hpp"

namespace latact {

/// Reverse-mode autodiff over dense row-major tensors.
///
/// Every op records a Node on the implicit tape when gradients are enabled
/// and any input requires them. backward() replays the tape in reverse
/// topological order. Leaf gradients accumulate across backward calls;
/// call zero_grad() between optimizer steps.
///
/// The scalar type is a template parameter: float for training, double for
/// finite-difference gradient checks.

bool grad_enabled();

/// RAII guard that disables tape recording (pure forward passes).
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <class S>
struct Node;

template <class S>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor from_values(std::vector<int> shape, std::vector<S> values,
                            bool requires_grad = false);
  static Tensor scalar_value(S v);
  static Tensor randn(std::vector<int> shape, Prng& rng, double stdev,
                      bool requires_grad = false);

  bool defined() const { return data_ != nullptr; }
  const std::vector<int>& shape() const { return shape_; }
  std::size_t numel() const { return data_ ? data_->size() : 0; }
  int rows() const { return shape_.empty() ? 0 : shape_[0]; }
  int cols() const { return shape_.size() < 2 ? (shape_.empty() ? 0 : 1) : shape_[1]; }

  S* data() { return data_->data(); }
  const S* data() const { return data_->data(); }
  std::vector<S>& vec() { return *data_; }
  const std::vector<S>& vec() const { return *data_; }

  S item() const;
  S at(int r, int c) const { return (*data_)[static_cast<std::size_t>(r) * cols() + c]; }

  bool requires_grad() const { return requires_grad_; }
  bool has_grad() const { return grad_ != nullptr; }
  std::vector<S>& grad_vec();
  const std::vector<S>& grad_vec() const { return *grad_; }
  void zero_grad();

  bool all_finite() const;

  // graph internals (used by ops and backward)
  std::shared_ptr<Node<S>> node;
  std::shared_ptr<std::vector<S>> data_ptr() const { return data_; }
  std::shared_ptr<std::vector<S>> grad_ptr() const { return grad_; }
  void set_requires_grad(bool b);
  static Tensor wrap(std::vector<int> shape, std::shared_ptr<std::vector<S>> data,
                     bool requires_grad);

 private:
  std::vector<int> shape_;
  std::shared_ptr<std::vector<S>> data_;
  std::shared_ptr<std::vector<S>> grad_;
  bool requires_grad_ = false;
};

/// One recorded operation. Holds handles to its parents and the output
/// buffers; `backprop` scatters the output gradient into the parents.
template <class S>
struct Node {
  std::vector<Tensor<S>> parents;
  std::vector<int> out_shape;
  std::shared_ptr<std::vector<S>> out_data;
  std::shared_ptr<std::vector<S>> out_grad;
  std::function<void(Node<S>&)> backprop;
};

/// Reverse-topological replay order for one backward pass.
template <class S>
struct Tape {
  std::vector<Node<S>*> order;  // parents precede children
};

template <class S>
Tape<S> build_tape(const Tensor<S>& root);

/// Accumulates gradients of `loss` into every reachable requires_grad
/// tensor. Loss must be scalar. Calling twice without zero_grad doubles
/// leaf gradients.
template <class S>
void backward(const Tensor<S>& loss);

// ---------------------------------------------------------------------------
// Attention masks. allow[i*cols+j] != 0 means query i may attend to key j.

struct AttentionMask {
  int rows = 0;
  int cols = 0;
  std::vector<std::uint8_t> allow;

  bool at(int i, int j) const { return allow[static_cast<std::size_t>(i) * cols + j] != 0; }

  static AttentionMask full(int r, int c);
  static AttentionMask causal(int n);
  /// Bidirectional over the first n_real positions; padded tail gets no
  /// attention in either direction.
  static AttentionMask padding(int n_real, int n);
  /// Mask for the act-prediction branch: position 0 sees only itself,
  /// position 1 sees both. Equals causal(n_rows).
  static AttentionMask policy(int n_rows);
};

enum class MaskKind { Causal, Padding, Policy };

AttentionMask build_mask(MaskKind kind, int n, int n_real = -1);

// ---------------------------------------------------------------------------
// Primitives. All throw std::runtime_error on shape mismatch, naming both
// shapes.

template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b);
template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b);
template <class S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b);
template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b);
template <class S>
Tensor<S> scale(const Tensor<S>& a, S c);
/// Broadcasts a [1,n] bias over every row of a [m,n] tensor.
template <class S>
Tensor<S> add_bias(const Tensor<S>& x, const Tensor<S>& b);

/// Row-wise softmax (last axis). Rows sum to 1 within 1e-6.
template <class S>
Tensor<S> softmax_rows(const Tensor<S>& x);

/// Multi-head scaled-dot-product attention with an explicit mask.
/// q: [Tq,d], k,v: [Tk,d], d divisible by n_heads. Masked positions are
/// skipped entirely, never touched with zero weights, so outputs for a row
/// are bitwise-independent of masked-out rows.
template <class S>
Tensor<S> multi_head_attention(const Tensor<S>& q, const Tensor<S>& k, const Tensor<S>& v,
                               int n_heads, const AttentionMask& mask);

template <class S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gain, const Tensor<S>& bias,
                     double eps = 1e-5);

template <class S>
Tensor<S> gelu(const Tensor<S>& x);

/// Gathers rows of `table` at `ids`; backward scatter-adds.
template <class S>
Tensor<S> embedding_lookup(const Tensor<S>& table, const std::vector<int>& ids);

/// Concatenates two 2-D tensors along axis 0 (rows) or 1 (cols).
template <class S>
Tensor<S> concat(const Tensor<S>& a, const Tensor<S>& b, int axis);

template <class S>
Tensor<S> mean_all(const Tensor<S>& x);
/// Mean over rows: [m,n] -> [1,n].
template <class S>
Tensor<S> mean_rows(const Tensor<S>& x);

/// Mean negative log-likelihood of `targets` under row-wise softmax of
/// `logits`. Targets equal to ignore_index are excluded from the mean.
template <class S>
Tensor<S> cross_entropy_with_logits(const Tensor<S>& logits, const std::vector<int>& targets,
                                    int ignore_index = -1);

/// Sum of squared entries (scalar).
template <class S>
Tensor<S> squared_l2(const Tensor<S>& x);

/// Normalizes each row to unit L2 norm.
template <class S>
Tensor<S> l2_normalize_rows(const Tensor<S>& x);

/// Forward identity, backward annihilator: shares the input's values but
/// detaches from the tape.
template <class S>
Tensor<S> stop_gradient(const Tensor<S>& x);

template <class S>
Tensor<S> slice_rows(const Tensor<S>& x, int start, int count);

/// Inverted dropout; identity when rate == 0.
template <class S>
Tensor<S> dropout(const Tensor<S>& x, double rate, Prng& rng);

// ---------------------------------------------------------------------------
// Optimizer

template <class S>
struct NamedTensor {
  std::string name;
  Tensor<S> tensor;
};

template <class S>
struct OptimizerState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;
  std::vector<std::vector<S>> m;
  std::vector<std::vector<S>> v;
};

/// Bias-corrected Adam update, in place. Parameters without an allocated
/// gradient are treated as zero-gradient. Throws on non-finite gradients,
/// naming the offending parameter.
template <class S>
void adam_step(std::vector<NamedTensor<S>>& params, OptimizerState<S>& state);

/// Clips the global gradient norm to max_norm; returns the pre-clip norm.
template <class S>
double clip_grad_norm(std::vector<NamedTensor<S>>& params, double max_norm);

// ---------------------------------------------------------------------------
// Gradient checking (double precision)

/// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
/// `make_loss` must rebuild the scalar loss from the current values of
/// `points` on every call.
double gradcheck(const std::function<Tensor<double>()>& make_loss,
                 const std::vector<Tensor<double>>& points, double step = 1e-4);

double gradcheck(const std::function<Tensor<double>()>& make_loss, const Tensor<double>& point,
                 double step = 1e-4);

std::string shape_str(const std::vector<int>& shape);

}  // namespace latact
