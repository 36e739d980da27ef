#include "latact/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace latact {

namespace {

thread_local bool g_grad_enabled = true;

template <class S>
std::size_t shape_numel(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw std::runtime_error("tensor: non-positive extent in shape " + shape_str(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

// ---------------------------------------------------------------------------
// Tensor

template <class S>
Tensor<S> Tensor<S>::zeros(std::vector<int> shape, bool requires_grad) {
  Tensor<S> t;
  std::size_t n = shape_numel<S>(shape);
  t.shape_ = std::move(shape);
  t.data_ = std::make_shared<std::vector<S>>(n, S(0));
  t.set_requires_grad(requires_grad);
  return t;
}

template <class S>
Tensor<S> Tensor<S>::from_values(std::vector<int> shape, std::vector<S> values,
                                 bool requires_grad) {
  std::size_t n = shape_numel<S>(shape);
  if (n != values.size()) {
    throw std::runtime_error("tensor: " + std::to_string(values.size()) +
                             " values do not fill shape " + shape_str(shape));
  }
  Tensor<S> t;
  t.shape_ = std::move(shape);
  t.data_ = std::make_shared<std::vector<S>>(std::move(values));
  t.set_requires_grad(requires_grad);
  return t;
}

template <class S>
Tensor<S> Tensor<S>::scalar_value(S v) {
  return from_values({1, 1}, {v});
}

template <class S>
Tensor<S> Tensor<S>::randn(std::vector<int> shape, Prng& rng, double stdev, bool requires_grad) {
  std::size_t n = shape_numel<S>(shape);
  std::vector<S> vals(n);
  for (std::size_t i = 0; i < n; ++i) vals[i] = static_cast<S>(rng.normal() * stdev);
  return from_values(std::move(shape), std::move(vals), requires_grad);
}

template <class S>
Tensor<S> Tensor<S>::wrap(std::vector<int> shape, std::shared_ptr<std::vector<S>> data,
                          bool requires_grad) {
  if (shape_numel<S>(shape) != data->size()) {
    throw std::runtime_error("tensor: wrapped buffer does not match shape " + shape_str(shape));
  }
  Tensor<S> t;
  t.shape_ = std::move(shape);
  t.data_ = std::move(data);
  t.set_requires_grad(requires_grad);
  return t;
}

template <class S>
void Tensor<S>::set_requires_grad(bool b) {
  requires_grad_ = b;
  if (b && !grad_ && data_) {
    grad_ = std::make_shared<std::vector<S>>(data_->size(), S(0));
  }
  if (!b) grad_.reset();
}

template <class S>
S Tensor<S>::item() const {
  if (numel() != 1) {
    throw std::runtime_error("tensor: item() on non-scalar of shape " + shape_str(shape_));
  }
  return (*data_)[0];
}

template <class S>
std::vector<S>& Tensor<S>::grad_vec() {
  if (!grad_) throw std::runtime_error("tensor: gradient not allocated");
  return *grad_;
}

template <class S>
void Tensor<S>::zero_grad() {
  if (grad_) std::fill(grad_->begin(), grad_->end(), S(0));
}

template <class S>
bool Tensor<S>::all_finite() const {
  for (S v : *data_) {
    if (!std::isfinite(static_cast<double>(v))) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Tape / backward

namespace {

template <class S>
bool any_requires(const std::vector<Tensor<S>>& parents) {
  for (const auto& p : parents) {
    if (p.requires_grad()) return true;
  }
  return false;
}

/// Creates the op output; records a node iff grads are on and some parent
/// needs them.
template <class S>
Tensor<S> make_output(std::vector<int> shape, std::vector<S> values,
                      std::vector<Tensor<S>> parents, std::function<void(Node<S>&)> backprop) {
  bool track = g_grad_enabled && any_requires(parents);
  Tensor<S> out = Tensor<S>::from_values(std::move(shape), std::move(values), track);
  if (track) {
    auto node = std::make_shared<Node<S>>();
    node->parents = std::move(parents);
    node->out_shape = out.shape();
    node->out_data = out.data_ptr();
    node->out_grad = out.grad_ptr();
    node->backprop = std::move(backprop);
    out.node = node;
  }
  return out;
}

}  // namespace

template <class S>
Tape<S> build_tape(const Tensor<S>& root) {
  Tape<S> tape;
  if (!root.node) return tape;
  std::unordered_set<const Node<S>*> visited;
  // iterative post-order DFS
  struct Frame {
    Node<S>* node;
    std::size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({root.node.get(), 0});
  visited.insert(root.node.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      Node<S>* p = f.node->parents[f.next_parent].node.get();
      ++f.next_parent;
      if (p != nullptr && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      tape.order.push_back(f.node);
      stack.pop_back();
    }
  }
  return tape;
}

template <class S>
void backward(const Tensor<S>& loss) {
  if (loss.numel() != 1) {
    throw std::runtime_error("backward: loss must be scalar, got shape " +
                             shape_str(loss.shape()));
  }
  if (!loss.node) {
    // loss is a leaf; seeding its own gradient is all there is to do
    if (loss.requires_grad()) {
      const_cast<Tensor<S>&>(loss).grad_vec()[0] += S(1);
    }
    return;
  }
  Tape<S> tape = build_tape(loss);
  // fresh gradients for intermediates; leaves keep accumulating
  for (Node<S>* n : tape.order) {
    if (n->out_grad) std::fill(n->out_grad->begin(), n->out_grad->end(), S(0));
  }
  (*loss.node->out_grad)[0] = S(1);
  for (auto it = tape.order.rbegin(); it != tape.order.rend(); ++it) {
    Node<S>* n = *it;
    if (n->backprop) n->backprop(*n);
  }
}

// ---------------------------------------------------------------------------
// Masks

AttentionMask AttentionMask::full(int r, int c) {
  AttentionMask m;
  m.rows = r;
  m.cols = c;
  m.allow.assign(static_cast<std::size_t>(r) * c, 1);
  return m;
}

AttentionMask AttentionMask::causal(int n) {
  AttentionMask m;
  m.rows = n;
  m.cols = n;
  m.allow.assign(static_cast<std::size_t>(n) * n, 0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j) m.allow[static_cast<std::size_t>(i) * n + j] = 1;
  }
  return m;
}

AttentionMask AttentionMask::padding(int n_real, int n) {
  AttentionMask m;
  m.rows = n;
  m.cols = n;
  m.allow.assign(static_cast<std::size_t>(n) * n, 0);
  for (int i = 0; i < n_real; ++i) {
    for (int j = 0; j < n_real; ++j) m.allow[static_cast<std::size_t>(i) * n + j] = 1;
  }
  return m;
}

AttentionMask AttentionMask::policy(int n_rows) { return causal(n_rows); }

AttentionMask build_mask(MaskKind kind, int n, int n_real) {
  switch (kind) {
    case MaskKind::Causal:
      return AttentionMask::causal(n);
    case MaskKind::Padding:
      return AttentionMask::padding(n_real < 0 ? n : n_real, n);
    case MaskKind::Policy:
      return AttentionMask::policy(n);
  }
  throw std::runtime_error("build_mask: unknown kind");
}

// ---------------------------------------------------------------------------
// Primitives

namespace {

template <class S>
void require_2d(const Tensor<S>& t, const char* op) {
  if (t.shape().size() != 2) {
    throw std::runtime_error(std::string(op) + ": expected 2-D tensor, got shape " +
                             shape_str(t.shape()));
  }
}

template <class S>
void require_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::runtime_error(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
  }
}

}  // namespace

template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  int m = a.rows(), ka = a.cols(), kb = b.rows(), n = b.cols();
  if (ka != kb) {
    throw std::runtime_error("matmul: inner extents differ, " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
  }
  std::vector<S> out(static_cast<std::size_t>(m) * n, S(0));
  const S* pa = a.data();
  const S* pb = b.data();
  for (int i = 0; i < m; ++i) {
    S* out_row = out.data() + static_cast<std::size_t>(i) * n;
    const S* a_row = pa + static_cast<std::size_t>(i) * ka;
    for (int k = 0; k < ka; ++k) {
      S aik = a_row[k];
      if (aik == S(0)) continue;
      const S* b_row = pb + static_cast<std::size_t>(k) * n;
      for (int j = 0; j < n; ++j) out_row[j] += aik * b_row[j];
    }
  }
  return make_output<S>(
      {m, n}, std::move(out), {a, b}, [m, ka, n](Node<S>& nd) {
        const auto& go = *nd.out_grad;
        Tensor<S>& A = nd.parents[0];
        Tensor<S>& B = nd.parents[1];
        if (A.requires_grad()) {
          auto& ga = A.grad_vec();
          const S* pb2 = B.data();
          for (int i = 0; i < m; ++i) {
            const S* go_row = go.data() + static_cast<std::size_t>(i) * n;
            S* ga_row = ga.data() + static_cast<std::size_t>(i) * ka;
            for (int k = 0; k < ka; ++k) {
              const S* b_row = pb2 + static_cast<std::size_t>(k) * n;
              S acc = S(0);
              for (int j = 0; j < n; ++j) acc += go_row[j] * b_row[j];
              ga_row[k] += acc;
            }
          }
        }
        if (B.requires_grad()) {
          auto& gb = B.grad_vec();
          const S* pa2 = A.data();
          for (int i = 0; i < m; ++i) {
            const S* a_row = pa2 + static_cast<std::size_t>(i) * ka;
            const S* go_row = go.data() + static_cast<std::size_t>(i) * n;
            for (int k = 0; k < ka; ++k) {
              S aik = a_row[k];
              if (aik == S(0)) continue;
              S* gb_row = gb.data() + static_cast<std::size_t>(k) * n;
              for (int j = 0; j < n; ++j) gb_row[j] += aik * go_row[j];
            }
          }
        }
      });
}

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  require_same_shape(a, b, "add");
  std::vector<S> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return make_output<S>(a.shape(), std::move(out), {a, b}, [](Node<S>& nd) {
    const auto& go = *nd.out_grad;
    for (int p = 0; p < 2; ++p) {
      Tensor<S>& t = nd.parents[p];
      if (!t.requires_grad()) continue;
      auto& g = t.grad_vec();
      for (std::size_t i = 0; i < go.size(); ++i) g[i] += go[i];
    }
  });
}

template <class S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  require_same_shape(a, b, "sub");
  std::vector<S> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return make_output<S>(a.shape(), std::move(out), {a, b}, [](Node<S>& nd) {
    const auto& go = *nd.out_grad;
    if (nd.parents[0].requires_grad()) {
      auto& g = nd.parents[0].grad_vec();
      for (std::size_t i = 0; i < go.size(); ++i) g[i] += go[i];
    }
    if (nd.parents[1].requires_grad()) {
      auto& g = nd.parents[1].grad_vec();
      for (std::size_t i = 0; i < go.size(); ++i) g[i] -= go[i];
    }
  });
}

template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  require_same_shape(a, b, "mul");
  std::vector<S> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return make_output<S>(a.shape(), std::move(out), {a, b}, [](Node<S>& nd) {
    const auto& go = *nd.out_grad;
    Tensor<S>& A = nd.parents[0];
    Tensor<S>& B = nd.parents[1];
    if (A.requires_grad()) {
      auto& g = A.grad_vec();
      for (std::size_t i = 0; i < go.size(); ++i) g[i] += go[i] * B.data()[i];
    }
    if (B.requires_grad()) {
      auto& g = B.grad_vec();
      for (std::size_t i = 0; i < go.size(); ++i) g[i] += go[i] * A.data()[i];
    }
  });
}

template <class S>
Tensor<S> scale(const Tensor<S>& a, S c) {
  std::vector<S> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * c;
  return make_output<S>(a.shape(), std::move(out), {a}, [c](Node<S>& nd) {
    if (!nd.parents[0].requires_grad()) return;
    const auto& go = *nd.out_grad;
    auto& g = nd.parents[0].grad_vec();
    for (std::size_t i = 0; i < go.size(); ++i) g[i] += go[i] * c;
  });
}

template <class S>
Tensor<S> add_bias(const Tensor<S>& x, const Tensor<S>& b) {
  require_2d(x, "add_bias");
  if (b.rows() != 1 || b.cols() != x.cols()) {
    throw std::runtime_error("add_bias: bias " + shape_str(b.shape()) + " does not broadcast over " +
                             shape_str(x.shape()));
  }
  int m = x.rows(), n = x.cols();
  std::vector<S> out(x.numel());
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      out[static_cast<std::size_t>(i) * n + j] = x.data()[static_cast<std::size_t>(i) * n + j] + b.data()[j];
    }
  }
  return make_output<S>(x.shape(), std::move(out), {x, b}, [m, n](Node<S>& nd) {
    const auto& go = *nd.out_grad;
    if (nd.parents[0].requires_grad()) {
      auto& g = nd.parents[0].grad_vec();
      for (std::size_t i = 0; i < go.size(); ++i) g[i] += go[i];
    }
    if (nd.parents[1].requires_grad()) {
      auto& g = nd.parents[1].grad_vec();
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) g[j] += go[static_cast<std::size_t>(i) * n + j];
      }
    }
  });
}

template <class S>
Tensor<S> softmax_rows(const Tensor<S>& x) {
  require_2d(x, "softmax");
  int m = x.rows(), n = x.cols();
  std::vector<S> out(x.numel());
  for (int i = 0; i < m; ++i) {
    const S* row = x.data() + static_cast<std::size_t>(i) * n;
    S* orow = out.data() + static_cast<std::size_t>(i) * n;
    S mx = row[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    S sum = S(0);
    for (int j = 0; j < n; ++j) {
      orow[j] = std::exp(row[j] - mx);
      sum += orow[j];
    }
    for (int j = 0; j < n; ++j) orow[j] /= sum;
  }
  std::vector<S> saved = out;
  return make_output<S>(x.shape(), std::move(out), {x}, [m, n, saved](Node<S>& nd) {
    if (!nd.parents[0].requires_grad()) return;
    const auto& go = *nd.out_grad;
    auto& g = nd.parents[0].grad_vec();
    for (int i = 0; i < m; ++i) {
      const S* y = saved.data() + static_cast<std::size_t>(i) * n;
      const S* dy = go.data() + static_cast<std::size_t>(i) * n;
      S dot = S(0);
      for (int j = 0; j < n; ++j) dot += dy[j] * y[j];
      S* gr = g.data() + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) gr[j] += y[j] * (dy[j] - dot);
    }
  });
}

template <class S>
Tensor<S> multi_head_attention(const Tensor<S>& q, const Tensor<S>& k, const Tensor<S>& v,
                               int n_heads, const AttentionMask& mask) {
  require_2d(q, "attention");
  require_2d(k, "attention");
  require_2d(v, "attention");
  int tq = q.rows(), tk = k.rows(), d = q.cols();
  if (k.cols() != d || v.cols() != d || v.rows() != tk) {
    throw std::runtime_error("attention: incompatible shapes q" + shape_str(q.shape()) + " k" +
                             shape_str(k.shape()) + " v" + shape_str(v.shape()));
  }
  if (d % n_heads != 0) {
    throw std::runtime_error("attention: width " + std::to_string(d) + " not divisible by " +
                             std::to_string(n_heads) + " heads");
  }
  if (mask.rows != tq || mask.cols != tk) {
    throw std::runtime_error("attention: mask [" + std::to_string(mask.rows) + "," +
                             std::to_string(mask.cols) + "] does not cover q" +
                             shape_str(q.shape()) + " x k" + shape_str(k.shape()));
  }
  int dh = d / n_heads;
  S inv_sqrt = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));

  // attention weights per head, zero where masked; kept for backward
  std::vector<S> weights(static_cast<std::size_t>(n_heads) * tq * tk, S(0));
  std::vector<S> out(static_cast<std::size_t>(tq) * d, S(0));
  std::vector<S> scores(tk);

  for (int h = 0; h < n_heads; ++h) {
    int off = h * dh;
    for (int i = 0; i < tq; ++i) {
      const S* qi = q.data() + static_cast<std::size_t>(i) * d + off;
      S mx = S(0);
      bool any = false;
      for (int j = 0; j < tk; ++j) {
        if (!mask.at(i, j)) continue;
        const S* kj = k.data() + static_cast<std::size_t>(j) * d + off;
        S s = S(0);
        for (int c = 0; c < dh; ++c) s += qi[c] * kj[c];
        s *= inv_sqrt;
        scores[j] = s;
        mx = any ? std::max(mx, s) : s;
        any = true;
      }
      if (!any) continue;  // fully masked query row stays zero
      S sum = S(0);
      S* wrow = weights.data() + (static_cast<std::size_t>(h) * tq + i) * tk;
      for (int j = 0; j < tk; ++j) {
        if (!mask.at(i, j)) continue;
        wrow[j] = std::exp(scores[j] - mx);
        sum += wrow[j];
      }
      S* orow = out.data() + static_cast<std::size_t>(i) * d + off;
      for (int j = 0; j < tk; ++j) {
        if (!mask.at(i, j)) continue;
        wrow[j] /= sum;
        const S* vj = v.data() + static_cast<std::size_t>(j) * d + off;
        S w = wrow[j];
        for (int c = 0; c < dh; ++c) orow[c] += w * vj[c];
      }
    }
  }

  AttentionMask mask_copy = mask;
  return make_output<S>(
      {tq, d}, std::move(out), {q, k, v},
      [tq, tk, d, dh, n_heads, inv_sqrt, weights = std::move(weights),
       mask = std::move(mask_copy)](Node<S>& nd) {
        const auto& go = *nd.out_grad;
        Tensor<S>& Q = nd.parents[0];
        Tensor<S>& K = nd.parents[1];
        Tensor<S>& V = nd.parents[2];
        std::vector<S> dp(tk);
        for (int h = 0; h < n_heads; ++h) {
          int off = h * dh;
          for (int i = 0; i < tq; ++i) {
            const S* wrow = weights.data() + (static_cast<std::size_t>(h) * tq + i) * tk;
            const S* go_row = go.data() + static_cast<std::size_t>(i) * d + off;
            // dP and the softmax Jacobian applied to it
            S dot = S(0);
            for (int j = 0; j < tk; ++j) {
              if (!mask.at(i, j)) continue;
              const S* vj = V.data() + static_cast<std::size_t>(j) * d + off;
              S acc = S(0);
              for (int c = 0; c < dh; ++c) acc += go_row[c] * vj[c];
              dp[j] = acc;
              dot += acc * wrow[j];
            }
            for (int j = 0; j < tk; ++j) {
              if (!mask.at(i, j)) continue;
              S ds = wrow[j] * (dp[j] - dot) * inv_sqrt;
              if (Q.requires_grad()) {
                S* gq = Q.grad_vec().data() + static_cast<std::size_t>(i) * d + off;
                const S* kj = K.data() + static_cast<std::size_t>(j) * d + off;
                for (int c = 0; c < dh; ++c) gq[c] += ds * kj[c];
              }
              if (K.requires_grad()) {
                S* gk = K.grad_vec().data() + static_cast<std::size_t>(j) * d + off;
                const S* qi = Q.data() + static_cast<std::size_t>(i) * d + off;
                for (int c = 0; c < dh; ++c) gk[c] += ds * qi[c];
              }
              if (V.requires_grad()) {
                S* gv = V.grad_vec().data() + static_cast<std::size_t>(j) * d + off;
                S w = wrow[j];
                for (int c = 0; c < dh; ++c) gv[c] += w * go_row[c];
              }
            }
          }
        }
      });
}

template <class S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gain, const Tensor<S>& bias,
                     double eps) {
  require_2d(x, "layer_norm");
  int m = x.rows(), n = x.cols();
  if (gain.numel() != static_cast<std::size_t>(n) || bias.numel() != static_cast<std::size_t>(n)) {
    throw std::runtime_error("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" +
                             shape_str(bias.shape()) + " do not match width of " +
                             shape_str(x.shape()));
  }
  std::vector<S> out(x.numel());
  std::vector<S> xhat(x.numel());
  std::vector<S> inv_std(m);
  for (int i = 0; i < m; ++i) {
    const S* row = x.data() + static_cast<std::size_t>(i) * n;
    S mean = S(0);
    for (int j = 0; j < n; ++j) mean += row[j];
    mean /= static_cast<S>(n);
    S var = S(0);
    for (int j = 0; j < n; ++j) {
      S dv = row[j] - mean;
      var += dv * dv;
    }
    var /= static_cast<S>(n);
    S is = static_cast<S>(1.0 / std::sqrt(static_cast<double>(var) + eps));
    inv_std[i] = is;
    for (int j = 0; j < n; ++j) {
      std::size_t idx = static_cast<std::size_t>(i) * n + j;
      xhat[idx] = (row[j] - mean) * is;
      out[idx] = xhat[idx] * gain.data()[j] + bias.data()[j];
    }
  }
  return make_output<S>(
      x.shape(), std::move(out), {x, gain, bias},
      [m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<S>& nd) {
        const auto& go = *nd.out_grad;
        Tensor<S>& X = nd.parents[0];
        Tensor<S>& G = nd.parents[1];
        Tensor<S>& B = nd.parents[2];
        for (int i = 0; i < m; ++i) {
          const S* dy = go.data() + static_cast<std::size_t>(i) * n;
          const S* xh = xhat.data() + static_cast<std::size_t>(i) * n;
          if (G.requires_grad()) {
            auto& gg = G.grad_vec();
            for (int j = 0; j < n; ++j) gg[j] += dy[j] * xh[j];
          }
          if (B.requires_grad()) {
            auto& gb = B.grad_vec();
            for (int j = 0; j < n; ++j) gb[j] += dy[j];
          }
          if (X.requires_grad()) {
            S mean_dxhat = S(0), mean_dxhat_xhat = S(0);
            std::vector<S> dxhat(n);
            for (int j = 0; j < n; ++j) {
              dxhat[j] = dy[j] * G.data()[j];
              mean_dxhat += dxhat[j];
              mean_dxhat_xhat += dxhat[j] * xh[j];
            }
            mean_dxhat /= static_cast<S>(n);
            mean_dxhat_xhat /= static_cast<S>(n);
            S* gx = X.grad_vec().data() + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) {
              gx[j] += inv_std[i] * (dxhat[j] - mean_dxhat - xh[j] * mean_dxhat_xhat);
            }
          }
        }
      });
}

template <class S>
Tensor<S> gelu(const Tensor<S>& x) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  std::vector<S> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double xv = static_cast<double>(x.data()[i]);
    double t = std::tanh(kC * (xv + kA * xv * xv * xv));
    out[i] = static_cast<S>(0.5 * xv * (1.0 + t));
  }
  return make_output<S>(x.shape(), std::move(out), {x}, [](Node<S>& nd) {
    if (!nd.parents[0].requires_grad()) return;
    const auto& go = *nd.out_grad;
    Tensor<S>& X = nd.parents[0];
    auto& g = X.grad_vec();
    for (std::size_t i = 0; i < go.size(); ++i) {
      double xv = static_cast<double>(X.data()[i]);
      double u = kC * (xv + kA * xv * xv * xv);
      double t = std::tanh(u);
      double du = kC * (1.0 + 3.0 * kA * xv * xv);
      double d = 0.5 * (1.0 + t) + 0.5 * xv * (1.0 - t * t) * du;
      g[i] += go[i] * static_cast<S>(d);
    }
  });
}

template <class S>
Tensor<S> embedding_lookup(const Tensor<S>& table, const std::vector<int>& ids) {
  require_2d(table, "embedding_lookup");
  if (ids.empty()) throw std::runtime_error("embedding_lookup: empty id list");
  int n = table.cols(), rows = table.rows();
  std::vector<S> out(ids.size() * static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    int id = ids[i];
    if (id < 0 || id >= rows) {
      throw std::runtime_error("embedding_lookup: id " + std::to_string(id) +
                               " out of range for table " + shape_str(table.shape()));
    }
    const S* row = table.data() + static_cast<std::size_t>(id) * n;
    std::copy(row, row + n, out.begin() + static_cast<std::ptrdiff_t>(i * n));
  }
  return make_output<S>({static_cast<int>(ids.size()), n}, std::move(out), {table},
                        [ids, n](Node<S>& nd) {
                          if (!nd.parents[0].requires_grad()) return;
                          const auto& go = *nd.out_grad;
                          auto& g = nd.parents[0].grad_vec();
                          for (std::size_t i = 0; i < ids.size(); ++i) {
                            S* grow = g.data() + static_cast<std::size_t>(ids[i]) * n;
                            const S* gorow = go.data() + i * static_cast<std::size_t>(n);
                            for (int j = 0; j < n; ++j) grow[j] += gorow[j];
                          }
                        });
}

template <class S>
Tensor<S> concat(const Tensor<S>& a, const Tensor<S>& b, int axis) {
  require_2d(a, "concat");
  require_2d(b, "concat");
  if (axis != 0 && axis != 1) throw std::runtime_error("concat: axis must be 0 or 1");
  int am = a.rows(), an = a.cols(), bm = b.rows(), bn = b.cols();
  if (axis == 0 ? an != bn : am != bm) {
    throw std::runtime_error("concat: shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()) + " do not align on axis " +
                             std::to_string(axis));
  }
  int m = axis == 0 ? am + bm : am;
  int n = axis == 0 ? an : an + bn;
  std::vector<S> out(static_cast<std::size_t>(m) * n);
  if (axis == 0) {
    std::copy(a.data(), a.data() + a.numel(), out.begin());
    std::copy(b.data(), b.data() + b.numel(), out.begin() + static_cast<std::ptrdiff_t>(a.numel()));
  } else {
    for (int i = 0; i < m; ++i) {
      std::copy(a.data() + static_cast<std::size_t>(i) * an, a.data() + static_cast<std::size_t>(i + 1) * an,
                out.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(i) * n));
      std::copy(b.data() + static_cast<std::size_t>(i) * bn, b.data() + static_cast<std::size_t>(i + 1) * bn,
                out.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(i) * n + an));
    }
  }
  return make_output<S>({m, n}, std::move(out), {a, b}, [axis, am, an, bn, m, n](Node<S>& nd) {
    const auto& go = *nd.out_grad;
    Tensor<S>& A = nd.parents[0];
    Tensor<S>& B = nd.parents[1];
    if (axis == 0) {
      std::size_t na = A.numel();
      if (A.requires_grad()) {
        auto& g = A.grad_vec();
        for (std::size_t i = 0; i < na; ++i) g[i] += go[i];
      }
      if (B.requires_grad()) {
        auto& g = B.grad_vec();
        for (std::size_t i = 0; i < B.numel(); ++i) g[i] += go[na + i];
      }
    } else {
      for (int i = 0; i < m; ++i) {
        const S* gorow = go.data() + static_cast<std::size_t>(i) * n;
        if (A.requires_grad()) {
          S* g = A.grad_vec().data() + static_cast<std::size_t>(i) * an;
          for (int j = 0; j < an; ++j) g[j] += gorow[j];
        }
        if (B.requires_grad()) {
          S* g = B.grad_vec().data() + static_cast<std::size_t>(i) * bn;
          for (int j = 0; j < bn; ++j) g[j] += gorow[an + j];
        }
      }
    }
  });
}

template <class S>
Tensor<S> mean_all(const Tensor<S>& x) {
  S sum = S(0);
  for (std::size_t i = 0; i < x.numel(); ++i) sum += x.data()[i];
  std::size_t n = x.numel();
  sum /= static_cast<S>(n);
  return make_output<S>({1, 1}, {sum}, {x}, [n](Node<S>& nd) {
    if (!nd.parents[0].requires_grad()) return;
    S g = (*nd.out_grad)[0] / static_cast<S>(n);
    auto& gx = nd.parents[0].grad_vec();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
  });
}

template <class S>
Tensor<S> mean_rows(const Tensor<S>& x) {
  require_2d(x, "mean_rows");
  int m = x.rows(), n = x.cols();
  std::vector<S> out(static_cast<std::size_t>(n), S(0));
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) out[j] += x.data()[static_cast<std::size_t>(i) * n + j];
  }
  for (int j = 0; j < n; ++j) out[j] /= static_cast<S>(m);
  return make_output<S>({1, n}, std::move(out), {x}, [m, n](Node<S>& nd) {
    if (!nd.parents[0].requires_grad()) return;
    const auto& go = *nd.out_grad;
    auto& g = nd.parents[0].grad_vec();
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < n; ++j) g[static_cast<std::size_t>(i) * n + j] += go[j] / static_cast<S>(m);
    }
  });
}

template <class S>
Tensor<S> cross_entropy_with_logits(const Tensor<S>& logits, const std::vector<int>& targets,
                                    int ignore_index) {
  require_2d(logits, "cross_entropy");
  int m = logits.rows(), n = logits.cols();
  if (static_cast<int>(targets.size()) != m) {
    throw std::runtime_error("cross_entropy: " + std::to_string(targets.size()) +
                             " targets for logits " + shape_str(logits.shape()));
  }
  std::vector<S> probs(logits.numel());
  double total = 0.0;
  int counted = 0;
  for (int i = 0; i < m; ++i) {
    const S* row = logits.data() + static_cast<std::size_t>(i) * n;
    S* prow = probs.data() + static_cast<std::size_t>(i) * n;
    S mx = row[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (int j = 0; j < n; ++j) {
      prow[j] = std::exp(row[j] - mx);
      sum += static_cast<double>(prow[j]);
    }
    for (int j = 0; j < n; ++j) prow[j] = static_cast<S>(static_cast<double>(prow[j]) / sum);
    int t = targets[i];
    if (t == ignore_index) continue;
    if (t < 0 || t >= n) {
      throw std::runtime_error("cross_entropy: target " + std::to_string(t) +
                               " out of range for " + std::to_string(n) + " classes");
    }
    total += -(static_cast<double>(row[t]) - static_cast<double>(mx) - std::log(sum));
    ++counted;
  }
  if (counted == 0) throw std::runtime_error("cross_entropy: all targets ignored");
  S loss = static_cast<S>(total / counted);
  return make_output<S>(
      {1, 1}, {loss}, {logits},
      [m, n, targets, ignore_index, counted, probs = std::move(probs)](Node<S>& nd) {
        if (!nd.parents[0].requires_grad()) return;
        S gout = (*nd.out_grad)[0];
        auto& g = nd.parents[0].grad_vec();
        for (int i = 0; i < m; ++i) {
          int t = targets[i];
          if (t == ignore_index) continue;
          const S* prow = probs.data() + static_cast<std::size_t>(i) * n;
          S* grow = g.data() + static_cast<std::size_t>(i) * n;
          for (int j = 0; j < n; ++j) {
            S delta = (j == t) ? S(1) : S(0);
            grow[j] += gout * (prow[j] - delta) / static_cast<S>(counted);
          }
        }
      });
}

template <class S>
Tensor<S> squared_l2(const Tensor<S>& x) {
  S sum = S(0);
  for (std::size_t i = 0; i < x.numel(); ++i) sum += x.data()[i] * x.data()[i];
  return make_output<S>({1, 1}, {sum}, {x}, [](Node<S>& nd) {
    if (!nd.parents[0].requires_grad()) return;
    S gout = (*nd.out_grad)[0];
    Tensor<S>& X = nd.parents[0];
    auto& g = X.grad_vec();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += gout * S(2) * X.data()[i];
  });
}

template <class S>
Tensor<S> l2_normalize_rows(const Tensor<S>& x) {
  require_2d(x, "l2_normalize");
  int m = x.rows(), n = x.cols();
  std::vector<S> out(x.numel());
  std::vector<S> inv_norm(m);
  for (int i = 0; i < m; ++i) {
    const S* row = x.data() + static_cast<std::size_t>(i) * n;
    double sq = 0.0;
    for (int j = 0; j < n; ++j) sq += static_cast<double>(row[j]) * static_cast<double>(row[j]);
    double norm = std::sqrt(sq);
    if (norm == 0.0) throw std::runtime_error("l2_normalize: zero row cannot be normalized");
    inv_norm[i] = static_cast<S>(1.0 / norm);
    for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(i) * n + j] = row[j] * inv_norm[i];
  }
  std::vector<S> saved = out;
  return make_output<S>(x.shape(), std::move(out), {x},
                        [m, n, saved = std::move(saved), inv_norm = std::move(inv_norm)](Node<S>& nd) {
                          if (!nd.parents[0].requires_grad()) return;
                          const auto& go = *nd.out_grad;
                          auto& g = nd.parents[0].grad_vec();
                          for (int i = 0; i < m; ++i) {
                            const S* y = saved.data() + static_cast<std::size_t>(i) * n;
                            const S* dy = go.data() + static_cast<std::size_t>(i) * n;
                            S dot = S(0);
                            for (int j = 0; j < n; ++j) dot += y[j] * dy[j];
                            S* gr = g.data() + static_cast<std::size_t>(i) * n;
                            for (int j = 0; j < n; ++j) gr[j] += (dy[j] - y[j] * dot) * inv_norm[i];
                          }
                        });
}

template <class S>
Tensor<S> stop_gradient(const Tensor<S>& x) {
  return Tensor<S>::wrap(x.shape(), x.data_ptr(), /*requires_grad=*/false);
}

template <class S>
Tensor<S> slice_rows(const Tensor<S>& x, int start, int count) {
  require_2d(x, "slice_rows");
  int m = x.rows(), n = x.cols();
  if (start < 0 || count <= 0 || start + count > m) {
    throw std::runtime_error("slice_rows: range [" + std::to_string(start) + "," +
                             std::to_string(start + count) + ") out of " + shape_str(x.shape()));
  }
  std::vector<S> out(static_cast<std::size_t>(count) * n);
  std::copy(x.data() + static_cast<std::size_t>(start) * n,
            x.data() + static_cast<std::size_t>(start + count) * n, out.begin());
  return make_output<S>({count, n}, std::move(out), {x}, [start, count, n](Node<S>& nd) {
    if (!nd.parents[0].requires_grad()) return;
    const auto& go = *nd.out_grad;
    auto& g = nd.parents[0].grad_vec();
    for (std::size_t i = 0; i < static_cast<std::size_t>(count) * n; ++i) {
      g[static_cast<std::size_t>(start) * n + i] += go[i];
    }
  });
}

template <class S>
Tensor<S> dropout(const Tensor<S>& x, double rate, Prng& rng) {
  if (rate <= 0.0) return x;
  if (rate >= 1.0) throw std::runtime_error("dropout: rate must be < 1");
  S keep_scale = static_cast<S>(1.0 / (1.0 - rate));
  std::vector<S> mask(x.numel());
  std::vector<S> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    mask[i] = rng.uniform() < rate ? S(0) : keep_scale;
    out[i] = x.data()[i] * mask[i];
  }
  return make_output<S>(x.shape(), std::move(out), {x}, [mask = std::move(mask)](Node<S>& nd) {
    if (!nd.parents[0].requires_grad()) return;
    const auto& go = *nd.out_grad;
    auto& g = nd.parents[0].grad_vec();
    for (std::size_t i = 0; i < go.size(); ++i) g[i] += go[i] * mask[i];
  });
}

// ---------------------------------------------------------------------------
// Adam

template <class S>
void adam_step(std::vector<NamedTensor<S>>& params, OptimizerState<S>& state) {
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i].tensor.numel(), S(0));
      state.v[i].assign(params[i].tensor.numel(), S(0));
    }
  }
  if (state.m.size() != params.size()) {
    throw std::runtime_error("adam: optimizer state tracks " + std::to_string(state.m.size()) +
                             " parameters, got " + std::to_string(params.size()));
  }
  ++state.step;
  double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params[pi];
    if (state.m[pi].size() != p.tensor.numel()) {
      throw std::runtime_error("adam: state shape mismatch for parameter " + p.name);
    }
    if (!p.tensor.has_grad()) continue;
    const auto& g = p.tensor.grad_vec();
    auto& m = state.m[pi];
    auto& v = state.v[pi];
    S* w = p.tensor.data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      double gi = static_cast<double>(g[i]);
      if (!std::isfinite(gi)) {
        throw std::runtime_error("adam: non-finite gradient in parameter " + p.name);
      }
      double mi = state.beta1 * static_cast<double>(m[i]) + (1.0 - state.beta1) * gi;
      double vi = state.beta2 * static_cast<double>(v[i]) + (1.0 - state.beta2) * gi * gi;
      m[i] = static_cast<S>(mi);
      v[i] = static_cast<S>(vi);
      double mhat = mi / bc1;
      double vhat = vi / bc2;
      w[i] = static_cast<S>(static_cast<double>(w[i]) - state.lr * mhat / (std::sqrt(vhat) + state.eps));
    }
  }
}

template <class S>
double clip_grad_norm(std::vector<NamedTensor<S>>& params, double max_norm) {
  double sq = 0.0;
  for (auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    for (S g : p.tensor.grad_vec()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    S factor = static_cast<S>(max_norm / norm);
    for (auto& p : params) {
      if (!p.tensor.has_grad()) continue;
      for (S& g : p.tensor.grad_vec()) g *= factor;
    }
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Gradcheck

double gradcheck(const std::function<Tensor<double>()>& make_loss,
                 const std::vector<Tensor<double>>& points, double step) {
  for (const auto& p : points) {
    const_cast<Tensor<double>&>(p).zero_grad();
  }
  Tensor<double> loss = make_loss();
  if (!std::isfinite(loss.item())) throw std::runtime_error("gradcheck: non-finite loss");
  backward(loss);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(points.size());
  for (const auto& p : points) {
    analytic.push_back(p.has_grad() ? p.grad_vec() : std::vector<double>(p.numel(), 0.0));
  }

  double max_rel = 0.0;
  for (std::size_t pi = 0; pi < points.size(); ++pi) {
    auto& p = const_cast<Tensor<double>&>(points[pi]);
    for (std::size_t i = 0; i < p.numel(); ++i) {
      double saved = p.data()[i];
      double fplus, fminus;
      {
        NoGradGuard ng;
        p.data()[i] = saved + step;
        fplus = make_loss().item();
        p.data()[i] = saved - step;
        fminus = make_loss().item();
      }
      p.data()[i] = saved;
      if (!std::isfinite(fplus) || !std::isfinite(fminus)) {
        throw std::runtime_error("gradcheck: non-finite perturbed loss");
      }
      double central = (fplus - fminus) / (2.0 * step);
      double a = analytic[pi][i];
      double rel = std::abs(a - central) / std::max(1.0, std::abs(a));
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

double gradcheck(const std::function<Tensor<double>()>& make_loss, const Tensor<double>& point,
                 double step) {
  return gradcheck(make_loss, std::vector<Tensor<double>>{point}, step);
}

// ---------------------------------------------------------------------------
// Explicit instantiations

#define LATACT_INSTANTIATE(S)                                                                  \
  template class Tensor<S>;                                                                    \
  template Tape<S> build_tape(const Tensor<S>&);                                               \
  template void backward(const Tensor<S>&);                                                    \
  template Tensor<S> matmul(const Tensor<S>&, const Tensor<S>&);                               \
  template Tensor<S> add(const Tensor<S>&, const Tensor<S>&);                                  \
  template Tensor<S> sub(const Tensor<S>&, const Tensor<S>&);                                  \
  template Tensor<S> mul(const Tensor<S>&, const Tensor<S>&);                                  \
  template Tensor<S> scale(const Tensor<S>&, S);                                               \
  template Tensor<S> add_bias(const Tensor<S>&, const Tensor<S>&);                             \
  template Tensor<S> softmax_rows(const Tensor<S>&);                                           \
  template Tensor<S> multi_head_attention(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, \
                                          int, const AttentionMask&);                          \
  template Tensor<S> layer_norm(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, double); \
  template Tensor<S> gelu(const Tensor<S>&);                                                   \
  template Tensor<S> embedding_lookup(const Tensor<S>&, const std::vector<int>&);              \
  template Tensor<S> concat(const Tensor<S>&, const Tensor<S>&, int);                          \
  template Tensor<S> mean_all(const Tensor<S>&);                                               \
  template Tensor<S> mean_rows(const Tensor<S>&);                                              \
  template Tensor<S> cross_entropy_with_logits(const Tensor<S>&, const std::vector<int>&, int); \
  template Tensor<S> squared_l2(const Tensor<S>&);                                             \
  template Tensor<S> l2_normalize_rows(const Tensor<S>&);                                      \
  template Tensor<S> stop_gradient(const Tensor<S>&);                                          \
  template Tensor<S> slice_rows(const Tensor<S>&, int, int);                                   \
  template Tensor<S> dropout(const Tensor<S>&, double, Prng&);                                 \
  template void adam_step(std::vector<NamedTensor<S>>&, OptimizerState<S>&);                   \
  template double clip_grad_norm(std::vector<NamedTensor<S>>&, double);

LATACT_INSTANTIATE(float)
LATACT_INSTANTIATE(double)

#undef LATACT_INSTANTIATE

}  // namespace latact
