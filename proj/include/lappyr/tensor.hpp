#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace lappyr {

enum class Padding { reflect, zero };

struct ConvSpec {
  int kh = 3;
  int kw = 3;
  int stride = 1;
  Padding padding = Padding::reflect;
  // Optional channel declaration; 0 means "take from the weight tensor".
  int in_channels = 0;
  int out_channels = 0;
};

template <typename T>
struct Tensor;

// One node of the (acyclic) operation graph. Ops fill `parents` and
// `backprop`; `backprop` reads this node's grad and accumulates into the
// parents' grads.
template <typename T>
struct TensorNode {
  std::vector<int> shape;
  std::vector<T> values;
  std::vector<T> grad;  // empty until first needed; same length as values after
  bool requires_grad = false;  // leaf parameter flag
  bool tracked = false;        // true if a requires_grad leaf is reachable
  std::vector<Tensor<T>> parents;
  std::function<void(TensorNode<T>&)> backprop;

  std::int64_t numel() const { return static_cast<std::int64_t>(values.size()); }
  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), T(0));
  }
};

// Value-semantic handle onto a shared graph node. An empty handle is a valid
// "absent" tensor (used e.g. for bias-free convolutions).
template <typename T>
struct Tensor {
  std::shared_ptr<TensorNode<T>> node;

  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, T value, bool requires_grad = false);
  static Tensor from_data(std::vector<int> shape, std::vector<T> values,
                          bool requires_grad = false);
  static Tensor scalar(T value);

  bool defined() const { return node != nullptr; }
  const std::vector<int>& shape() const { return node->shape; }
  int dim(int i) const { return node->shape[static_cast<std::size_t>(i)]; }
  std::int64_t numel() const { return node->numel(); }

  std::span<T> data() { return {node->values.data(), node->values.size()}; }
  std::span<const T> data() const { return {node->values.data(), node->values.size()}; }

  bool requires_grad() const { return node->requires_grad; }
  bool has_grad() const { return !node->grad.empty(); }
  std::span<T> grad() {
    node->ensure_grad();
    return {node->grad.data(), node->grad.size()};
  }
  std::span<const T> grad() const { return {node->grad.data(), node->grad.size()}; }
  void zero_grad() {
    if (!node->grad.empty()) std::fill(node->grad.begin(), node->grad.end(), T(0));
  }

  T item() const;

  // Reverse-mode sweep from this scalar. Leaf gradients accumulate across
  // repeated calls unless zero_grad() is used in between.
  void backward() const;
};

// Thread-local switch; ops built while disabled do not record the graph.
bool grad_enabled();
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// ---- operations ----------------------------------------------------------

// Cross-correlation. x: [N,Ci,H,W], w: [Co,Ci,kh,kw], bias: [Co] or empty.
// Stride 1 uses "same" padding (odd kernels only); stride 2 halves even
// extents. Differentiable in x, w and bias.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                 const ConvSpec& spec);

// Adjoint of the stride-2 zero-padded conv2d with the same kernel extents.
// x: [N,Ci,H,W], w: [Ci,Co,kh,kw] -> [N,Co,2H,2W].
template <typename T>
Tensor<T> conv2d_transpose(const Tensor<T>& x, const Tensor<T>& w, const ConvSpec& spec);

template <typename T>
Tensor<T> elu(const Tensor<T>& x, T alpha = T(1));

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);

// 2x2 average pooling, stride 2; extents must be even.
template <typename T>
Tensor<T> avg_pool2(const Tensor<T>& x);

// Anisotropic L1 total variation, summed over batch and channels.
// Subgradient at zero difference is zero.
template <typename T>
Tensor<T> total_variation(const Tensor<T>& x);

// mean((a - b)^2) over all elements.
template <typename T>
Tensor<T> mse(const Tensor<T>& a, const Tensor<T>& b) {
  Tensor<T> d = sub(a, b);
  return mean(mul(d, d));
}

template <typename T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }

namespace detail {

// Wires a new graph node. Parents/backprop are dropped when no input is on a
// gradient path or grads are globally disabled.
template <typename T>
Tensor<T> make_node(std::vector<int> shape, std::vector<T> values,
                    std::vector<Tensor<T>> parents,
                    std::function<void(TensorNode<T>&)> backprop);

template <typename T>
bool on_grad_path(const Tensor<T>& t);

}  // namespace detail

extern template struct Tensor<float>;
extern template struct Tensor<double>;

}  // namespace lappyr
