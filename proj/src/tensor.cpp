#include "lappyr/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <unordered_set>

namespace lappyr {

namespace {

thread_local bool g_grad_enabled = true;

std::string shape_str(const std::vector<int>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

void check(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

std::int64_t product(const std::vector<int>& s) {
  std::int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

// Mirrored index with edge repeat: valid for any pad (bounces as needed).
int reflect_index(int i, int n) {
  while (i < 0 || i >= n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - 1 - i;
  }
  return i;
}

// Stride-1 convs keep extents ("same"); stride-2 convs halve even extents.
int same_pad(int k, int stride, const char* axis) {
  if (stride == 1) {
    check(k % 2 == 1, std::string("conv2d: stride-1 kernel extent ") + axis +
                          "=" + std::to_string(k) + " must be odd");
    return (k - 1) / 2;
  }
  return k % 2 == 0 ? (k - 2) / 2 : (k - 1) / 2;
}

struct ConvGeom {
  int N, Ci, H, W, Co, kh, kw, stride, ph, pw, Hp, Wp, Ho, Wo;
  Padding padding;
};

// Padded copy of x, [N,Ci,Hp,Wp].
template <typename T>
std::shared_ptr<std::vector<T>> pad_input(const Tensor<T>& x, const ConvGeom& g) {
  auto out = std::make_shared<std::vector<T>>(
      static_cast<std::size_t>(g.N) * g.Ci * g.Hp * g.Wp, T(0));
  const T* src = x.data().data();
  T* dst = out->data();
  for (int n = 0; n < g.N; ++n) {
    for (int c = 0; c < g.Ci; ++c) {
      const T* sp = src + (static_cast<std::size_t>(n) * g.Ci + c) * g.H * g.W;
      T* dp = dst + (static_cast<std::size_t>(n) * g.Ci + c) * g.Hp * g.Wp;
      for (int y = 0; y < g.Hp; ++y) {
        const int sy = y - g.ph;
        if (g.padding == Padding::zero && (sy < 0 || sy >= g.H)) continue;
        const int ry = g.padding == Padding::zero ? sy : reflect_index(sy, g.H);
        for (int x2 = 0; x2 < g.Wp; ++x2) {
          const int sx = x2 - g.pw;
          if (g.padding == Padding::zero && (sx < 0 || sx >= g.W)) continue;
          const int rx = g.padding == Padding::zero ? sx : reflect_index(sx, g.W);
          dp[y * g.Wp + x2] = sp[ry * g.W + rx];
        }
      }
    }
  }
  return out;
}

// Adjoint of pad_input: folds a padded-gradient buffer back onto dx.
template <typename T>
void fold_pad_grad(std::span<T> dx, const std::vector<T>& dxpad, const ConvGeom& g) {
  for (int n = 0; n < g.N; ++n) {
    for (int c = 0; c < g.Ci; ++c) {
      const T* sp = dxpad.data() + (static_cast<std::size_t>(n) * g.Ci + c) * g.Hp * g.Wp;
      T* dp = dx.data() + (static_cast<std::size_t>(n) * g.Ci + c) * g.H * g.W;
      for (int y = 0; y < g.Hp; ++y) {
        const int sy = y - g.ph;
        if (g.padding == Padding::zero && (sy < 0 || sy >= g.H)) continue;
        const int ry = g.padding == Padding::zero ? sy : reflect_index(sy, g.H);
        for (int x2 = 0; x2 < g.Wp; ++x2) {
          const int sx = x2 - g.pw;
          if (g.padding == Padding::zero && (sx < 0 || sx >= g.W)) continue;
          const int rx = g.padding == Padding::zero ? sx : reflect_index(sx, g.W);
          dp[ry * g.W + rx] += sp[y * g.Wp + x2];
        }
      }
    }
  }
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }
NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

namespace detail {

template <typename T>
bool on_grad_path(const Tensor<T>& t) {
  return t.defined() && (t.node->requires_grad || t.node->tracked);
}

template <typename T>
Tensor<T> make_node(std::vector<int> shape, std::vector<T> values,
                    std::vector<Tensor<T>> parents,
                    std::function<void(TensorNode<T>&)> backprop) {
  auto n = std::make_shared<TensorNode<T>>();
  n->shape = std::move(shape);
  n->values = std::move(values);
  check(product(n->shape) == n->numel(),
        "make_node: shape " + shape_str(n->shape) + " does not match value count");
  bool track = g_grad_enabled;
  if (track) {
    track = false;
    for (const auto& p : parents)
      if (on_grad_path(p)) {
        track = true;
        break;
      }
  }
  if (track) {
    n->tracked = true;
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
  }
  Tensor<T> t;
  t.node = std::move(n);
  return t;
}

}  // namespace detail

// ---- factories ------------------------------------------------------------

template <typename T>
Tensor<T> Tensor<T>::zeros(std::vector<int> shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(std::vector<int> shape, T value, bool requires_grad) {
  for (int d : shape) check(d > 0, "tensor extents must be positive, got " + shape_str(shape));
  std::vector<T> v(static_cast<std::size_t>(product(shape)), value);
  return from_data(std::move(shape), std::move(v), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::from_data(std::vector<int> shape, std::vector<T> values,
                               bool requires_grad) {
  for (int d : shape) check(d > 0, "tensor extents must be positive, got " + shape_str(shape));
  check(product(shape) == static_cast<std::int64_t>(values.size()),
        "tensor shape " + shape_str(shape) + " does not match buffer length " +
            std::to_string(values.size()));
  auto n = std::make_shared<TensorNode<T>>();
  n->shape = std::move(shape);
  n->values = std::move(values);
  n->requires_grad = requires_grad;
  Tensor<T> t;
  t.node = std::move(n);
  return t;
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value) {
  return from_data({1}, {value});
}

template <typename T>
T Tensor<T>::item() const {
  check(defined() && numel() == 1, "item: tensor is not a scalar");
  return node->values[0];
}

// ---- backward sweep --------------------------------------------------------

template <typename T>
void Tensor<T>::backward() const {
  check(defined() && numel() == 1, "backward: loss must be a scalar tensor");
  // Reverse post-order over parent edges = topological order from the loss.
  std::vector<TensorNode<T>*> order;
  std::unordered_set<TensorNode<T>*> seen;
  struct Frame {
    TensorNode<T>* n;
    std::size_t next;
  };
  std::vector<Frame> stack;
  seen.insert(node.get());
  stack.push_back({node.get(), 0});
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next < f.n->parents.size()) {
      TensorNode<T>* p = f.n->parents[f.next++].node.get();
      if (p && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(f.n);
      stack.pop_back();
    }
  }
  // Interior grads are scratch for this sweep; leaf grads accumulate.
  for (auto* n : order)
    if (!n->requires_grad) n->grad.assign(n->values.size(), T(0));
  node->ensure_grad();
  node->grad[0] = T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode<T>* n = *it;
    if (n->backprop) n->backprop(*n);
  }
}

// ---- conv2d ----------------------------------------------------------------

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                 const ConvSpec& spec) {
  check(x.defined() && w.defined(), "conv2d: undefined input");
  check(x.shape().size() == 4, "conv2d: input must be [N,C,H,W], got " + shape_str(x.shape()));
  check(w.shape().size() == 4, "conv2d: weight must be [Co,Ci,kh,kw], got " + shape_str(w.shape()));
  check(spec.stride == 1 || spec.stride == 2,
        "conv2d: stride must be 1 or 2, got " + std::to_string(spec.stride));

  ConvGeom g;
  g.N = x.dim(0);
  g.Ci = x.dim(1);
  g.H = x.dim(2);
  g.W = x.dim(3);
  g.Co = w.dim(0);
  g.kh = w.dim(2);
  g.kw = w.dim(3);
  g.stride = spec.stride;
  g.padding = spec.padding;
  check(w.dim(1) == g.Ci, "conv2d: input channel extent " + std::to_string(g.Ci) +
                              " does not match weight channel extent " +
                              std::to_string(w.dim(1)));
  check(g.kh == spec.kh && g.kw == spec.kw,
        "conv2d: weight kernel " + std::to_string(g.kh) + "x" + std::to_string(g.kw) +
            " does not match spec kernel " + std::to_string(spec.kh) + "x" +
            std::to_string(spec.kw));
  if (spec.in_channels) check(spec.in_channels == g.Ci, "conv2d: spec.in_channels mismatch");
  if (spec.out_channels) check(spec.out_channels == g.Co, "conv2d: spec.out_channels mismatch");
  if (bias.defined())
    check(bias.shape() == std::vector<int>{g.Co},
          "conv2d: bias shape " + shape_str(bias.shape()) + " must be [" +
              std::to_string(g.Co) + "]");
  g.ph = same_pad(g.kh, g.stride, "kh");
  g.pw = same_pad(g.kw, g.stride, "kw");
  g.Hp = g.H + 2 * g.ph;
  g.Wp = g.W + 2 * g.pw;
  check(g.Hp >= g.kh && g.Wp >= g.kw, "conv2d: kernel exceeds padded input extents");
  g.Ho = (g.Hp - g.kh) / g.stride + 1;
  g.Wo = (g.Wp - g.kw) / g.stride + 1;

  auto xpad = pad_input(x, g);
  std::vector<T> y(static_cast<std::size_t>(g.N) * g.Co * g.Ho * g.Wo, T(0));
  const T* wd = w.data().data();
  const T* bd = bias.defined() ? bias.data().data() : nullptr;
  for (int n = 0; n < g.N; ++n) {
    for (int co = 0; co < g.Co; ++co) {
      T* yout = y.data() + (static_cast<std::size_t>(n) * g.Co + co) * g.Ho * g.Wo;
      if (bd) std::fill(yout, yout + static_cast<std::size_t>(g.Ho) * g.Wo, bd[co]);
      for (int ci = 0; ci < g.Ci; ++ci) {
        const T* xp = xpad->data() + (static_cast<std::size_t>(n) * g.Ci + ci) * g.Hp * g.Wp;
        const T* wk = wd + (static_cast<std::size_t>(co) * g.Ci + ci) * g.kh * g.kw;
        for (int ky = 0; ky < g.kh; ++ky) {
          for (int kx = 0; kx < g.kw; ++kx) {
            const T wv = wk[ky * g.kw + kx];
            if (wv == T(0)) continue;
            for (int oy = 0; oy < g.Ho; ++oy) {
              const T* xrow = xp + static_cast<std::size_t>(oy * g.stride + ky) * g.Wp + kx;
              T* yrow = yout + static_cast<std::size_t>(oy) * g.Wo;
              if (g.stride == 1) {
                for (int ox = 0; ox < g.Wo; ++ox) yrow[ox] += wv * xrow[ox];
              } else {
                for (int ox = 0; ox < g.Wo; ++ox) yrow[ox] += wv * xrow[2 * ox];
              }
            }
          }
        }
      }
    }
  }

  Tensor<T> xc = x, wc = w, bc = bias;
  auto backprop = [xc, wc, bc, xpad, g](TensorNode<T>& self) {
    const T* dy = self.grad.data();
    if (bc.defined() && detail::on_grad_path(bc)) {
      bc.node->ensure_grad();
      T* db = bc.node->grad.data();
      for (int n = 0; n < g.N; ++n)
        for (int co = 0; co < g.Co; ++co) {
          const T* dyr = dy + (static_cast<std::size_t>(n) * g.Co + co) * g.Ho * g.Wo;
          T acc = T(0);
          for (std::int64_t i = 0; i < static_cast<std::int64_t>(g.Ho) * g.Wo; ++i)
            acc += dyr[i];
          db[co] += acc;
        }
    }
    if (detail::on_grad_path(wc)) {
      wc.node->ensure_grad();
      T* dw = wc.node->grad.data();
      for (int n = 0; n < g.N; ++n) {
        for (int co = 0; co < g.Co; ++co) {
          const T* dyp = dy + (static_cast<std::size_t>(n) * g.Co + co) * g.Ho * g.Wo;
          for (int ci = 0; ci < g.Ci; ++ci) {
            const T* xp = xpad->data() + (static_cast<std::size_t>(n) * g.Ci + ci) * g.Hp * g.Wp;
            T* dwk = dw + (static_cast<std::size_t>(co) * g.Ci + ci) * g.kh * g.kw;
            for (int ky = 0; ky < g.kh; ++ky) {
              for (int kx = 0; kx < g.kw; ++kx) {
                T acc = T(0);
                for (int oy = 0; oy < g.Ho; ++oy) {
                  const T* xrow = xp + static_cast<std::size_t>(oy * g.stride + ky) * g.Wp + kx;
                  const T* dyr = dyp + static_cast<std::size_t>(oy) * g.Wo;
                  if (g.stride == 1) {
                    for (int ox = 0; ox < g.Wo; ++ox) acc += dyr[ox] * xrow[ox];
                  } else {
                    for (int ox = 0; ox < g.Wo; ++ox) acc += dyr[ox] * xrow[2 * ox];
                  }
                }
                dwk[ky * g.kw + kx] += acc;
              }
            }
          }
        }
      }
    }
    if (detail::on_grad_path(xc)) {
      xc.node->ensure_grad();
      std::vector<T> dxpad(static_cast<std::size_t>(g.N) * g.Ci * g.Hp * g.Wp, T(0));
      const T* wd = wc.data().data();
      for (int n = 0; n < g.N; ++n) {
        for (int ci = 0; ci < g.Ci; ++ci) {
          T* dxp = dxpad.data() + (static_cast<std::size_t>(n) * g.Ci + ci) * g.Hp * g.Wp;
          for (int co = 0; co < g.Co; ++co) {
            const T* dyp = dy + (static_cast<std::size_t>(n) * g.Co + co) * g.Ho * g.Wo;
            const T* wk = wd + (static_cast<std::size_t>(co) * g.Ci + ci) * g.kh * g.kw;
            for (int ky = 0; ky < g.kh; ++ky) {
              for (int kx = 0; kx < g.kw; ++kx) {
                const T wv = wk[ky * g.kw + kx];
                if (wv == T(0)) continue;
                for (int oy = 0; oy < g.Ho; ++oy) {
                  T* dxrow = dxp + static_cast<std::size_t>(oy * g.stride + ky) * g.Wp + kx;
                  const T* dyr = dyp + static_cast<std::size_t>(oy) * g.Wo;
                  if (g.stride == 1) {
                    for (int ox = 0; ox < g.Wo; ++ox) dxrow[ox] += wv * dyr[ox];
                  } else {
                    for (int ox = 0; ox < g.Wo; ++ox) dxrow[2 * ox] += wv * dyr[ox];
                  }
                }
              }
            }
          }
        }
      }
      fold_pad_grad(std::span<T>(xc.node->grad.data(), xc.node->grad.size()), dxpad, g);
    }
  };
  std::vector<Tensor<T>> parents{x, w};
  if (bias.defined()) parents.push_back(bias);
  return detail::make_node<T>({g.N, g.Co, g.Ho, g.Wo}, std::move(y), std::move(parents),
                              std::move(backprop));
}

// ---- conv2d_transpose ------------------------------------------------------

namespace {
struct TransGeom {
  int N, Ci, H, W, Co, kh, kw, ct, cl, Ho, Wo;
};

// Inclusive input ranges whose scattered outputs stay in bounds.
inline void trans_range(int k, int c, int in_extent, int out_extent, int& lo, int& hi) {
  lo = (c - k <= 0) ? 0 : (c - k + 1) / 2;
  const int numer = out_extent - 1 - k + c;
  hi = numer < 0 ? -1 : std::min(in_extent - 1, numer / 2);
}
}  // namespace

template <typename T>
Tensor<T> conv2d_transpose(const Tensor<T>& x, const Tensor<T>& w, const ConvSpec& spec) {
  check(x.defined() && w.defined(), "conv2d_transpose: undefined input");
  check(spec.stride == 2, "conv2d_transpose: stride must be 2");
  check(x.shape().size() == 4,
        "conv2d_transpose: input must be [N,C,H,W], got " + shape_str(x.shape()));
  check(w.shape().size() == 4,
        "conv2d_transpose: weight must be [Ci,Co,kh,kw], got " + shape_str(w.shape()));

  TransGeom g;
  g.N = x.dim(0);
  g.Ci = x.dim(1);
  g.H = x.dim(2);
  g.W = x.dim(3);
  g.Co = w.dim(1);
  g.kh = w.dim(2);
  g.kw = w.dim(3);
  check(w.dim(0) == g.Ci, "conv2d_transpose: input channel extent " + std::to_string(g.Ci) +
                              " does not match weight channel extent " +
                              std::to_string(w.dim(0)));
  check(g.kh == spec.kh && g.kw == spec.kw, "conv2d_transpose: kernel extents mismatch spec");
  check(g.kh >= 2 && g.kw >= 2, "conv2d_transpose: kernel extents must be >= 2");
  g.ct = same_pad(g.kh, 2, "kh");
  g.cl = same_pad(g.kw, 2, "kw");
  g.Ho = 2 * g.H;
  g.Wo = 2 * g.W;

  std::vector<T> y(static_cast<std::size_t>(g.N) * g.Co * g.Ho * g.Wo, T(0));
  const T* xd = x.data().data();
  const T* wd = w.data().data();
  for (int n = 0; n < g.N; ++n) {
    for (int ci = 0; ci < g.Ci; ++ci) {
      const T* xin = xd + (static_cast<std::size_t>(n) * g.Ci + ci) * g.H * g.W;
      for (int co = 0; co < g.Co; ++co) {
        T* yout = y.data() + (static_cast<std::size_t>(n) * g.Co + co) * g.Ho * g.Wo;
        const T* wk = wd + (static_cast<std::size_t>(ci) * g.Co + co) * g.kh * g.kw;
        for (int ky = 0; ky < g.kh; ++ky) {
          int iy_lo, iy_hi;
          trans_range(ky, g.ct, g.H, g.Ho, iy_lo, iy_hi);
          for (int kx = 0; kx < g.kw; ++kx) {
            const T wv = wk[ky * g.kw + kx];
            if (wv == T(0)) continue;
            int ix_lo, ix_hi;
            trans_range(kx, g.cl, g.W, g.Wo, ix_lo, ix_hi);
            for (int iy = iy_lo; iy <= iy_hi; ++iy) {
              const int oy = 2 * iy + ky - g.ct;
              const T* xrow = xin + static_cast<std::size_t>(iy) * g.W;
              T* yrow = yout + static_cast<std::size_t>(oy) * g.Wo + (kx - g.cl);
              for (int ix = ix_lo; ix <= ix_hi; ++ix) yrow[2 * ix] += wv * xrow[ix];
            }
          }
        }
      }
    }
  }

  Tensor<T> xc = x, wc = w;
  auto backprop = [xc, wc, g](TensorNode<T>& self) {
    const T* dy = self.grad.data();
    if (detail::on_grad_path(xc)) {
      xc.node->ensure_grad();
      T* dx = xc.node->grad.data();
      const T* wd = wc.data().data();
      for (int n = 0; n < g.N; ++n) {
        for (int ci = 0; ci < g.Ci; ++ci) {
          T* dxp = dx + (static_cast<std::size_t>(n) * g.Ci + ci) * g.H * g.W;
          for (int co = 0; co < g.Co; ++co) {
            const T* dyp = dy + (static_cast<std::size_t>(n) * g.Co + co) * g.Ho * g.Wo;
            const T* wk = wd + (static_cast<std::size_t>(ci) * g.Co + co) * g.kh * g.kw;
            for (int ky = 0; ky < g.kh; ++ky) {
              int iy_lo, iy_hi;
              trans_range(ky, g.ct, g.H, g.Ho, iy_lo, iy_hi);
              for (int kx = 0; kx < g.kw; ++kx) {
                const T wv = wk[ky * g.kw + kx];
                if (wv == T(0)) continue;
                int ix_lo, ix_hi;
                trans_range(kx, g.cl, g.W, g.Wo, ix_lo, ix_hi);
                for (int iy = iy_lo; iy <= iy_hi; ++iy) {
                  const int oy = 2 * iy + ky - g.ct;
                  T* dxrow = dxp + static_cast<std::size_t>(iy) * g.W;
                  const T* dyr = dyp + static_cast<std::size_t>(oy) * g.Wo + (kx - g.cl);
                  for (int ix = ix_lo; ix <= ix_hi; ++ix) dxrow[ix] += wv * dyr[2 * ix];
                }
              }
            }
          }
        }
      }
    }
    if (detail::on_grad_path(wc)) {
      wc.node->ensure_grad();
      T* dw = wc.node->grad.data();
      const T* xd = xc.data().data();
      for (int n = 0; n < g.N; ++n) {
        for (int ci = 0; ci < g.Ci; ++ci) {
          const T* xin = xd + (static_cast<std::size_t>(n) * g.Ci + ci) * g.H * g.W;
          for (int co = 0; co < g.Co; ++co) {
            const T* dyp = dy + (static_cast<std::size_t>(n) * g.Co + co) * g.Ho * g.Wo;
            T* dwk = dw + (static_cast<std::size_t>(ci) * g.Co + co) * g.kh * g.kw;
            for (int ky = 0; ky < g.kh; ++ky) {
              int iy_lo, iy_hi;
              trans_range(ky, g.ct, g.H, g.Ho, iy_lo, iy_hi);
              for (int kx = 0; kx < g.kw; ++kx) {
                int ix_lo, ix_hi;
                trans_range(kx, g.cl, g.W, g.Wo, ix_lo, ix_hi);
                T acc = T(0);
                for (int iy = iy_lo; iy <= iy_hi; ++iy) {
                  const int oy = 2 * iy + ky - g.ct;
                  const T* xrow = xin + static_cast<std::size_t>(iy) * g.W;
                  const T* dyr = dyp + static_cast<std::size_t>(oy) * g.Wo + (kx - g.cl);
                  for (int ix = ix_lo; ix <= ix_hi; ++ix) acc += xrow[ix] * dyr[2 * ix];
                }
                dwk[ky * g.kw + kx] += acc;
              }
            }
          }
        }
      }
    }
  };
  return detail::make_node<T>({g.N, g.Co, g.Ho, g.Wo}, std::move(y), {x, w},
                              std::move(backprop));
}

// ---- pointwise and reductions ----------------------------------------------

template <typename T>
Tensor<T> elu(const Tensor<T>& x, T alpha) {
  check(x.defined(), "elu: undefined input");
  check(alpha > T(0), "elu: alpha must be positive");
  std::vector<T> y(x.data().begin(), x.data().end());
  for (T& v : y) v = v > T(0) ? v : alpha * (std::exp(v) - T(1));
  Tensor<T> xc = x;
  auto backprop = [xc, alpha](TensorNode<T>& self) {
    if (!detail::on_grad_path(xc)) return;
    xc.node->ensure_grad();
    const T* dy = self.grad.data();
    const T* yv = self.values.data();
    const T* xv = xc.data().data();
    T* dx = xc.node->grad.data();
    for (std::size_t i = 0; i < self.values.size(); ++i)
      dx[i] += dy[i] * (xv[i] > T(0) ? T(1) : yv[i] + alpha);
  };
  return detail::make_node<T>(x.shape(), std::move(y), {x}, std::move(backprop));
}

namespace {
template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  check(a.defined() && b.defined(), std::string(op) + ": undefined input");
  check(a.shape() == b.shape(), std::string(op) + ": shape " + shape_str(a.shape()) +
                                    " does not match " + shape_str(b.shape()));
}
}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "add");
  std::vector<T> y(a.data().size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] + b.data()[i];
  Tensor<T> ac = a, bc = b;
  auto backprop = [ac, bc](TensorNode<T>& self) {
    const T* dy = self.grad.data();
    if (detail::on_grad_path(ac)) {
      ac.node->ensure_grad();
      T* da = ac.node->grad.data();
      for (std::size_t i = 0; i < self.values.size(); ++i) da[i] += dy[i];
    }
    if (detail::on_grad_path(bc)) {
      bc.node->ensure_grad();
      T* db = bc.node->grad.data();
      for (std::size_t i = 0; i < self.values.size(); ++i) db[i] += dy[i];
    }
  };
  return detail::make_node<T>(a.shape(), std::move(y), {a, b}, std::move(backprop));
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "sub");
  std::vector<T> y(a.data().size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] - b.data()[i];
  Tensor<T> ac = a, bc = b;
  auto backprop = [ac, bc](TensorNode<T>& self) {
    const T* dy = self.grad.data();
    if (detail::on_grad_path(ac)) {
      ac.node->ensure_grad();
      T* da = ac.node->grad.data();
      for (std::size_t i = 0; i < self.values.size(); ++i) da[i] += dy[i];
    }
    if (detail::on_grad_path(bc)) {
      bc.node->ensure_grad();
      T* db = bc.node->grad.data();
      for (std::size_t i = 0; i < self.values.size(); ++i) db[i] -= dy[i];
    }
  };
  return detail::make_node<T>(a.shape(), std::move(y), {a, b}, std::move(backprop));
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "mul");
  std::vector<T> y(a.data().size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] * b.data()[i];
  Tensor<T> ac = a, bc = b;
  auto backprop = [ac, bc](TensorNode<T>& self) {
    const T* dy = self.grad.data();
    if (detail::on_grad_path(ac)) {
      ac.node->ensure_grad();
      T* da = ac.node->grad.data();
      const T* bv = bc.data().data();
      for (std::size_t i = 0; i < self.values.size(); ++i) da[i] += dy[i] * bv[i];
    }
    if (detail::on_grad_path(bc)) {
      bc.node->ensure_grad();
      T* db = bc.node->grad.data();
      const T* av = ac.data().data();
      for (std::size_t i = 0; i < self.values.size(); ++i) db[i] += dy[i] * av[i];
    }
  };
  return detail::make_node<T>(a.shape(), std::move(y), {a, b}, std::move(backprop));
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  check(a.defined(), "scale: undefined input");
  std::vector<T> y(a.data().size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = s * a.data()[i];
  Tensor<T> ac = a;
  auto backprop = [ac, s](TensorNode<T>& self) {
    if (!detail::on_grad_path(ac)) return;
    ac.node->ensure_grad();
    const T* dy = self.grad.data();
    T* da = ac.node->grad.data();
    for (std::size_t i = 0; i < self.values.size(); ++i) da[i] += s * dy[i];
  };
  return detail::make_node<T>(a.shape(), std::move(y), {a}, std::move(backprop));
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  check(x.defined(), "sum: undefined input");
  double acc = 0.0;
  for (T v : x.data()) acc += static_cast<double>(v);
  Tensor<T> xc = x;
  auto backprop = [xc](TensorNode<T>& self) {
    if (!detail::on_grad_path(xc)) return;
    xc.node->ensure_grad();
    const T g = self.grad[0];
    T* dx = xc.node->grad.data();
    for (std::size_t i = 0; i < xc.node->values.size(); ++i) dx[i] += g;
  };
  return detail::make_node<T>({1}, {static_cast<T>(acc)}, {x}, std::move(backprop));
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  check(x.defined(), "mean: undefined input");
  double acc = 0.0;
  for (T v : x.data()) acc += static_cast<double>(v);
  const T inv_n = T(1) / static_cast<T>(x.numel());
  Tensor<T> xc = x;
  auto backprop = [xc, inv_n](TensorNode<T>& self) {
    if (!detail::on_grad_path(xc)) return;
    xc.node->ensure_grad();
    const T g = self.grad[0] * inv_n;
    T* dx = xc.node->grad.data();
    for (std::size_t i = 0; i < xc.node->values.size(); ++i) dx[i] += g;
  };
  return detail::make_node<T>({1}, {static_cast<T>(acc / static_cast<double>(x.numel()))},
                              {x}, std::move(backprop));
}

template <typename T>
Tensor<T> avg_pool2(const Tensor<T>& x) {
  check(x.defined() && x.shape().size() == 4, "avg_pool2: input must be [N,C,H,W]");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  check(H % 2 == 0 && W % 2 == 0, "avg_pool2: extents must be even, got " +
                                      std::to_string(H) + "x" + std::to_string(W));
  const int Ho = H / 2, Wo = W / 2;
  std::vector<T> y(static_cast<std::size_t>(N) * C * Ho * Wo);
  const T* xd = x.data().data();
  for (int nc = 0; nc < N * C; ++nc) {
    const T* xp = xd + static_cast<std::size_t>(nc) * H * W;
    T* yp = y.data() + static_cast<std::size_t>(nc) * Ho * Wo;
    for (int oy = 0; oy < Ho; ++oy)
      for (int ox = 0; ox < Wo; ++ox) {
        const T* r0 = xp + static_cast<std::size_t>(2 * oy) * W + 2 * ox;
        const T* r1 = r0 + W;
        yp[oy * Wo + ox] = (r0[0] + r0[1] + r1[0] + r1[1]) * T(0.25);
      }
  }
  Tensor<T> xc = x;
  auto backprop = [xc, N, C, H, W, Ho, Wo](TensorNode<T>& self) {
    if (!detail::on_grad_path(xc)) return;
    xc.node->ensure_grad();
    const T* dy = self.grad.data();
    T* dx = xc.node->grad.data();
    for (int nc = 0; nc < N * C; ++nc) {
      const T* dyp = dy + static_cast<std::size_t>(nc) * Ho * Wo;
      T* dxp = dx + static_cast<std::size_t>(nc) * H * W;
      for (int oy = 0; oy < Ho; ++oy)
        for (int ox = 0; ox < Wo; ++ox) {
          const T g = dyp[oy * Wo + ox] * T(0.25);
          T* r0 = dxp + static_cast<std::size_t>(2 * oy) * W + 2 * ox;
          T* r1 = r0 + W;
          r0[0] += g;
          r0[1] += g;
          r1[0] += g;
          r1[1] += g;
        }
    }
  };
  return detail::make_node<T>({N, C, Ho, Wo}, std::move(y), {x}, std::move(backprop));
}

template <typename T>
Tensor<T> total_variation(const Tensor<T>& x) {
  check(x.defined() && x.shape().size() == 4, "total_variation: input must be [N,C,H,W]");
  const int H = x.dim(2), W = x.dim(3);
  check(H >= 2 || W >= 2, "total_variation: extents must be at least 2 on one axis");
  const int planes = x.dim(0) * x.dim(1);
  const T* xd = x.data().data();
  double acc = 0.0;
  for (int p = 0; p < planes; ++p) {
    const T* xp = xd + static_cast<std::size_t>(p) * H * W;
    for (int y = 0; y + 1 < H; ++y)
      for (int xx = 0; xx < W; ++xx)
        acc += std::abs(static_cast<double>(xp[(y + 1) * W + xx]) - xp[y * W + xx]);
    for (int y = 0; y < H; ++y)
      for (int xx = 0; xx + 1 < W; ++xx)
        acc += std::abs(static_cast<double>(xp[y * W + xx + 1]) - xp[y * W + xx]);
  }
  Tensor<T> xc = x;
  auto backprop = [xc, planes, H, W](TensorNode<T>& self) {
    if (!detail::on_grad_path(xc)) return;
    xc.node->ensure_grad();
    const T g = self.grad[0];
    const T* xv = xc.data().data();
    T* dx = xc.node->grad.data();
    for (int p = 0; p < planes; ++p) {
      const T* xp = xv + static_cast<std::size_t>(p) * H * W;
      T* dp = dx + static_cast<std::size_t>(p) * H * W;
      for (int y = 0; y + 1 < H; ++y)
        for (int xx = 0; xx < W; ++xx) {
          const T d = xp[(y + 1) * W + xx] - xp[y * W + xx];
          const T s = d > T(0) ? g : (d < T(0) ? -g : T(0));
          dp[(y + 1) * W + xx] += s;
          dp[y * W + xx] -= s;
        }
      for (int y = 0; y < H; ++y)
        for (int xx = 0; xx + 1 < W; ++xx) {
          const T d = xp[y * W + xx + 1] - xp[y * W + xx];
          const T s = d > T(0) ? g : (d < T(0) ? -g : T(0));
          dp[y * W + xx + 1] += s;
          dp[y * W + xx] -= s;
        }
    }
  };
  return detail::make_node<T>({1}, {static_cast<T>(acc)}, {x}, std::move(backprop));
}

// ---- explicit instantiation --------------------------------------------------

template struct Tensor<float>;
template struct Tensor<double>;

#define LAPPYR_INSTANTIATE_OPS(T)                                                        \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,    \
                               const ConvSpec&);                                         \
  template Tensor<T> conv2d_transpose<T>(const Tensor<T>&, const Tensor<T>&,            \
                                         const ConvSpec&);                               \
  template Tensor<T> elu<T>(const Tensor<T>&, T);                                        \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                                      \
  template Tensor<T> sum<T>(const Tensor<T>&);                                           \
  template Tensor<T> mean<T>(const Tensor<T>&);                                          \
  template Tensor<T> avg_pool2<T>(const Tensor<T>&);                                     \
  template Tensor<T> total_variation<T>(const Tensor<T>&);                               \
  namespace detail {                                                                     \
  template Tensor<T> make_node<T>(std::vector<int>, std::vector<T>,                      \
                                  std::vector<Tensor<T>>,                                \
                                  std::function<void(TensorNode<T>&)>);                  \
  template bool on_grad_path<T>(const Tensor<T>&);                                       \
  }

LAPPYR_INSTANTIATE_OPS(float)
LAPPYR_INSTANTIATE_OPS(double)

}  // namespace lappyr
