#pragma once

// Reverse-mode differentiation over a recorded tape.
//
// A BasicGraph<T> records every operation as a node holding its forward value
// and a backward closure. backward(loss) walks the tape in exact reverse
// order of recording; gradients into a node are summed over all consumers.
// Parameters are borrowed by reference (no copy), so they must outlive the
// graph. Forward reductions accumulate in double regardless of T.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <limits>
#include <span>
#include <vector>

#include "adafall/error.hpp"
#include "adafall/tensor.hpp"

namespace adafall {

/// Handle to a node in a graph.
struct Var {
  std::size_t index = 0;
};

template <class T>
class BasicGraph {
 public:
  using TensorT = BasicTensor<T>;
  using BackwardFn = std::function<void(BasicGraph&, std::size_t self)>;

  Var constant(TensorT t) { return push(Node{std::move(t), nullptr, {}, false, {}}); }
  Var input(TensorT t) { return push(Node{std::move(t), nullptr, {}, true, {}}); }
  Var parameter(const TensorT& t, bool requires_grad = true) {
    return push(Node{TensorT{}, &t, {}, requires_grad, {}});
  }

  [[nodiscard]] const TensorT& value(Var v) const {
    const Node& n = nodes_.at(v.index);
    return n.borrowed ? *n.borrowed : n.owned;
  }

  /// Gradient of the last backward() loss w.r.t. v; empty when v does not
  /// require grad or backward has not run.
  [[nodiscard]] const std::vector<T>& grad(Var v) const { return nodes_.at(v.index).grad; }
  [[nodiscard]] bool requires_grad(Var v) const { return nodes_.at(v.index).requires_grad; }
  [[nodiscard]] std::size_t size() const { return nodes_.size(); }

  void backward(Var loss) {
    if (value(loss).size() != 1) {
      throw Error(ErrorCode::NotScalar, "loss has shape " + shape_string(value(loss).shape));
    }
    for (std::size_t i = 0; i <= loss.index; ++i) {
      Node& n = nodes_[i];
      if (n.requires_grad) n.grad.assign(value(Var{i}).size(), T{0});
      else n.grad.clear();
    }
    if (!nodes_[loss.index].requires_grad) return;
    nodes_[loss.index].grad[0] = T{1};
    for (std::size_t i = loss.index + 1; i-- > 0;) {
      if (nodes_[i].requires_grad && nodes_[i].backward) nodes_[i].backward(*this, i);
    }
  }

  /// Record an op output. The closure is kept only when some input needs a gradient.
  Var record(TensorT out, std::initializer_list<Var> inputs, BackwardFn fn) {
    const bool needs = std::any_of(inputs.begin(), inputs.end(), [&](Var v) { return requires_grad(v); });
    return push(Node{std::move(out), nullptr, {}, needs, needs ? std::move(fn) : BackwardFn{}});
  }

  std::vector<T>& grad_mut(Var v) { return nodes_[v.index].grad; }
  std::vector<T>& grad_mut(std::size_t i) { return nodes_[i].grad; }

 private:
  struct Node {
    TensorT owned;
    const TensorT* borrowed = nullptr;
    std::vector<T> grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
};

using Graph = BasicGraph<float>;

namespace detail {

inline void check_shape(bool ok, const char* op, const std::string& detail) {
  if (!ok) throw Error(ErrorCode::ShapeMismatch, std::string(op) + ": " + detail);
}

}  // namespace detail

enum class Padding { Same, Valid };

/// 2-D cross-correlation, stride 1. input [H, W, Cin], kernels [K, K, Cin, Cout],
/// bias [Cout] -> [Ho, Wo, Cout]. Same padding needs odd K and keeps H x W.
template <class T>
Var conv2d(BasicGraph<T>& g, Var input, Var kernels, Var bias, Padding padding) {
  const auto& in = g.value(input);
  const auto& k = g.value(kernels);
  const auto& b = g.value(bias);
  detail::check_shape(in.rank() == 3, "conv2d", "input must be HxWxC, got " + shape_string(in.shape));
  detail::check_shape(k.rank() == 4 && k.shape[0] == k.shape[1] && k.shape[2] == in.shape[2], "conv2d",
                      "kernels " + shape_string(k.shape) + " vs input " + shape_string(in.shape));
  const std::size_t H = in.shape[0], W = in.shape[1], Cin = in.shape[2];
  const std::size_t K = k.shape[0], Cout = k.shape[3];
  detail::check_shape(b.rank() == 1 && b.shape[0] == Cout, "conv2d", "bias " + shape_string(b.shape));
  detail::check_shape(padding == Padding::Valid || K % 2 == 1, "conv2d", "same padding needs odd kernel");
  const std::size_t pad = padding == Padding::Same ? K / 2 : 0;
  detail::check_shape(H + 2 * pad >= K && W + 2 * pad >= K, "conv2d", "input smaller than kernel");
  const std::size_t Ho = H + 2 * pad - K + 1, Wo = W + 2 * pad - K + 1;

  BasicTensor<T> out({Ho, Wo, Cout});
  std::vector<double> acc(Cout);
  for (std::size_t y = 0; y < Ho; ++y) {
    for (std::size_t x = 0; x < Wo; ++x) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t ky = 0; ky < K; ++ky) {
        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y + ky) - static_cast<std::ptrdiff_t>(pad);
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
        for (std::size_t kx = 0; kx < K; ++kx) {
          const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x + kx) - static_cast<std::ptrdiff_t>(pad);
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
          const T* in_px = &in.values[(static_cast<std::size_t>(iy) * W + static_cast<std::size_t>(ix)) * Cin];
          const T* k_px = &k.values[(ky * K + kx) * Cin * Cout];
          for (std::size_t ci = 0; ci < Cin; ++ci) {
            const double v = in_px[ci];
            if (v == 0.0) continue;
            const T* krow = k_px + ci * Cout;
            for (std::size_t co = 0; co < Cout; ++co) acc[co] += v * static_cast<double>(krow[co]);
          }
        }
      }
      T* dst = &out.values[(y * Wo + x) * Cout];
      for (std::size_t co = 0; co < Cout; ++co) dst[co] = static_cast<T>(acc[co] + static_cast<double>(b.values[co]));
    }
  }

  return g.record(std::move(out), {input, kernels, bias}, [=](BasicGraph<T>& gr, std::size_t self) {
    const auto& dout = gr.grad(Var{self});
    const auto& in_v = gr.value(input).values;
    const auto& k_v = gr.value(kernels).values;
    const bool need_in = gr.requires_grad(input);
    const bool need_k = gr.requires_grad(kernels);
    std::vector<double> dk(need_k ? k_v.size() : 0, 0.0);
    std::vector<T>* din = need_in ? &gr.grad_mut(input) : nullptr;
    for (std::size_t y = 0; y < Ho; ++y) {
      for (std::size_t x = 0; x < Wo; ++x) {
        const T* dy = &dout[(y * Wo + x) * Cout];
        for (std::size_t ky = 0; ky < K; ++ky) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y + ky) - static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
          for (std::size_t kx = 0; kx < K; ++kx) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x + kx) - static_cast<std::ptrdiff_t>(pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
            const std::size_t in_off = (static_cast<std::size_t>(iy) * W + static_cast<std::size_t>(ix)) * Cin;
            const std::size_t k_off = (ky * K + kx) * Cin * Cout;
            for (std::size_t ci = 0; ci < Cin; ++ci) {
              const std::size_t krow = k_off + ci * Cout;
              if (need_in) {
                double s = 0.0;
                for (std::size_t co = 0; co < Cout; ++co) s += static_cast<double>(dy[co]) * k_v[krow + co];
                (*din)[in_off + ci] += static_cast<T>(s);
              }
              if (need_k) {
                const double v = in_v[in_off + ci];
                if (v == 0.0) continue;
                for (std::size_t co = 0; co < Cout; ++co) dk[krow + co] += v * static_cast<double>(dy[co]);
              }
            }
          }
        }
      }
    }
    if (need_k) {
      auto& gk = gr.grad_mut(kernels);
      for (std::size_t i = 0; i < dk.size(); ++i) gk[i] += static_cast<T>(dk[i]);
    }
    if (gr.requires_grad(bias)) {
      auto& gb = gr.grad_mut(bias);
      for (std::size_t co = 0; co < Cout; ++co) {
        double s = 0.0;
        for (std::size_t p = 0; p < Ho * Wo; ++p) s += dout[p * Cout + co];
        gb[co] += static_cast<T>(s);
      }
    }
  });
}

/// 2x2 max pooling, stride 2, floor on odd sizes. Backward routes each
/// window's gradient to its first maximum in row-major order.
template <class T>
Var maxpool2d(BasicGraph<T>& g, Var input) {
  const auto& in = g.value(input);
  detail::check_shape(in.rank() == 3 && in.shape[0] >= 2 && in.shape[1] >= 2, "maxpool2d",
                      "input must be HxWxC with H,W >= 2, got " + shape_string(in.shape));
  const std::size_t H = in.shape[0], W = in.shape[1], C = in.shape[2];
  const std::size_t Ho = H / 2, Wo = W / 2;
  BasicTensor<T> out({Ho, Wo, C});
  std::vector<std::size_t> argmax(out.size());
  for (std::size_t y = 0; y < Ho; ++y) {
    for (std::size_t x = 0; x < Wo; ++x) {
      for (std::size_t c = 0; c < C; ++c) {
        std::size_t best = ((2 * y) * W + 2 * x) * C + c;
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = ((2 * y + dy) * W + 2 * x + dx) * C + c;
            if (in.values[idx] > in.values[best]) best = idx;
          }
        }
        const std::size_t o = (y * Wo + x) * C + c;
        argmax[o] = best;
        out.values[o] = in.values[best];
      }
    }
  }
  return g.record(std::move(out), {input}, [input, argmax = std::move(argmax)](BasicGraph<T>& gr, std::size_t self) {
    const auto& dout = gr.grad(Var{self});
    auto& din = gr.grad_mut(input);
    for (std::size_t o = 0; o < argmax.size(); ++o) din[argmax[o]] += dout[o];
  });
}

/// input [n] . weights [n, m] + bias [m] -> [m]
template <class T>
Var dense(BasicGraph<T>& g, Var input, Var weights, Var bias) {
  const auto& x = g.value(input);
  const auto& w = g.value(weights);
  const auto& b = g.value(bias);
  detail::check_shape(x.rank() == 1, "dense", "input must be a vector, got " + shape_string(x.shape));
  detail::check_shape(w.rank() == 2 && w.shape[0] == x.shape[0], "dense",
                      "weights " + shape_string(w.shape) + " vs input " + shape_string(x.shape));
  const std::size_t n = w.shape[0], m = w.shape[1];
  detail::check_shape(b.rank() == 1 && b.shape[0] == m, "dense", "bias " + shape_string(b.shape));

  std::vector<double> acc(m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double xi = x.values[i];
    if (xi == 0.0) continue;
    const T* row = &w.values[i * m];
    for (std::size_t j = 0; j < m; ++j) acc[j] += xi * static_cast<double>(row[j]);
  }
  BasicTensor<T> out({m});
  for (std::size_t j = 0; j < m; ++j) out.values[j] = static_cast<T>(acc[j] + static_cast<double>(b.values[j]));

  return g.record(std::move(out), {input, weights, bias}, [=](BasicGraph<T>& gr, std::size_t self) {
    const auto& dy = gr.grad(Var{self});
    const auto& xv = gr.value(input).values;
    const auto& wv = gr.value(weights).values;
    if (gr.requires_grad(input)) {
      auto& dx = gr.grad_mut(input);
      for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        const T* row = &wv[i * m];
        for (std::size_t j = 0; j < m; ++j) s += static_cast<double>(row[j]) * dy[j];
        dx[i] += static_cast<T>(s);
      }
    }
    if (gr.requires_grad(weights)) {
      auto& dw = gr.grad_mut(weights);
      for (std::size_t i = 0; i < n; ++i) {
        const T xi = xv[i];
        if (xi == T{0}) continue;
        T* row = &dw[i * m];
        for (std::size_t j = 0; j < m; ++j) row[j] += xi * dy[j];
      }
    }
    if (gr.requires_grad(bias)) {
      auto& db = gr.grad_mut(bias);
      for (std::size_t j = 0; j < m; ++j) db[j] += dy[j];
    }
  });
}

/// max(0, x); subgradient 0 at x = 0.
template <class T>
Var relu(BasicGraph<T>& g, Var input) {
  BasicTensor<T> out = g.value(input);
  for (auto& v : out.values) v = v > T{0} ? v : T{0};
  return g.record(std::move(out), {input}, [input](BasicGraph<T>& gr, std::size_t self) {
    const auto& x = gr.value(input).values;
    const auto& dy = gr.grad(Var{self});
    auto& dx = gr.grad_mut(input);
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (x[i] > T{0}) dx[i] += dy[i];
    }
  });
}

template <class T>
Var flatten(BasicGraph<T>& g, Var input) {
  BasicTensor<T> out = g.value(input);
  out.shape = {out.values.size()};
  return g.record(std::move(out), {input}, [input](BasicGraph<T>& gr, std::size_t self) {
    const auto& dy = gr.grad(Var{self});
    auto& dx = gr.grad_mut(input);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
  });
}

/// Row r of a [R, C] tensor as a [C] vector.
template <class T>
Var slice_row(BasicGraph<T>& g, Var input, std::size_t r) {
  const auto& in = g.value(input);
  detail::check_shape(in.rank() == 2 && r < in.shape[0], "slice_row",
                      "row " + std::to_string(r) + " of " + shape_string(in.shape));
  const std::size_t C = in.shape[1];
  BasicTensor<T> out({C}, std::vector<T>(in.values.begin() + static_cast<std::ptrdiff_t>(r * C),
                                         in.values.begin() + static_cast<std::ptrdiff_t>((r + 1) * C)));
  return g.record(std::move(out), {input}, [input, r, C](BasicGraph<T>& gr, std::size_t self) {
    const auto& dy = gr.grad(Var{self});
    auto& dx = gr.grad_mut(input);
    for (std::size_t c = 0; c < C; ++c) dx[r * C + c] += dy[c];
  });
}

template <class T>
Var sum(BasicGraph<T>& g, Var input) {
  double s = 0.0;
  for (T v : g.value(input).values) s += v;
  return g.record(BasicTensor<T>({1}, {static_cast<T>(s)}), {input}, [input](BasicGraph<T>& gr, std::size_t self) {
    const T dy = gr.grad(Var{self})[0];
    for (auto& d : gr.grad_mut(input)) d += dy;
  });
}

template <class T>
Var add(BasicGraph<T>& g, Var a, Var b) {
  const auto& av = g.value(a);
  const auto& bv = g.value(b);
  detail::check_shape(av.shape == bv.shape, "add", shape_string(av.shape) + " vs " + shape_string(bv.shape));
  BasicTensor<T> out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out.values[i] += bv.values[i];
  return g.record(std::move(out), {a, b}, [a, b](BasicGraph<T>& gr, std::size_t self) {
    const auto& dy = gr.grad(Var{self});
    for (Var v : {a, b}) {
      if (!gr.requires_grad(v)) continue;
      auto& dx = gr.grad_mut(v);
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
    }
  });
}

template <class T>
Var scale(BasicGraph<T>& g, Var a, double factor) {
  BasicTensor<T> out = g.value(a);
  for (auto& v : out.values) v = static_cast<T>(static_cast<double>(v) * factor);
  return g.record(std::move(out), {a}, [a, factor](BasicGraph<T>& gr, std::size_t self) {
    const auto& dy = gr.grad(Var{self});
    auto& dx = gr.grad_mut(a);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += static_cast<T>(static_cast<double>(dy[i]) * factor);
  });
}

/// Elementwise product.
template <class T>
Var mul(BasicGraph<T>& g, Var a, Var b) {
  const auto& av = g.value(a);
  const auto& bv = g.value(b);
  detail::check_shape(av.shape == bv.shape, "mul", shape_string(av.shape) + " vs " + shape_string(bv.shape));
  BasicTensor<T> out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out.values[i] *= bv.values[i];
  return g.record(std::move(out), {a, b}, [a, b](BasicGraph<T>& gr, std::size_t self) {
    const auto& dy = gr.grad(Var{self});
    const auto& x = gr.value(a).values;
    const auto& y = gr.value(b).values;
    if (gr.requires_grad(a)) {
      auto& dx = gr.grad_mut(a);
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * y[i];
    }
    if (gr.requires_grad(b)) {
      auto& dx = gr.grad_mut(b);
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * x[i];
    }
  });
}

/// 0.5 * ||a - b||^2 as a scalar.
template <class T>
Var half_squared_distance(BasicGraph<T>& g, Var a, Var b) {
  const auto& av = g.value(a);
  const auto& bv = g.value(b);
  detail::check_shape(av.shape == bv.shape, "half_squared_distance",
                      shape_string(av.shape) + " vs " + shape_string(bv.shape));
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double d = static_cast<double>(av.values[i]) - static_cast<double>(bv.values[i]);
    s += d * d;
  }
  return g.record(BasicTensor<T>({1}, {static_cast<T>(0.5 * s)}), {a, b}, [a, b](BasicGraph<T>& gr, std::size_t self) {
    const double dy = gr.grad(Var{self})[0];
    const auto& x = gr.value(a).values;
    const auto& y = gr.value(b).values;
    const bool need_a = gr.requires_grad(a);
    const bool need_b = gr.requires_grad(b);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double d = dy * (static_cast<double>(x[i]) - static_cast<double>(y[i]));
      if (need_a) gr.grad_mut(a)[i] += static_cast<T>(d);
      if (need_b) gr.grad_mut(b)[i] -= static_cast<T>(d);
    }
  });
}

/// Numerically stable softmax in double.
template <class T>
std::vector<double> softmax(std::span<const T> logits) {
  double mx = -std::numeric_limits<double>::infinity();
  for (T v : logits) mx = std::max(mx, static_cast<double>(v));
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp(static_cast<double>(logits[i]) - mx);
    z += p[i];
  }
  for (auto& v : p) v /= z;
  return p;
}

/// -log softmax(logits)[label], via max-subtraction.
template <class T>
Var softmax_cross_entropy(BasicGraph<T>& g, Var logits, std::size_t label) {
  const auto& z = g.value(logits);
  detail::check_shape(z.rank() == 1 && z.size() >= 2, "softmax_cross_entropy",
                      "logits must be a vector of >= 2 classes, got " + shape_string(z.shape));
  if (label >= z.size()) {
    throw Error(ErrorCode::BadLabel, "label " + std::to_string(label) + " for " + std::to_string(z.size()) + " classes");
  }
  double mx = -std::numeric_limits<double>::infinity();
  for (T v : z.values) mx = std::max(mx, static_cast<double>(v));
  double lse = 0.0;
  for (T v : z.values) lse += std::exp(static_cast<double>(v) - mx);
  const double loss = std::log(lse) + mx - static_cast<double>(z.values[label]);
  return g.record(BasicTensor<T>({1}, {static_cast<T>(loss)}), {logits},
                  [logits, label](BasicGraph<T>& gr, std::size_t self) {
                    const double dy = gr.grad(Var{self})[0];
                    const auto p = softmax(std::span<const T>(gr.value(logits).values));
                    auto& dz = gr.grad_mut(logits);
                    for (std::size_t i = 0; i < p.size(); ++i) {
                      dz[i] += static_cast<T>(dy * (p[i] - (i == label ? 1.0 : 0.0)));
                    }
                  });
}

// ---------------------------------------------------------------------------
// LSTM

/// Gate parameters: W [f, 4h], U [h, 4h], b [4h]; gate blocks ordered i, f, g, o.
struct LstmParams {
  Var W;
  Var U;
  Var b;
};

struct LstmState {
  Var h;
  Var c;
};

namespace detail {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace detail

/// Activated gates [4h]: sigmoid for i, f, o and tanh for the candidate g.
template <class T>
Var lstm_gates(BasicGraph<T>& g, Var x, Var h_prev, const LstmParams& p) {
  const auto& xv = g.value(x);
  const auto& hv = g.value(h_prev);
  const auto& W = g.value(p.W);
  const auto& U = g.value(p.U);
  const auto& b = g.value(p.b);
  detail::check_shape(xv.rank() == 1 && hv.rank() == 1, "lstm_cell", "x and h must be vectors");
  const std::size_t f = xv.size(), h = hv.size(), G = 4 * h;
  detail::check_shape(W.rank() == 2 && W.shape[0] == f && W.shape[1] == G, "lstm_cell", "W " + shape_string(W.shape));
  detail::check_shape(U.rank() == 2 && U.shape[0] == h && U.shape[1] == G, "lstm_cell", "U " + shape_string(U.shape));
  detail::check_shape(b.rank() == 1 && b.shape[0] == G, "lstm_cell", "b " + shape_string(b.shape));

  std::vector<double> z(G);
  for (std::size_t j = 0; j < G; ++j) z[j] = b.values[j];
  for (std::size_t i = 0; i < f; ++i) {
    const double v = xv.values[i];
    if (v == 0.0) continue;
    const T* row = &W.values[i * G];
    for (std::size_t j = 0; j < G; ++j) z[j] += v * static_cast<double>(row[j]);
  }
  for (std::size_t i = 0; i < h; ++i) {
    const double v = hv.values[i];
    if (v == 0.0) continue;
    const T* row = &U.values[i * G];
    for (std::size_t j = 0; j < G; ++j) z[j] += v * static_cast<double>(row[j]);
  }
  BasicTensor<T> out({G});
  for (std::size_t j = 0; j < G; ++j) {
    const bool candidate = j >= 2 * h && j < 3 * h;
    out.values[j] = static_cast<T>(candidate ? std::tanh(z[j]) : detail::sigmoid(z[j]));
  }

  return g.record(std::move(out), {x, h_prev, p.W, p.U, p.b}, [=](BasicGraph<T>& gr, std::size_t self) {
    const auto& a = gr.value(Var{self}).values;
    const auto& da = gr.grad(Var{self});
    std::vector<double> dz(G);
    for (std::size_t j = 0; j < G; ++j) {
      const double aj = a[j];
      const bool candidate = j >= 2 * h && j < 3 * h;
      dz[j] = static_cast<double>(da[j]) * (candidate ? 1.0 - aj * aj : aj * (1.0 - aj));
    }
    auto input_grad = [&](Var in, Var weights, std::size_t n) {
      const auto& wv = gr.value(weights).values;
      const auto& iv = gr.value(in).values;
      if (gr.requires_grad(in)) {
        auto& d = gr.grad_mut(in);
        for (std::size_t i = 0; i < n; ++i) {
          double s = 0.0;
          for (std::size_t j = 0; j < G; ++j) s += static_cast<double>(wv[i * G + j]) * dz[j];
          d[i] += static_cast<T>(s);
        }
      }
      if (gr.requires_grad(weights)) {
        auto& d = gr.grad_mut(weights);
        for (std::size_t i = 0; i < n; ++i) {
          const double v = iv[i];
          if (v == 0.0) continue;
          for (std::size_t j = 0; j < G; ++j) d[i * G + j] += static_cast<T>(v * dz[j]);
        }
      }
    };
    input_grad(x, p.W, f);
    input_grad(h_prev, p.U, h);
    if (gr.requires_grad(p.b)) {
      auto& db = gr.grad_mut(p.b);
      for (std::size_t j = 0; j < G; ++j) db[j] += static_cast<T>(dz[j]);
    }
  });
}

/// c_t = f * c_prev + i * g
template <class T>
Var lstm_cell_state(BasicGraph<T>& g, Var gates, Var c_prev) {
  const auto& a = g.value(gates).values;
  const auto& c = g.value(c_prev);
  const std::size_t h = c.size();
  detail::check_shape(a.size() == 4 * h, "lstm_cell", "gates/state size mismatch");
  BasicTensor<T> out({h});
  for (std::size_t k = 0; k < h; ++k) {
    out.values[k] = static_cast<T>(static_cast<double>(a[h + k]) * c.values[k] +
                                   static_cast<double>(a[k]) * a[2 * h + k]);
  }
  return g.record(std::move(out), {gates, c_prev}, [=](BasicGraph<T>& gr, std::size_t self) {
    const auto& av = gr.value(gates).values;
    const auto& cv = gr.value(c_prev).values;
    const auto& dc = gr.grad(Var{self});
    if (gr.requires_grad(gates)) {
      auto& da = gr.grad_mut(gates);
      for (std::size_t k = 0; k < h; ++k) {
        da[k] += dc[k] * av[2 * h + k];
        da[h + k] += dc[k] * cv[k];
        da[2 * h + k] += dc[k] * av[k];
      }
    }
    if (gr.requires_grad(c_prev)) {
      auto& dcp = gr.grad_mut(c_prev);
      for (std::size_t k = 0; k < h; ++k) dcp[k] += dc[k] * av[h + k];
    }
  });
}

/// h_t = o * tanh(c_t)
template <class T>
Var lstm_hidden(BasicGraph<T>& g, Var gates, Var c) {
  const auto& a = g.value(gates).values;
  const auto& cv = g.value(c);
  const std::size_t h = cv.size();
  detail::check_shape(a.size() == 4 * h, "lstm_cell", "gates/state size mismatch");
  BasicTensor<T> out({h});
  for (std::size_t k = 0; k < h; ++k) {
    out.values[k] = static_cast<T>(static_cast<double>(a[3 * h + k]) * std::tanh(static_cast<double>(cv.values[k])));
  }
  return g.record(std::move(out), {gates, c}, [=](BasicGraph<T>& gr, std::size_t self) {
    const auto& av = gr.value(gates).values;
    const auto& cvv = gr.value(c).values;
    const auto& dh = gr.grad(Var{self});
    for (std::size_t k = 0; k < h; ++k) {
      const double t = std::tanh(static_cast<double>(cvv[k]));
      if (gr.requires_grad(gates)) gr.grad_mut(gates)[3 * h + k] += static_cast<T>(dh[k] * t);
      if (gr.requires_grad(c)) gr.grad_mut(c)[k] += static_cast<T>(dh[k] * av[3 * h + k] * (1.0 - t * t));
    }
  });
}

/// One standard LSTM step.
template <class T>
LstmState lstm_cell(BasicGraph<T>& g, Var x, Var h_prev, Var c_prev, const LstmParams& p) {
  detail::check_shape(g.value(h_prev).shape == g.value(c_prev).shape, "lstm_cell", "h/c shape mismatch");
  const Var gates = lstm_gates(g, x, h_prev, p);
  const Var c = lstm_cell_state(g, gates, c_prev);
  const Var h = lstm_hidden(g, gates, c);
  return {h, c};
}

}  // namespace adafall
