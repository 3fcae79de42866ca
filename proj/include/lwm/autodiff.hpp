#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <utility>
#include <vector>

#include "lwm/fft.hpp"
#include "lwm/tensor.hpp"

namespace lwm {

/// Reverse-mode tape over Tensor<S>. A Graph is built per forward pass;
/// parameter leaves accumulate their gradients into external sinks so the
/// same parameter store can be reused across steps.
template <typename S>
class Graph {
 public:
  struct Node {
    Tensor<S> value;
    Tensor<S> grad;
    std::vector<int> parents;
    std::function<void(Graph&, int)> backward;
    bool requires_grad = false;
    Tensor<S>* sink = nullptr;
  };

  std::vector<Node> nodes;

  int input(Tensor<S> v) {
    Node n;
    n.value = std::move(v);
    nodes.push_back(std::move(n));
    return static_cast<int>(nodes.size()) - 1;
  }

  int leaf(const Tensor<S>& v, Tensor<S>* grad_sink) {
    Node n;
    n.value = v;
    n.requires_grad = true;
    n.sink = grad_sink;
    nodes.push_back(std::move(n));
    return static_cast<int>(nodes.size()) - 1;
  }

  int make(Tensor<S> value, std::vector<int> parents,
           std::function<void(Graph&, int)> backward) {
    Node n;
    n.value = std::move(value);
    n.parents = std::move(parents);
    for (int p : n.parents)
      if (nodes[p].requires_grad) n.requires_grad = true;
    if (n.requires_grad) n.backward = std::move(backward);
    nodes.push_back(std::move(n));
    return static_cast<int>(nodes.size()) - 1;
  }

  const Tensor<S>& val(int id) const { return nodes[id].value; }

  Tensor<S>& grad(int id) {
    Node& n = nodes[id];
    if (n.grad.numel() == 0) n.grad = Tensor<S>::zeros(n.value.shape());
    return n.grad;
  }

  void backward(int loss_id) {
    if (val(loss_id).numel() != 1)
      throw std::invalid_argument("backward: loss must be scalar");
    grad(loss_id).array().setConstant(S(1));
    for (int id = loss_id; id >= 0; --id) {
      Node& n = nodes[id];
      if (!n.requires_grad || n.grad.numel() == 0) continue;
      if (n.backward) n.backward(*this, id);
      if (n.sink) n.sink->array() += n.grad.array();
    }
  }
};

// ---- elementwise -----------------------------------------------------------

template <typename S>
int add(Graph<S>& g, int a, int b) {
  if (!g.val(a).same_shape(g.val(b))) throw std::invalid_argument("add: shape mismatch");
  Tensor<S> y(g.val(a).shape());
  y.array() = g.val(a).array() + g.val(b).array();
  return g.make(std::move(y), {a, b}, [a, b](Graph<S>& gg, int self) {
    gg.grad(a).array() += gg.grad(self).array();
    gg.grad(b).array() += gg.grad(self).array();
  });
}

template <typename S>
int sub(Graph<S>& g, int a, int b) {
  if (!g.val(a).same_shape(g.val(b))) throw std::invalid_argument("sub: shape mismatch");
  Tensor<S> y(g.val(a).shape());
  y.array() = g.val(a).array() - g.val(b).array();
  return g.make(std::move(y), {a, b}, [a, b](Graph<S>& gg, int self) {
    gg.grad(a).array() += gg.grad(self).array();
    gg.grad(b).array() -= gg.grad(self).array();
  });
}

template <typename S>
int mul(Graph<S>& g, int a, int b) {
  if (!g.val(a).same_shape(g.val(b))) throw std::invalid_argument("mul: shape mismatch");
  Tensor<S> y(g.val(a).shape());
  y.array() = g.val(a).array() * g.val(b).array();
  return g.make(std::move(y), {a, b}, [a, b](Graph<S>& gg, int self) {
    gg.grad(a).array() += gg.grad(self).array() * gg.val(b).array();
    gg.grad(b).array() += gg.grad(self).array() * gg.val(a).array();
  });
}

template <typename S>
int scale(Graph<S>& g, int a, S c) {
  Tensor<S> y(g.val(a).shape());
  y.array() = g.val(a).array() * c;
  return g.make(std::move(y), {a}, [a, c](Graph<S>& gg, int self) {
    gg.grad(a).array() += gg.grad(self).array() * c;
  });
}

template <typename S>
int sigmoid(Graph<S>& g, int a) {
  Tensor<S> y(g.val(a).shape());
  y.array() = S(1) / (S(1) + (-g.val(a).array()).exp());
  return g.make(std::move(y), {a}, [a](Graph<S>& gg, int self) {
    const auto& y = gg.val(self).array();
    gg.grad(a).array() += gg.grad(self).array() * y * (S(1) - y);
  });
}

template <typename S>
int relu(Graph<S>& g, int a) {
  Tensor<S> y(g.val(a).shape());
  y.array() = g.val(a).array().max(S(0));
  return g.make(std::move(y), {a}, [a](Graph<S>& gg, int self) {
    gg.grad(a).array() +=
        gg.grad(self).array() * (gg.val(a).array() > S(0)).template cast<S>();
  });
}

template <typename S>
int silu(Graph<S>& g, int a) {
  Tensor<S> y(g.val(a).shape());
  auto sig = (S(1) / (S(1) + (-g.val(a).array()).exp())).eval();
  y.array() = g.val(a).array() * sig;
  return g.make(std::move(y), {a}, [a](Graph<S>& gg, int self) {
    const auto& x = gg.val(a).array();
    auto sg = (S(1) / (S(1) + (-x).exp())).eval();
    gg.grad(a).array() += gg.grad(self).array() * sg * (S(1) + x * (S(1) - sg));
  });
}

/// silu(a) * b, fused to avoid materialising the gate activation twice.
template <typename S>
int silu_gate(Graph<S>& g, int a, int b) {
  if (!g.val(a).same_shape(g.val(b))) throw std::invalid_argument("silu_gate: shape mismatch");
  Tensor<S> y(g.val(a).shape());
  auto sg = (S(1) / (S(1) + (-g.val(a).array()).exp())).eval();
  y.array() = g.val(a).array() * sg * g.val(b).array();
  return g.make(std::move(y), {a, b}, [a, b](Graph<S>& gg, int self) {
    const auto& x = gg.val(a).array();
    auto sg = (S(1) / (S(1) + (-x).exp())).eval();
    gg.grad(a).array() += gg.grad(self).array() * gg.val(b).array() * sg *
                          (S(1) + x * (S(1) - sg));
    gg.grad(b).array() += gg.grad(self).array() * x * sg;
  });
}

template <typename S>
int gelu(Graph<S>& g, int a) {
  Tensor<S> y(g.val(a).shape());
  const double inv_sqrt2 = 0.7071067811865475244;
  for (Index i = 0; i < y.numel(); ++i) {
    const double x = static_cast<double>(g.val(a)[i]);
    y[i] = static_cast<S>(x * 0.5 * (1.0 + std::erf(x * inv_sqrt2)));
  }
  return g.make(std::move(y), {a}, [a, inv_sqrt2](Graph<S>& gg, int self) {
    const double c = 0.3989422804014327;  // 1/sqrt(2*pi)
    for (Index i = 0; i < gg.val(a).numel(); ++i) {
      const double x = static_cast<double>(gg.val(a)[i]);
      const double phi = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
      const double pdf = c * std::exp(-0.5 * x * x);
      gg.grad(a)[i] += gg.grad(self)[i] * static_cast<S>(phi + x * pdf);
    }
  });
}

template <typename S>
int tanh_op(Graph<S>& g, int a) {
  Tensor<S> y(g.val(a).shape());
  y.array() = g.val(a).array().tanh();
  return g.make(std::move(y), {a}, [a](Graph<S>& gg, int self) {
    const auto& y = gg.val(self).array();
    gg.grad(a).array() += gg.grad(self).array() * (S(1) - y * y);
  });
}

// ---- linear algebra --------------------------------------------------------

/// x [..., m] @ W [m, n] -> [..., n]
template <typename S>
int matmul(Graph<S>& g, int x, int w) {
  const Tensor<S>& xv = g.val(x);
  const Tensor<S>& wv = g.val(w);
  if (wv.rank() != 2 || xv.last_dim() != wv.dim(0))
    throw std::invalid_argument("matmul: inner dims mismatch");
  Shape out_shape = xv.shape();
  out_shape.back() = wv.dim(1);
  Tensor<S> y(out_shape);
  y.mat().noalias() = xv.mat() * wv.mat();
  return g.make(std::move(y), {x, w}, [x, w](Graph<S>& gg, int self) {
    gg.grad(x).mat().noalias() += gg.grad(self).mat() * gg.val(w).mat().transpose();
    gg.grad(w).mat().noalias() += gg.val(x).mat().transpose() * gg.grad(self).mat();
  });
}

template <typename S>
int bias_add(Graph<S>& g, int x, int b) {
  const Tensor<S>& xv = g.val(x);
  if (g.val(b).numel() != xv.last_dim())
    throw std::invalid_argument("bias_add: bias length mismatch");
  Tensor<S> y(xv.shape());
  y.mat() = xv.mat().rowwise() + g.val(b).mat().row(0);
  return g.make(std::move(y), {x, b}, [x, b](Graph<S>& gg, int self) {
    gg.grad(x).array() += gg.grad(self).array();
    gg.grad(b).mat().row(0) += gg.grad(self).mat().colwise().sum();
  });
}

/// Batched matmul over the leading dims: a [G,n,k] @ b [G,k,m].
template <typename S>
int bmm(Graph<S>& g, int a, int b, bool trans_a = false, bool trans_b = false) {
  const Tensor<S>& av = g.val(a);
  const Tensor<S>& bv = g.val(b);
  if (av.rank() < 3 || bv.rank() != av.rank())
    throw std::invalid_argument("bmm: rank mismatch");
  Index G = 1;
  for (Index i = 0; i + 2 < av.rank(); ++i) {
    if (av.dim(i) != bv.dim(i)) throw std::invalid_argument("bmm: batch dims mismatch");
    G *= av.dim(i);
  }
  const Index ar = av.dim(av.rank() - 2), ac = av.last_dim();
  const Index br = bv.dim(bv.rank() - 2), bc = bv.last_dim();
  const Index n = trans_a ? ac : ar, k = trans_a ? ar : ac;
  const Index k2 = trans_b ? bc : br, m = trans_b ? br : bc;
  if (k != k2) throw std::invalid_argument("bmm: inner dims mismatch");
  Shape out_shape(av.shape().begin(), av.shape().end() - 2);
  out_shape.push_back(n);
  out_shape.push_back(m);
  Tensor<S> y(out_shape);
  using CMap = typename Tensor<S>::ConstMatrixMap;
  using Map = typename Tensor<S>::MatrixMap;
  for (Index i = 0; i < G; ++i) {
    CMap A(av.data() + i * ar * ac, ar, ac);
    CMap B(bv.data() + i * br * bc, br, bc);
    Map Y(y.data() + i * n * m, n, m);
    if (!trans_a && !trans_b) Y.noalias() = A * B;
    else if (trans_a && !trans_b) Y.noalias() = A.transpose() * B;
    else if (!trans_a && trans_b) Y.noalias() = A * B.transpose();
    else Y.noalias() = A.transpose() * B.transpose();
  }
  return g.make(std::move(y), {a, b},
                [a, b, G, ar, ac, br, bc, n, m, trans_a, trans_b](Graph<S>& gg, int self) {
    const Tensor<S>& av = gg.val(a);
    const Tensor<S>& bv = gg.val(b);
    Tensor<S>& da = gg.grad(a);
    Tensor<S>& db = gg.grad(b);
    const Tensor<S>& dy = gg.grad(self);
    for (Index i = 0; i < G; ++i) {
      CMap A(av.data() + i * ar * ac, ar, ac);
      CMap B(bv.data() + i * br * bc, br, bc);
      CMap dY(dy.data() + i * n * m, n, m);
      Map dA(da.data() + i * ar * ac, ar, ac);
      Map dB(db.data() + i * br * bc, br, bc);
      if (!trans_a && !trans_b) {
        dA.noalias() += dY * B.transpose();
        dB.noalias() += A.transpose() * dY;
      } else if (trans_a && !trans_b) {
        dA.noalias() += B * dY.transpose();
        dB.noalias() += A * dY;
      } else if (!trans_a && trans_b) {
        dA.noalias() += dY * B;
        dB.noalias() += dY.transpose() * A;
      } else {
        dA.noalias() += B.transpose() * dY.transpose();
        dB.noalias() += dY.transpose() * A.transpose();
      }
    }
  });
}

// ---- normalisation ---------------------------------------------------------

template <typename S>
int layer_norm(Graph<S>& g, int x, int gain, int shift, S eps = S(1e-5)) {
  const Tensor<S>& xv = g.val(x);
  const Index n = xv.last_dim();
  if (g.val(gain).numel() != n || g.val(shift).numel() != n)
    throw std::invalid_argument("layer_norm: affine length mismatch");
  Tensor<S> y(xv.shape());
  auto X = xv.mat();
  auto Y = y.mat();
  for (Index r = 0; r < X.rows(); ++r) {
    S mu = X.row(r).mean();
    S var = (X.row(r).array() - mu).square().mean();
    S inv = S(1) / std::sqrt(var + eps);
    Y.row(r) = (((X.row(r).array() - mu) * inv) * g.val(gain).array().transpose() +
                g.val(shift).array().transpose())
                   .matrix();
  }
  return g.make(std::move(y), {x, gain, shift},
                [x, gain, shift, eps, n](Graph<S>& gg, int self) {
    auto X = gg.val(x).mat();
    auto dY = gg.grad(self).mat();
    auto dX = gg.grad(x).mat();
    auto ga = gg.val(gain).array().transpose();
    auto dga = gg.grad(gain).array().transpose();
    auto dsh = gg.grad(shift).array().transpose();
    for (Index r = 0; r < X.rows(); ++r) {
      S mu = X.row(r).mean();
      S var = (X.row(r).array() - mu).square().mean();
      S inv = S(1) / std::sqrt(var + eps);
      auto xhat = ((X.row(r).array() - mu) * inv).eval();
      auto dxhat = (dY.row(r).array() * ga).eval();
      S m1 = dxhat.mean();
      S m2 = (dxhat * xhat).mean();
      dX.row(r).array() += inv * (dxhat - m1 - xhat * m2);
      dga += dY.row(r).array() * xhat;
      dsh += dY.row(r).array();
    }
  });
}

/// RMS norm over groups of size gsz within the last dimension; gain has the
/// length of the full last dimension.
template <typename S>
int rms_norm(Graph<S>& g, int x, int gain, Index gsz = 0, S eps = S(1e-5)) {
  const Tensor<S>& xv = g.val(x);
  const Index n = xv.last_dim();
  if (gsz <= 0) gsz = n;
  if (n % gsz != 0 || g.val(gain).numel() != n)
    throw std::invalid_argument("rms_norm: bad group size or gain length");
  const Index rows = xv.rows() * (n / gsz);
  Tensor<S> y(xv.shape());
  auto X = xv.mat(rows);
  auto Y = y.mat(rows);
  const auto& ga = g.val(gain);
  const Index groups = n / gsz;
  for (Index r = 0; r < rows; ++r) {
    S rms = std::sqrt(X.row(r).array().square().mean() + eps);
    Index goff = (r % groups) * gsz;
    for (Index c = 0; c < gsz; ++c) Y(r, c) = ga[goff + c] * X(r, c) / rms;
  }
  return g.make(std::move(y), {x, gain}, [x, gain, gsz, eps, n](Graph<S>& gg, int self) {
    const Index rows = gg.val(x).rows() * (n / gsz);
    const Index groups = n / gsz;
    auto X = gg.val(x).mat(rows);
    auto dY = gg.grad(self).mat(rows);
    auto dX = gg.grad(x).mat(rows);
    const auto& ga = gg.val(gain);
    auto& dga = gg.grad(gain);
    for (Index r = 0; r < rows; ++r) {
      S ms = X.row(r).array().square().mean() + eps;
      S rms = std::sqrt(ms);
      Index goff = (r % groups) * gsz;
      S dot = 0;
      for (Index c = 0; c < gsz; ++c) dot += dY(r, c) * ga[goff + c] * X(r, c);
      for (Index c = 0; c < gsz; ++c) {
        dX(r, c) += dY(r, c) * ga[goff + c] / rms -
                    X(r, c) * dot / (static_cast<S>(gsz) * ms * rms);
        dga[goff + c] += dY(r, c) * X(r, c) / rms;
      }
    }
  });
}

/// L2-normalise each last-dim row: y = x / max(||x||, eps).
template <typename S>
int l2_normalize(Graph<S>& g, int x, S eps = S(1e-8)) {
  const Tensor<S>& xv = g.val(x);
  Tensor<S> y(xv.shape());
  auto X = xv.mat();
  auto Y = y.mat();
  for (Index r = 0; r < X.rows(); ++r) {
    S nrm = std::max(X.row(r).norm(), eps);
    Y.row(r) = X.row(r) / nrm;
  }
  return g.make(std::move(y), {x}, [x, eps](Graph<S>& gg, int self) {
    auto X = gg.val(x).mat();
    auto Y = gg.val(self).mat();
    auto dY = gg.grad(self).mat();
    auto dX = gg.grad(x).mat();
    for (Index r = 0; r < X.rows(); ++r) {
      S nrm = std::max(X.row(r).norm(), eps);
      S dot = Y.row(r).dot(dY.row(r));
      dX.row(r) += (dY.row(r) - Y.row(r) * dot) / nrm;
    }
  });
}

template <typename S>
int softmax_lastdim(Graph<S>& g, int x) {
  const Tensor<S>& xv = g.val(x);
  Tensor<S> y(xv.shape());
  auto X = xv.mat();
  auto Y = y.mat();
  for (Index r = 0; r < X.rows(); ++r) {
    auto e = (X.row(r).array() - X.row(r).maxCoeff()).exp().eval();
    Y.row(r) = (e / e.sum()).matrix();
  }
  return g.make(std::move(y), {x}, [x](Graph<S>& gg, int self) {
    auto Y = gg.val(self).mat();
    auto dY = gg.grad(self).mat();
    auto dX = gg.grad(x).mat();
    for (Index r = 0; r < Y.rows(); ++r) {
      S dot = Y.row(r).dot(dY.row(r));
      dX.row(r).array() += Y.row(r).array() * (dY.row(r).array() - dot);
    }
  });
}

// ---- sequence ops ----------------------------------------------------------

/// Causal depthwise convolution with kernel size 3 along time.
/// x [B,L,d], k [d,3] (tap 2 multiplies the current sample), bias [d].
template <typename S>
int depthwise_conv3(Graph<S>& g, int x, int k, int b) {
  const Tensor<S>& xv = g.val(x);
  if (xv.rank() != 3) throw std::invalid_argument("depthwise_conv3: expected [B,L,d]");
  const Index B = xv.dim(0), L = xv.dim(1), d = xv.dim(2);
  Tensor<S> y(xv.shape());
  const S* xd = xv.data();
  const S* kd = g.val(k).data();
  const S* bd = g.val(b).data();
  S* yd = y.data();
  for (Index bi = 0; bi < B; ++bi)
    for (Index t = 0; t < L; ++t)
      for (Index c = 0; c < d; ++c) {
        S acc = bd[c];
        for (Index j = 0; j < 3; ++j) {
          Index src = t - 2 + j;
          if (src >= 0) acc += kd[c * 3 + j] * xd[(bi * L + src) * d + c];
        }
        yd[(bi * L + t) * d + c] = acc;
      }
  return g.make(std::move(y), {x, k, b}, [x, k, b, B, L, d](Graph<S>& gg, int self) {
    const S* xd = gg.val(x).data();
    const S* kd = gg.val(k).data();
    const S* dyd = gg.grad(self).data();
    S* dxd = gg.grad(x).data();
    S* dkd = gg.grad(k).data();
    S* dbd = gg.grad(b).data();
    for (Index bi = 0; bi < B; ++bi)
      for (Index t = 0; t < L; ++t)
        for (Index c = 0; c < d; ++c) {
          S dy = dyd[(bi * L + t) * d + c];
          dbd[c] += dy;
          for (Index j = 0; j < 3; ++j) {
            Index src = t - 2 + j;
            if (src >= 0) {
              dkd[c * 3 + j] += dy * xd[(bi * L + src) * d + c];
              dxd[(bi * L + src) * d + c] += dy * kd[c * 3 + j];
            }
          }
        }
  });
}

/// Per-channel circular convolution of x [B,L,d] with kernels w [d,L],
/// computed in the frequency domain.
template <typename S>
int circular_conv(Graph<S>& g, int x, int w) {
  const Tensor<S>& xv = g.val(x);
  const Tensor<S>& wv = g.val(w);
  if (xv.rank() != 3 || wv.rank() != 2 || wv.dim(0) != xv.dim(2) ||
      wv.dim(1) != xv.dim(1))
    throw std::invalid_argument("circular_conv: expected x [B,L,d], w [d,L]");
  const Index B = xv.dim(0), L = xv.dim(1), d = xv.dim(2);
  if (!is_power_of_two(L))
    throw std::invalid_argument("circular_conv: L must be a power of two");
  Tensor<S> y(xv.shape());
  std::vector<S> xs(L), ys(L);
  for (Index bi = 0; bi < B; ++bi)
    for (Index c = 0; c < d; ++c) {
      for (Index t = 0; t < L; ++t) xs[t] = xv[(bi * L + t) * d + c];
      circular_convolve_1d(xs.data(), wv.data() + c * L, ys.data(), L);
      for (Index t = 0; t < L; ++t) y[(bi * L + t) * d + c] = ys[t];
    }
  return g.make(std::move(y), {x, w}, [x, w, B, L, d](Graph<S>& gg, int self) {
    const Tensor<S>& xv = gg.val(x);
    const Tensor<S>& wv = gg.val(w);
    const Tensor<S>& dy = gg.grad(self);
    Tensor<S>& dx = gg.grad(x);
    Tensor<S>& dw = gg.grad(w);
    std::vector<S> a(L), bbuf(L), out(L);
    for (Index bi = 0; bi < B; ++bi)
      for (Index c = 0; c < d; ++c) {
        for (Index t = 0; t < L; ++t) a[t] = dy[(bi * L + t) * d + c];
        // dx = circular correlation of dy with w
        circular_correlate_1d(a.data(), wv.data() + c * L, out.data(), L);
        for (Index t = 0; t < L; ++t) dx[(bi * L + t) * d + c] += out[t];
        // dw = circular correlation of dy with x, summed over batch
        for (Index t = 0; t < L; ++t) bbuf[t] = xv[(bi * L + t) * d + c];
        circular_correlate_1d(a.data(), bbuf.data(), out.data(), L);
        for (Index t = 0; t < L; ++t) dw.array()[c * L + t] += out[t];
      }
  });
}

/// Swap dims 1 and 2 of a rank-4 tensor [B,A,C,D] -> [B,C,A,D].
template <typename S>
int permute_12(Graph<S>& g, int x) {
  const Tensor<S>& xv = g.val(x);
  if (xv.rank() != 4) throw std::invalid_argument("permute_12: expected rank 4");
  const Index B = xv.dim(0), A = xv.dim(1), C = xv.dim(2), D = xv.dim(3);
  Tensor<S> y({B, C, A, D});
  for (Index b = 0; b < B; ++b)
    for (Index a = 0; a < A; ++a)
      for (Index c = 0; c < C; ++c)
        for (Index e = 0; e < D; ++e)
          y[((b * C + c) * A + a) * D + e] = xv[((b * A + a) * C + c) * D + e];
  return g.make(std::move(y), {x}, [x, B, A, C, D](Graph<S>& gg, int self) {
    const Tensor<S>& dy = gg.grad(self);
    Tensor<S>& dx = gg.grad(x);
    for (Index b = 0; b < B; ++b)
      for (Index a = 0; a < A; ++a)
        for (Index c = 0; c < C; ++c)
          for (Index e = 0; e < D; ++e)
            dx[((b * A + a) * C + c) * D + e] += dy[((b * C + c) * A + a) * D + e];
  });
}

template <typename S>
int reshape(Graph<S>& g, int x, Shape shape) {
  Tensor<S> y = g.val(x).reshaped(shape);
  return g.make(std::move(y), {x}, [x](Graph<S>& gg, int self) {
    gg.grad(x).array() += gg.grad(self).array();
  });
}

/// Select one time position: x [B,L,d] -> [B,d].
template <typename S>
int slice_time(Graph<S>& g, int x, Index t) {
  const Tensor<S>& xv = g.val(x);
  const Index B = xv.dim(0), L = xv.dim(1), d = xv.dim(2);
  Tensor<S> y({B, d});
  for (Index b = 0; b < B; ++b)
    for (Index c = 0; c < d; ++c) y[b * d + c] = xv[(b * L + t) * d + c];
  return g.make(std::move(y), {x}, [x, t, B, L, d](Graph<S>& gg, int self) {
    for (Index b = 0; b < B; ++b)
      for (Index c = 0; c < d; ++c)
        gg.grad(x)[(b * L + t) * d + c] += gg.grad(self)[b * d + c];
  });
}

/// x [B,L,d] with v [B,d] added at time position t.
template <typename S>
int add_at_time(Graph<S>& g, int x, Index t, int v) {
  const Tensor<S>& xv = g.val(x);
  const Index B = xv.dim(0), L = xv.dim(1), d = xv.dim(2);
  Tensor<S> y = xv;
  for (Index b = 0; b < B; ++b)
    for (Index c = 0; c < d; ++c) y[(b * L + t) * d + c] += g.val(v)[b * d + c];
  return g.make(std::move(y), {x, v}, [x, v, t, B, L, d](Graph<S>& gg, int self) {
    gg.grad(x).array() += gg.grad(self).array();
    for (Index b = 0; b < B; ++b)
      for (Index c = 0; c < d; ++c)
        gg.grad(v)[b * d + c] += gg.grad(self)[(b * L + t) * d + c];
  });
}

/// Temporal mean: x [B,L,d] -> [B,d].
template <typename S>
int mean_time(Graph<S>& g, int x) {
  const Tensor<S>& xv = g.val(x);
  const Index B = xv.dim(0), L = xv.dim(1), d = xv.dim(2);
  Tensor<S> y({B, d});
  for (Index b = 0; b < B; ++b)
    for (Index t = 0; t < L; ++t)
      for (Index c = 0; c < d; ++c) y[b * d + c] += xv[(b * L + t) * d + c];
  y.array() /= static_cast<S>(L);
  return g.make(std::move(y), {x}, [x, B, L, d](Graph<S>& gg, int self) {
    const S inv = S(1) / static_cast<S>(L);
    for (Index b = 0; b < B; ++b)
      for (Index t = 0; t < L; ++t)
        for (Index c = 0; c < d; ++c)
          gg.grad(x)[(b * L + t) * d + c] += gg.grad(self)[b * d + c] * inv;
  });
}

/// Broadcast-add a [L,d] table to every batch row of x [B,L,d].
template <typename S>
int broadcast_add_time(Graph<S>& g, int x, int p) {
  const Tensor<S>& xv = g.val(x);
  const Index B = xv.dim(0), rest = xv.numel() / B;
  if (g.val(p).numel() != rest)
    throw std::invalid_argument("broadcast_add_time: table size mismatch");
  Tensor<S> y = xv;
  for (Index b = 0; b < B; ++b)
    for (Index i = 0; i < rest; ++i) y[b * rest + i] += g.val(p)[i];
  return g.make(std::move(y), {x, p}, [x, p, B, rest](Graph<S>& gg, int self) {
    gg.grad(x).array() += gg.grad(self).array();
    for (Index b = 0; b < B; ++b)
      for (Index i = 0; i < rest; ++i)
        gg.grad(p)[i] += gg.grad(self)[b * rest + i];
  });
}

/// Repeat a [n,d] table B times -> [B,n,d].
template <typename S>
int tile0(Graph<S>& g, int p, Index B) {
  const Tensor<S>& pv = g.val(p);
  Shape out_shape = pv.shape();
  out_shape.insert(out_shape.begin(), B);
  Tensor<S> y(out_shape);
  const Index rest = pv.numel();
  for (Index b = 0; b < B; ++b)
    for (Index i = 0; i < rest; ++i) y[b * rest + i] = pv[i];
  return g.make(std::move(y), {p}, [p, B, rest](Graph<S>& gg, int self) {
    for (Index b = 0; b < B; ++b)
      for (Index i = 0; i < rest; ++i) gg.grad(p)[i] += gg.grad(self)[b * rest + i];
  });
}

/// Concatenate along the first dimension.
template <typename S>
int concat0(Graph<S>& g, int a, int b) {
  const Tensor<S>& av = g.val(a);
  const Tensor<S>& bv = g.val(b);
  Shape sa = av.shape(), sb = bv.shape();
  if (Shape(sa.begin() + 1, sa.end()) != Shape(sb.begin() + 1, sb.end()))
    throw std::invalid_argument("concat0: trailing dims mismatch");
  Shape out = sa;
  out[0] = sa[0] + sb[0];
  Tensor<S> y(out);
  y.array().head(av.numel()) = av.array();
  y.array().tail(bv.numel()) = bv.array();
  return g.make(std::move(y), {a, b}, [a, b](Graph<S>& gg, int self) {
    const Index na = gg.val(a).numel(), nb = gg.val(b).numel();
    gg.grad(a).array() += gg.grad(self).array().head(na);
    gg.grad(b).array() += gg.grad(self).array().tail(nb);
  });
}

// ---- reductions and losses -------------------------------------------------

template <typename S>
int mean_all(Graph<S>& g, int x) {
  Tensor<S> y({1});
  y[0] = g.val(x).array().mean();
  return g.make(std::move(y), {x}, [x](Graph<S>& gg, int self) {
    gg.grad(x).array() += gg.grad(self)[0] / static_cast<S>(gg.val(x).numel());
  });
}

template <typename S>
int sum_all(Graph<S>& g, int x) {
  Tensor<S> y({1});
  y[0] = g.val(x).array().sum();
  return g.make(std::move(y), {x}, [x](Graph<S>& gg, int self) {
    gg.grad(x).array() += gg.grad(self)[0];
  });
}

/// Mean of squared differences.
template <typename S>
int mse_loss(Graph<S>& g, int a, int b) {
  if (!g.val(a).same_shape(g.val(b))) throw std::invalid_argument("mse_loss: shape mismatch");
  Tensor<S> y({1});
  y[0] = (g.val(a).array() - g.val(b).array()).square().mean();
  return g.make(std::move(y), {a, b}, [a, b](Graph<S>& gg, int self) {
    const S c = S(2) * gg.grad(self)[0] / static_cast<S>(gg.val(a).numel());
    auto diff = (gg.val(a).array() - gg.val(b).array()).eval();
    gg.grad(a).array() += c * diff;
    gg.grad(b).array() -= c * diff;
  });
}

/// Mean absolute error.
template <typename S>
int l1_loss(Graph<S>& g, int a, int b) {
  if (!g.val(a).same_shape(g.val(b))) throw std::invalid_argument("l1_loss: shape mismatch");
  Tensor<S> y({1});
  y[0] = (g.val(a).array() - g.val(b).array()).abs().mean();
  return g.make(std::move(y), {a, b}, [a, b](Graph<S>& gg, int self) {
    const S c = gg.grad(self)[0] / static_cast<S>(gg.val(a).numel());
    auto sgn = (gg.val(a).array() - gg.val(b).array()).sign().eval();
    gg.grad(a).array() += c * sgn;
    gg.grad(b).array() -= c * sgn;
  });
}

}  // namespace lwm
