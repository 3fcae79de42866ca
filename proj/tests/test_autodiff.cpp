#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <functional>

#include "lwm/gradcheck.hpp"
#include "lwm/objective.hpp"

using namespace lwm;

namespace {

Tensord randn(Shape shape, std::uint64_t seed, double std = 1.0) {
  Tensord t(shape);
  RngStream rng(seed);
  rng.fill_normal(t, 0.0, std);
  return t;
}

// Checks d(loss)/d(x) where loss = sum(build(x) * w) with a fixed random w.
using Builder = std::function<int(Graph<double>&, int)>;

double op_grad_err(Shape in_shape, const Builder& build, std::uint64_t seed = 1,
                   double step = 1e-5) {
  Tensord x0 = randn(in_shape, seed);
  // probe the output shape once to build the weighting tensor
  Shape out_shape;
  {
    Graph<double> g;
    out_shape = g.val(build(g, g.input(x0))).shape();
  }
  Tensord w = randn(out_shape, seed + 101);
  auto f = [&](Tensord x) {
    Graph<double> g;
    Tensord grad(x.shape());
    int out = build(g, g.leaf(x, &grad));
    int loss = sum_all(g, mul(g, out, g.input(w)));
    const double v = g.val(loss)[0];
    g.backward(loss);
    return std::pair<double, Tensord>{v, grad};
  };
  return check_gradient(f, x0, step);
}

}  // namespace

TEST_CASE("elementwise op gradients") {
  const Shape s{2, 5};
  auto unary = [&](auto op) {
    return op_grad_err(s, [op](Graph<double>& g, int x) { return op(g, x); });
  };
  CHECK(unary([](Graph<double>& g, int x) { return sigmoid(g, x); }) < 1e-4);
  CHECK(unary([](Graph<double>& g, int x) { return relu(g, x); }) < 1e-4);
  CHECK(unary([](Graph<double>& g, int x) { return silu(g, x); }) < 1e-4);
  CHECK(unary([](Graph<double>& g, int x) { return gelu(g, x); }) < 1e-4);
  CHECK(unary([](Graph<double>& g, int x) { return tanh_op(g, x); }) < 1e-4);
  CHECK(unary([](Graph<double>& g, int x) { return scale(g, x, 1.7); }) < 1e-4);

  Tensord other = randn(s, 33);
  CHECK(op_grad_err(s, [&](Graph<double>& g, int x) {
          int o = g.input(other);
          return add(g, mul(g, x, o), sub(g, x, o));
        }) < 1e-4);
  CHECK(op_grad_err(s, [&](Graph<double>& g, int x) {
          return silu_gate(g, x, g.input(other));
        }) < 1e-4);
  CHECK(op_grad_err(s, [&](Graph<double>& g, int x) {
          return silu_gate(g, g.input(other), x);
        }) < 1e-4);
}

TEST_CASE("matmul / bias / bmm gradients") {
  Tensord w = randn({5, 3}, 2);
  CHECK(op_grad_err({2, 4, 5}, [&](Graph<double>& g, int x) {
          return matmul(g, x, g.input(w));
        }) < 1e-4);
  Tensord x = randn({2, 4, 5}, 3);
  CHECK(op_grad_err({5, 3}, [&](Graph<double>& g, int wid) {
          return matmul(g, g.input(x), wid);
        }) < 1e-4);
  Tensord b = randn({3}, 4);
  CHECK(op_grad_err({4, 3}, [&](Graph<double>& g, int xid) {
          return bias_add(g, xid, g.input(b));
        }) < 1e-4);
  CHECK(op_grad_err({3}, [&](Graph<double>& g, int bid) {
          Tensord xx = randn({4, 3}, 5);
          return bias_add(g, g.input(xx), bid);
        }) < 1e-4);

  for (bool ta : {false, true})
    for (bool tb : {false, true}) {
      Shape sa = ta ? Shape{2, 4, 3} : Shape{2, 3, 4};
      Shape sb = tb ? Shape{2, 5, 4} : Shape{2, 4, 5};
      Tensord bb = randn(sb, 6);
      CHECK(op_grad_err(sa, [&](Graph<double>& g, int a) {
              return bmm(g, a, g.input(bb), ta, tb);
            }) < 1e-4);
      Tensord aa = randn(sa, 7);
      CHECK(op_grad_err(sb, [&](Graph<double>& g, int b2) {
              return bmm(g, g.input(aa), b2, ta, tb);
            }) < 1e-4);
    }
}

TEST_CASE("normalisation gradients") {
  Tensord gain = randn({6}, 8), shift = randn({6}, 9);
  CHECK(op_grad_err({3, 6}, [&](Graph<double>& g, int x) {
          return layer_norm(g, x, g.input(gain), g.input(shift));
        }) < 1e-4);
  CHECK(op_grad_err({6}, [&](Graph<double>& g, int ga) {
          Tensord x = randn({3, 6}, 10);
          return layer_norm(g, g.input(x), ga, g.input(shift));
        }) < 1e-4);
  CHECK(op_grad_err({6}, [&](Graph<double>& g, int sh) {
          Tensord x = randn({3, 6}, 11);
          return layer_norm(g, g.input(x), g.input(gain), sh);
        }) < 1e-4);

  // grouped rms norm
  CHECK(op_grad_err({3, 6}, [&](Graph<double>& g, int x) {
          return rms_norm(g, x, g.input(gain), 3);
        }) < 1e-4);
  CHECK(op_grad_err({6}, [&](Graph<double>& g, int ga) {
          Tensord x = randn({3, 6}, 12);
          return rms_norm(g, g.input(x), ga, 3);
        }) < 1e-4);

  CHECK(op_grad_err({4, 5}, [](Graph<double>& g, int x) {
          return l2_normalize(g, x);
        }) < 1e-4);
  CHECK(op_grad_err({4, 5}, [](Graph<double>& g, int x) {
          return softmax_lastdim(g, x);
        }) < 1e-4);
}

TEST_CASE("sequence op gradients") {
  Tensord k = randn({4, 3}, 13), b = randn({4}, 14);
  CHECK(op_grad_err({2, 6, 4}, [&](Graph<double>& g, int x) {
          return depthwise_conv3(g, x, g.input(k), g.input(b));
        }) < 1e-4);
  CHECK(op_grad_err({4, 3}, [&](Graph<double>& g, int kid) {
          Tensord x = randn({2, 6, 4}, 15);
          return depthwise_conv3(g, g.input(x), kid, g.input(b));
        }) < 1e-4);

  Tensord w = randn({3, 8}, 16);
  CHECK(op_grad_err({2, 8, 3}, [&](Graph<double>& g, int x) {
          return circular_conv(g, x, g.input(w));
        }) < 1e-4);
  CHECK(op_grad_err({3, 8}, [&](Graph<double>& g, int wid) {
          Tensord x = randn({2, 8, 3}, 17);
          return circular_conv(g, g.input(x), wid);
        }) < 1e-4);

  CHECK(op_grad_err({2, 3, 4, 5}, [](Graph<double>& g, int x) {
          return permute_12(g, x);
        }) < 1e-4);
  CHECK(op_grad_err({2, 5, 3}, [](Graph<double>& g, int x) {
          return slice_time(g, x, 4);
        }) < 1e-4);
  Tensord v = randn({2, 3}, 18);
  CHECK(op_grad_err({2, 5, 3}, [&](Graph<double>& g, int x) {
          return add_at_time(g, x, 0, g.input(v));
        }) < 1e-4);
  CHECK(op_grad_err({2, 3}, [&](Graph<double>& g, int vid) {
          Tensord x = randn({2, 5, 3}, 19);
          return add_at_time(g, g.input(x), 0, vid);
        }) < 1e-4);
  CHECK(op_grad_err({2, 5, 3}, [](Graph<double>& g, int x) {
          return mean_time(g, x);
        }) < 1e-4);
  Tensord pos = randn({5, 3}, 20);
  CHECK(op_grad_err({2, 5, 3}, [&](Graph<double>& g, int x) {
          return broadcast_add_time(g, x, g.input(pos));
        }) < 1e-4);
  CHECK(op_grad_err({5, 3}, [&](Graph<double>& g, int p) {
          Tensord x = randn({2, 5, 3}, 21);
          return broadcast_add_time(g, g.input(x), p);
        }) < 1e-4);
  CHECK(op_grad_err({4, 3}, [](Graph<double>& g, int p) {
          return tile0(g, p, 3);
        }) < 1e-4);
  Tensord other = randn({3, 4}, 22);
  CHECK(op_grad_err({2, 4}, [&](Graph<double>& g, int a) {
          return concat0(g, a, g.input(other));
        }) < 1e-4);
}

TEST_CASE("loss gradients") {
  Tensord t = randn({3, 4}, 23);
  auto loss_err = [&](auto make_loss) {
    Tensord x0 = randn({3, 4}, 24);
    auto f = [&](Tensord x) {
      Graph<double> g;
      Tensord grad(x.shape());
      int loss = make_loss(g, g.leaf(x, &grad), g.input(t));
      const double v = g.val(loss)[0];
      g.backward(loss);
      return std::pair<double, Tensord>{v, grad};
    };
    return check_gradient(f, x0);
  };
  CHECK(loss_err([](Graph<double>& g, int a, int b) { return mse_loss(g, a, b); }) < 1e-4);
  CHECK(loss_err([](Graph<double>& g, int a, int b) { return l1_loss(g, a, b); }) < 1e-4);
  CHECK(op_grad_err({3, 4}, [](Graph<double>& g, int x) {
          // mean_all through a nonlinearity
          int y = silu(g, x);
          int m = mean_all(g, y);
          return m;
        }) < 1e-4);
}

TEST_CASE("gdn scan gradients (sequential and chunkwise)") {
  const Index B = 2, L = 7, H = 2, dk = 3, dvh = 2, chunk = 3;
  Tensord q0 = randn({B, L, H * dk}, 30, 0.7);
  Tensord k0 = randn({B, L, H * dk}, 31, 0.7);
  Tensord v0 = randn({B, L, H * dvh}, 32, 0.7);
  Tensord a0 = randn({B, L, H}, 33, 0.5);
  Tensord g0 = randn({B, L, H}, 34, 0.3);
  // keep gates positive and bounded as in the real block
  for (Index i = 0; i < a0.numel(); ++i) a0[i] = 0.3 + 0.5 / (1 + std::exp(-a0[i]));
  for (Index i = 0; i < g0.numel(); ++i) g0[i] = 0.4 + 0.5 / (1 + std::exp(-g0[i]));

  for (bool chunkwise : {false, true}) {
    Tensord w = randn({B, L, H * dvh}, 35);
    auto scan_err = [&](int which) {
      Tensord inputs[5] = {q0, k0, v0, a0, g0};
      auto f = [&](Tensord x) {
        Graph<double> g;
        Tensord grad(x.shape());
        int ids[5];
        for (int i = 0; i < 5; ++i)
          ids[i] = (i == which) ? g.leaf(x, &grad) : g.input(inputs[i]);
        auto res = gdn_scan(g, ids[0], ids[1], ids[2], ids[3], ids[4], H, chunk,
                            chunkwise);
        int loss = sum_all(g, mul(g, res.out, g.input(w)));
        const double val = g.val(loss)[0];
        g.backward(loss);
        return std::pair<double, Tensord>{val, grad};
      };
      return check_gradient(f, inputs[which]);
    };
    for (int which = 0; which < 5; ++which) {
      INFO("chunkwise=", chunkwise, " input=", which);
      CHECK(scan_err(which) < 1e-4);
    }
  }
}

TEST_CASE("sigreg gradient") {
  auto f = [&](Tensord x) {
    Graph<double> g;
    Tensord grad(x.shape());
    int loss = sigreg(g, g.leaf(x, &grad), RngStream(99), 16, 9);
    const double v = g.val(loss)[0];
    g.backward(loss);
    return std::pair<double, Tensord>{v, grad};
  };
  CHECK(check_gradient(f, randn({6, 5}, 40)) < 1e-4);
}
