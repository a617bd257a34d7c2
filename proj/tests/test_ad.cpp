#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "doctest.h"
#include "oracles.hpp"
#include "v2p/ad/checkpoint.hpp"
#include "v2p/ad/graph.hpp"
#include "v2p/ad/losses.hpp"
#include "v2p/ad/mlp.hpp"
#include "v2p/ad/optim.hpp"
#include "v2p/ad/params.hpp"
#include "v2p/rng.hpp"

using namespace v2p;
using ad::Graph;
using ad::Tensor;

namespace {

// Random values bounded away from zero so ReLU/abs kinks cannot sit inside
// the finite-difference stencil.
std::vector<double> random_away_from_zero(Rng& rng, std::size_t n,
                                          double lo = 0.1, double hi = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) {
    double mag = rng.uniform(lo, hi);
    x = rng.uniform01() < 0.5 ? -mag : mag;
  }
  return v;
}

std::vector<double> random_uniform(Rng& rng, std::size_t n, double lo,
                                   double hi) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

// Builds loss(x) through `build`, runs backward, and checks the input
// gradient against central differences.
void expect_grad_ok(
    const std::function<Tensor(Graph&, Tensor)>& build,
    const std::vector<double>& x0, int rows, int cols, double tol = 1e-6) {
  auto eval = [&](const std::vector<double>& x) {
    Graph g;
    Tensor in = g.constant(rows, cols, x);
    return build(g, in).scalar();
  };
  Graph g;
  Tensor in = g.constant(rows, cols, x0);
  Tensor loss = build(g, in);
  g.backward(loss);
  auto r = testutil::check_gradient(eval, x0, in.grad());
  CAPTURE(r.worst_index);
  CAPTURE(r.analytic_at_worst);
  CAPTURE(r.numeric_at_worst);
  CHECK(r.max_rel_err < tol);
}

}  // namespace

TEST_CASE("graph basics: constants, scalars, finiteness guard") {
  Graph g;
  Tensor c = g.constant(2, 2, {1, 2, 3, 4});
  CHECK(c.rows() == 2);
  CHECK(c.cols() == 2);
  CHECK(c.value_at(1, 0) == 3.0);
  CHECK(g.scalar(7.5).scalar() == 7.5);
  CHECK_THROWS_AS(g.constant(2, 2, {1, 2, 3}), std::runtime_error);
  double inf = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(g.constant(1, 1, {inf}), std::runtime_error);
  CHECK_THROWS_AS(g.constant(1, 1, {std::nan("")}), std::runtime_error);
  g.set_check_finite(false);
  CHECK_NOTHROW(g.constant(1, 1, {inf}));
}

TEST_CASE("elementwise ops: forward values and gradients") {
  Rng rng(1);
  std::vector<double> x = random_away_from_zero(rng, 12);

  SUBCASE("add/sub/scale") {
    Graph g;
    Tensor a = g.constant(3, 4, x);
    Tensor b = g.constant(3, 4, random_uniform(rng, 12, -1, 1));
    Tensor s = g.sub(g.add(a, b), b);
    for (std::size_t i = 0; i < 12; ++i) {
      CHECK(s.values()[i] == doctest::Approx(x[i]).epsilon(1e-15));
    }
    std::vector<double> y = random_uniform(rng, 12, -1, 1);
    expect_grad_ok(
        [&](Graph& gg, Tensor in) {
          Tensor other = gg.constant(3, 4, y);
          return gg.sum_all(gg.scale(gg.sub(gg.add(in, other), in), 2.0));
        },
        x, 3, 4);
    expect_grad_ok(
        [&](Graph& gg, Tensor in) {
          Tensor other = gg.constant(3, 4, y);
          return gg.mean_all(gg.add(gg.scale(in, -1.5), other));
        },
        x, 3, 4);
  }

  SUBCASE("mul_const and add_rowvec") {
    std::vector<double> w = random_uniform(rng, 12, -2, 2);
    expect_grad_ok(
        [&](Graph& gg, Tensor in) {
          return gg.sum_all(gg.mul_const(in, w));
        },
        x, 3, 4);
    std::vector<double> bias = random_uniform(rng, 4, -1, 1);
    Graph g;
    Tensor a = g.constant(3, 4, x);
    Tensor b = g.constant(1, 4, bias);
    Tensor out = g.add_rowvec(a, b);
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 4; ++c) {
        CHECK(out.value_at(r, c) ==
              doctest::Approx(x[std::size_t(r) * 4 + c] + bias[std::size_t(c)]));
      }
    }
    // Gradient with respect to the bias itself.
    auto eval = [&](const std::vector<double>& bv) {
      Graph gg;
      Tensor aa = gg.constant(3, 4, x);
      Tensor bb = gg.constant(1, 4, bv);
      return gg.sum_all(gg.relu(gg.add_rowvec(aa, bb))).scalar();
    };
    Graph g2;
    Tensor a2 = g2.constant(3, 4, x);
    Tensor b2 = g2.constant(1, 4, bias);
    g2.backward(g2.sum_all(g2.relu(g2.add_rowvec(a2, b2))));
    auto r = testutil::check_gradient(eval, bias, b2.grad());
    CHECK(r.max_rel_err < 1e-6);
  }

  SUBCASE("relu forward and gradient") {
    Graph g;
    Tensor a = g.constant(1, 4, {-2, -0.5, 0.5, 2});
    Tensor out = g.relu(a);
    CHECK(out.values() == std::vector<double>{0, 0, 0.5, 2});
    expect_grad_ok(
        [](Graph& gg, Tensor in) { return gg.sum_all(gg.relu(in)); }, x, 3,
        4);
  }

  SUBCASE("sigmoid forward and gradient") {
    Graph g;
    Tensor a = g.constant(1, 3, {0.0, 100.0, -100.0});
    Tensor out = g.sigmoid(a);
    CHECK(out.values()[0] == 0.5);
    CHECK(out.values()[1] == doctest::Approx(1.0));
    CHECK(out.values()[2] == doctest::Approx(0.0));
    expect_grad_ok(
        [](Graph& gg, Tensor in) { return gg.mean_all(gg.sigmoid(in)); }, x,
        3, 4);
  }
}

TEST_CASE("matmul matches the naive triple loop and its gradients check out") {
  Rng rng(2);
  int N = 5, K = 4, M = 3;
  std::vector<double> av = random_uniform(rng, std::size_t(N * K), -2, 2);
  std::vector<double> bv = random_uniform(rng, std::size_t(K * M), -2, 2);

  Graph g;
  Tensor a = g.constant(N, K, av);
  Tensor b = g.constant(K, M, bv);
  Tensor c = g.matmul(a, b);
  for (int i = 0; i < N; ++i) {
    for (int j = 0; j < M; ++j) {
      double acc = 0;
      for (int k = 0; k < K; ++k) {
        acc += av[std::size_t(i) * K + k] * bv[std::size_t(k) * M + j];
      }
      CHECK(c.value_at(i, j) == doctest::Approx(acc).epsilon(1e-12));
    }
  }
  CHECK_THROWS_AS(g.matmul(a, a), std::runtime_error);

  // Gradient wrt A.
  expect_grad_ok(
      [&](Graph& gg, Tensor in) {
        Tensor bb = gg.constant(K, M, bv);
        return gg.sum_all(gg.relu(gg.matmul(in, bb)));
      },
      av, N, K);
  // Gradient wrt B.
  expect_grad_ok(
      [&](Graph& gg, Tensor in) {
        Tensor aa = gg.constant(N, K, av);
        return gg.sum_all(gg.relu(gg.matmul(aa, in)));
      },
      bv, K, M);
}

TEST_CASE("structural ops: reshape, concat, gather, scatter, weighted sum") {
  Rng rng(3);
  std::vector<double> x = random_away_from_zero(rng, 12);

  SUBCASE("reshape is a row-major view") {
    Graph g;
    Tensor a = g.constant(3, 4, x);
    Tensor r = g.reshape(a, 2, 6);
    CHECK(r.values() == x);
    CHECK_THROWS_AS(g.reshape(a, 5, 2), std::runtime_error);
    expect_grad_ok(
        [](Graph& gg, Tensor in) {
          return gg.sum_all(gg.relu(gg.reshape(in, 4, 3)));
        },
        x, 3, 4);
  }

  SUBCASE("concat_cols and concat_rows") {
    Graph g;
    Tensor a = g.constant(2, 2, {1, 2, 3, 4});
    Tensor b = g.constant(2, 1, {5, 6});
    Tensor cc = g.concat_cols({a, b});
    CHECK(cc.values() == std::vector<double>{1, 2, 5, 3, 4, 6});
    Tensor c2 = g.concat_rows({a, g.constant(1, 2, {7, 8})});
    CHECK(c2.values() == std::vector<double>{1, 2, 3, 4, 7, 8});
    std::vector<double> y = random_uniform(rng, 6, -1, 1);
    expect_grad_ok(
        [&](Graph& gg, Tensor in) {
          Tensor other = gg.constant(3, 2, y);
          return gg.sum_all(gg.relu(gg.concat_cols({in, other})));
        },
        x, 3, 4);
    expect_grad_ok(
        [&](Graph& gg, Tensor in) {
          Tensor other = gg.constant(2, 4, {y[0], y[1], y[2], y[3], y[4],
                                            y[5], 0.3, -0.7});
          return gg.sum_all(gg.relu(gg.concat_rows({other, in})));
        },
        x, 3, 4);
  }

  SUBCASE("gather_rows duplicates and bounds") {
    Graph g;
    Tensor a = g.constant(3, 2, {1, 2, 3, 4, 5, 6});
    Tensor gg = g.gather_rows(a, {2, 0, 2});
    CHECK(gg.values() == std::vector<double>{5, 6, 1, 2, 5, 6});
    CHECK_THROWS_AS(g.gather_rows(a, {3}), std::runtime_error);
    expect_grad_ok(
        [](Graph& gx, Tensor in) {
          return gx.sum_all(gx.relu(gx.gather_rows(in, {1, 1, 0, 2})));
        },
        x, 3, 4);
  }

  SUBCASE("scatter_sum_rows accumulates into destinations") {
    Graph g;
    Tensor a = g.constant(3, 2, {1, 2, 3, 4, 5, 6});
    Tensor s = g.scatter_sum_rows(a, {1, 1, 0}, 3);
    CHECK(s.values() == std::vector<double>{5, 6, 4, 6, 0, 0});
    CHECK_THROWS_AS(g.scatter_sum_rows(a, {0, 1}, 3), std::runtime_error);
    CHECK_THROWS_AS(g.scatter_sum_rows(a, {0, 1, 3}, 3), std::runtime_error);
    expect_grad_ok(
        [](Graph& gx, Tensor in) {
          return gx.sum_all(gx.relu(gx.scatter_sum_rows(in, {2, 0, 2}, 4)));
        },
        x, 3, 4);
  }

  SUBCASE("weighted_sum_rows mixes with fixed weights") {
    Graph g;
    Tensor a = g.constant(3, 2, {1, 2, 3, 4, 5, 6});
    std::vector<Graph::MixRow> mix = {
        {{0, 0.5}, {1, 0.5}},
        {{2, 2.0}},
        {},
    };
    Tensor w = g.weighted_sum_rows(a, mix);
    CHECK(w.values() == std::vector<double>{2, 3, 10, 12, 0, 0});
    expect_grad_ok(
        [&](Graph& gx, Tensor in) {
          std::vector<Graph::MixRow> m = {{{0, 0.25}, {2, 0.75}},
                                          {{1, 1.5}, {1, -0.5}}};
          return gx.sum_all(gx.relu(gx.weighted_sum_rows(in, m)));
        },
        x, 3, 4);
  }
}

TEST_CASE("max_pool_groups: values, tie-breaking, empty groups, gradient") {
  Graph g;
  // Column 0 has a tie in group 0 between rows 0 and 2.
  Tensor a = g.constant(4, 2, {5, 1, 3, 8, 5, 2, 7, 0});
  Tensor p = g.max_pool_groups(a, {{0, 1, 2}, {3}, {}});
  CHECK(p.values() == std::vector<double>{5, 8, 7, 0, 0, 0});
  g.backward(g.sum_all(p));
  // Tie on column 0 routes to row 0 (earliest listed), not row 2.
  CHECK(a.grad() == std::vector<double>{1, 0, 0, 1, 0, 0, 1, 1});

  Rng rng(4);
  // Distinct values so the argmax is stable under the FD stencil.
  std::vector<double> x = {0.9, -0.4, 0.2, 0.7, -0.8, 0.1, 0.5, -0.2,
                           -0.6, 0.3, 0.8, -0.9};
  expect_grad_ok(
      [](Graph& gg, Tensor in) {
        return gg.sum_all(
            gg.relu(gg.max_pool_groups(in, {{0, 2}, {1}, {2, 1, 0}})));
      },
      x, 3, 4);
}

TEST_CASE("backward of a sum of losses equals the sum of backwards") {
  Rng rng(5);
  std::vector<double> x = random_away_from_zero(rng, 8);
  std::vector<double> w = random_uniform(rng, 8, -1, 1);

  auto build_l1 = [&](Graph& g, Tensor in) {
    return g.sum_all(g.relu(in));
  };
  auto build_l2 = [&](Graph& g, Tensor in) {
    return g.mean_all(g.mul_const(in, w));
  };

  Graph ga;
  Tensor ia = ga.constant(2, 4, x);
  ga.backward(ga.add(build_l1(ga, ia), build_l2(ga, ia)));

  Graph g1;
  Tensor i1 = g1.constant(2, 4, x);
  g1.backward(build_l1(g1, i1));
  Graph g2;
  Tensor i2 = g2.constant(2, 4, x);
  g2.backward(build_l2(g2, i2));

  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK(ia.grad()[i] ==
          doctest::Approx(i1.grad()[i] + i2.grad()[i]).epsilon(1e-15));
  }
}

TEST_CASE("focal loss: examples, labels, gradient through a sigmoid") {
  SUBCASE("confident-correct limit tends to zero") {
    Graph g;
    Tensor p = g.constant(1, 2, {1.0 - 1e-9, 1e-9});
    double v = ad::focal_loss(g, p, {1.0, 0.0}).scalar();
    CHECK(v < 1e-12);
  }
  SUBCASE("hand value at p=0.5, y=1") {
    Graph g;
    Tensor p = g.constant(1, 1, {0.5});
    double v = ad::focal_loss(g, p, {1.0}).scalar();
    CHECK(v == doctest::Approx(0.25 * 0.25 * std::log(2.0)).epsilon(1e-12));
    CHECK(v == doctest::Approx(0.04332).epsilon(1e-3));
  }
  SUBCASE("labels restricted to 0/1") {
    Graph g;
    Tensor p = g.constant(1, 2, {0.5, 0.5});
    CHECK_THROWS_AS(ad::focal_loss(g, p, {1.0, 0.5}), std::runtime_error);
    CHECK_THROWS_AS(ad::focal_loss(g, p, {1.0}), std::runtime_error);
  }
  SUBCASE("gradient vs finite differences (logits input)") {
    Rng rng(6);
    std::vector<double> logits = random_uniform(rng, 10, -2.5, 2.5);
    std::vector<double> labels(10);
    for (double& y : labels) y = rng.uniform01() < 0.4 ? 1.0 : 0.0;
    expect_grad_ok(
        [&](Graph& g, Tensor in) {
          return ad::focal_loss(g, g.sigmoid(in), labels);
        },
        logits, 2, 5);
    // Non-default alpha/gamma as well.
    expect_grad_ok(
        [&](Graph& g, Tensor in) {
          return ad::focal_loss(g, g.sigmoid(in), labels, 0.7, 3.0);
        },
        logits, 2, 5);
  }
}

TEST_CASE("bce loss: examples and gradient") {
  SUBCASE("p equals the label lands at the clamp floor") {
    Graph g;
    Tensor p = g.constant(1, 2, {1.0, 0.0});
    double v = ad::bce_loss(g, p, {1.0, 0.0}).scalar();
    CHECK(v == doctest::Approx(-std::log(1.0 - ad::kProbEps)).epsilon(1e-9));
    CHECK(v < 1e-6);
  }
  SUBCASE("p=0.5 gives ln 2") {
    Graph g;
    Tensor p = g.constant(2, 1, {0.5, 0.5});
    double v = ad::bce_loss(g, p, {1.0, 0.0}).scalar();
    CHECK(v == doctest::Approx(std::log(2.0)).epsilon(1e-14));
  }
  SUBCASE("gradient vs finite differences") {
    Rng rng(7);
    std::vector<double> logits = random_uniform(rng, 8, -2.5, 2.5);
    std::vector<double> labels(8);
    for (double& y : labels) y = rng.uniform01() < 0.5 ? 1.0 : 0.0;
    expect_grad_ok(
        [&](Graph& g, Tensor in) {
          return ad::bce_loss(g, g.sigmoid(in), labels);
        },
        logits, 1, 8);
  }
}

TEST_CASE("smooth L1: hand values and gradient") {
  Graph g;
  Tensor pred = g.constant(1, 3, {1.0, 1.5, 3.0});
  Tensor out = ad::smooth_l1(g, pred, {1.0, 1.0, 1.0});
  CHECK(out.values()[0] == 0.0);
  CHECK(out.values()[1] == doctest::Approx(0.125).epsilon(1e-15));
  CHECK(out.values()[2] == doctest::Approx(1.5).epsilon(1e-15));

  Rng rng(8);
  std::vector<double> target = random_uniform(rng, 12, -1, 1);
  // Keep |d| away from the kink at 1.
  std::vector<double> pv(12);
  for (std::size_t i = 0; i < 12; ++i) {
    double off = rng.uniform01() < 0.5 ? rng.uniform(0.05, 0.8)
                                       : rng.uniform(1.2, 2.5);
    pv[i] = target[i] + (rng.uniform01() < 0.5 ? -off : off);
  }
  expect_grad_ok(
      [&](Graph& g2, Tensor in) {
        return g2.sum_all(ad::smooth_l1(g2, in, target));
      },
      pv, 3, 4);
  // Masked mean, the way the refinement losses consume it.
  std::vector<double> mask = {1, 0, 1, 1, 0, 0, 1, 0, 1, 1, 0, 1};
  expect_grad_ok(
      [&](Graph& g2, Tensor in) {
        Tensor e = ad::smooth_l1(g2, in, target);
        return g2.scale(g2.sum_all(g2.mul_const(e, mask)), 1.0 / 7.0);
      },
      pv, 3, 4);
}

TEST_CASE("mlp: identity, constant bias, gradients, shape errors") {
  SUBCASE("identity single layer") {
    ad::ParamStore store(0);
    ad::ParamStore::Entry& w = store.ensure("id.l0.w", 3, 3, true);
    w.value = {1, 0, 0, 0, 1, 0, 0, 0, 1};
    store.ensure("id.l0.b", 1, 3, true);  // zero bias
    Graph g;
    Tensor x = g.constant(2, 3, {1, 2, 3, 4, 5, 6});
    Tensor y = ad::mlp_forward(g, store, "id", {{3, 3}}, x);
    CHECK(y.values() == std::vector<double>{1, 2, 3, 4, 5, 6});
  }
  SUBCASE("zero weights, fixed bias") {
    ad::ParamStore store(0);
    store.ensure("zb.l0.w", 3, 2, true);
    ad::ParamStore::Entry& b = store.ensure("zb.l0.b", 1, 2, true);
    b.value = {0.25, -1.5};
    Graph g;
    Tensor x = g.constant(4, 3, std::vector<double>(12, 9.0));
    Tensor y = ad::mlp_forward(g, store, "zb", {{3, 2}}, x);
    for (int r = 0; r < 4; ++r) {
      CHECK(y.value_at(r, 0) == 0.25);
      CHECK(y.value_at(r, 1) == -1.5);
    }
  }
  SUBCASE("two-layer gradient wrt input and parameters") {
    Rng rng(9);
    ad::ParamStore store(42);
    ad::MlpSpec spec{{4, 6, 2}};
    std::vector<double> x0 = random_uniform(rng, 12, -1, 1);

    // Input gradient.
    auto eval_x = [&](const std::vector<double>& xv) {
      Graph g;
      Tensor x = g.constant(3, 4, xv);
      return g.sum_all(g.sigmoid(ad::mlp_forward(g, store, "m", spec, x)))
          .scalar();
    };
    Graph g;
    Tensor x = g.constant(3, 4, x0);
    Tensor loss = g.sum_all(g.sigmoid(ad::mlp_forward(g, store, "m", spec, x)));
    g.backward(loss);
    auto rx = testutil::check_gradient(eval_x, x0, x.grad());
    CHECK(rx.max_rel_err < 1e-6);

    // Parameter gradients, every layer, via the param-grad map.
    auto grads = g.param_grads();
    REQUIRE(grads.size() == 4);  // w+b per layer
    for (const auto& [name, analytic] : grads) {
      std::vector<double> p0 = store.at(name).value;
      auto eval_p = [&](const std::vector<double>& pv) {
        store.at(name).value = pv;
        Graph gg;
        Tensor xx = gg.constant(3, 4, x0);
        double out =
            gg.sum_all(gg.sigmoid(ad::mlp_forward(gg, store, "m", spec, xx)))
                .scalar();
        store.at(name).value = p0;
        return out;
      };
      auto rp = testutil::check_gradient(eval_p, p0, analytic);
      CAPTURE(name);
      CHECK(rp.max_rel_err < 1e-6);
    }
  }
  SUBCASE("shape mismatch names both shapes") {
    ad::ParamStore store(0);
    Graph g;
    Tensor x = g.constant(2, 5, std::vector<double>(10, 0.0));
    CHECK_THROWS_WITH_AS(ad::mlp_forward(g, store, "m", {{4, 2}}, x),
                         doctest::Contains("2x5"), std::runtime_error);
    CHECK_THROWS_AS(ad::mlp_forward(g, store, "m", {{4}}, x),
                    std::runtime_error);
  }
}

TEST_CASE("param store: order-independent deterministic initialization") {
  ad::ParamStore s1(123), s2(123), s3(321);
  s1.ensure("a.w", 8, 4, false);
  s1.ensure("b.w", 4, 4, false);
  s2.ensure("b.w", 4, 4, false);  // opposite creation order
  s2.ensure("a.w", 8, 4, false);
  CHECK(s1.at("a.w").value == s2.at("a.w").value);
  CHECK(s1.at("b.w").value == s2.at("b.w").value);
  s3.ensure("a.w", 8, 4, false);
  CHECK(s1.at("a.w").value != s3.at("a.w").value);

  // Kaiming-style bound sqrt(6/fan_in) with fan_in = rows.
  double limit = std::sqrt(6.0 / 8.0);
  double lo = 0, hi = 0;
  for (double v : s1.at("a.w").value) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  CHECK(lo >= -limit);
  CHECK(hi <= limit);
  CHECK(hi - lo > limit);  // actually spread out

  CHECK(s1.at("a.w").m == std::vector<double>(32, 0.0));
  CHECK_THROWS_AS(s1.ensure("a.w", 8, 5, false), std::runtime_error);
  CHECK_THROWS_AS(s1.at("missing"), std::runtime_error);

  ad::ParamStore sb(7);
  CHECK(sb.ensure("bias", 1, 6, true).value == std::vector<double>(6, 0.0));
  CHECK(sb.total_parameters() == 6);
}

TEST_CASE("adamw: decay identities, convergence, non-finite skip") {
  SUBCASE("zero gradient, zero decay leaves params alone") {
    ad::ParamStore store(1);
    store.ensure("p", 2, 2, false);
    std::vector<double> before = store.at("p").value;
    ad::AdamW opt({.lr = 0.01, .weight_decay = 0.0});
    CHECK(opt.step(store, {{"p", std::vector<double>(4, 0.0)}}));
    CHECK(store.at("p").value == before);
  }
  SUBCASE("zero gradient with decay shrinks by exactly (1 - lr*wd)") {
    ad::ParamStore store(1);
    store.ensure("p", 1, 3, false);
    std::vector<double> before = store.at("p").value;
    ad::AdamW opt({.lr = 0.1, .weight_decay = 0.5});
    CHECK(opt.step(store, {{"p", std::vector<double>(3, 0.0)}}));
    for (int i = 0; i < 3; ++i) {
      CHECK(store.at("p").value[std::size_t(i)] ==
            doctest::Approx(before[std::size_t(i)] * (1.0 - 0.1 * 0.5))
                .epsilon(1e-15));
    }
  }
  SUBCASE("scalar quadratic converges within 500 steps at lr 0.01") {
    ad::ParamStore store(1);
    ad::ParamStore::Entry& e = store.ensure("p", 1, 1, true);
    e.value[0] = 2.0;  // Adam's normalized steps cover ~lr per iteration
    ad::AdamW opt({.lr = 0.01, .weight_decay = 0.0});
    for (int step = 0; step < 500; ++step) {
      double p = e.value[0];
      opt.step(store, {{"p", {2.0 * (p - 3.0)}}});  // d/dp (p-3)^2
    }
    CHECK(std::abs(e.value[0] - 3.0) < 1e-6);
    CHECK(opt.steps_taken() == 500);
  }
  SUBCASE("non-finite gradient skips the step and reports") {
    ad::ParamStore store(1);
    store.ensure("p", 1, 2, false);
    std::vector<double> before = store.at("p").value;
    ad::AdamW opt({.lr = 0.01, .weight_decay = 0.1});
    CHECK_FALSE(opt.step(store, {{"p", {1.0, std::nan("")}}}));
    CHECK(store.at("p").value == before);
    CHECK(store.at("p").m == std::vector<double>(2, 0.0));
    CHECK(opt.steps_taken() == 0);
    CHECK(opt.steps_skipped() == 1);
    CHECK(opt.step(store, {{"p", {0.1, 0.1}}}));
    CHECK(opt.steps_taken() == 1);
  }
}

TEST_CASE("checkpoint: round trip and corruption errors") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "v2p_ckpt";
  fs::create_directories(dir);
  fs::path path = dir / "model.ckpt";

  ad::ParamStore store(77);
  store.ensure("alpha.w", 3, 5, false);
  store.ensure("alpha.b", 1, 5, true);
  store.at("alpha.b").value = {1, 2, 3, 4, 5e-300};
  store.ensure("zeta.w", 7, 2, false);
  ad::save_checkpoint(store, path);

  ad::ParamStore back = ad::load_checkpoint(path);
  REQUIRE(back.entries().size() == 3);
  for (const auto& [name, e] : store.entries()) {
    REQUIRE(back.has(name));
    CHECK(back.at(name).rows == e.rows);
    CHECK(back.at(name).cols == e.cols);
    CHECK(back.at(name).value == e.value);  // bit-exact
  }

  // Saving twice produces identical bytes.
  fs::path path2 = dir / "model2.ckpt";
  ad::save_checkpoint(store, path2);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::vector<char> b1{std::istreambuf_iterator<char>(f1), {}};
  std::vector<char> b2{std::istreambuf_iterator<char>(f2), {}};
  CHECK(b1 == b2);

  // Corruptions.
  {
    std::ofstream bad(dir / "bad_magic.ckpt", std::ios::binary);
    bad << "NOTACKPTxxxxxxxxxxx";
  }
  CHECK_THROWS_WITH_AS(ad::load_checkpoint(dir / "bad_magic.ckpt"),
                       doctest::Contains("magic"), std::runtime_error);
  {
    std::vector<char> trunc(b1.begin(), b1.begin() + long(b1.size()) - 9);
    std::ofstream bad(dir / "trunc.ckpt", std::ios::binary);
    bad.write(trunc.data(), std::streamsize(trunc.size()));
  }
  CHECK_THROWS_WITH_AS(ad::load_checkpoint(dir / "trunc.ckpt"),
                       doctest::Contains("truncated"), std::runtime_error);
  {
    std::vector<char> vers = b1;
    vers[8] = 9;  // version field
    std::ofstream bad(dir / "version.ckpt", std::ios::binary);
    bad.write(vers.data(), std::streamsize(vers.size()));
  }
  CHECK_THROWS_WITH_AS(ad::load_checkpoint(dir / "version.ckpt"),
                       doctest::Contains("version"), std::runtime_error);
}
