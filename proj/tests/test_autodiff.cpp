#include <cmath>
#include <limits>
#include <vector>

#include "doctest.h"
#include "linlab/graph.hpp"
#include "linlab/rng.hpp"

using namespace linlab;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, double lo = -1,
                     double hi = 1) {
  Tensor t(std::move(shape));
  for (double& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST_SUITE("autodiff") {
  TEST_CASE("eager evaluation of elementwise chains") {
    Graph g;
    const int x = g.cst(Tensor({2, 2}, {1, -2, 3, -4}));
    const int r = g.relu(x);
    CHECK(g.val(r).data == std::vector<double>{1, 0, 3, 0});
    const int s = g.sum(r);
    CHECK(g.val(s).item() == 4.0);
    const int m = g.mean(x);
    CHECK(g.val(m).item() == doctest::Approx(-0.5));
  }

  TEST_CASE("lse and softmax agree with a hand computation") {
    Graph g;
    const int x = g.cst(Tensor({1, 3}, {1.0, 2.0, 3.0}));
    const double z =
        std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0));
    CHECK(g.val(g.lse_rows(x)).data[0] == doctest::Approx(z).epsilon(1e-12));
    const Tensor sm = g.val(g.softmax_rows(x));
    CHECK(sm.data[0] == doctest::Approx(std::exp(1.0 - z)).epsilon(1e-12));
    CHECK(sm.data[0] + sm.data[1] + sm.data[2] ==
          doctest::Approx(1.0).epsilon(1e-12));
  }

  TEST_CASE("lse is max-shifted (no overflow at large logits)") {
    Graph g;
    const int x = g.cst(Tensor({1, 2}, {1000.0, 1000.0}));
    const double v = g.val(g.lse_rows(x)).data[0];
    CHECK(std::isfinite(v));
    CHECK(v == doctest::Approx(1000.0 + std::log(2.0)));
  }

  TEST_CASE("every differentiable op passes a finite difference check") {
    // One scalar root exercising an op per case; rel err <= 1e-6 on smooth
    // ops at benign points.
    Rng rng(21);
    struct Case {
      const char* name;
      std::function<int(Graph&, int)> build;  // input node -> scalar root
      double lo, hi;
    };
    const std::vector<Case> cases = {
        {"add", [](Graph& g, int x) {
           return g.sum(g.add(x, g.cst(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}))));
         }, -1, 1},
        {"sub", [](Graph& g, int x) {
           return g.sum(g.sub(g.cst(Tensor({2, 3}, {1, 2, 3, 4, 5, 6})), x));
         }, -1, 1},
        {"mul", [](Graph& g, int x) { return g.sum(g.mul(x, x)); }, -1, 1},
        {"div", [](Graph& g, int x) {
           return g.sum(g.div(g.cst(Tensor::full({2, 3}, 2.0)), x));
         }, 0.5, 2.0},
        {"neg", [](Graph& g, int x) { return g.sum(g.neg(x)); }, -1, 1},
        {"scale", [](Graph& g, int x) { return g.sum(g.scale(x, -2.5)); }, -1, 1},
        {"softplus", [](Graph& g, int x) { return g.sum(g.softplus(x)); }, -3, 3},
        {"sigmoid", [](Graph& g, int x) { return g.sum(g.sigmoid(x)); }, -3, 3},
        {"lse_rows", [](Graph& g, int x) { return g.sum(g.lse_rows(x)); }, -2, 2},
        {"softmax_rows",
         [](Graph& g, int x) {
           return g.sum(g.mul(g.softmax_rows(x),
                              g.cst(Tensor({2, 3}, {1, -1, 2, 0, 1, 3}))));
         }, -2, 2},
        {"rowsum", [](Graph& g, int x) {
           return g.dot(g.rowsum(x), g.cst(Tensor({2}, {1.0, -2.0})));
         }, -1, 1},
        {"colsum", [](Graph& g, int x) {
           return g.dot(g.colsum(x), g.cst(Tensor({3}, {1.0, -2.0, 0.5})));
         }, -1, 1},
        {"square", [](Graph& g, int x) { return g.sum(g.square(x)); }, -2, 2},
        {"sqrt", [](Graph& g, int x) { return g.sum(g.sqrt(x)); }, 0.5, 3.0},
        {"abs", [](Graph& g, int x) { return g.sum(g.abs(x)); }, 0.3, 2.0},
        {"mean", [](Graph& g, int x) { return g.mean(x); }, -1, 1},
        {"dot", [](Graph& g, int x) { return g.dot(x, x); }, -1, 1},
        {"l2norm", [](Graph& g, int x) { return g.l2norm(x); }, 0.5, 2.0},
        {"smul", [](Graph& g, int x) {
           return g.sum(g.smul(g.mean(x), g.cst(Tensor({2, 3},
                                                       {1, 2, 3, 4, 5, 6}))));
         }, -1, 1},
    };
    for (const Case& c : cases) {
      CAPTURE(c.name);
      Graph g;
      const int x = g.leaf(random_tensor({2, 3}, rng, c.lo, c.hi),
                           LeafKind::input);
      const int root = c.build(g, x);
      REQUIRE(g.val(root).is_scalar());
      const FdReport rep = finite_diff_check(g, root, x, 1e-5);
      CHECK(rep.max_rel_err <= 1e-6);
    }
  }

  TEST_CASE("matmul gradients, all transpose combinations") {
    Rng rng(31);
    for (const bool ta : {false, true}) {
      for (const bool tb : {false, true}) {
        CAPTURE(ta);
        CAPTURE(tb);
        Graph g;
        const std::vector<std::size_t> sa = ta ? std::vector<std::size_t>{4, 2}
                                               : std::vector<std::size_t>{2, 4};
        const std::vector<std::size_t> sb = tb ? std::vector<std::size_t>{3, 4}
                                               : std::vector<std::size_t>{4, 3};
        const int a = g.leaf(random_tensor(sa, rng), LeafKind::input);
        const int b = g.leaf(random_tensor(sb, rng), LeafKind::input);
        const int root =
            g.sum(g.mul(g.matmul(a, b, ta, tb),
                        g.cst(random_tensor({2, 3}, rng))));
        CHECK(finite_diff_check(g, root, a, 1e-5).max_rel_err <= 1e-6);
        CHECK(finite_diff_check(g, root, b, 1e-5).max_rel_err <= 1e-6);
      }
    }
  }

  TEST_CASE("structured ops gradients") {
    Rng rng(41);
    Graph g;
    const int x = g.leaf(random_tensor({3, 4}, rng), LeafKind::input);
    const int bias = g.leaf(random_tensor({4}, rng), LeafKind::input);
    const int rows = g.leaf(random_tensor({3}, rng), LeafKind::input);
    const int picked = g.pick(g.add_rowvec(x, bias), {1, 0, 3});
    const int root = g.sum(g.scale_rows(g.add_rowvec(x, bias), rows));
    const int root2 = g.sum(picked);
    for (const int leafid : {x, bias, rows})
      CHECK(finite_diff_check(g, root, leafid, 1e-5).max_rel_err <= 1e-6);
    CHECK(finite_diff_check(g, root2, x, 1e-5).max_rel_err <= 1e-6);
    CHECK(finite_diff_check(g, root2, bias, 1e-5).max_rel_err <= 1e-6);
  }

  TEST_CASE("relu gradient away from the kink") {
    Rng rng(51);
    Graph g;
    Tensor v = random_tensor({4, 4}, rng);
    for (double& e : v.data)
      if (std::abs(e) < 0.05) e = 0.5;  // keep fd steps off the kink
    const int x = g.leaf(std::move(v), LeafKind::input);
    const int root = g.sum(g.relu(x));
    CHECK(finite_diff_check(g, root, x, 1e-5).max_rel_err <= 1e-6);
  }

  TEST_CASE("bcast and pick_back round trips") {
    Graph g;
    const int s = g.cst(3.5);
    const int b = g.bcast(s, {2, 3});
    CHECK(g.val(b).numel() == 6);
    for (double v : g.val(b).data) CHECK(v == 3.5);

    const int v = g.cst(Tensor({2}, {5.0, 7.0}));
    const int pb = g.pick_back(v, {2, 0}, 3);
    CHECK(g.val(pb).at(0, 2) == 5.0);
    CHECK(g.val(pb).at(1, 0) == 7.0);
    CHECK(g.val(pb).at(0, 0) == 0.0);
  }

  TEST_CASE("backward skips nodes the root does not depend on") {
    Graph g;
    const int x = g.leaf(Tensor::scalar(2.0), LeafKind::input);
    const int y = g.leaf(Tensor::scalar(5.0), LeafKind::input);
    const int root = g.square(x);
    const auto adj = g.backward(root, {x, y});
    CHECK(adj.count(x) == 1);
    CHECK(adj.count(y) == 0);  // no dependence, no adjoint node
    CHECK(g.grad_or_zero(adj, y).item() == 0.0);
    CHECK(g.val(adj.at(x)).item() == doctest::Approx(4.0));
  }

  TEST_CASE("gradients are themselves differentiable") {
    // d/dx of x^3 is 3x^2; differentiating the recorded gradient again gives
    // 6x. Numbers at x = 1.5: 3.375, 6.75, 9.
    Graph g;
    const int x = g.leaf(Tensor::scalar(1.5), LeafKind::input);
    const int cube = g.mul(g.square(x), x);
    CHECK(g.val(cube).item() == doctest::Approx(3.375));
    const auto adj1 = g.backward(cube, {x});
    const int dx = adj1.at(x);
    CHECK(g.val(dx).item() == doctest::Approx(6.75));
    const auto adj2 = g.backward(dx, {x});
    CHECK(g.val(adj2.at(x)).item() == doctest::Approx(9.0));
  }

  TEST_CASE("second derivative via fd on the gradient node") {
    // Softplus: f'' = sigmoid' = sig(x)(1-sig(x)).
    Graph g;
    const int x = g.leaf(Tensor::scalar(0.7), LeafKind::input);
    const int root = g.sum(g.softplus(x));
    const auto adj = g.backward(root, {x});
    const int dx = adj.at(x);
    const FdReport rep = finite_diff_check(g, dx, x, 1e-5);
    CHECK(rep.max_rel_err <= 1e-6);
    const double sig = 1.0 / (1.0 + std::exp(-0.7));
    CHECK(g.val(g.backward(dx, {x}).at(x)).item() ==
          doctest::Approx(sig * (1 - sig)).epsilon(1e-10));
  }

  TEST_CASE("bind and recompute replay downstream values") {
    Graph g;
    const int x = g.leaf(Tensor::scalar(1.0), LeafKind::input);
    const int root = g.square(x);
    CHECK(g.val(root).item() == 1.0);
    g.bind(x, Tensor::scalar(3.0));
    g.recompute();
    CHECK(g.val(root).item() == 9.0);
    CHECK_THROWS(g.bind(x, Tensor({2})));  // shape change rejected
  }

  TEST_CASE("non-finite values are rejected at the node that makes them") {
    Graph g;
    const int x = g.cst(Tensor::scalar(0.0));
    CHECK_THROWS(g.div(g.cst(1.0), x));
    const int big = g.cst(Tensor::scalar(1e308));
    CHECK_THROWS(g.mul(big, g.cst(Tensor::scalar(1e308))));
  }

  TEST_CASE("forward_eval binds, evaluates and restores nothing it should not") {
    Graph g;
    const int x = g.leaf(Tensor::scalar(2.0), LeafKind::input);
    const int y = g.square(x);
    const Tensor out = forward_eval(g, y, {{x, Tensor::scalar(5.0)}});
    CHECK(out.item() == 25.0);
  }

  TEST_CASE("parents precede children") {
    Graph g;
    const int x = g.cst(Tensor({2}, {1.0, 2.0}));
    const int y = g.square(x);
    const int z = g.sum(y);
    CHECK(g.node(y).a == x);
    CHECK(g.node(z).a == y);
    CHECK(x < y);
    CHECK(y < z);
  }
}
