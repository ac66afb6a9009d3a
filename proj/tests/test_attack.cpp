#include <cmath>
#include <vector>

#include "doctest.h"
#include "linlab/attack.hpp"
#include "linlab/graph.hpp"
#include "linlab/model.hpp"
#include "linlab/rng.hpp"

using namespace linlab;

namespace {

// Per-row linear loss sum_j w_j x_ij as a self-contained BatchLoss.
BatchLoss row_dot_loss(std::vector<double> w) {
  return [w = std::move(w)](Graph& g, int x) {
    const std::size_t d = w.size();
    Tensor col({d, 1});
    col.data = w;
    const int c = g.cst(col);
    return g.rowsum(g.matmul(x, c));
  };
}

std::vector<Rng> streams_for(std::size_t n, std::uint64_t seed) {
  std::vector<Rng> s;
  s.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    s.push_back(make_stream(seed, StreamRole::eval_attack, 0, i));
  return s;
}

double loss_of(const BatchLoss& loss, const Tensor& x, std::size_t row) {
  Graph g;
  return g.val(loss(g, g.cst(x))).data[row];
}

}  // namespace

TEST_SUITE("attack") {
  TEST_CASE("fgsm on a linear loss moves to the signed corner") {
    const std::vector<double> w = {2.0, -1.0, 0.5};
    const BatchLoss loss = row_dot_loss(w);
    Tensor x({2, 3}, {0.5, 0.5, 0.5, 0.4, 0.6, 0.3});
    const double eps = 0.1;
    const Tensor adv = fgsm_at(loss, x, eps);
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < 3; ++j) {
        const double want = x.at(i, j) + eps * (w[j] > 0 ? 1.0 : -1.0);
        CHECK(adv.at(i, j) == doctest::Approx(want).epsilon(1e-12));
      }
    // Loss increase is exactly eps * ||w||_1 in the interior.
    CHECK(loss_of(loss, adv, 0) - loss_of(loss, x, 0) ==
          doctest::Approx(eps * 3.5).epsilon(1e-12));
  }

  TEST_CASE("fgsm respects the [0,1] image box") {
    const BatchLoss loss = row_dot_loss({1.0, -1.0});
    Tensor x({1, 2}, {0.98, 0.01});
    const Tensor adv = fgsm_at(loss, x, 0.1);
    CHECK(adv.at(0, 0) == 1.0);   // 0.98 + 0.1 clamped
    CHECK(adv.at(0, 1) == 0.0);   // 0.01 - 0.1 clamped
  }

  TEST_CASE("fgsm with zero gradient stays put") {
    const BatchLoss loss = row_dot_loss({0.0, 0.0});
    Tensor x({1, 2}, {0.3, 0.7});
    const Tensor adv = fgsm_at(loss, x, 0.25);
    CHECK(adv.data == x.data);
  }

  TEST_CASE("pgd on a linear loss reaches the fgsm corner from any start") {
    const std::vector<double> w = {1.0, -2.0, 0.25, 3.0};
    const BatchLoss loss = row_dot_loss(w);
    Tensor x({3, 4});
    for (double& v : x.data) v = 0.5;
    const double eps = 0.08;
    auto streams = streams_for(3, 77);
    const Tensor adv = pgd_at(loss, x, eps, 10, pgd_default_step(eps, 10), 1,
                              streams);
    const Tensor corner = fgsm_at(loss, x, eps);
    for (std::size_t i = 0; i < adv.data.size(); ++i)
      CHECK(adv.data[i] == doctest::Approx(corner.data[i]).epsilon(1e-12));
  }

  TEST_CASE("pgd stays inside ball and box") {
    const BatchLoss loss = row_dot_loss({5.0, -5.0});
    Tensor x({2, 2}, {0.05, 0.95, 0.5, 0.5});
    const double eps = 0.2;
    auto streams = streams_for(2, 5);
    const Tensor adv = pgd_at(loss, x, eps, 7, 0.1, 2, streams);
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < 2; ++j) {
        CHECK(adv.at(i, j) >= std::max(0.0, x.at(i, j) - eps) - 1e-12);
        CHECK(adv.at(i, j) <= std::min(1.0, x.at(i, j) + eps) + 1e-12);
      }
  }

  TEST_CASE("pgd restarts never lose to the first restart") {
    // Asymmetric tent: pushing up pays 3x more than pushing down, but the
    // ascent direction depends on which side of the peak the start lands.
    const BatchLoss tent = [](Graph& g, int x) {
      const int c = g.cst(Tensor::full({4, 1}, 0.5));
      const int up = g.scale(g.relu(g.sub(x, c)), 3.0);
      const int dn = g.relu(g.sub(c, x));
      return g.rowsum(g.add(up, dn));
    };
    Tensor x({4, 1}, {0.5, 0.45, 0.55, 0.5});
    const double eps = 0.2;

    auto s1 = streams_for(4, 123);
    const Tensor one = pgd_at(tent, x, eps, 5, 0.1, 1, s1);
    auto s5 = streams_for(4, 123);  // same draw sequence, more restarts
    const Tensor five = pgd_at(tent, x, eps, 5, 0.1, 5, s5);
    for (std::size_t i = 0; i < 4; ++i)
      CHECK(loss_of(tent, five, i) >= loss_of(tent, one, i) - 1e-12);
  }

  TEST_CASE("nfgsm noise can push the total step past eps") {
    const BatchLoss loss = row_dot_loss({1.0});
    Tensor x({64, 1});
    for (double& v : x.data) v = 0.5;
    const double eps = 0.05;
    auto streams = streams_for(64, 9);
    const Tensor adv = nfgsm_at(loss, x, eps, 2.0, streams);
    double max_step = 0.0;
    for (std::size_t i = 0; i < 64; ++i) {
      const double step = std::abs(adv.at(i, 0) - x.at(i, 0));
      CHECK(step <= 3.0 * eps + 1e-12);  // |noise| <= 2 eps, plus eps
      max_step = std::max(max_step, step);
    }
    CHECK(max_step > eps + 1e-9);  // unprojected: exceeds the fgsm radius
  }

  TEST_CASE("nfgsm with zero noise factor degenerates to fgsm") {
    const BatchLoss loss = row_dot_loss({1.0, -1.0, 2.0});
    Tensor x({2, 3}, {0.5, 0.4, 0.6, 0.3, 0.7, 0.5});
    auto streams = streams_for(2, 11);
    const Tensor a = nfgsm_at(loss, x, 0.1, 0.0, streams);
    const Tensor b = fgsm_at(loss, x, 0.1);
    CHECK(a.data == b.data);
  }

  TEST_CASE("sample_ball bounds, with and without clamping") {
    Tensor x({32, 2});
    for (std::size_t i = 0; i < 32; ++i) {
      x.at(i, 0) = 0.02;  // near the floor so clamping matters
      x.at(i, 1) = 0.5;
    }
    const double eps = 0.3;
    auto s1 = streams_for(32, 13);
    const Tensor clamped = sample_ball(x, eps, s1);
    bool hit_floor = false;
    for (std::size_t i = 0; i < 32; ++i) {
      CHECK(clamped.at(i, 0) >= 0.0);
      CHECK(clamped.at(i, 1) >= 0.2 - 1e-12);
      CHECK(clamped.at(i, 1) <= 0.8 + 1e-12);
      hit_floor = hit_floor || clamped.at(i, 0) == 0.0;
    }
    CHECK(hit_floor);

    auto s2 = streams_for(32, 13);
    const Tensor raw = sample_ball(x, eps, s2, false);
    bool below = false;
    for (std::size_t i = 0; i < 32; ++i) below = below || raw.at(i, 0) < 0.0;
    CHECK(below);
  }

  TEST_CASE("per-example streams make rows independent of batch composition") {
    // Row i attacked alone equals row i attacked in a batch, because each row
    // owns its stream.
    const Mlp m = model_new(ModelConfig{2, {8}, 2, Activation::relu, 3});
    Tensor x({3, 2}, {0.2, 0.8, 0.5, 0.5, 0.9, 0.1});
    const std::vector<int> y = {0, 1, 0};

    AttackSpec spec;
    spec.kind = AttackKind::nfgsm;
    spec.eps = 0.1;

    std::vector<Rng> all = {make_stream(1, StreamRole::step, 0, 0),
                            make_stream(1, StreamRole::step, 0, 1),
                            make_stream(1, StreamRole::step, 0, 2)};
    const Tensor batch = attack_input(m, x, y, spec, all);

    Tensor solo({1, 2}, {x.at(1, 0), x.at(1, 1)});
    std::vector<Rng> one = {make_stream(1, StreamRole::step, 0, 1)};
    const Tensor alone = attack_input(m, solo, {y[1]}, spec, one);
    CHECK(batch.at(1, 0) == alone.at(0, 0));
    CHECK(batch.at(1, 1) == alone.at(0, 1));
  }

  TEST_CASE("attack_input kind none is the identity") {
    const Mlp m = model_new(ModelConfig{2, {4}, 2, Activation::relu, 1});
    Tensor x({2, 2}, {0.1, 0.2, 0.3, 0.4});
    AttackSpec spec;
    spec.kind = AttackKind::none;
    std::vector<Rng> streams = streams_for(2, 1);
    const Tensor out = attack_input(m, x, {0, 1}, spec, streams);
    CHECK(out.data == x.data);
  }

  TEST_CASE("spec validation names bad fields") {
    AttackSpec s;
    s.eps = -0.1;
    CHECK_THROWS(validate_attack(s));
    s = AttackSpec{};
    s.kind = AttackKind::pgd;
    s.steps = 0;
    CHECK_THROWS(validate_attack(s));
    s.steps = 1;
    s.restarts = 0;
    CHECK_THROWS(validate_attack(s));
    s = AttackSpec{};
    s.kind = AttackKind::nfgsm;
    s.noise_factor = -1.0;
    CHECK_THROWS(validate_attack(s));
  }

  TEST_CASE("pgd default step is 2.5 eps over steps") {
    CHECK(pgd_default_step(0.1, 10) == doctest::Approx(0.025));
  }
}
