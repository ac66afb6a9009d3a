#include "linlab/attack.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace linlab {

namespace {

double sgn(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

void clamp01(Tensor& t) {
  for (double& x : t.data) x = std::clamp(x, 0.0, 1.0);
}

void check_batch(const Tensor& x, std::span<Rng> streams) {
  check(x.rank() == 2, "attack: input batch must be rank-2");
  check(streams.size() >= x.rows(),
        "attack: need one rng stream per batch row, have " +
            std::to_string(streams.size()) + " for " + std::to_string(x.rows()));
}

// Per-example final losses at xv (forward only).
std::vector<double> loss_rows(const BatchLoss& loss, const Tensor& xv) {
  Graph g;
  const int x = g.cst(xv);
  const int rows = loss(g, x);
  return g.val(rows).data;
}

}  // namespace

void validate_attack(const AttackSpec& spec) {
  check(spec.eps >= 0.0, "attack: eps must be >= 0");
  if (spec.kind == AttackKind::pgd) {
    check(spec.steps >= 1, "attack: pgd needs steps >= 1");
    check(spec.restarts >= 1, "attack: pgd needs restarts >= 1");
    check(spec.step_size >= 0.0, "attack: pgd step_size must be >= 0");
  }
  if (spec.kind == AttackKind::nfgsm)
    check(spec.noise_factor >= 0.0, "attack: noise_factor must be >= 0");
}

double pgd_default_step(double eps, int steps) {
  return 2.5 * eps / static_cast<double>(steps);
}

Tensor input_grad_sum(const BatchLoss& loss, const Tensor& xv) {
  Graph g;
  const int x = g.leaf(xv, LeafKind::input);
  const int rows = loss(g, x);
  const int total = g.sum(rows);
  auto adj = g.backward(total, {x});
  return g.grad_or_zero(adj, x);
}

Tensor fgsm_at(const BatchLoss& loss, const Tensor& x, double eps) {
  const Tensor grad = input_grad_sum(loss, x);
  Tensor out = x;
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] += eps * sgn(grad.data[i]);
  clamp01(out);
  return out;
}

Tensor pgd_at(const BatchLoss& loss, const Tensor& x, double eps, int steps,
              double step_size, int restarts, std::span<Rng> streams,
              bool center_start) {
  check_batch(x, streams);
  check(steps >= 1 && restarts >= 1 && step_size > 0.0, "pgd: bad parameters");
  const std::size_t n = x.rows(), d = x.cols();

  Tensor best = x;
  std::vector<double> best_loss(n, -std::numeric_limits<double>::infinity());

  for (int r = 0; r < restarts; ++r) {
    Tensor cur = x;
    if (!center_start) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j)
          cur.data[i * d + j] += streams[i].uniform(-eps, eps);
      clamp01(cur);
    }
    for (int s = 0; s < steps; ++s) {
      const Tensor grad = input_grad_sum(loss, cur);
      for (std::size_t i = 0; i < cur.data.size(); ++i) {
        double v = cur.data[i] + step_size * sgn(grad.data[i]);
        v = std::clamp(v, x.data[i] - eps, x.data[i] + eps);
        cur.data[i] = std::clamp(v, 0.0, 1.0);
      }
    }
    const std::vector<double> lr = loss_rows(loss, cur);
    for (std::size_t i = 0; i < n; ++i) {
      if (lr[i] > best_loss[i]) {
        best_loss[i] = lr[i];
        for (std::size_t j = 0; j < d; ++j)
          best.data[i * d + j] = cur.data[i * d + j];
      }
    }
  }
  return best;
}

Tensor nfgsm_at(const BatchLoss& loss, const Tensor& x, double eps,
                double noise_factor, std::span<Rng> streams) {
  check_batch(x, streams);
  const std::size_t n = x.rows(), d = x.cols();
  Tensor noisy = x;
  const double half = noise_factor * eps;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j)
      noisy.data[i * d + j] += streams[i].uniform(-half, half);

  const Tensor grad = input_grad_sum(loss, noisy);
  Tensor out = noisy;
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] += eps * sgn(grad.data[i]);
  clamp01(out);
  return out;
}

BatchLoss ce_attack_loss(const Mlp& m, std::vector<int> y) {
  return [&m, y = std::move(y)](Graph& g, int x) {
    const ParamBinding p = bind_params_const(g, m);
    return cross_entropy_vec(g, model_forward(g, m, p, x), y);
  };
}

Tensor fgsm(const Mlp& m, const Tensor& x, const std::vector<int>& y, double eps) {
  return fgsm_at(ce_attack_loss(m, y), x, eps);
}

Tensor pgd(const Mlp& m, const Tensor& x, const std::vector<int>& y, double eps,
           int steps, double step_size, int restarts, std::span<Rng> streams,
           bool center_start) {
  return pgd_at(ce_attack_loss(m, y), x, eps, steps, step_size, restarts,
                streams, center_start);
}

Tensor nfgsm(const Mlp& m, const Tensor& x, const std::vector<int>& y,
             double eps, double noise_factor, std::span<Rng> streams) {
  return nfgsm_at(ce_attack_loss(m, y), x, eps, noise_factor, streams);
}

Tensor sample_ball(const Tensor& x, double eps, std::span<Rng> streams,
                   bool clamp) {
  check_batch(x, streams);
  check(eps >= 0.0, "sample_ball: eps must be >= 0");
  const std::size_t n = x.rows(), d = x.cols();
  Tensor out = x;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j)
      out.data[i * d + j] += streams[i].uniform(-eps, eps);
  if (clamp) clamp01(out);
  return out;
}

Tensor attack_input(const Mlp& m, const Tensor& x, const std::vector<int>& y,
                    const AttackSpec& spec, std::span<Rng> streams) {
  validate_attack(spec);
  switch (spec.kind) {
    case AttackKind::none:
      return x;
    case AttackKind::fgsm:
      return fgsm(m, x, y, spec.eps);
    case AttackKind::pgd: {
      const double step = spec.step_size > 0.0
                              ? spec.step_size
                              : pgd_default_step(spec.eps, spec.steps);
      return pgd(m, x, y, spec.eps, spec.steps, step, spec.restarts, streams);
    }
    case AttackKind::nfgsm:
      return nfgsm(m, x, y, spec.eps, spec.noise_factor, streams);
  }
  fail("attack: unknown kind");
}

}  // namespace linlab
