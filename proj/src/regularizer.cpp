#include "linlab/regularizer.hpp"

#include <cmath>

namespace linlab {

namespace {

constexpr double kNormFloor = 1e-12;  // below this a gradient counts as zero

void check_inputs(const Tensor& x, std::span<Rng> streams) {
  check(x.rank() == 2, "regularizer: input batch must be rank-2");
  check(streams.size() >= x.rows(), "regularizer: need one rng stream per row");
}

std::vector<double> draw_alphas(std::size_t n, std::span<Rng> streams,
                                bool shared_alpha) {
  std::vector<double> alpha(n);
  if (shared_alpha) {
    const double a = streams[0].unit();
    for (double& v : alpha) v = a;
  } else {
    for (std::size_t i = 0; i < n; ++i) alpha[i] = streams[i].unit();
  }
  return alpha;
}

Tensor convex_combine(const Tensor& xa, const Tensor& xb,
                      const std::vector<double>& alpha) {
  Tensor xc = xa;
  const std::size_t d = xa.cols();
  for (std::size_t i = 0; i < xa.rows(); ++i)
    for (std::size_t j = 0; j < d; ++j)
      xc.data[i * d + j] =
          (1.0 - alpha[i]) * xa.data[i * d + j] + alpha[i] * xb.data[i * d + j];
  return xc;
}

int loss_rows_checked(Graph& g, const BatchLoss& loss, int x, std::size_t n) {
  const int rows = loss(g, x);
  check(g.val(rows).rank() == 1 && g.val(rows).shape[0] == n,
        "regularizer: loss must produce one row per example");
  return rows;
}

// Shared 3-point residual construction given materialized sample points.
TermResult three_point_term(Graph& g, const BatchLoss& loss, const Tensor& xa,
                            const Tensor& xb, const std::vector<double>& alpha,
                            bool collect_samples) {
  const std::size_t n = xa.rows();
  const Tensor xc = convex_combine(xa, xb, alpha);

  const int la = loss_rows_checked(g, loss, g.cst(xa), n);
  const int lb = loss_rows_checked(g, loss, g.cst(xb), n);
  const int lc = loss_rows_checked(g, loss, g.cst(xc), n);

  Tensor av({n}), ov({n});
  for (std::size_t i = 0; i < n; ++i) {
    av.data[i] = alpha[i];
    ov.data[i] = 1.0 - alpha[i];
  }
  const int resid =
      g.sub(lc, g.add(g.mul(g.cst(ov), la), g.mul(g.cst(av), lb)));

  TermResult r;
  r.node = g.mean(g.square(resid));
  r.value = g.val(r.node).item();
  r.residuals = g.val(resid).data;
  if (collect_samples) {
    const std::size_t d = xa.cols();
    for (std::size_t i = 0; i < n; ++i) {
      LinearitySample s;
      s.alpha = alpha[i];
      s.x_a = Tensor({d});
      s.x_b = Tensor({d});
      s.x_c = Tensor({d});
      for (std::size_t j = 0; j < d; ++j) {
        s.x_a.data[j] = xa.data[i * d + j];
        s.x_b.data[j] = xb.data[i * d + j];
        s.x_c.data[j] = xc.data[i * d + j];
      }
      s.residual = r.residuals[i];
      s.e_lin = s.residual * s.residual;
      r.samples.push_back(std::move(s));
    }
  }
  return r;
}

// Per-example input gradients as a graph node, recorded differentiably.
// Returns a zero constant when the loss does not depend on the input.
int input_grad_rows(Graph& g, const BatchLoss& loss, const Tensor& xv,
                    std::size_t n) {
  const int x = g.cst(xv);
  const int rows = loss_rows_checked(g, loss, x, n);
  const int total = g.sum(rows);
  auto adj = g.backward(total, {x});
  auto it = adj.find(x);
  if (it == adj.end()) return g.cst(Tensor::zeros(xv.shape));
  return it->second;
}

}  // namespace

void validate_regularizer(const RegularizerSpec& spec) {
  check(spec.lambda >= 0.0, "regularizer: lambda must be >= 0");
  check(spec.gamma > 0.0 && spec.gamma <= 1.0,
        "regularizer: gamma must be in (0, 1]");
}

TermResult elle_term(Graph& g, const BatchLoss& loss, const Tensor& x,
                     double eps, std::span<Rng> streams, bool shared_alpha,
                     bool clamp, bool collect_samples) {
  check_inputs(x, streams);
  const Tensor xa = sample_ball(x, eps, streams, clamp);
  const Tensor xb = sample_ball(x, eps, streams, clamp);
  const auto alpha = draw_alphas(x.rows(), streams, shared_alpha);
  return three_point_term(g, loss, xa, xb, alpha, collect_samples);
}

TermResult elle_2p_term(Graph& g, const BatchLoss& loss, const Tensor& x,
                        const Tensor& x_adv, double eps, std::span<Rng> streams,
                        bool shared_alpha, bool clamp, bool collect_samples) {
  check_inputs(x, streams);
  check(same_shape(x, x_adv), "elle_2p: adversarial batch shape mismatch");
  const Tensor xa = sample_ball(x, eps, streams, clamp);
  const auto alpha = draw_alphas(x.rows(), streams, shared_alpha);
  return three_point_term(g, loss, xa, x_adv, alpha, collect_samples);
}

TermResult elle_5pt_term(Graph& g, const BatchLoss& loss, const Tensor& x,
                         double eps, std::span<Rng> streams, bool clamp) {
  check_inputs(x, streams);
  const std::size_t n = x.rows(), d = x.cols();
  const Tensor xa = sample_ball(x, eps, streams, clamp);
  const Tensor xb = sample_ball(x, eps, streams, clamp);

  auto blend = [&](double wa, double wb) {
    Tensor p({n, d});
    for (std::size_t i = 0; i < n * d; ++i)
      p.data[i] = wa * xa.data[i] + wb * xb.data[i];
    return p;
  };

  const int la = loss_rows_checked(g, loss, g.cst(xa), n);
  const int lc = loss_rows_checked(g, loss, g.cst(blend(0.75, 0.25)), n);
  const int ld = loss_rows_checked(g, loss, g.cst(blend(0.5, 0.5)), n);
  const int le = loss_rows_checked(g, loss, g.cst(blend(0.25, 0.75)), n);
  const int lb = loss_rows_checked(g, loss, g.cst(xb), n);

  const int combo = g.add(
      g.add(g.add(g.add(g.scale(la, -1.0 / 12.0), g.scale(lc, 4.0 / 3.0)),
                  g.scale(ld, -5.0 / 2.0)),
            g.scale(le, 4.0 / 3.0)),
      g.scale(lb, -1.0 / 12.0));

  TermResult r;
  r.node = g.mean(g.square(combo));
  r.value = g.val(r.node).item();
  r.residuals = g.val(combo).data;
  return r;
}

TermResult gradalign_term(Graph& g, const BatchLoss& loss, const Tensor& x,
                          double eps, std::span<Rng> streams) {
  check_inputs(x, streams);
  const std::size_t n = x.rows(), d = x.cols();

  Tensor x2 = x;  // x + eta, eta ~ Unif[-eps, eps]^d, unclamped
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j)
      x2.data[i * d + j] += streams[i].uniform(-eps, eps);

  const int g1 = input_grad_rows(g, loss, x, n);
  const int g2 = input_grad_rows(g, loss, x2, n);

  const int numv = g.rowsum(g.mul(g1, g2));
  const int n1sq = g.rowsum(g.square(g1));
  const int n2sq = g.rowsum(g.square(g2));

  // Examples where either gradient vanishes contribute exactly 0 (cosine
  // defined as 1 there); the offset keeps sqrt off the origin for them.
  const auto& v1 = g.val(n1sq).data;
  const auto& v2 = g.val(n2sq).data;
  Tensor mask({n}), off({n});
  for (std::size_t i = 0; i < n; ++i) {
    const bool dead = v1[i] < kNormFloor * kNormFloor ||
                      v2[i] < kNormFloor * kNormFloor;
    mask.data[i] = dead ? 0.0 : 1.0;
    off.data[i] = dead ? 1.0 : 0.0;
  }
  const int offn = g.cst(off);
  const int denom = g.mul(g.sqrt(g.add(n1sq, offn)), g.sqrt(g.add(n2sq, offn)));
  const int cosv = g.div(numv, denom);
  const int termv =
      g.mul(g.cst(mask), g.sub(g.cst(Tensor::full({n}, 1.0)), cosv));

  TermResult r;
  r.node = g.mean(termv);
  r.value = g.val(r.node).item();
  r.residuals = g.val(termv).data;
  return r;
}

TermResult llr_sq_term(Graph& g, const BatchLoss& loss, const Tensor& x,
                       double eps, std::span<Rng> streams) {
  check_inputs(x, streams);
  const std::size_t n = x.rows(), d = x.cols();

  Tensor delta({n, d});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j)
      delta.data[i * d + j] = streams[i].uniform(-eps, eps);
  Tensor x2 = x;
  for (std::size_t i = 0; i < n * d; ++i) x2.data[i] += delta.data[i];

  const int g1 = input_grad_rows(g, loss, x, n);
  const int l1 = loss_rows_checked(g, loss, g.cst(x), n);
  const int l2 = loss_rows_checked(g, loss, g.cst(x2), n);
  const int lin = g.rowsum(g.mul(g.cst(delta), g1));
  const int resid = g.sub(g.sub(l2, l1), lin);

  TermResult r;
  r.node = g.mean(g.square(resid));
  r.value = g.val(r.node).item();
  r.residuals = g.val(resid).data;
  return r;
}

TermResult cure_term(Graph& g, const BatchLoss& loss, const Tensor& x,
                     const Tensor& x_pert) {
  check(x.rank() == 2, "cure: input batch must be rank-2");
  check(same_shape(x, x_pert), "cure: perturbed batch shape mismatch");
  const std::size_t n = x.rows();

  const int g1 = input_grad_rows(g, loss, x, n);
  const int g2 = input_grad_rows(g, loss, x_pert, n);
  const int diff = g.sub(g1, g2);
  const int nsq = g.rowsum(g.square(diff));

  const auto& v = g.val(nsq).data;
  Tensor mask({n}), off({n});
  for (std::size_t i = 0; i < n; ++i) {
    const bool dead = v[i] < kNormFloor * kNormFloor;
    mask.data[i] = dead ? 0.0 : 1.0;
    off.data[i] = dead ? 1.0 : 0.0;
  }
  const int rows = g.mul(g.cst(mask), g.sqrt(g.add(nsq, g.cst(off))));

  TermResult r;
  r.node = g.mean(rows);
  r.value = g.val(r.node).item();
  r.residuals = g.val(rows).data;
  return r;
}

TermResult cure_term(Graph& g, const Mlp& m, const Tensor& x,
                     const std::vector<int>& y, double eps) {
  const Tensor xp = fgsm(m, x, y, eps);
  const ParamBinding p = bind_params_const(g, m);
  return cure_term(g, ce_loss(m, p, y), x, xp);
}

double AdaptiveLambdaState::sigma() const {
  if (n == 0) return 0.0;
  return std::sqrt(std::max(0.0, m2 / static_cast<double>(n)));
}

AdaptiveLambdaState make_adaptive_state(double lambda_max, double gamma) {
  check(lambda_max >= 0.0, "adaptive lambda: lambda_max must be >= 0");
  check(gamma > 0.0 && gamma <= 1.0, "adaptive lambda: gamma must be in (0, 1]");
  AdaptiveLambdaState st;
  st.lambda = 0.0;
  st.lambda_max = lambda_max;
  st.gamma = gamma;
  return st;
}

double adaptive_lambda_update(AdaptiveLambdaState& state, double e_lin) {
  check(std::isfinite(e_lin), "adaptive lambda: non-finite E_lin");
  if (e_lin > state.mu() + 2.0 * state.sigma())
    state.lambda = state.lambda_max;
  else
    state.lambda = state.gamma * state.lambda;

  state.n += 1;
  const double d1 = e_lin - state.mean;
  state.mean += d1 / static_cast<double>(state.n);
  state.m2 += d1 * (e_lin - state.mean);
  return state.lambda;
}

}  // namespace linlab
