#include "linlab/probe.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <utility>

namespace linlab {

namespace {

constexpr double kNormFloor = 1e-12;

// One reusable forward graph: constant parameters, a rebindable input row and
// a rebindable one-hot label row, so Monte-Carlo loops pay for graph
// construction once and recompute() per evaluation.
struct CeEval {
  Graph g;
  std::size_t d = 0, classes = 0;
  int x = -1, onehot = -1, loss = -1;

  explicit CeEval(const Mlp& m)
      : d(m.config.input_dim), classes(m.config.classes) {
    const ParamBinding p = bind_params_const(g, m);
    x = g.leaf(Tensor::zeros({1, d}), LeafKind::input);
    const int logits = model_forward(g, m, p, x);
    onehot = g.leaf(Tensor::zeros({1, classes}), LeafKind::input);
    loss = g.sum(g.sub(g.lse_rows(logits), g.rowsum(g.mul(logits, onehot))));
  }

  void set_label(int label) {
    check(label >= 0 && static_cast<std::size_t>(label) < classes,
          "probe: label out of range");
    Tensor oh({1, classes});
    oh.data[static_cast<std::size_t>(label)] = 1.0;
    g.bind(onehot, std::move(oh));
  }

  double eval_row(const double* row) {
    Tensor xb({1, d});
    std::copy(row, row + d, xb.data.begin());
    g.bind(x, std::move(xb));
    g.recompute();
    return g.val(loss).item();
  }
};

ProbeReport finish(std::string metric, double value, std::size_t samples,
                   double eps) {
  check(samples >= 1, "probe: sample count must be >= 1");
  check(std::isfinite(value), "probe: non-finite value for " + metric);
  ProbeReport r;
  r.metric = std::move(metric);
  r.value = value;
  r.samples = samples;
  r.eps = eps;
  return r;
}

double sgn(double t) { return (t > 0.0) - (t < 0.0); }

// Shared Monte-Carlo loop; loss_at(row_index, point) supplies the loss so the
// generic and the model variants draw identically.
template <typename LossAt>
double elin_loop(const Tensor& xs, double eps, std::size_t n_samples, Rng& rng,
                 LossAt&& loss_at) {
  const std::size_t n = xs.rows(), d = xs.cols();
  Tensor xa({d}), xb({d}), xc({d});
  double acc = 0.0;
  for (std::size_t s = 0; s < n_samples; ++s) {
    const std::size_t i = rng.below(n);
    for (std::size_t j = 0; j < d; ++j)
      xa.data[j] = xs.data[i * d + j] + rng.uniform(-eps, eps);
    for (std::size_t j = 0; j < d; ++j)
      xb.data[j] = xs.data[i * d + j] + rng.uniform(-eps, eps);
    const double alpha = rng.unit();
    for (std::size_t j = 0; j < d; ++j)
      xc.data[j] = (1.0 - alpha) * xa.data[j] + alpha * xb.data[j];
    const double la = loss_at(i, xa);
    const double lb = loss_at(i, xb);
    const double lc = loss_at(i, xc);
    acc += std::abs(lc - (1.0 - alpha) * la - alpha * lb);
  }
  return acc / static_cast<double>(n_samples);
}

// Per-example input gradients at two batches, evaluated in one graph.
std::pair<Tensor, Tensor> batch_input_grads(const Mlp& m, const Tensor& x1v,
                                            const Tensor& x2v,
                                            const std::vector<int>& y) {
  Graph g;
  const ParamBinding p = bind_params_const(g, m);
  const int x1 = g.cst(x1v);
  const int x2 = g.cst(x2v);
  const int l1 = g.sum(cross_entropy_vec(g, model_forward(g, m, p, x1), y));
  const int l2 = g.sum(cross_entropy_vec(g, model_forward(g, m, p, x2), y));
  const auto a1 = g.backward(l1, {x1});
  const auto a2 = g.backward(l2, {x2});
  return {g.grad_or_zero(a1, x1), g.grad_or_zero(a2, x2)};
}

void check_batch(const Tensor& x, const std::vector<int>& y,
                 const Mlp& m, const char* who) {
  check(x.rank() == 2 && x.rows() >= 1,
        std::string(who) + ": batch must be rank-2 and nonempty");
  check(x.rows() == y.size(), std::string(who) + ": label count mismatch");
  check(x.cols() == m.config.input_dim,
        std::string(who) + ": input dimension mismatch");
}

}  // namespace

PointLoss point_ce(const Mlp& m, int label) {
  auto ev = std::make_shared<CeEval>(m);
  ev->set_label(label);
  return [ev](const Tensor& x) {
    check(x.rank() == 1 && x.shape[0] == ev->d,
          "point_ce: input must be rank-1 of the model's input dimension");
    return ev->eval_row(x.data.data());
  };
}

ProbeReport estimate_elin(const PointLoss& loss, const Tensor& xs, double eps,
                          std::size_t n_samples, Rng& rng) {
  check(xs.rank() == 2 && xs.rows() >= 1,
        "estimate_elin: slice must be rank-2 and nonempty");
  check(n_samples >= 1, "estimate_elin: n_samples must be >= 1");
  check(eps >= 0.0, "estimate_elin: eps must be >= 0");
  const double v = elin_loop(xs, eps, n_samples, rng,
                             [&](std::size_t, const Tensor& p) { return loss(p); });
  return finish("elin_mc", v, n_samples, eps);
}

ProbeReport estimate_elin(const Mlp& m, const Dataset& slice, double eps,
                          std::size_t n_samples, Rng& rng) {
  check(slice.size() >= 1, "estimate_elin: empty dataset slice");
  check(slice.dim() == m.config.input_dim,
        "estimate_elin: dataset dimension mismatch");
  check(n_samples >= 1, "estimate_elin: n_samples must be >= 1");
  CeEval ev(m);
  const double v =
      elin_loop(slice.inputs, eps, n_samples, rng,
                [&](std::size_t i, const Tensor& p) {
                  ev.set_label(slice.labels[i]);
                  return ev.eval_row(p.data.data());
                });
  return finish("elin_mc", v, n_samples, eps);
}

double second_dir_derivative_fd(const PointLoss& loss, const Tensor& x,
                                const Tensor& v, double h) {
  check(same_shape(x, v), "second_dir_derivative_fd: x/v shape mismatch");
  if (h <= 0.0) h = 1e-4 * std::max(1.0, v.max_abs());
  Tensor xp = x, xm = x;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    xp.data[i] += h * v.data[i];
    xm.data[i] -= h * v.data[i];
  }
  return (loss(xp) - 2.0 * loss(x) + loss(xm)) / (h * h);
}

ProbeReport grad_misalignment(const Mlp& m, const Tensor& x,
                              const std::vector<int>& y, double eps, Rng& rng) {
  check_batch(x, y, m, "grad_misalignment");
  const std::size_t n = x.rows(), d = x.cols();
  Tensor x2 = x;
  for (std::size_t i = 0; i < n * d; ++i) x2.data[i] += rng.uniform(-eps, eps);

  const auto [g1, g2] = batch_input_grads(m, x, x2, y);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      dot += g1.data[i * d + j] * g2.data[i * d + j];
      na += g1.data[i * d + j] * g1.data[i * d + j];
      nb += g2.data[i * d + j] * g2.data[i * d + j];
    }
    // a vanished gradient makes the example's misalignment 0 by convention
    if (std::sqrt(na) < kNormFloor || std::sqrt(nb) < kNormFloor) continue;
    acc += 1.0 - std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
  }
  return finish("grad_misalignment", acc / static_cast<double>(n), n, eps);
}

ProbeReport fd_gradalign_estimate(const Mlp& m, const Tensor& x,
                                  const std::vector<int>& y, double eps,
                                  double sigma_fd, Rng& rng) {
  check_batch(x, y, m, "fd_gradalign_estimate");
  check(sigma_fd > 0.0, "fd_gradalign_estimate: sigma_fd must be > 0");
  const std::size_t n = x.rows(), d = x.cols();
  CeEval ev(m);

  std::vector<double> u(d), v(d);
  Tensor p0({d}), pu({d}), pe({d}), pev({d});
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      const double eta = rng.uniform(-eps, eps);
      p0.data[j] = x.data[i * d + j];
      pe.data[j] = p0.data[j] + eta;
    }
    for (std::size_t j = 0; j < d; ++j) u[j] = rng.normal();
    for (std::size_t j = 0; j < d; ++j) v[j] = rng.normal();
    for (std::size_t j = 0; j < d; ++j) {
      pu.data[j] = p0.data[j] + sigma_fd * u[j];
      pev.data[j] = pe.data[j] + sigma_fd * v[j];
    }
    ev.set_label(y[i]);
    const double l0 = ev.eval_row(p0.data.data());
    const double lu = ev.eval_row(pu.data.data());
    const double le = ev.eval_row(pe.data.data());
    const double lv = ev.eval_row(pev.data.data());

    double dot = 0.0, nu = 0.0, nv = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      dot += u[j] * v[j];
      nu += u[j] * u[j];
      nv += v[j] * v[j];
    }
    double cosv = 0.0;
    if (std::sqrt(nu) >= kNormFloor && std::sqrt(nv) >= kNormFloor)
      cosv = std::clamp(dot / (std::sqrt(nu) * std::sqrt(nv)), -1.0, 1.0);
    acc += 1.0 - sgn((lu - l0) * (lv - le)) * cosv;
  }
  return finish("fd_gradalign", acc / static_cast<double>(n), n, eps);
}

}  // namespace linlab
