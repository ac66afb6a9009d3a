#include "linlab/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include "linlab/probe.hpp"

namespace linlab {

namespace {

using Clock = std::chrono::steady_clock;

double ms_between(Clock::time_point a, Clock::time_point b) {
  return std::chrono::duration<double, std::milli>(b - a).count();
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed,
                                     std::size_t epoch) {
  Rng rng = make_stream(seed, StreamRole::shuffle, epoch);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i)
    std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

void gather(const Dataset& ds, const std::vector<std::size_t>& order,
            std::size_t b0, std::size_t count, Tensor& x,
            std::vector<int>& y) {
  const std::size_t d = ds.dim();
  x = Tensor({count, d});
  y.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t src = order[b0 + i];
    y[i] = ds.labels[src];
    for (std::size_t j = 0; j < d; ++j)
      x.data[i * d + j] = ds.inputs.data[src * d + j];
  }
}

void sgd_update(Tensor& theta, Tensor& vel, const Tensor& grad, double lr,
                double momentum, double wd) {
  for (std::size_t i = 0; i < theta.numel(); ++i) {
    vel.data[i] = momentum * vel.data[i] + (grad.data[i] + wd * theta.data[i]);
    theta.data[i] -= lr * vel.data[i];
  }
}

struct Sgd {
  std::vector<Tensor> vel_w, vel_b;
  explicit Sgd(const Mlp& m) {
    for (const auto& w : m.weights) vel_w.push_back(Tensor::zeros(w.shape));
    for (const auto& b : m.biases) vel_b.push_back(Tensor::zeros(b.shape));
  }
};

bool params_finite(const Mlp& m) {
  for (const auto& w : m.weights)
    if (!all_finite(w)) return false;
  for (const auto& b : m.biases)
    if (!all_finite(b)) return false;
  return true;
}

struct StepOutcome {
  double loss = 0.0;
  double e_lin = 0.0;
  double lambda = 0.0;
  StepTiming timing;
};

// One optimizer step. Streams are consumed attack first, term second, so two
// configs sharing attack and regularizer kind see identical draws whatever
// their lambdas. A lambda of exactly 0 leaves the term out of the root, so
// its backward cost is skipped while its draws and value are unchanged.
StepOutcome run_step(Mlp& m, Sgd& opt, const RunConfig& cfg, const Tensor& x,
                     const std::vector<int>& y, double lr,
                     std::span<Rng> streams, AdaptiveLambdaState& astate) {
  Graph g;
  int root = -1;
  StepOutcome out;
  std::vector<int> param_ids;

  auto backward = [&] {
    const auto adj = g.backward(root, param_ids);
    const std::size_t layers = m.weights.size();
    for (std::size_t l = 0; l < layers; ++l) {
      sgd_update(m.weights[l], opt.vel_w[l],
                 g.grad_or_zero(adj, param_ids[2 * l]), lr, cfg.momentum,
                 cfg.weight_decay);
      sgd_update(m.biases[l], opt.vel_b[l],
                 g.grad_or_zero(adj, param_ids[2 * l + 1]), lr, cfg.momentum,
                 cfg.weight_decay);
    }
  };

  out.timing = time_split(
      [&] {
        const Tensor x_adv = attack_input(m, x, y, cfg.attack, streams);
        const ParamBinding p = bind_params(g, m);
        param_ids = p.ids;
        const BatchLoss loss = ce_loss(m, p, y);
        root = g.mean(loss(g, g.cst(x_adv)));

        TermResult term;
        bool has_term = true;
        const double eps = cfg.attack.eps;
        switch (cfg.reg.kind) {
          case RegKind::none:
            has_term = false;
            break;
          case RegKind::elle:
          case RegKind::elle_a:
            term = elle_term(g, loss, x, eps, streams, cfg.reg.shared_alpha,
                             cfg.reg.clamp_samples);
            break;
          case RegKind::elle_2p:
            term = elle_2p_term(g, loss, x, x_adv, eps, streams,
                                cfg.reg.shared_alpha, cfg.reg.clamp_samples);
            break;
          case RegKind::elle_5pt:
            term =
                elle_5pt_term(g, loss, x, eps, streams, cfg.reg.clamp_samples);
            break;
          case RegKind::gradalign:
            term = gradalign_term(g, loss, x, eps, streams);
            break;
          case RegKind::llr_sq:
            term = llr_sq_term(g, loss, x, eps, streams);
            break;
          case RegKind::cure:
            term = cure_term(g, loss, x, x_adv);
            break;
        }
        if (has_term) {
          out.e_lin = term.value;
          out.lambda = cfg.reg.kind == RegKind::elle_a
                           ? adaptive_lambda_update(astate, term.value)
                           : cfg.reg.lambda;
          if (out.lambda != 0.0)
            root = g.add(root, g.scale(term.node, out.lambda));
        }
        out.loss = g.val(root).item();
      },
      backward);
  return out;
}

}  // namespace

double lr_at(const Schedule& s, std::size_t epoch, std::size_t step,
             std::size_t steps_per_epoch) {
  check(s.epochs >= 1 && steps_per_epoch >= 1,
        "schedule: horizon must be positive");
  check(s.lr0 > 0.0, "schedule: lr0 must be > 0");
  check(epoch < s.epochs, "schedule: epoch beyond horizon");
  check(step < steps_per_epoch, "schedule: step beyond steps_per_epoch");
  const double total = static_cast<double>(s.epochs * steps_per_epoch);
  const double t = static_cast<double>(epoch * steps_per_epoch + step);
  switch (s.kind) {
    case ScheduleKind::short_cyclic: {
      const double p = t / total;
      return s.lr0 * (p <= 0.5 ? 2.0 * p : 2.0 * (1.0 - p));
    }
    case ScheduleKind::long_steps:
      if (epoch < 100) return s.lr0;
      if (epoch < 150) return s.lr0 / 10.0;
      return s.lr0 / 100.0;
    case ScheduleKind::long_cosine: {
      const double p = t / total;
      return s.lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * p));
    }
  }
  fail("schedule: unknown kind");
}

void validate_run_config(const RunConfig& cfg) {
  check(cfg.epochs >= 1, "run config: epochs must be >= 1");
  check(cfg.batch >= 1, "run config: batch must be >= 1");
  check(cfg.momentum >= 0.0 && cfg.momentum < 1.0,
        "run config: momentum must be in [0,1)");
  check(cfg.weight_decay >= 0.0, "run config: weight decay must be >= 0");
  check(cfg.schedule.epochs == cfg.epochs,
        "run config: schedule horizon must match epochs");
  check(cfg.schedule.lr0 > 0.0, "run config: lr0 must be > 0");
  validate_attack(cfg.attack);
  validate_attack(cfg.eval_attack);
  validate_regularizer(cfg.reg);
  check(cfg.co.window >= 2, "run config: detector window must be >= 2");
  check(cfg.co.k_spike > 0.0, "run config: detector k_spike must be > 0");
  check(cfg.co.rho > 0.0 && cfg.co.rho <= 1.0,
        "run config: detector rho must be in (0,1]");
}

COReport co_detect(const std::vector<EpochRecord>& history,
                   const CODetectorConfig& cfg) {
  check(cfg.window >= 2, "co detector: window must be >= 2");
  check(cfg.k_spike > 0.0, "co detector: k_spike must be > 0");
  check(cfg.rho > 0.0 && cfg.rho <= 1.0, "co detector: rho must be in (0,1]");

  std::vector<const EpochRecord*> probed;
  for (const auto& r : history)
    if (r.probed) probed.push_back(&r);
  check(probed.size() >= cfg.window,
        "co detector: needs at least window probed epochs");

  const std::size_t w = cfg.window;
  double best_robust = 0.0;
  for (std::size_t i = 0; i < w; ++i)
    best_robust = std::max(best_robust, probed[i]->robust_acc);

  std::vector<double> win(w);
  for (std::size_t e = w; e < probed.size(); ++e) {
    for (std::size_t i = 0; i < w; ++i) win[i] = probed[e - w + i]->elin_probe;
    std::sort(win.begin(), win.end());
    const double med =
        w % 2 ? win[w / 2] : 0.5 * (win[w / 2 - 1] + win[w / 2]);
    const bool spike = probed[e]->elin_probe > cfg.k_spike * med;
    const bool drop = probed[e]->robust_acc <= (1.0 - cfg.rho) * best_robust;
    if (spike && drop) return {true, probed[e]->epoch};
    best_robust = std::max(best_robust, probed[e]->robust_acc);
  }
  return {false, 0};
}

double evaluate(const Mlp& m, const Dataset& ds, const AttackSpec& attack,
                std::uint64_t seed, std::size_t batch) {
  validate_attack(attack);
  check(batch >= 1, "evaluate: batch must be >= 1");
  check(ds.size() >= 1, "evaluate: empty dataset");
  check(ds.dim() == m.config.input_dim, "evaluate: dataset dimension mismatch");

  const std::size_t n = ds.size();
  std::size_t correct = 0;
  std::vector<std::size_t> ident(n);
  std::iota(ident.begin(), ident.end(), std::size_t{0});

  Tensor x;
  std::vector<int> y;
  for (std::size_t b0 = 0, bi = 0; b0 < n; b0 += batch, ++bi) {
    const std::size_t count = std::min(batch, n - b0);
    gather(ds, ident, b0, count, x, y);

    Tensor xin = x;
    if (attack.kind != AttackKind::none) {
      std::vector<Rng> streams;
      streams.reserve(count);
      for (std::size_t i = 0; i < count; ++i)
        streams.push_back(make_stream(seed, StreamRole::eval_attack, bi, i));
      xin = attack_input(m, x, y, attack, streams);
    }

    Graph g;
    const ParamBinding p = bind_params_const(g, m);
    const int logits = model_forward(g, m, p, g.cst(xin));
    const Tensor& lv = g.val(logits);
    const std::size_t o = lv.cols();
    for (std::size_t i = 0; i < count; ++i) {
      std::size_t arg = 0;
      for (std::size_t c = 1; c < o; ++c)
        if (lv.data[i * o + c] > lv.data[i * o + arg]) arg = c;
      if (static_cast<int>(arg) == y[i]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

StepTiming time_split(const std::function<void()>& forward,
                      const std::function<void()>& backward) {
  const auto t0 = Clock::now();
  forward();
  const auto t1 = Clock::now();
  backward();
  const auto t2 = Clock::now();
  StepTiming t;
  t.forward_ms = ms_between(t0, t1);
  t.backward_ms = ms_between(t1, t2);
  t.wall_ms = ms_between(t0, Clock::now());
  return t;
}

TrainResult train(const RunConfig& cfg, const Dataset& train_ds,
                  const Dataset& eval_ds, const TrainHooks& hooks) {
  validate_run_config(cfg);
  check(train_ds.size() >= 1 && eval_ds.size() >= 1, "train: empty dataset");
  check(train_ds.dim() == cfg.model.input_dim,
        "train: training set dimension mismatch");
  check(eval_ds.dim() == cfg.model.input_dim,
        "train: eval set dimension mismatch");
  check(train_ds.classes <= cfg.model.classes &&
            eval_ds.classes <= cfg.model.classes,
        "train: dataset has more classes than the model");

  TrainResult res;
  res.model = model_new(cfg.model);
  Sgd opt(res.model);
  AdaptiveLambdaState astate = make_adaptive_state(cfg.reg.lambda, cfg.reg.gamma);

  const std::size_t n = train_ds.size();
  const std::size_t spe = (n + cfg.batch - 1) / cfg.batch;
  // Materialized only when probing can fire; a cadence of zero must not
  // demand a nonempty slice.
  const Dataset probe_ds =
      cfg.probe_cadence > 0
          ? prefix(eval_ds, std::min(cfg.probe_slice, eval_ds.size()))
          : Dataset{};

  Tensor x;
  std::vector<int> y;
  std::size_t probed_count = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = epoch_order(n, cfg.seed, epoch);
    for (std::size_t b = 0; b < spe; ++b) {
      const std::size_t b0 = b * cfg.batch;
      const std::size_t count = std::min(cfg.batch, n - b0);
      gather(train_ds, order, b0, count, x, y);
      const double lr = lr_at(cfg.schedule, epoch, b, spe);

      std::vector<Rng> streams;
      streams.reserve(count);
      for (std::size_t i = 0; i < count; ++i)
        streams.push_back(make_stream(cfg.seed, StreamRole::step, epoch, b, i));

      StepOutcome out;
      try {
        out = run_step(res.model, opt, cfg, x, y, lr, streams, astate);
        if (!params_finite(res.model))
          fail("parameters went non-finite after the update");
      } catch (const std::exception& e) {
        res.diverged = true;
        std::ostringstream os;
        os << "diverged at epoch " << epoch << " step " << b << ": "
           << e.what();
        res.divergence_note = os.str();
        return res;
      }

      StepRecord rec;
      rec.epoch = epoch;
      rec.step = b;
      rec.loss = out.loss;
      rec.e_lin = out.e_lin;
      rec.lambda = out.lambda;
      rec.forward_ms = out.timing.forward_ms;
      rec.backward_ms = out.timing.backward_ms;
      rec.wall_ms = out.timing.wall_ms;
      res.steps.push_back(rec);
      if (hooks.on_step) hooks.on_step(rec);
    }

    EpochRecord er;
    er.epoch = epoch;
    // Evaluation and probes can hit non-finite values on a model the step
    // guard still let through (finite but astronomically large); that is
    // divergence too and must come back in the result, not as a throw.
    try {
      AttackSpec clean;
      clean.kind = AttackKind::none;
      er.clean_acc = evaluate(res.model, eval_ds, clean, cfg.seed);
      er.robust_acc = evaluate(res.model, eval_ds, cfg.eval_attack, cfg.seed);

      if (cfg.probe_cadence > 0 &&
          (epoch % cfg.probe_cadence == 0 || epoch + 1 == cfg.epochs)) {
        er.probed = true;
        ++probed_count;
        Rng pr1 = make_stream(cfg.seed, StreamRole::probe, epoch, 0);
        er.elin_probe = estimate_elin(res.model, probe_ds, cfg.attack.eps,
                                      cfg.probe_samples, pr1)
                            .value;
        Rng pr2 = make_stream(cfg.seed, StreamRole::probe, epoch, 1);
        er.misalign_probe =
            grad_misalignment(res.model, probe_ds.inputs, probe_ds.labels,
                              cfg.attack.eps, pr2)
                .value;
      }
    } catch (const std::exception& e) {
      res.diverged = true;
      std::ostringstream os;
      os << "diverged at epoch " << epoch << " (evaluation): " << e.what();
      res.divergence_note = os.str();
      return res;
    }

    res.epochs.push_back(er);
    if (probed_count >= cfg.co.window) {
      const COReport co = co_detect(res.epochs, cfg.co);
      res.epochs.back().co_flag = co.flagged && co.epoch == epoch;
      if (co.flagged && !res.co.flagged) res.co = co;
    }
    if (hooks.on_epoch) hooks.on_epoch(res.epochs.back());
    if (hooks.on_checkpoint && cfg.checkpoint_every > 0 &&
        (epoch + 1) % cfg.checkpoint_every == 0)
      hooks.on_checkpoint(res.model, epoch);
  }
  return res;
}

}  // namespace linlab
