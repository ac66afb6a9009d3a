#include "linlab/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "linlab/attack.hpp"
#include "linlab/data.hpp"
#include "linlab/metrics.hpp"
#include "linlab/model.hpp"
#include "linlab/probe.hpp"
#include "linlab/rng.hpp"
#include "linlab/tensor.hpp"

namespace fs = std::filesystem;

namespace linlab {
namespace {

struct GlobalOpts {
  std::string config_path;
  std::string out_dir = "runs";
  std::string checkpoint;
  std::int64_t seed = -1;  // < 0 keeps the config's seed
};

ParsedConfig load_config(const GlobalOpts& opt) {
  check(!opt.config_path.empty(), "cli: --config is required");
  ParsedConfig cfg = parse_config(opt.config_path);
  if (opt.seed >= 0) {
    cfg.run.seed = static_cast<std::uint64_t>(opt.seed);
    cfg.run.model.init_seed = cfg.run.seed;
  }
  return cfg;
}

std::string acc_str(double v) { return fmt_double(v); }

// A json line writer for the subcommands whose rows are not StepRecord /
// EpochRecord shaped (eval, probe summaries, demo verdicts).
class RowWriter {
 public:
  RowWriter(const std::string& path, const ParsedConfig& cfg)
      : out_(path, std::ios::trunc),
        path_(path),
        run_id_(run_id(cfg)),
        hash_(config_hash(cfg)) {
    check(out_.good(), "cli: cannot open " + path);
  }

  void row(nlohmann::json j) {
    j["run_id"] = run_id_;
    j["config_hash"] = hash_;
    out_ << j.dump() << "\n";
    check(out_.good(), "cli: write failed on " + path_);
  }

 private:
  std::ofstream out_;
  std::string path_;
  std::string run_id_;
  std::uint64_t hash_;
};

fs::path make_run_dir(const GlobalOpts& opt, const ParsedConfig& cfg) {
  fs::path dir = fs::path(opt.out_dir) / run_id(cfg);
  fs::create_directories(dir);
  return dir;
}

// Trains one config with full logging into <out>/<run_id>/. Returns the
// result; on divergence the log carries the note and the caller decides the
// exit status.
TrainResult train_logged(const GlobalOpts& opt, const ParsedConfig& cfg,
                         fs::path* where = nullptr) {
  const fs::path dir = make_run_dir(opt, cfg);
  if (where) *where = dir;

  auto [train_ds, eval_ds] = build_datasets(cfg.data, cfg.run.seed);

  MetricsWriter metrics((dir / "metrics.jsonl").string(), cfg);
  TimingWriter timing((dir / "timing.jsonl").string(), cfg);
  metrics.header();

  TrainHooks hooks;
  hooks.on_step = [&](const StepRecord& r) {
    metrics.step(r);
    timing.step(r);
  };
  hooks.on_epoch = [&](const EpochRecord& r) { metrics.epoch(r); };
  hooks.on_checkpoint = [&](const Mlp& m, std::size_t epoch) {
    save_checkpoint((dir / ("model_" + std::to_string(epoch) + ".ckpt")).string(),
                    m);
  };

  TrainResult res = train(cfg.run, train_ds, eval_ds, hooks);

  if (res.diverged) metrics.divergence(res.divergence_note);
  metrics.flush();
  timing.flush();
  write_epoch_csv((dir / "epochs.csv").string(), res.epochs);
  save_checkpoint((dir / "model.ckpt").string(), res.model);
  return res;
}

int cmd_train(const GlobalOpts& opt) {
  const ParsedConfig cfg = load_config(opt);
  fs::path dir;
  const TrainResult res = train_logged(opt, cfg, &dir);

  if (res.diverged) {
    std::cerr << "run " << run_id(cfg) << " diverged: " << res.divergence_note
              << "\n";
    return 1;
  }
  const EpochRecord& last = res.epochs.back();
  std::printf("run %s done: clean %s robust %s co=%s -> %s\n",
              run_id(cfg).c_str(), acc_str(last.clean_acc).c_str(),
              acc_str(last.robust_acc).c_str(),
              res.co.flagged ? "yes" : "no", dir.string().c_str());
  return 0;
}

int cmd_eval(const GlobalOpts& opt) {
  check(!opt.checkpoint.empty(), "cli: eval needs --checkpoint");
  const ParsedConfig cfg = load_config(opt);
  const Mlp m = load_checkpoint(opt.checkpoint);

  auto [train_ds, eval_ds] = build_datasets(cfg.data, cfg.run.seed);
  (void)train_ds;

  AttackSpec clean;
  clean.kind = AttackKind::none;
  const double clean_acc = evaluate(m, eval_ds, clean, cfg.run.seed);
  const double robust_acc =
      evaluate(m, eval_ds, cfg.run.eval_attack, cfg.run.seed);

  const fs::path dir = make_run_dir(opt, cfg);
  RowWriter out((dir / "eval.jsonl").string(), cfg);
  out.row({{"kind", "eval"},
           {"attack", name_of(cfg.run.eval_attack.kind)},
           {"eps", cfg.run.eval_attack.eps},
           {"steps", cfg.run.eval_attack.steps},
           {"clean_acc", clean_acc},
           {"robust_acc", robust_acc}});

  std::printf("clean %s robust %s (%s, eps %s, %d steps)\n",
              acc_str(clean_acc).c_str(), acc_str(robust_acc).c_str(),
              name_of(cfg.run.eval_attack.kind),
              fmt_double(cfg.run.eval_attack.eps).c_str(),
              cfg.run.eval_attack.steps);
  return 0;
}

int cmd_probe(const GlobalOpts& opt, std::size_t samples, double sigma_fd) {
  check(!opt.checkpoint.empty(), "cli: probe needs --checkpoint");
  const ParsedConfig cfg = load_config(opt);
  const Mlp m = load_checkpoint(opt.checkpoint);

  auto [train_ds, eval_ds] = build_datasets(cfg.data, cfg.run.seed);
  (void)train_ds;
  const Dataset slice =
      prefix(eval_ds, std::min(cfg.run.probe_slice, eval_ds.size()));

  const double eps = cfg.run.attack.eps;
  const std::size_t n = samples ? samples : cfg.run.probe_samples;

  Rng r0 = make_stream(cfg.run.seed, StreamRole::probe, 0, 0);
  ProbeReport elin = estimate_elin(m, slice, eps, n, r0);
  Rng r1 = make_stream(cfg.run.seed, StreamRole::probe, 0, 1);
  ProbeReport mis =
      grad_misalignment(m, slice.inputs, slice.labels, eps, r1);
  Rng r2 = make_stream(cfg.run.seed, StreamRole::probe, 0, 2);
  ProbeReport fd =
      fd_gradalign_estimate(m, slice.inputs, slice.labels, eps, sigma_fd, r2);
  elin.seed = mis.seed = fd.seed = cfg.run.seed;

  const fs::path dir = make_run_dir(opt, cfg);
  RowWriter out((dir / "probe.jsonl").string(), cfg);
  for (const ProbeReport* p : {&elin, &mis, &fd}) {
    out.row({{"kind", "probe"},
             {"metric", p->metric},
             {"value", p->value},
             {"samples", p->samples},
             {"eps", p->eps},
             {"seed", p->seed}});
    std::printf("%-18s %s  (%zu samples, eps %s)\n", p->metric.c_str(),
                fmt_double(p->value).c_str(), p->samples,
                fmt_double(p->eps).c_str());
  }
  return 0;
}

int cmd_grid(const GlobalOpts& opt, std::vector<double> lambdas,
             std::vector<std::uint64_t> seeds) {
  GridSpec spec;
  spec.base = load_config(opt);
  spec.lambdas = std::move(lambdas);
  spec.seeds = std::move(seeds);
  if (spec.seeds.empty()) spec.seeds.push_back(spec.base.run.seed);
  validate_grid(spec);

  fs::create_directories(opt.out_dir);
  const fs::path summary_path = fs::path(opt.out_dir) / "grid_summary.csv";
  std::ofstream summary(summary_path, std::ios::trunc);
  check(summary.good(), "cli: cannot open " + summary_path.string());
  summary << "lambda,seed,run_id,final_clean,final_robust,max_elin_probe,"
             "co_flagged,diverged\n";

  int status = 0;
  for (const double lam : spec.lambdas) {
    for (const std::uint64_t seed : spec.seeds) {
      ParsedConfig cfg = spec.base;
      cfg.run.reg.lambda = lam;
      cfg.run.seed = seed;
      cfg.run.model.init_seed = seed;

      const TrainResult res = train_logged(opt, cfg);
      double max_elin = 0.0;
      for (const auto& e : res.epochs)
        if (e.probed) max_elin = std::max(max_elin, e.elin_probe);
      const EpochRecord& last = res.epochs.back();

      summary << fmt_double(lam) << ',' << seed << ',' << run_id(cfg) << ','
              << fmt_double(last.clean_acc) << ','
              << fmt_double(last.robust_acc) << ',' << fmt_double(max_elin)
              << ',' << (res.co.flagged ? 1 : 0) << ','
              << (res.diverged ? 1 : 0) << "\n";
      check(summary.good(), "cli: write failed on " + summary_path.string());

      std::printf("lambda %-10s seed %-4llu clean %-10s robust %-10s co=%s%s\n",
                  fmt_double(lam).c_str(),
                  static_cast<unsigned long long>(seed),
                  acc_str(last.clean_acc).c_str(),
                  acc_str(last.robust_acc).c_str(),
                  res.co.flagged ? "yes" : "no",
                  res.diverged ? " DIVERGED" : "");
      if (res.diverged) status = 1;
    }
  }
  std::printf("summary -> %s\n", summary_path.string().c_str());
  return status;
}

int cmd_co_demo(const GlobalOpts& opt) {
  const ParsedConfig cfg = load_config(opt);
  check(cfg.run.reg.kind != RegKind::none,
        "cli: co-demo needs a regularizer in the config to compare against");

  ParsedConfig plain = cfg;
  plain.run.reg = RegularizerSpec{};
  plain.run.reg.kind = RegKind::none;
  plain.run.reg.lambda = 0.0;

  fs::path plain_dir, reg_dir;
  CoDemoResult res;
  res.fgsm = train_logged(opt, plain, &plain_dir);
  res.reg = train_logged(opt, cfg, &reg_dir);

  double fgsm_max = 0.0, reg_max = 0.0;
  for (const auto& e : res.fgsm.epochs)
    if (e.probed) fgsm_max = std::max(fgsm_max, e.elin_probe);
  for (const auto& e : res.reg.epochs)
    if (e.probed) reg_max = std::max(reg_max, e.elin_probe);

  const fs::path dir = fs::path(opt.out_dir);
  fs::create_directories(dir);
  RowWriter out((dir / "co_demo.jsonl").string(), cfg);
  out.row({{"kind", "co_demo"},
           {"fgsm_run", run_id(plain)},
           {"reg_run", run_id(cfg)},
           {"fgsm_flagged", res.fgsm.co.flagged},
           {"fgsm_flag_epoch", res.fgsm.co.epoch},
           {"reg_flagged", res.reg.co.flagged},
           {"fgsm_final_robust", res.fgsm.epochs.back().robust_acc},
           {"reg_final_robust", res.reg.epochs.back().robust_acc},
           {"fgsm_max_elin", fgsm_max},
           {"reg_max_elin", reg_max}});

  std::printf("fgsm: co=%s final robust %s max elin %s -> %s\n",
              res.fgsm.co.flagged ? "yes" : "no",
              acc_str(res.fgsm.epochs.back().robust_acc).c_str(),
              fmt_double(fgsm_max).c_str(), plain_dir.string().c_str());
  std::printf("%s: co=%s final robust %s max elin %s -> %s\n",
              name_of(cfg.run.reg.kind),
              res.reg.co.flagged ? "yes" : "no",
              acc_str(res.reg.epochs.back().robust_acc).c_str(),
              fmt_double(reg_max).c_str(), reg_dir.string().c_str());

  if (res.fgsm.diverged || res.reg.diverged) return 1;
  return 0;
}

int cmd_timing(const GlobalOpts& opt, std::size_t steps) {
  const ParsedConfig base = load_config(opt);
  const std::vector<MethodTiming> table = run_timing_suite(base, steps);

  fs::create_directories(opt.out_dir);
  const fs::path csv_path = fs::path(opt.out_dir) / "timing_summary.csv";
  std::ofstream csv(csv_path, std::ios::trunc);
  check(csv.good(), "cli: cannot open " + csv_path.string());
  csv << "method,forward_ms,backward_ms,wall_ms\n";

  double fgsm_wall = 0.0;
  for (const auto& t : table)
    if (t.method == "fgsm") fgsm_wall = t.wall_ms;

  std::printf("%-10s %12s %12s %12s %10s\n", "method", "forward_ms",
              "backward_ms", "wall_ms", "vs_fgsm");
  for (const auto& t : table) {
    csv << t.method << ',' << fmt_double(t.forward_ms) << ','
        << fmt_double(t.backward_ms) << ',' << fmt_double(t.wall_ms) << "\n";
    std::printf("%-10s %12.3f %12.3f %12.3f %9.2fx\n", t.method.c_str(),
                t.forward_ms, t.backward_ms, t.wall_ms,
                fgsm_wall > 0 ? t.wall_ms / fgsm_wall : 0.0);
  }
  check(csv.good(), "cli: write failed on " + csv_path.string());
  std::printf("summary -> %s\n", csv_path.string().c_str());
  return 0;
}

}  // namespace

void validate_grid(const GridSpec& spec) {
  check(!spec.lambdas.empty(), "grid: lambda list must be non-empty");
  // Rejecting bad cells up front beats aborting a half-finished sweep.
  for (const double l : spec.lambdas)
    check(l >= 0.0 && std::isfinite(l), "grid: lambda must be >= 0 and finite");
  check(!spec.seeds.empty(), "grid: at least one seed");
  validate_run_config(spec.base.run);
}

CoDemoResult run_co_pair(const ParsedConfig& cfg, const TrainHooks& fgsm_hooks,
                         const TrainHooks& reg_hooks) {
  check(cfg.run.reg.kind != RegKind::none,
        "co pair: config must name a regularizer");

  ParsedConfig plain = cfg;
  plain.run.reg = RegularizerSpec{};
  plain.run.reg.kind = RegKind::none;
  plain.run.reg.lambda = 0.0;

  auto [train_a, eval_a] = build_datasets(plain.data, plain.run.seed);
  CoDemoResult res;
  res.fgsm = train(plain.run, train_a, eval_a, fgsm_hooks);
  auto [train_b, eval_b] = build_datasets(cfg.data, cfg.run.seed);
  res.reg = train(cfg.run, train_b, eval_b, reg_hooks);
  return res;
}

std::vector<MethodTiming> run_timing_suite(const ParsedConfig& base,
                                           std::size_t steps) {
  check(steps >= 1, "timing: steps must be >= 1");

  struct Method {
    const char* name;
    RegKind kind;
  };
  const Method methods[] = {
      {"fgsm", RegKind::none},         {"elle", RegKind::elle},
      {"elle_a", RegKind::elle_a},     {"gradalign", RegKind::gradalign},
      {"llr_sq", RegKind::llr_sq},     {"cure", RegKind::cure},
  };

  auto [train_ds, eval_ds] = build_datasets(base.data, base.run.seed);
  const std::size_t batch =
      std::max<std::size_t>(1, (train_ds.size() + steps - 1) / steps);

  std::vector<MethodTiming> out;
  for (const Method& m : methods) {
    RunConfig cfg = base.run;
    cfg.reg.kind = m.kind;
    if (m.kind == RegKind::none)
      cfg.reg.lambda = 0.0;
    else if (cfg.reg.lambda <= 0.0)
      cfg.reg.lambda = 1.0;
    cfg.epochs = 1;
    cfg.schedule.epochs = 1;
    cfg.batch = batch;
    cfg.probe_cadence = 0;
    cfg.checkpoint_every = 0;

    const TrainResult res = train(cfg, train_ds, eval_ds);
    check(!res.diverged, std::string("timing: ") + m.name + " diverged");

    auto median = [&](auto field) {
      std::vector<double> v;
      v.reserve(res.steps.size());
      for (const auto& s : res.steps) v.push_back(s.*field);
      std::sort(v.begin(), v.end());
      const std::size_t k = v.size();
      return k % 2 ? v[k / 2] : 0.5 * (v[k / 2 - 1] + v[k / 2]);
    };

    MethodTiming t;
    t.method = m.name;
    t.forward_ms = median(&StepRecord::forward_ms);
    t.backward_ms = median(&StepRecord::backward_ms);
    t.wall_ms = median(&StepRecord::wall_ms);
    out.push_back(t);
  }
  return out;
}

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"local-linearity adversarial training lab"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOpts opt;
  app.add_option("--config", opt.config_path, "configuration file path");
  app.add_option("--seed", opt.seed, "seed override (config seed otherwise)");
  app.add_option("--out", opt.out_dir, "output directory root")
      ->capture_default_str();
  app.add_option("--checkpoint", opt.checkpoint,
                 "model checkpoint (eval / probe)");

  app.add_subcommand("train", "train one configuration, log and checkpoint");
  app.add_subcommand("eval", "clean + robust accuracy of a checkpoint");

  std::size_t probe_samples = 0;
  double sigma_fd = 0.01;
  CLI::App* probe =
      app.add_subcommand("probe", "linearity and alignment probes");
  probe->add_option("--samples", probe_samples,
                    "probe sample count (default from config)");
  probe->add_option("--sigma-fd", sigma_fd,
                    "finite-difference scale for the alignment estimate")
      ->capture_default_str();

  std::vector<double> lambdas;
  std::vector<std::uint64_t> seeds;
  CLI::App* grid =
      app.add_subcommand("grid", "sweep lambda x seed, summarize to CSV");
  grid->add_option("--lambdas", lambdas, "comma-separated lambda values")
      ->delimiter(',')
      ->required();
  grid->add_option("--seeds", seeds, "comma-separated seeds")->delimiter(',');

  app.add_subcommand("co-demo",
                     "paired run: no regularizer vs the configured one");

  std::size_t timing_steps = 30;
  CLI::App* timing =
      app.add_subcommand("timing", "per-method step time comparison");
  timing->add_option("--steps", timing_steps, "steps per method")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (app.got_subcommand("train")) return cmd_train(opt);
    if (app.got_subcommand("eval")) return cmd_eval(opt);
    if (app.got_subcommand("probe"))
      return cmd_probe(opt, probe_samples, sigma_fd);
    if (app.got_subcommand("grid")) return cmd_grid(opt, lambdas, seeds);
    if (app.got_subcommand("co-demo")) return cmd_co_demo(opt);
    if (app.got_subcommand("timing")) return cmd_timing(opt, timing_steps);
    fail("cli: unknown subcommand");
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace linlab
