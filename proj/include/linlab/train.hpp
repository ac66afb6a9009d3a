#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "linlab/attack.hpp"
#include "linlab/data.hpp"
#include "linlab/model.hpp"
#include "linlab/regularizer.hpp"
#include "linlab/rng.hpp"

namespace linlab {

enum class ScheduleKind : std::uint8_t {
  short_cyclic,  // triangular 0 -> lr0 -> 0, peak at mid-run, per-step
  long_steps,    // lr0, then lr0/10 from epoch 100, lr0/100 from epoch 150
  long_cosine,   // lr0 * (1 + cos(pi * progress)) / 2, per-step
};

struct Schedule {
  ScheduleKind kind = ScheduleKind::short_cyclic;
  double lr0 = 0.2;          // peak (short) or initial (long, long_cosine)
  std::size_t epochs = 10;   // horizon the schedule is shaped over
};

// Learning rate for a given step. epoch must be < schedule.epochs.
double lr_at(const Schedule& s, std::size_t epoch, std::size_t step,
             std::size_t steps_per_epoch);

struct CODetectorConfig {
  std::size_t window = 5;  // >= 2
  double k_spike = 10.0;   // > 0
  double rho = 0.5;        // relative robust-accuracy drop, in (0, 1]
};

struct RunConfig {
  ModelConfig model;
  std::string dataset;  // identifier resolved by the caller; logged only
  AttackSpec attack;
  RegularizerSpec reg;
  std::size_t epochs = 10;
  std::size_t batch = 128;
  Schedule schedule;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::uint64_t seed = 0;
  AttackSpec eval_attack;
  std::size_t probe_cadence = 1;  // run probes every k epochs; 0 disables
  std::size_t probe_samples = 1024;
  std::size_t probe_slice = 1024;     // held-out examples probes run on
  std::size_t checkpoint_every = 0;   // epochs between checkpoints; 0 = off
  CODetectorConfig co;
};

void validate_run_config(const RunConfig& cfg);

struct StepRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;    // within the epoch
  double loss = 0.0;       // objective value that was differentiated
  double e_lin = 0.0;      // batch-mean regularizer magnitude (0 for none)
  double lambda = 0.0;     // lambda applied this step
  double forward_ms = 0.0;
  double backward_ms = 0.0;
  double wall_ms = 0.0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double clean_acc = 0.0;
  double robust_acc = 0.0;
  bool probed = false;  // probe fields below are only meaningful when set
  double elin_probe = 0.0;
  double misalign_probe = 0.0;
  bool co_flag = false;
};

struct COReport {
  bool flagged = false;
  std::size_t epoch = 0;  // first trigger
};

// Flags the first probed epoch where the linearity probe exceeds
// k_spike times the median of the previous `window` probed values AND robust
// accuracy has dropped to at most (1 - rho) times the best seen before it.
// Requires at least `window` probed entries of history.
COReport co_detect(const std::vector<EpochRecord>& history,
                   const CODetectorConfig& cfg);

// Fraction of argmax-correct predictions, ties broken toward the lowest
// class index. kind=none scores clean inputs; otherwise inputs are attacked
// first, with draws keyed by (seed, batch, example) so results do not depend
// on when the call happens.
double evaluate(const Mlp& m, const Dataset& ds, const AttackSpec& attack,
                std::uint64_t seed, std::size_t batch = 256);

// Wall-clock split of one step's two phases.
struct StepTiming {
  double forward_ms = 0.0;
  double backward_ms = 0.0;
  double wall_ms = 0.0;
};

StepTiming time_split(const std::function<void()>& forward,
                      const std::function<void()>& backward);

struct TrainHooks {
  std::function<void(const StepRecord&)> on_step;
  std::function<void(const EpochRecord&)> on_epoch;
  // Fires every checkpoint_every epochs (when nonzero). The trainer does no
  // file I/O itself; saving is the caller's business.
  std::function<void(const Mlp&, std::size_t epoch)> on_checkpoint;
};

struct TrainResult {
  Mlp model;
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
  COReport co;
  bool diverged = false;
  std::string divergence_note;  // which epoch/step went non-finite
};

// Per epoch: shuffle, then per batch attack -> regularizer term -> (adaptive
// lambda update when kind=elle_a) -> gradient of loss(x_adv) + lambda * term
// -> SGD step v = mu v + (grad + wd * theta), theta -= lr v. Per-step rng
// streams are keyed by (seed, epoch, batch, example), attack draws before
// term draws, so runs differing only in lambda see identical draws.
// Divergence (non-finite loss or parameter) stops the run and is reported in
// the result, never thrown.
TrainResult train(const RunConfig& cfg, const Dataset& train_ds,
                  const Dataset& eval_ds, const TrainHooks& hooks = {});

}  // namespace linlab
