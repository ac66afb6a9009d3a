#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "linlab/config.hpp"
#include "linlab/train.hpp"

namespace linlab {

// Entry point for the experiment harness. Parses a subcommand
// (train / eval / probe / grid / co-demo / timing) plus flags and
// dispatches. Returns the process exit status: nonzero iff a module
// reported an error or a training run aborted on divergence.
int run_cli(int argc, const char* const* argv);

// Median per-step times for one training method, in milliseconds.
struct MethodTiming {
  std::string method;
  double forward_ms = 0.0;
  double backward_ms = 0.0;
  double wall_ms = 0.0;
};

// Runs the fixed method set {fgsm, elle, elle_a, gradalign, llr_sq, cure}
// on one shared model/data config so the comparison is apples-to-apples.
// Every method trains for the same number of steps; medians are taken
// over per-step records. `base` supplies model, data and attack; the
// regularizer kind is overridden per method (lambda kept if nonzero,
// else 1 so the term participates in the backward pass).
std::vector<MethodTiming> run_timing_suite(const ParsedConfig& base,
                                           std::size_t steps);

// Paired runs for the collapse demo: the same config trained without a
// regularizer and with the configured one. Everything else (seed, data,
// attack, schedule) is shared.
struct CoDemoResult {
  TrainResult fgsm;
  TrainResult reg;
};

CoDemoResult run_co_pair(const ParsedConfig& cfg,
                         const TrainHooks& fgsm_hooks = {},
                         const TrainHooks& reg_hooks = {});

// A lambda-by-seed sweep over one base config.
struct GridSpec {
  std::vector<double> lambdas;       // non-empty
  std::vector<std::uint64_t> seeds;  // at least one
  ParsedConfig base;
};

void validate_grid(const GridSpec& spec);

}  // namespace linlab
