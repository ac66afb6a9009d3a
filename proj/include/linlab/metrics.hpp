#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "linlab/config.hpp"
#include "linlab/probe.hpp"
#include "linlab/train.hpp"

namespace linlab {

// Shortest round-trip decimal form, shared by logs and CSV exports.
std::string fmt_double(double v);

// Append-only line-delimited JSON. Every line is a flat object tagged with
// kind, run id and config hash, so each parses on its own. Only semantic
// quantities are written (no wall-clock fields, no timestamps): two runs of
// one config produce bit-identical files. Durations go to TimingWriter.
// A write failure flushes what is buffered, then raises.
class MetricsWriter {
 public:
  MetricsWriter(const std::string& path, const ParsedConfig& cfg);

  void header();  // config echo, defaults and detector thresholds
  void step(const StepRecord& r);
  void epoch(const EpochRecord& r);
  void probe(const ProbeReport& r);
  void divergence(const std::string& note);
  void flush();

  const std::string& id() const { return run_id_; }

 private:
  void line(const std::string& s);
  std::ofstream out_;
  std::string path_;
  std::string run_id_;
  std::string hash_;
  std::string config_echo_;
  CODetectorConfig co_;
};

// Wall-clock companion file, same line format; separate so timing noise
// never perturbs the deterministic metrics log.
class TimingWriter {
 public:
  TimingWriter(const std::string& path, const ParsedConfig& cfg);
  void step(const StepRecord& r);
  void flush();

 private:
  void line(const std::string& s);
  std::ofstream out_;
  std::string path_;
  std::string run_id_;
  std::string hash_;
};

// Per-epoch curves for plotting: a header line plus one row per record.
void write_epoch_csv(const std::string& path,
                     const std::vector<EpochRecord>& epochs);

}  // namespace linlab
