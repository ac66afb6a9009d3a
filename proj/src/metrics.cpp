#include "linlab/metrics.hpp"

#include <charconv>

#include "json.hpp"

namespace linlab {

using nlohmann::json;  // objects serialize with sorted keys: stable output

std::string fmt_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

namespace {

std::string hash_hex(std::uint64_t h) {
  static const char* hex = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = hex[h & 0xf];
    h >>= 4;
  }
  return s;
}

}  // namespace

// Truncate on open: a rerun of one config rewrites its log rather than
// growing it, so identical runs leave identical files. Rows are append-only
// within the run.
MetricsWriter::MetricsWriter(const std::string& path, const ParsedConfig& cfg)
    : out_(path, std::ios::trunc),
      path_(path),
      run_id_(run_id(cfg)),
      hash_(hash_hex(config_hash(cfg))),
      config_echo_(serialize(cfg)),
      co_(cfg.run.co) {
  check(out_.good(), "metrics: cannot open " + path);
}

void MetricsWriter::line(const std::string& s) {
  out_ << s << "\n";
  if (!out_.good()) {
    out_.flush();
    fail("metrics: write failed for " + path_);
  }
}

void MetricsWriter::header() {
  json j;
  j["kind"] = "header";
  j["run_id"] = run_id_;
  j["config_hash"] = hash_;
  j["config"] = config_echo_;
  j["co_window"] = co_.window;
  j["co_k_spike"] = co_.k_spike;
  j["co_rho"] = co_.rho;
  line(j.dump());
}

void MetricsWriter::step(const StepRecord& r) {
  json j;
  j["kind"] = "step";
  j["run_id"] = run_id_;
  j["config_hash"] = hash_;
  j["epoch"] = r.epoch;
  j["step"] = r.step;
  j["loss"] = r.loss;
  j["e_lin"] = r.e_lin;
  j["lambda"] = r.lambda;
  line(j.dump());
}

void MetricsWriter::epoch(const EpochRecord& r) {
  json j;
  j["kind"] = "epoch";
  j["run_id"] = run_id_;
  j["config_hash"] = hash_;
  j["epoch"] = r.epoch;
  j["clean_acc"] = r.clean_acc;
  j["robust_acc"] = r.robust_acc;
  j["probed"] = r.probed;
  if (r.probed) {
    j["elin_probe"] = r.elin_probe;
    j["misalign_probe"] = r.misalign_probe;
  }
  j["co_flag"] = r.co_flag;
  line(j.dump());
}

void MetricsWriter::probe(const ProbeReport& r) {
  json j;
  j["kind"] = "probe";
  j["run_id"] = run_id_;
  j["config_hash"] = hash_;
  j["metric"] = r.metric;
  j["value"] = r.value;
  j["samples"] = r.samples;
  j["eps"] = r.eps;
  j["seed"] = r.seed;
  line(j.dump());
}

void MetricsWriter::divergence(const std::string& note) {
  json j;
  j["kind"] = "divergence";
  j["run_id"] = run_id_;
  j["config_hash"] = hash_;
  j["note"] = note;
  line(j.dump());
  out_.flush();
}

void MetricsWriter::flush() { out_.flush(); }

TimingWriter::TimingWriter(const std::string& path, const ParsedConfig& cfg)
    : out_(path, std::ios::trunc),
      path_(path),
      run_id_(run_id(cfg)),
      hash_(hash_hex(config_hash(cfg))) {
  check(out_.good(), "timing: cannot open " + path);
}

void TimingWriter::line(const std::string& s) {
  out_ << s << "\n";
  if (!out_.good()) {
    out_.flush();
    fail("timing: write failed for " + path_);
  }
}

void TimingWriter::step(const StepRecord& r) {
  json j;
  j["kind"] = "step_timing";
  j["run_id"] = run_id_;
  j["config_hash"] = hash_;
  j["epoch"] = r.epoch;
  j["step"] = r.step;
  j["forward_ms"] = r.forward_ms;
  j["backward_ms"] = r.backward_ms;
  j["wall_ms"] = r.wall_ms;
  line(j.dump());
}

void TimingWriter::flush() { out_.flush(); }

void write_epoch_csv(const std::string& path,
                     const std::vector<EpochRecord>& epochs) {
  std::ofstream out(path);
  check(out.good(), "csv: cannot open " + path);
  out << "epoch,clean_acc,robust_acc,probed,elin_probe,misalign_probe,co_flag\n";
  for (const auto& r : epochs) {
    out << r.epoch << "," << fmt_double(r.clean_acc) << ","
        << fmt_double(r.robust_acc) << "," << (r.probed ? 1 : 0) << ","
        << (r.probed ? fmt_double(r.elin_probe) : "") << ","
        << (r.probed ? fmt_double(r.misalign_probe) : "") << ","
        << (r.co_flag ? 1 : 0) << "\n";
  }
  check(out.good(), "csv: write failed for " + path);
}

}  // namespace linlab
