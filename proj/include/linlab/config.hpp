#pragma once

#include <cstdint>
#include <string>
#include <utility>

#include "linlab/data.hpp"
#include "linlab/train.hpp"

namespace linlab {

// How the run's train/eval datasets are provisioned.
struct DataConfig {
  std::string kind = "synth";  // synth | idx
  // synth: one generation call covers train+eval so both draw from the same
  // class means; blocks are split per class afterwards.
  std::size_t d = 2;
  std::size_t classes = 2;
  std::size_t train_per_class = 200;
  std::size_t eval_per_class = 50;
  double margin = 0.5;
  double spread = 0.08;
  // idx
  std::string images, labels;            // training pair
  std::string eval_images, eval_labels;  // evaluation pair
  std::size_t train_n = 0;  // shuffled-prefix subset size; 0 = all
  std::size_t eval_n = 0;
};

struct ParsedConfig {
  RunConfig run;
  DataConfig data;
};

// Text configuration, sections model / data / attack / regularizer /
// schedule / eval plus a top-level `seed`. Unknown or duplicate keys, type
// mismatches and missing required fields are rejected naming section.key.
// Absent keys default to the values echoed by serialize().
ParsedConfig parse_config(const std::string& path);
ParsedConfig parse_config_text(const std::string& text);

// Canonical form: every field explicit, fixed order, shortest round-trip
// number formatting. parse(serialize(c)) == c, and serialize is the hash and
// run-id domain.
std::string serialize(const ParsedConfig& cfg);

// FNV-1a (64-bit) over the canonical serialization.
std::uint64_t config_hash(const ParsedConfig& cfg);

// 16-hex-digit run identifier derived from the config hash; stable across
// identical configs, free of timestamps so reruns log identically.
std::string run_id(const ParsedConfig& cfg);

// Materializes the train/eval pair described by the data section.
std::pair<Dataset, Dataset> build_datasets(const DataConfig& data,
                                           std::uint64_t seed);

const char* name_of(AttackKind k);
const char* name_of(RegKind k);
const char* name_of(ScheduleKind k);
const char* name_of(Activation a);

}  // namespace linlab
