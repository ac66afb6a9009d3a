#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "linlab/tensor.hpp"

namespace linlab {

// Immutable after construction; all invariants are checked by make_dataset.
struct Dataset {
  Tensor inputs;            // (n, d), every entry in [0, 1]
  std::vector<int> labels;  // n entries in [0, classes)
  std::size_t classes = 0;
  std::string name;
  std::string provenance;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return inputs.rank() == 2 ? inputs.cols() : 0; }
};

// Validates shape agreement, the [0,1] domain and the label range.
Dataset make_dataset(Tensor inputs, std::vector<int> labels,
                     std::size_t classes, std::string name,
                     std::string provenance);

// Margin-separated class means at corners of [0,1]^d: a shared random base
// corner with ceil(margin^2) coordinates flipped per class (rejection until
// the pairwise margin holds), one block of n_per_class points per class with
// per-coordinate uniform jitter of half-width spread, clamped to [0,1].
// Same seed, same dataset. Throws when the means cannot be placed at the
// requested margin.
Dataset synth_blobs(std::size_t d, std::size_t classes,
                    std::size_t n_per_class, double margin, double spread,
                    std::uint64_t seed);

// IDX container (big-endian): images magic 2051 with dims (count, rows,
// cols), labels magic 2049 with dims (count). Pixels are bytes scaled by
// 1/255. Bad magic, truncated payload and count mismatch each raise a
// distinct named error.
Dataset load_idx(const std::string& images_path,
                 const std::string& labels_path);

// Quantizes inputs to bytes (round(x*255)) and writes the pair of IDX files.
// rows*cols must equal the input dimension.
void save_idx(const Dataset& ds, const std::string& images_path,
              const std::string& labels_path, std::size_t rows,
              std::size_t cols);

// Deterministic shuffled prefix of size n (1 <= n <= size). Per-class counts
// of the result are recorded in the provenance note.
Dataset subset(const Dataset& ds, std::size_t n, std::uint64_t seed);

// First n rows, order kept. The probe slice: cheap, deterministic, and the
// same examples every epoch.
Dataset prefix(const Dataset& ds, std::size_t n);

}  // namespace linlab
