#include "linlab/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "linlab/rng.hpp"

namespace linlab {

namespace {

constexpr std::uint32_t kImagesMagic = 2051;
constexpr std::uint32_t kLabelsMagic = 2049;

std::string class_counts(const std::vector<int>& labels, std::size_t classes) {
  std::vector<std::size_t> counts(classes, 0);
  for (int y : labels) counts[static_cast<std::size_t>(y)]++;
  std::ostringstream os;
  for (std::size_t c = 0; c < classes; ++c) {
    if (c) os << " ";
    os << c << ":" << counts[c];
  }
  return os.str();
}

std::uint32_t read_u32_be(std::istream& in, const std::string& path,
                          const char* what) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  check(in.gcount() == 4,
        std::string("load_idx: truncated ") + what + " in " + path);
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

void write_u32_be(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {
      static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
      static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::vector<unsigned char> read_payload(std::istream& in, std::size_t n,
                                        const std::string& path) {
  std::vector<unsigned char> buf(n);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n));
  check(static_cast<std::size_t>(in.gcount()) == n,
        "load_idx: truncated payload in " + path);
  return buf;
}

}  // namespace

Dataset make_dataset(Tensor inputs, std::vector<int> labels,
                     std::size_t classes, std::string name,
                     std::string provenance) {
  check(inputs.rank() == 2, "dataset: inputs must be rank-2");
  check(inputs.rows() == labels.size(),
        "dataset: input/label count mismatch in " + name);
  check(classes >= 1, "dataset: needs at least one class");
  for (double v : inputs.data)
    check(v >= 0.0 && v <= 1.0, "dataset: input outside [0,1] in " + name);
  for (int y : labels)
    check(y >= 0 && static_cast<std::size_t>(y) < classes,
          "dataset: label out of range in " + name);
  Dataset ds;
  ds.inputs = std::move(inputs);
  ds.labels = std::move(labels);
  ds.classes = classes;
  ds.name = std::move(name);
  ds.provenance = std::move(provenance);
  return ds;
}

Dataset synth_blobs(std::size_t d, std::size_t classes,
                    std::size_t n_per_class, double margin, double spread,
                    std::uint64_t seed) {
  check(d >= 1 && classes >= 1 && n_per_class >= 1,
        "synth_blobs: d, classes and n_per_class must be positive");
  check(margin >= 0.0, "synth_blobs: margin must be >= 0");
  check(spread >= 0.0, "synth_blobs: spread must be >= 0");

  Rng rng = make_stream(seed, StreamRole::data_gen);

  // Class means are corners of [0,1]^d: a shared random base corner with a
  // per-class set of flipped coordinates. Corners give saturated contrast
  // (the regime thresholded image data lives in; interior means would cap
  // the separation an l-inf adversary leaves behind), and flipping only
  // ceil(margin^2) coordinates keeps the informative support sparse: corner
  // pairs differing in k coordinates sit exactly sqrt(k) apart, so the flip
  // budget is the margin expressed in coordinates. Rejection over the flip
  // choice enforces the margin; a bounded number of tries turns geometric
  // infeasibility into a clean error.
  constexpr int kMaxTries = 20000;
  const std::size_t flips = std::min<std::size_t>(
      d, std::max<std::size_t>(
             1, static_cast<std::size_t>(std::ceil(margin * margin))));
  std::vector<double> base(d);
  for (double& v : base) v = rng.unit() < 0.5 ? 0.0 : 1.0;

  std::vector<std::vector<double>> means;
  std::vector<std::size_t> coords(d);
  for (std::size_t c = 0; c < classes; ++c) {
    bool placed = false;
    for (int t = 0; t < kMaxTries && !placed; ++t) {
      for (std::size_t j = 0; j < d; ++j) coords[j] = j;
      std::vector<double> m = base;
      for (std::size_t j = 0; j < flips; ++j) {
        const std::size_t pick = j + rng.below(d - j);
        std::swap(coords[j], coords[pick]);
        m[coords[j]] = 1.0 - m[coords[j]];
      }
      placed = true;
      for (const auto& prev : means) {
        double dist2 = 0.0;
        for (std::size_t j = 0; j < d; ++j)
          dist2 += (m[j] - prev[j]) * (m[j] - prev[j]);
        if (dist2 < margin * margin) {
          placed = false;
          break;
        }
      }
      if (placed) means.push_back(std::move(m));
    }
    check(placed, "synth_blobs: cannot place " + std::to_string(classes) +
                      " class means at margin " + std::to_string(margin));
  }

  const std::size_t n = classes * n_per_class;
  Tensor inputs({n, d});
  std::vector<int> labels(n);
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t k = 0; k < n_per_class; ++k) {
      const std::size_t i = c * n_per_class + k;
      labels[i] = static_cast<int>(c);
      for (std::size_t j = 0; j < d; ++j) {
        const double v = means[c][j] + rng.uniform(-spread, spread);
        inputs.data[i * d + j] = std::clamp(v, 0.0, 1.0);
      }
    }
  }

  std::ostringstream name;
  name << "synth_blobs_d" << d << "_c" << classes << "_n" << n_per_class;
  std::ostringstream prov;
  prov << "synthetic blobs: margin=" << margin << " spread=" << spread
       << " seed=" << seed << " class counts " << class_counts(labels, classes);
  return make_dataset(std::move(inputs), std::move(labels), classes, name.str(),
                      prov.str());
}

Dataset load_idx(const std::string& images_path,
                 const std::string& labels_path) {
  std::ifstream img(images_path, std::ios::binary);
  check(img.good(), "load_idx: cannot open " + images_path);
  const std::uint32_t img_magic = read_u32_be(img, images_path, "magic");
  check(img_magic == kImagesMagic,
        "load_idx: bad magic " + std::to_string(img_magic) + " in " +
            images_path + " (expected 2051)");
  const std::uint32_t count = read_u32_be(img, images_path, "header");
  const std::uint32_t rows = read_u32_be(img, images_path, "header");
  const std::uint32_t cols = read_u32_be(img, images_path, "header");
  const std::size_t d = std::size_t(rows) * std::size_t(cols);
  check(count >= 1 && d >= 1, "load_idx: empty image file " + images_path);
  const auto pixels = read_payload(img, std::size_t(count) * d, images_path);

  std::ifstream lab(labels_path, std::ios::binary);
  check(lab.good(), "load_idx: cannot open " + labels_path);
  const std::uint32_t lab_magic = read_u32_be(lab, labels_path, "magic");
  check(lab_magic == kLabelsMagic,
        "load_idx: bad magic " + std::to_string(lab_magic) + " in " +
            labels_path + " (expected 2049)");
  const std::uint32_t lab_count = read_u32_be(lab, labels_path, "header");
  check(lab_count == count,
        "load_idx: count mismatch: " + std::to_string(count) + " images vs " +
            std::to_string(lab_count) + " labels");
  const auto bytes = read_payload(lab, lab_count, labels_path);

  Tensor inputs({count, d});
  for (std::size_t i = 0; i < pixels.size(); ++i)
    inputs.data[i] = double(pixels[i]) / 255.0;
  std::vector<int> labels(bytes.begin(), bytes.end());
  int max_label = 0;
  for (int y : labels) max_label = std::max(max_label, y);

  std::ostringstream prov;
  prov << "idx files " << images_path << " + " << labels_path << ", " << count
       << " images of " << rows << "x" << cols;
  return make_dataset(std::move(inputs), std::move(labels),
                      std::size_t(max_label) + 1, "idx", prov.str());
}

void save_idx(const Dataset& ds, const std::string& images_path,
              const std::string& labels_path, std::size_t rows,
              std::size_t cols) {
  check(rows * cols == ds.dim(),
        "save_idx: rows*cols must equal the input dimension");
  check(ds.size() >= 1, "save_idx: empty dataset");

  std::ofstream img(images_path, std::ios::binary);
  check(img.good(), "save_idx: cannot open " + images_path);
  write_u32_be(img, kImagesMagic);
  write_u32_be(img, static_cast<std::uint32_t>(ds.size()));
  write_u32_be(img, static_cast<std::uint32_t>(rows));
  write_u32_be(img, static_cast<std::uint32_t>(cols));
  for (double v : ds.inputs.data) {
    const double q = std::round(v * 255.0);
    img.put(static_cast<char>(
        static_cast<unsigned char>(std::clamp(q, 0.0, 255.0))));
  }
  check(img.good(), "save_idx: write failed for " + images_path);

  std::ofstream lab(labels_path, std::ios::binary);
  check(lab.good(), "save_idx: cannot open " + labels_path);
  write_u32_be(lab, kLabelsMagic);
  write_u32_be(lab, static_cast<std::uint32_t>(ds.size()));
  for (int y : ds.labels) lab.put(static_cast<char>(y));
  check(lab.good(), "save_idx: write failed for " + labels_path);
}

Dataset subset(const Dataset& ds, std::size_t n, std::uint64_t seed) {
  check(n >= 1, "subset: n must be >= 1");
  check(n <= ds.size(), "subset: n exceeds dataset size");

  Rng rng = make_stream(seed, StreamRole::shuffle);
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = ds.size(); i > 1; --i)
    std::swap(order[i - 1], order[rng.below(i)]);

  const std::size_t d = ds.dim();
  Tensor inputs({n, d});
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t src = order[i];
    labels[i] = ds.labels[src];
    for (std::size_t j = 0; j < d; ++j)
      inputs.data[i * d + j] = ds.inputs.data[src * d + j];
  }

  std::ostringstream prov;
  prov << "subset n=" << n << " seed=" << seed << " of " << ds.name
       << "; class counts " << class_counts(labels, ds.classes);
  return make_dataset(std::move(inputs), std::move(labels), ds.classes,
                      ds.name + "_subset", prov.str());
}

Dataset prefix(const Dataset& ds, std::size_t n) {
  check(n >= 1, "prefix: n must be >= 1");
  check(n <= ds.size(), "prefix: n exceeds dataset size");

  const std::size_t d = ds.dim();
  Tensor inputs({n, d});
  std::copy(ds.inputs.data.begin(), ds.inputs.data.begin() + n * d,
            inputs.data.begin());
  std::vector<int> labels(ds.labels.begin(), ds.labels.begin() + n);
  return make_dataset(std::move(inputs), std::move(labels), ds.classes,
                      ds.name + "_prefix", "first " + std::to_string(n) +
                                               " rows of " + ds.name);
}

}  // namespace linlab
