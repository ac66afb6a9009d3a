// Exports a synthetic blob dataset as an IDX image/label pair, so the idx
// loading path can be exercised (and the smoke experiment fed) without
// shipping binary fixtures. Usage:
//   synth-to-idx <images> <labels> [--d N] [--classes N] [--per-class N]
//                [--margin X] [--spread X] [--seed N] [--rows R] [--cols C]
// rows*cols must equal d; defaults give a 28x28, 10-class, 400-per-class set.

#include <cstdint>
#include <cstdio>
#include <string>

#include "CLI11.hpp"

#include "linlab/data.hpp"

int main(int argc, char** argv) {
  CLI::App app{"synthetic blobs -> IDX pair"};

  std::string images, labels;
  std::size_t d = 784, classes = 10, per_class = 400, rows = 28, cols = 28;
  double margin = 0.35, spread = 0.12;
  std::uint64_t seed = 0;

  app.add_option("images", images, "output images file")->required();
  app.add_option("labels", labels, "output labels file")->required();
  app.add_option("--d", d, "input dimension")->capture_default_str();
  app.add_option("--classes", classes, "class count")->capture_default_str();
  app.add_option("--per-class", per_class, "examples per class")
      ->capture_default_str();
  app.add_option("--margin", margin, "minimum distance between class means")
      ->capture_default_str();
  app.add_option("--spread", spread, "jitter half-width")
      ->capture_default_str();
  app.add_option("--seed", seed, "generation seed")->capture_default_str();
  app.add_option("--rows", rows, "image rows")->capture_default_str();
  app.add_option("--cols", cols, "image cols")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    const linlab::Dataset ds =
        linlab::synth_blobs(d, classes, per_class, margin, spread, seed);
    linlab::save_idx(ds, images, labels, rows, cols);
    std::printf("%zu examples (%zu classes, %zux%zu) -> %s, %s\n", ds.size(),
                ds.classes, rows, cols, images.c_str(), labels.c_str());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
