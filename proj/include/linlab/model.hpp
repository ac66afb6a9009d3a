#pragma once
// Small feed-forward classifiers (MLPs) with selectable activation
// smoothness and cross-entropy loss, sized so experiments run on a CPU in
// minutes. relu nets are the training workhorse; softplus nets are C-inf so
// curvature properties can be verified on them.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "linlab/graph.hpp"
#include "linlab/rng.hpp"
#include "linlab/tensor.hpp"

namespace linlab {

enum class Activation : std::uint8_t { relu = 0, softplus = 1 };

struct ModelConfig {
  std::size_t input_dim = 2;
  std::vector<std::size_t> widths = {16};
  std::size_t classes = 2;
  Activation activation = Activation::relu;
  std::uint64_t init_seed = 0;
};

struct Mlp {
  ModelConfig config;
  std::vector<Tensor> weights;  // layer l: (out_l, in_l)
  std::vector<Tensor> biases;   // layer l: (out_l,)
};

// Weights ~ Unif(-sqrt(1/fan_in), +sqrt(1/fan_in)), biases zero,
// reproducible from config.init_seed.
Mlp model_new(const ModelConfig& config);

// Parameter leaves in a graph, ordered W0, b0, W1, b1, ...
struct ParamBinding {
  std::vector<int> ids;
};

ParamBinding bind_params(Graph& g, const Mlp& m);
// Constant leaves: for attacks and probes that differentiate w.r.t. inputs
// only, keeping backward passes off the parameter branches.
ParamBinding bind_params_const(Graph& g, const Mlp& m);

// Logits node (n, classes) from an input node (n, input_dim).
int model_forward(Graph& g, const Mlp& m, const ParamBinding& p, int x);

// Per-example cross-entropy rows (n,), and their batch mean.
int cross_entropy_vec(Graph& g, int logits, const std::vector<int>& y);
int cross_entropy(Graph& g, int logits, const std::vector<int>& y);

// Maps a batch input node (n, d) to per-example scalar losses (n,). The
// abstraction attacks, regularizers, and probes are written against, so
// hand-built test losses plug in alongside model+cross-entropy ones.
using BatchLoss = std::function<int(Graph&, int)>;

// Model + cross-entropy closure over a binding in the same graph. The Mlp
// and labels are captured by value; the binding must belong to the graph the
// closure is invoked with.
BatchLoss ce_loss(const Mlp& m, const ParamBinding& p, std::vector<int> y);

// Flat binary checkpoint: header with config fields, then each tensor as
// (rank, extents, little-endian f64 payload). Round-trips bit-exactly.
void save_checkpoint(const std::string& path, const Mlp& m);
Mlp load_checkpoint(const std::string& path);

}  // namespace linlab
