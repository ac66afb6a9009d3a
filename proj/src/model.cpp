#include "linlab/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace linlab {

namespace {

std::vector<std::size_t> layer_dims(const ModelConfig& c) {
  std::vector<std::size_t> dims;
  dims.push_back(c.input_dim);
  for (std::size_t w : c.widths) dims.push_back(w);
  dims.push_back(c.classes);
  return dims;
}

void validate(const ModelConfig& c) {
  check(c.input_dim >= 1, "model: input_dim must be >= 1");
  check(c.classes >= 2, "model: classes must be >= 2");
  check(!c.widths.empty(), "model: widths must be non-empty");
  for (std::size_t w : c.widths) check(w >= 1, "model: width must be >= 1");
}

}  // namespace

Mlp model_new(const ModelConfig& config) {
  validate(config);
  Mlp m;
  m.config = config;
  Rng rng = make_stream(config.init_seed, StreamRole::model_init);
  const auto dims = layer_dims(config);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const std::size_t fan_in = dims[l], fan_out = dims[l + 1];
    const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
    Tensor w({fan_out, fan_in});
    for (double& x : w.data) x = rng.uniform(-bound, bound);
    m.weights.push_back(std::move(w));
    m.biases.push_back(Tensor::zeros({fan_out}));
  }
  return m;
}

ParamBinding bind_params(Graph& g, const Mlp& m) {
  ParamBinding p;
  for (std::size_t l = 0; l < m.weights.size(); ++l) {
    p.ids.push_back(g.leaf(m.weights[l], LeafKind::parameter));
    p.ids.push_back(g.leaf(m.biases[l], LeafKind::parameter));
  }
  return p;
}

ParamBinding bind_params_const(Graph& g, const Mlp& m) {
  ParamBinding p;
  for (std::size_t l = 0; l < m.weights.size(); ++l) {
    p.ids.push_back(g.cst(m.weights[l]));
    p.ids.push_back(g.cst(m.biases[l]));
  }
  return p;
}

int model_forward(Graph& g, const Mlp& m, const ParamBinding& p, int x) {
  check(p.ids.size() == 2 * m.weights.size(), "model_forward: binding mismatch");
  check(g.val(x).rank() == 2 && g.val(x).cols() == m.config.input_dim,
        "model_forward: input shape " + shape_str(g.val(x)) +
            " does not match input_dim " + std::to_string(m.config.input_dim));
  int h = x;
  const std::size_t layers = m.weights.size();
  for (std::size_t l = 0; l < layers; ++l) {
    int z = g.matmul(h, p.ids[2 * l], false, true);
    z = g.add_rowvec(z, p.ids[2 * l + 1]);
    if (l + 1 < layers)
      h = (m.config.activation == Activation::relu) ? g.relu(z) : g.softplus(z);
    else
      h = z;
  }
  return h;
}

int cross_entropy_vec(Graph& g, int logits, const std::vector<int>& y) {
  const Tensor& lv = g.val(logits);
  check(lv.rank() == 2, "cross_entropy: logits must be rank-2");
  check(y.size() == lv.rows(), "cross_entropy: label count " +
                                   std::to_string(y.size()) + " != batch " +
                                   std::to_string(lv.rows()));
  return g.sub(g.lse_rows(logits), g.pick(logits, y));
}

int cross_entropy(Graph& g, int logits, const std::vector<int>& y) {
  return g.mean(cross_entropy_vec(g, logits, y));
}

BatchLoss ce_loss(const Mlp& m, const ParamBinding& p, std::vector<int> y) {
  return [&m, p, y = std::move(y)](Graph& g, int x) {
    return cross_entropy_vec(g, model_forward(g, m, p, x), y);
  };
}

namespace {

constexpr char kMagic[8] = {'L', 'L', 'C', 'K', 'P', 'T', '0', '1'};

template <typename T>
void put(std::ofstream& f, const T& v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& f, const char* what) {
  T v{};
  f.read(reinterpret_cast<char*>(&v), sizeof(T));
  check(static_cast<bool>(f), std::string("checkpoint: truncated reading ") + what);
  return v;
}

void put_tensor(std::ofstream& f, const Tensor& t) {
  put<std::uint32_t>(f, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t e : t.shape) put<std::uint64_t>(f, e);
  f.write(reinterpret_cast<const char*>(t.data.data()),
          static_cast<std::streamsize>(t.data.size() * sizeof(double)));
}

Tensor get_tensor(std::ifstream& f) {
  const auto rank = get<std::uint32_t>(f, "tensor rank");
  check(rank <= 8, "checkpoint: implausible tensor rank");
  std::vector<std::size_t> shape;
  for (std::uint32_t i = 0; i < rank; ++i)
    shape.push_back(static_cast<std::size_t>(get<std::uint64_t>(f, "tensor extent")));
  Tensor t(shape);
  f.read(reinterpret_cast<char*>(t.data.data()),
         static_cast<std::streamsize>(t.data.size() * sizeof(double)));
  check(static_cast<bool>(f), "checkpoint: truncated tensor payload");
  check(all_finite(t), "checkpoint: non-finite tensor entry");
  return t;
}

}  // namespace

void save_checkpoint(const std::string& path, const Mlp& m) {
  std::ofstream f(path, std::ios::binary);
  check(static_cast<bool>(f), "checkpoint: cannot open " + path + " for writing");
  f.write(kMagic, sizeof(kMagic));
  put<std::uint64_t>(f, m.config.input_dim);
  put<std::uint32_t>(f, static_cast<std::uint32_t>(m.config.widths.size()));
  for (std::size_t w : m.config.widths) put<std::uint64_t>(f, w);
  put<std::uint64_t>(f, m.config.classes);
  put<std::uint8_t>(f, static_cast<std::uint8_t>(m.config.activation));
  put<std::uint64_t>(f, m.config.init_seed);
  put<std::uint32_t>(f, static_cast<std::uint32_t>(2 * m.weights.size()));
  for (std::size_t l = 0; l < m.weights.size(); ++l) {
    put_tensor(f, m.weights[l]);
    put_tensor(f, m.biases[l]);
  }
  check(static_cast<bool>(f), "checkpoint: write failed for " + path);
}

Mlp load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  check(static_cast<bool>(f), "checkpoint: cannot open " + path);
  char magic[8];
  f.read(magic, sizeof(magic));
  check(static_cast<bool>(f) && std::memcmp(magic, kMagic, 8) == 0,
        "checkpoint: bad magic in " + path);

  Mlp m;
  m.config.input_dim = static_cast<std::size_t>(get<std::uint64_t>(f, "input_dim"));
  const auto nw = get<std::uint32_t>(f, "width count");
  check(nw >= 1 && nw <= 64, "checkpoint: implausible width count");
  m.config.widths.clear();
  for (std::uint32_t i = 0; i < nw; ++i)
    m.config.widths.push_back(static_cast<std::size_t>(get<std::uint64_t>(f, "width")));
  m.config.classes = static_cast<std::size_t>(get<std::uint64_t>(f, "classes"));
  const auto act = get<std::uint8_t>(f, "activation");
  check(act <= 1, "checkpoint: unknown activation code");
  m.config.activation = static_cast<Activation>(act);
  m.config.init_seed = get<std::uint64_t>(f, "init seed");
  validate(m.config);

  const auto tensors = get<std::uint32_t>(f, "tensor count");
  check(tensors == 2 * (m.config.widths.size() + 1),
        "checkpoint: tensor count does not match architecture");
  const auto dims = layer_dims(m.config);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    Tensor w = get_tensor(f);
    Tensor b = get_tensor(f);
    check(w.shape == std::vector<std::size_t>({dims[l + 1], dims[l]}),
          "checkpoint: weight shape mismatch at layer " + std::to_string(l));
    check(b.shape == std::vector<std::size_t>({dims[l + 1]}),
          "checkpoint: bias shape mismatch at layer " + std::to_string(l));
    m.weights.push_back(std::move(w));
    m.biases.push_back(std::move(b));
  }
  return m;
}

}  // namespace linlab
