#include "linlab/graph.hpp"

#include <algorithm>
#include <cmath>

namespace linlab {

namespace {

double sigmoid_scalar(double x) {
  if (x >= 0.0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

const char* op_name(Op op) {
  switch (op) {
    case Op::leaf: return "leaf";
    case Op::add: return "add";
    case Op::sub: return "sub";
    case Op::mul: return "mul";
    case Op::div: return "div";
    case Op::neg: return "neg";
    case Op::scale: return "scale";
    case Op::smul: return "smul";
    case Op::add_rowvec: return "add_rowvec";
    case Op::scale_rows: return "scale_rows";
    case Op::matmul: return "matmul";
    case Op::relu: return "relu";
    case Op::gtz_mask: return "gtz_mask";
    case Op::softplus: return "softplus";
    case Op::sigmoid: return "sigmoid";
    case Op::lse_rows: return "lse_rows";
    case Op::softmax_rows: return "softmax_rows";
    case Op::rowsum: return "rowsum";
    case Op::colsum: return "colsum";
    case Op::pick: return "pick";
    case Op::pick_back: return "pick_back";
    case Op::sum: return "sum";
    case Op::mean: return "mean";
    case Op::bcast: return "bcast";
    case Op::dot: return "dot";
    case Op::l2norm: return "l2norm";
    case Op::abs: return "abs";
    case Op::sign: return "sign";
    case Op::square: return "square";
    case Op::sqrt: return "sqrt";
  }
  return "?";
}

int Graph::leaf(Tensor v, LeafKind kind) {
  check(all_finite(v), "leaf: non-finite value");
  Node n;
  n.op = Op::leaf;
  n.leaf_kind = kind;
  n.value = std::move(v);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

int Graph::append(Node n) {
  const int idx = static_cast<int>(nodes_.size());
  check(n.a < idx && n.b < idx, "graph: parent index out of order");
  n.value = eval(n, idx);
  if (!all_finite(n.value))
    fail(std::string("graph: non-finite value at node ") + std::to_string(idx) +
         " (" + op_name(n.op) + ")");
  nodes_.push_back(std::move(n));
  return idx;
}

#define LINLAB_NODE1(OPK, A)      \
  Node n;                         \
  n.op = Op::OPK;                 \
  n.a = (A);                      \
  return append(std::move(n))

int Graph::add(int a, int b) {
  Node n;
  n.op = Op::add;
  n.a = a;
  n.b = b;
  return append(std::move(n));
}
int Graph::sub(int a, int b) {
  Node n;
  n.op = Op::sub;
  n.a = a;
  n.b = b;
  return append(std::move(n));
}
int Graph::mul(int a, int b) {
  Node n;
  n.op = Op::mul;
  n.a = a;
  n.b = b;
  return append(std::move(n));
}
int Graph::div(int a, int b) {
  Node n;
  n.op = Op::div;
  n.a = a;
  n.b = b;
  return append(std::move(n));
}
int Graph::neg(int a) { LINLAB_NODE1(neg, a); }
int Graph::scale(int a, double c) {
  Node n;
  n.op = Op::scale;
  n.a = a;
  n.c = c;
  return append(std::move(n));
}
int Graph::smul(int s, int a) {
  Node n;
  n.op = Op::smul;
  n.a = s;
  n.b = a;
  return append(std::move(n));
}
int Graph::add_rowvec(int m, int v) {
  Node n;
  n.op = Op::add_rowvec;
  n.a = m;
  n.b = v;
  return append(std::move(n));
}
int Graph::scale_rows(int m, int v) {
  Node n;
  n.op = Op::scale_rows;
  n.a = m;
  n.b = v;
  return append(std::move(n));
}
int Graph::matmul(int a, int b, bool trans_a, bool trans_b) {
  Node n;
  n.op = Op::matmul;
  n.a = a;
  n.b = b;
  n.trans_a = trans_a;
  n.trans_b = trans_b;
  return append(std::move(n));
}
int Graph::relu(int a) { LINLAB_NODE1(relu, a); }
int Graph::gtz_mask(int a) { LINLAB_NODE1(gtz_mask, a); }
int Graph::softplus(int a) { LINLAB_NODE1(softplus, a); }
int Graph::sigmoid(int a) { LINLAB_NODE1(sigmoid, a); }
int Graph::lse_rows(int a) { LINLAB_NODE1(lse_rows, a); }
int Graph::softmax_rows(int a) { LINLAB_NODE1(softmax_rows, a); }
int Graph::rowsum(int a) { LINLAB_NODE1(rowsum, a); }
int Graph::colsum(int a) { LINLAB_NODE1(colsum, a); }
int Graph::pick(int m, std::vector<int> labels) {
  Node n;
  n.op = Op::pick;
  n.a = m;
  n.labels = std::move(labels);
  return append(std::move(n));
}
int Graph::pick_back(int v, std::vector<int> labels, std::size_t cols) {
  Node n;
  n.op = Op::pick_back;
  n.a = v;
  n.labels = std::move(labels);
  n.out_shape = {nodes_.at(v).value.numel(), cols};
  return append(std::move(n));
}
int Graph::sum(int a) { LINLAB_NODE1(sum, a); }
int Graph::mean(int a) { LINLAB_NODE1(mean, a); }
int Graph::bcast(int s, std::vector<std::size_t> shape) {
  Node n;
  n.op = Op::bcast;
  n.a = s;
  n.out_shape = std::move(shape);
  return append(std::move(n));
}
int Graph::dot(int a, int b) {
  Node n;
  n.op = Op::dot;
  n.a = a;
  n.b = b;
  return append(std::move(n));
}
int Graph::l2norm(int a) { LINLAB_NODE1(l2norm, a); }
int Graph::abs(int a) { LINLAB_NODE1(abs, a); }
int Graph::sign(int a) { LINLAB_NODE1(sign, a); }
int Graph::square(int a) { LINLAB_NODE1(square, a); }
int Graph::sqrt(int a) { LINLAB_NODE1(sqrt, a); }

#undef LINLAB_NODE1

Tensor Graph::eval(const Node& n, int idx) const {
  auto where = [&](const char* what) {
    return std::string(what) + " at node " + std::to_string(idx) + " (" +
           op_name(n.op) + ")";
  };
  auto pa = [&]() -> const Tensor& { return nodes_[n.a].value; };
  auto pb = [&]() -> const Tensor& { return nodes_[n.b].value; };

  switch (n.op) {
    case Op::leaf:
      return n.value;

    case Op::add:
    case Op::sub:
    case Op::mul:
    case Op::div: {
      const Tensor& A = pa();
      const Tensor& B = pb();
      check(same_shape(A, B), where("shape mismatch") + ": " + shape_str(A) +
                                  " vs " + shape_str(B));
      Tensor out(A.shape);
      const std::size_t m = A.numel();
      for (std::size_t i = 0; i < m; ++i) {
        switch (n.op) {
          case Op::add: out.data[i] = A.data[i] + B.data[i]; break;
          case Op::sub: out.data[i] = A.data[i] - B.data[i]; break;
          case Op::mul: out.data[i] = A.data[i] * B.data[i]; break;
          default: out.data[i] = A.data[i] / B.data[i]; break;
        }
      }
      return out;
    }

    case Op::neg: {
      Tensor out = pa();
      for (double& x : out.data) x = -x;
      return out;
    }
    case Op::scale: {
      Tensor out = pa();
      for (double& x : out.data) x *= n.c;
      return out;
    }
    case Op::smul: {
      check(pa().numel() == 1, where("smul needs a scalar first operand"));
      const double s = pa().data[0];
      Tensor out = pb();
      for (double& x : out.data) x *= s;
      return out;
    }

    case Op::add_rowvec: {
      const Tensor& M = pa();
      const Tensor& v = pb();
      check(M.rank() == 2 && v.rank() == 1 && v.shape[0] == M.cols(),
            where("shape mismatch") + ": " + shape_str(M) + " + row " +
                shape_str(v));
      Tensor out = M;
      for (std::size_t r = 0; r < M.rows(); ++r)
        for (std::size_t c = 0; c < M.cols(); ++c)
          out.data[r * M.cols() + c] += v.data[c];
      return out;
    }
    case Op::scale_rows: {
      const Tensor& M = pa();
      const Tensor& v = pb();
      check(M.rank() == 2 && v.rank() == 1 && v.shape[0] == M.rows(),
            where("shape mismatch") + ": " + shape_str(M) + " rows by " +
                shape_str(v));
      Tensor out = M;
      for (std::size_t r = 0; r < M.rows(); ++r)
        for (std::size_t c = 0; c < M.cols(); ++c)
          out.data[r * M.cols() + c] *= v.data[r];
      return out;
    }

    case Op::matmul:
      return linlab::matmul(pa(), pb(), n.trans_a, n.trans_b);

    case Op::relu: {
      Tensor out = pa();
      for (double& x : out.data) x = x > 0.0 ? x : 0.0;
      return out;
    }
    case Op::gtz_mask: {
      Tensor out = pa();
      for (double& x : out.data) x = x > 0.0 ? 1.0 : 0.0;
      return out;
    }
    case Op::softplus: {
      Tensor out = pa();
      for (double& x : out.data)
        x = std::log1p(std::exp(-std::fabs(x))) + std::max(x, 0.0);
      return out;
    }
    case Op::sigmoid: {
      Tensor out = pa();
      for (double& x : out.data) x = sigmoid_scalar(x);
      return out;
    }

    case Op::lse_rows:
    case Op::softmax_rows: {
      const Tensor& M = pa();
      check(M.rank() == 2, where("needs a rank-2 operand"));
      const std::size_t R = M.rows(), C = M.cols();
      Tensor out = (n.op == Op::lse_rows) ? Tensor({R}) : Tensor({R, C});
      for (std::size_t r = 0; r < R; ++r) {
        double m = M.data[r * C];
        for (std::size_t c = 1; c < C; ++c) m = std::max(m, M.data[r * C + c]);
        double s = 0.0;
        for (std::size_t c = 0; c < C; ++c) s += std::exp(M.data[r * C + c] - m);
        if (n.op == Op::lse_rows) {
          out.data[r] = m + std::log(s);
        } else {
          for (std::size_t c = 0; c < C; ++c)
            out.data[r * C + c] = std::exp(M.data[r * C + c] - m) / s;
        }
      }
      return out;
    }

    case Op::rowsum: {
      const Tensor& M = pa();
      check(M.rank() == 2, where("needs a rank-2 operand"));
      Tensor out({M.rows()});
      for (std::size_t r = 0; r < M.rows(); ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < M.cols(); ++c) s += M.data[r * M.cols() + c];
        out.data[r] = s;
      }
      return out;
    }
    case Op::colsum: {
      const Tensor& M = pa();
      check(M.rank() == 2, where("needs a rank-2 operand"));
      Tensor out({M.cols()});
      for (std::size_t r = 0; r < M.rows(); ++r)
        for (std::size_t c = 0; c < M.cols(); ++c)
          out.data[c] += M.data[r * M.cols() + c];
      return out;
    }

    case Op::pick: {
      const Tensor& M = pa();
      check(M.rank() == 2 && n.labels.size() == M.rows(),
            where("labels do not match rows"));
      Tensor out({M.rows()});
      for (std::size_t r = 0; r < M.rows(); ++r) {
        const int y = n.labels[r];
        check(y >= 0 && static_cast<std::size_t>(y) < M.cols(),
              where("label out of range"));
        out.data[r] = M.data[r * M.cols() + static_cast<std::size_t>(y)];
      }
      return out;
    }
    case Op::pick_back: {
      const Tensor& v = pa();
      check(v.rank() == 1 && n.out_shape.size() == 2 &&
                n.labels.size() == v.shape[0] && n.out_shape[0] == v.shape[0],
            where("labels do not match entries"));
      Tensor out(n.out_shape);
      for (std::size_t r = 0; r < v.shape[0]; ++r) {
        const int y = n.labels[r];
        check(y >= 0 && static_cast<std::size_t>(y) < n.out_shape[1],
              where("label out of range"));
        out.data[r * n.out_shape[1] + static_cast<std::size_t>(y)] = v.data[r];
      }
      return out;
    }

    case Op::sum:
    case Op::mean: {
      const Tensor& A = pa();
      double s = 0.0;
      for (double x : A.data) s += x;
      if (n.op == Op::mean) s /= static_cast<double>(A.numel());
      return Tensor::scalar(s);
    }
    case Op::bcast: {
      check(pa().numel() == 1, where("bcast needs a scalar operand"));
      return Tensor::full(n.out_shape, pa().data[0]);
    }
    case Op::dot: {
      const Tensor& A = pa();
      const Tensor& B = pb();
      check(same_shape(A, B), where("shape mismatch") + ": " + shape_str(A) +
                                  " vs " + shape_str(B));
      double s = 0.0;
      for (std::size_t i = 0; i < A.numel(); ++i) s += A.data[i] * B.data[i];
      return Tensor::scalar(s);
    }
    case Op::l2norm: {
      double s = 0.0;
      for (double x : pa().data) s += x * x;
      return Tensor::scalar(std::sqrt(s));
    }

    case Op::abs: {
      Tensor out = pa();
      for (double& x : out.data) x = std::fabs(x);
      return out;
    }
    case Op::sign: {
      Tensor out = pa();
      for (double& x : out.data) x = x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
      return out;
    }
    case Op::square: {
      Tensor out = pa();
      for (double& x : out.data) x = x * x;
      return out;
    }
    case Op::sqrt: {
      Tensor out = pa();
      for (double& x : out.data) x = std::sqrt(x);
      return out;
    }
  }
  fail(where("unhandled op"));
}

void Graph::bind(int leaf_id, Tensor v) {
  Node& n = nodes_.at(leaf_id);
  check(n.op == Op::leaf, "bind: node " + std::to_string(leaf_id) + " is not a leaf");
  check(v.shape == n.value.shape, "bind: shape changed from " +
                                      shape_str(n.value) + " to " + shape_str(v));
  check(all_finite(v), "bind: non-finite value");
  n.value = std::move(v);
}

void Graph::recompute() {
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    Node& n = nodes_[i];
    if (n.op == Op::leaf) continue;
    Tensor v = eval(n, static_cast<int>(i));
    if (!all_finite(v))
      fail("graph: non-finite value at node " + std::to_string(i) + " (" +
           op_name(n.op) + ")");
    n.value = std::move(v);
  }
}

std::unordered_map<int, int> Graph::backward(int root, const std::vector<int>& wrt) {
  check(root >= 0 && root < static_cast<int>(nodes_.size()), "backward: bad root");
  check(nodes_[root].value.numel() == 1, "backward: root is not scalar-shaped");
  const int n = root + 1;

  // dep[i]: node i depends on at least one wrt node.
  std::vector<char> dep(n, 0);
  for (int w : wrt) {
    check(w >= 0 && w < static_cast<int>(nodes_.size()), "backward: bad wrt node");
    if (w < n) dep[w] = 1;
  }
  for (int i = 0; i < n; ++i) {
    const Node& nd = nodes_[i];
    if ((nd.a >= 0 && dep[nd.a]) || (nd.b >= 0 && dep[nd.b])) dep[i] = 1;
  }
  if (!dep[root]) return {};

  std::vector<int> adj(n, -1);
  adj[root] = cst(Tensor::scalar(1.0));

  auto accum = [&](int p, int contrib) {
    if (p < 0 || !dep[p]) return;
    adj[p] = (adj[p] < 0) ? contrib : add(adj[p], contrib);
  };
  auto want = [&](int p) { return p >= 0 && dep[p]; };
  auto ones_like = [&](int id) {
    return cst(Tensor::full(nodes_[id].value.shape, 1.0));
  };

  for (int i = root; i >= 0; --i) {
    if (adj[i] < 0) continue;
    const Node nd = nodes_[i];  // copy: builders below may reallocate nodes_
    const int g = adj[i];
    const int a = nd.a, b = nd.b;
    switch (nd.op) {
      case Op::leaf:
      case Op::gtz_mask:
      case Op::sign:
        break;

      case Op::add:
        accum(a, g);
        accum(b, g);
        break;
      case Op::sub:
        accum(a, g);
        if (want(b)) accum(b, neg(g));
        break;
      case Op::mul:
        if (want(a)) accum(a, mul(g, b));
        if (want(b)) accum(b, mul(g, a));
        break;
      case Op::div:
        if (want(a)) accum(a, div(g, b));
        if (want(b)) accum(b, neg(mul(g, div(i, b))));
        break;
      case Op::neg:
        if (want(a)) accum(a, neg(g));
        break;
      case Op::scale:
        if (want(a)) accum(a, scale(g, nd.c));
        break;
      case Op::smul:
        if (want(a)) accum(a, dot(g, b));
        if (want(b)) accum(b, smul(a, g));
        break;
      case Op::add_rowvec:
        accum(a, g);
        if (want(b)) accum(b, colsum(g));
        break;
      case Op::scale_rows:
        if (want(a)) accum(a, scale_rows(g, b));
        if (want(b)) accum(b, rowsum(mul(g, a)));
        break;

      case Op::matmul: {
        const bool ta = nd.trans_a, tb = nd.trans_b;
        if (want(a)) {
          if (!ta && !tb) accum(a, matmul(g, b, false, true));
          else if (!ta && tb) accum(a, matmul(g, b, false, false));
          else if (ta && !tb) accum(a, matmul(b, g, false, true));
          else accum(a, matmul(b, g, true, true));
        }
        if (want(b)) {
          if (!ta && !tb) accum(b, matmul(a, g, true, false));
          else if (!ta && tb) accum(b, matmul(g, a, true, false));
          else if (ta && !tb) accum(b, matmul(a, g, false, false));
          else accum(b, matmul(g, a, true, true));
        }
        break;
      }

      case Op::relu:
        if (want(a)) accum(a, mul(g, gtz_mask(a)));
        break;
      case Op::softplus:
        if (want(a)) accum(a, mul(g, sigmoid(a)));
        break;
      case Op::sigmoid:
        if (want(a)) accum(a, mul(g, mul(i, sub(ones_like(i), i))));
        break;
      case Op::lse_rows:
        if (want(a)) accum(a, scale_rows(softmax_rows(a), g));
        break;
      case Op::softmax_rows:
        if (want(a)) {
          const int t1 = rowsum(mul(g, i));
          const int t2 = scale_rows(ones_like(i), t1);
          accum(a, mul(i, sub(g, t2)));
        }
        break;
      case Op::rowsum:
        if (want(a)) accum(a, scale_rows(ones_like(a), g));
        break;
      case Op::colsum:
        if (want(a))
          accum(a, add_rowvec(cst(Tensor::zeros(nodes_[a].value.shape)), g));
        break;
      case Op::pick:
        if (want(a)) accum(a, pick_back(g, nd.labels, nodes_[a].value.cols()));
        break;
      case Op::pick_back:
        if (want(a)) accum(a, pick(g, nd.labels));
        break;
      case Op::sum:
        if (want(a)) accum(a, bcast(g, nodes_[a].value.shape));
        break;
      case Op::mean:
        if (want(a))
          accum(a, scale(bcast(g, nodes_[a].value.shape),
                         1.0 / static_cast<double>(nodes_[a].value.numel())));
        break;
      case Op::bcast:
        if (want(a)) accum(a, sum(g));
        break;
      case Op::dot:
        if (want(a)) accum(a, smul(g, b));
        if (want(b)) accum(b, smul(g, a));
        break;
      case Op::l2norm:
        // Subgradient 0 at the origin: the norm's cone point carries no
        // usable direction, and this keeps terms built from norms exactly
        // zero (value and gradient) on identically-zero arguments.
        if (want(a) && nodes_[i].value.data[0] >= 1e-12)
          accum(a, smul(div(g, i), a));
        break;
      case Op::abs:
        if (want(a)) accum(a, mul(g, sign(a)));
        break;
      case Op::square:
        if (want(a)) accum(a, mul(g, scale(a, 2.0)));
        break;
      case Op::sqrt:
        if (want(a)) accum(a, div(scale(g, 0.5), i));
        break;
    }
  }

  std::unordered_map<int, int> out;
  for (int w : wrt) {
    if (w < n && adj[w] >= 0) out[w] = adj[w];
  }
  return out;
}

Tensor Graph::grad_or_zero(const std::unordered_map<int, int>& adj, int id) const {
  auto it = adj.find(id);
  if (it == adj.end()) return Tensor::zeros(nodes_.at(id).value.shape);
  return nodes_.at(it->second).value;
}

Tensor forward_eval(Graph& g, int root,
                    const std::vector<std::pair<int, Tensor>>& bindings) {
  for (const auto& [id, v] : bindings) g.bind(id, v);
  g.recompute();
  return g.val(root);
}

FdReport finite_diff_check(Graph& g, int root, int leaf, double h) {
  check(h > 0.0, "finite_diff_check: h must be positive");
  auto adj = g.backward(root, {leaf});
  const Tensor grad = g.grad_or_zero(adj, leaf);
  const Tensor x0 = g.val(leaf);

  std::vector<double> fd(x0.numel());
  for (std::size_t j = 0; j < x0.numel(); ++j) {
    Tensor x = x0;
    x.data[j] = x0.data[j] + h;
    g.bind(leaf, x);
    g.recompute();
    const double fp = g.val(root).item();
    x.data[j] = x0.data[j] - h;
    g.bind(leaf, x);
    g.recompute();
    const double fm = g.val(root).item();
    fd[j] = (fp - fm) / (2.0 * h);
  }
  g.bind(leaf, x0);
  g.recompute();

  double denom = grad.max_abs();
  for (double v : fd) denom = std::max(denom, std::fabs(v));
  denom = std::max(denom, 1e-12);

  FdReport rep;
  for (std::size_t j = 0; j < fd.size(); ++j) {
    const double rel = std::fabs(grad.data[j] - fd[j]) / denom;
    if (rel >= rep.max_rel_err) {
      rep.max_rel_err = rel;
      rep.worst_coord = j;
      rep.ad_at_worst = grad.data[j];
      rep.fd_at_worst = fd[j];
    }
  }
  return rep;
}

}  // namespace linlab
