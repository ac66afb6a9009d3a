#pragma once
// Computation graph with reverse-mode differentiation.
//
// Nodes are appended in topological order and evaluated eagerly, so every
// node's value is available the moment it is built. backward() records the
// adjoint computation as ordinary graph nodes (reverse-over-reverse), which
// makes gradients themselves differentiable: calling backward() on a scalar
// assembled from gradient nodes yields second-order derivatives (double
// backpropagation). One mechanism serves both orders.

#include <cstdint>
#include <functional>
#include <unordered_map>
#include <vector>

#include "linlab/tensor.hpp"

namespace linlab {

enum class Op : std::uint8_t {
  leaf,
  add,           // same-shape elementwise
  sub,
  mul,
  div,
  neg,
  scale,         // x * c, compile-time constant
  smul,          // scalar node * tensor node
  add_rowvec,    // (n,o) + (o,) broadcast down rows
  scale_rows,    // (n,o) with row i scaled by v[i], v: (n,)
  matmul,        // transpose flags in the node
  relu,
  gtz_mask,      // 1 where x > 0 else 0; derivative defined as 0
  softplus,      // log1p(exp(-|x|)) + max(x, 0)
  sigmoid,
  lse_rows,      // (n,o) -> (n,) row-wise log-sum-exp, max-shifted
  softmax_rows,  // (n,o) -> (n,o)
  rowsum,        // (n,o) -> (n,)
  colsum,        // (n,o) -> (o,)
  pick,          // (n,o) -> (n,): M[i, labels[i]]
  pick_back,     // (n,) -> (n,o): scatter v[i] into column labels[i]
  sum,           // all elements -> scalar
  mean,          // all elements -> scalar
  bcast,         // scalar -> given shape (fill)
  dot,           // same-shape -> scalar, sum(a .* b)
  l2norm,        // -> scalar; subgradient 0 at the origin
  abs,
  sign,          // sign(0) = 0; derivative defined as 0
  square,
  sqrt,          // elementwise; caller keeps arguments positive
};

enum class LeafKind : std::uint8_t { parameter, input, constant };

const char* op_name(Op op);

class Graph {
 public:
  struct Node {
    Op op = Op::leaf;
    int a = -1, b = -1;                // parent indices; always < own index
    double c = 0.0;                    // scale constant
    bool trans_a = false, trans_b = false;
    LeafKind leaf_kind = LeafKind::constant;
    std::vector<int> labels;           // pick / pick_back
    std::vector<std::size_t> out_shape;  // bcast / pick_back target shape
    Tensor value;
  };

  int leaf(Tensor v, LeafKind kind);
  int cst(Tensor v) { return leaf(std::move(v), LeafKind::constant); }
  int cst(double v) { return cst(Tensor::scalar(v)); }

  int add(int a, int b);
  int sub(int a, int b);
  int mul(int a, int b);
  int div(int a, int b);
  int neg(int a);
  int scale(int a, double c);
  int smul(int s, int a);
  int add_rowvec(int m, int v);
  int scale_rows(int m, int v);
  int matmul(int a, int b, bool trans_a = false, bool trans_b = false);
  int relu(int a);
  int gtz_mask(int a);
  int softplus(int a);
  int sigmoid(int a);
  int lse_rows(int a);
  int softmax_rows(int a);
  int rowsum(int a);
  int colsum(int a);
  int pick(int m, std::vector<int> labels);
  int pick_back(int v, std::vector<int> labels, std::size_t cols);
  int sum(int a);
  int mean(int a);
  int bcast(int s, std::vector<std::size_t> shape);
  int dot(int a, int b);
  int l2norm(int a);
  int abs(int a);
  int sign(int a);
  int square(int a);
  int sqrt(int a);

  const Tensor& val(int id) const { return nodes_.at(id).value; }
  const Node& node(int id) const { return nodes_.at(id); }
  std::size_t size() const { return nodes_.size(); }

  // Rebinds a leaf's value (shape must match). Downstream values are stale
  // until recompute().
  void bind(int leaf_id, Tensor v);

  // Replays forward evaluation of every non-leaf node in order. With
  // unchanged leaf values this reproduces every cached value bit-exactly.
  void recompute();

  // Reverse-mode differentiation of a scalar root. Returns, for each node in
  // wrt that the root depends on, the graph node holding its adjoint; nodes
  // the root does not depend on are absent from the map (gradient is zero).
  // The adjoint computation is itself recorded as graph nodes.
  std::unordered_map<int, int> backward(int root, const std::vector<int>& wrt);

  // Gradient value helper: adjoint value, or zeros shaped like the node.
  Tensor grad_or_zero(const std::unordered_map<int, int>& adj, int id) const;

 private:
  int append(Node n);
  Tensor eval(const Node& n, int idx) const;
  std::vector<Node> nodes_;
};

// Binds the given leaves, replays the graph, and returns the root value.
Tensor forward_eval(Graph& g, int root,
                    const std::vector<std::pair<int, Tensor>>& bindings);

// Compares the reverse-mode gradient of a scalar root with central finite
// differences over one leaf. Relative error is measured against the largest
// gradient magnitude seen (AD or FD), so near-zero coordinates do not blow
// up the report. Leaf value and cached graph state are restored on return.
struct FdReport {
  double max_rel_err = 0.0;
  std::size_t worst_coord = 0;
  double ad_at_worst = 0.0;
  double fd_at_worst = 0.0;
};

FdReport finite_diff_check(Graph& g, int root, int leaf, double h);

}  // namespace linlab
