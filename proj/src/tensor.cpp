#include "linlab/tensor.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <sstream>

namespace linlab {

Tensor::Tensor(std::vector<std::size_t> s) : shape(std::move(s)) {
  data.assign(numel(), 0.0);
}

Tensor::Tensor(std::vector<std::size_t> s, std::vector<double> values)
    : shape(std::move(s)), data(std::move(values)) {
  check(data.size() == numel(),
        "tensor: data length " + std::to_string(data.size()) +
            " does not match shape " + shape_str(*this));
  check(all_finite(*this), "tensor: non-finite entry on construction");
}

Tensor Tensor::scalar(double v) {
  Tensor t;
  t.data[0] = v;
  check(all_finite(t), "tensor: non-finite scalar");
  return t;
}

Tensor Tensor::full(std::vector<std::size_t> s, double v) {
  Tensor t(std::move(s));
  for (double& x : t.data) x = v;
  return t;
}

double Tensor::max_abs() const {
  double m = 0.0;
  for (double x : data) m = std::max(m, std::fabs(x));
  return m;
}

bool same_shape(const Tensor& a, const Tensor& b) { return a.shape == b.shape; }

std::string shape_str(const Tensor& t) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < t.shape.size(); ++i) {
    if (i) os << "x";
    os << t.shape[i];
  }
  os << ")";
  return os.str();
}

bool all_finite(const Tensor& t) {
  for (double x : t.data) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<const EMat>;

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
  check(a.rank() == 2 && b.rank() == 2, "matmul: operands must be rank-2");
  const std::size_t am = trans_a ? a.cols() : a.rows();
  const std::size_t ak = trans_a ? a.rows() : a.cols();
  const std::size_t bk = trans_b ? b.cols() : b.rows();
  const std::size_t bn = trans_b ? b.rows() : b.cols();
  check(ak == bk, "matmul: inner extents differ, " + shape_str(a) +
                      (trans_a ? "^T" : "") + " vs " + shape_str(b) +
                      (trans_b ? "^T" : ""));

  Tensor out({am, bn});
  EMap ma(a.data.data(), static_cast<Eigen::Index>(a.rows()),
          static_cast<Eigen::Index>(a.cols()));
  EMap mb(b.data.data(), static_cast<Eigen::Index>(b.rows()),
          static_cast<Eigen::Index>(b.cols()));
  Eigen::Map<EMat> mo(out.data.data(), static_cast<Eigen::Index>(am),
                      static_cast<Eigen::Index>(bn));
  if (!trans_a && !trans_b)
    mo.noalias() = ma * mb;
  else if (!trans_a && trans_b)
    mo.noalias() = ma * mb.transpose();
  else if (trans_a && !trans_b)
    mo.noalias() = ma.transpose() * mb;
  else
    mo.noalias() = ma.transpose() * mb.transpose();
  return out;
}

}  // namespace linlab
