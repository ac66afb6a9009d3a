#pragma once
// Dense row-major tensor of 64-bit reals; the universal numeric value of the
// project. Rank-0 tensors (empty shape, one element) represent scalars.

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace linlab {

[[noreturn]] inline void fail(const std::string& msg) {
  throw std::runtime_error(msg);
}

inline void check(bool cond, const std::string& msg) {
  if (!cond) fail(msg);
}

struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() : data(1, 0.0) {}  // rank-0 zero scalar

  explicit Tensor(std::vector<std::size_t> s);  // zeros of that shape
  Tensor(std::vector<std::size_t> s, std::vector<double> values);  // validated

  static Tensor scalar(double v);
  static Tensor zeros(std::vector<std::size_t> s) { return Tensor(std::move(s)); }
  static Tensor full(std::vector<std::size_t> s, double v);

  std::size_t numel() const {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    return n;
  }
  std::size_t rank() const { return shape.size(); }
  bool is_scalar() const { return numel() == 1; }

  // Rank-2 accessors.
  std::size_t rows() const { return shape.at(0); }
  std::size_t cols() const { return shape.at(1); }
  double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

  double item() const {
    check(numel() == 1, "item(): tensor is not scalar-shaped");
    return data[0];
  }

  double max_abs() const;
};

bool same_shape(const Tensor& a, const Tensor& b);
std::string shape_str(const Tensor& t);
bool all_finite(const Tensor& t);

// C = op_a(A) * op_b(B) where op is optional transposition; all rank-2.
Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b);

}  // namespace linlab
