#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "linlab/data.hpp"
#include "linlab/model.hpp"
#include "linlab/rng.hpp"
#include "linlab/tensor.hpp"

namespace linlab {

// Measurement-only instruments. All probes leave parameters bit-identical;
// none of their outputs feed gradients.

struct ProbeReport {
  std::string metric;
  double value = 0.0;
  std::size_t samples = 0;  // >= 1
  double eps = 0.0;
  std::uint64_t seed = 0;  // label only, set by the caller that owns the rng
};

// Scalar loss over a single rank-1 input point.
using PointLoss = std::function<double(const Tensor& x)>;

// Cross-entropy of one example as a PointLoss; label fixed per call via a
// rebindable one-hot row, so one instance serves a whole dataset.
PointLoss point_ce(const Mlp& m, int label);

// Monte-Carlo mean of |L(x_c) - (1-alpha) L(x_a) - alpha L(x_b)| with
// x_a, x_b ~ x + Unif[-eps,eps]^d, alpha ~ Unif[0,1] and x a uniformly drawn
// row of xs. Unclamped: the definitional ball, not the training samples.
// Draw order per sample: row index, x_a coords, x_b coords, alpha.
ProbeReport estimate_elin(const PointLoss& loss, const Tensor& xs, double eps,
                          std::size_t n_samples, Rng& rng);
ProbeReport estimate_elin(const Mlp& m, const Dataset& slice, double eps,
                          std::size_t n_samples, Rng& rng);

// Central difference (L(x+hv) - 2L(x) + L(x-hv)) / h^2. h <= 0 selects the
// default 1e-4 * max(1, max|v_i|).
double second_dir_derivative_fd(const PointLoss& loss, const Tensor& x,
                                const Tensor& v, double h = 0.0);

// Batch mean of 1 - cos(grad_x L(x), grad_x L(x+eta)), eta ~ Unif[-eps,eps]^d
// per example. Value in [0,2]; an example where either gradient norm falls
// below 1e-12 contributes 0. Logged only, never differentiated.
ProbeReport grad_misalignment(const Mlp& m, const Tensor& x,
                              const std::vector<int>& y, double eps, Rng& rng);

// Derivative-free stand-in for grad_misalignment: per example, with
// u, v ~ N(0, I) and eta ~ Unif[-eps,eps]^d,
//   1 - sign[(L(x+sigma u)-L(x)) (L(x+eta+sigma v)-L(x+eta))] cos(u, v),
// four loss evaluations each, batch mean. Draw order: eta, u, v.
ProbeReport fd_gradalign_estimate(const Mlp& m, const Tensor& x,
                                  const std::vector<int>& y, double eps,
                                  double sigma_fd, Rng& rng);

}  // namespace linlab
