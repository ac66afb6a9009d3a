#pragma once
// Regularization terms for single-step adversarial training, plus the
// adaptive-lambda controller. Every term is a scalar graph node (the batch
// mean over per-example values) built in the caller's graph, so its gradient
// with respect to whatever parameter leaves that graph holds comes from one
// backward() call. The linearity terms need first-order differentiation
// only; the gradient-based baselines (gradalign, llr_sq, cure) record an
// input-gradient pass as graph nodes and therefore cost a double backward.

#include <cstdint>
#include <span>
#include <vector>

#include "linlab/attack.hpp"
#include "linlab/graph.hpp"
#include "linlab/model.hpp"
#include "linlab/rng.hpp"
#include "linlab/tensor.hpp"

namespace linlab {

enum class RegKind : std::uint8_t {
  none = 0,
  elle,
  elle_a,
  elle_2p,
  elle_5pt,
  gradalign,
  llr_sq,
  cure,
};

struct RegularizerSpec {
  RegKind kind = RegKind::none;
  double lambda = 0.0;  // fixed lambda, or lambda_max for elle_a
  double gamma = 0.99;
  bool shared_alpha = false;  // one alpha per batch instead of per example
  bool clamp_samples = true;  // clamp ball samples to [0,1]^d
};

void validate_regularizer(const RegularizerSpec& spec);

// One convex-combination draw and its squared residual.
struct LinearitySample {
  Tensor x_a, x_b, x_c;
  double alpha = 0.0;
  double residual = 0.0;
  double e_lin = 0.0;  // residual^2
};

struct TermResult {
  int node = -1;       // scalar graph node, batch mean of the term
  double value = 0.0;  // cached value of that node
  // Per-example diagnostics; residuals/combos are the unsquared quantities.
  std::vector<double> residuals;
  std::vector<LinearitySample> samples;  // filled when collect_samples is set
};

// |L(x_c) - (1-a)L(x_a) - a L(x_b)|^2 with x_a, x_b ~ Unif ball around x,
// x_c = (1-a) x_a + a x_b, a ~ Unif[0,1]. Draw order per example:
// x_a coords, x_b coords, alpha.
TermResult elle_term(Graph& g, const BatchLoss& loss, const Tensor& x,
                     double eps, std::span<Rng> streams,
                     bool shared_alpha = false, bool clamp = true,
                     bool collect_samples = false);

// Two-point variant: x_b is replaced by the (fixed) single-step adversarial
// point. Draw order per example: x_a coords, alpha.
TermResult elle_2p_term(Graph& g, const BatchLoss& loss, const Tensor& x,
                        const Tensor& x_adv, double eps, std::span<Rng> streams,
                        bool shared_alpha = false, bool clamp = true,
                        bool collect_samples = false);

// Squared five-point combination at x_a, (3x_a+x_b)/4, (x_a+x_b)/2,
// (x_a+3x_b)/4, x_b with weights -1/12, 4/3, -5/2, 4/3, -1/12.
// residuals holds the unsquared per-example combinations.
TermResult elle_5pt_term(Graph& g, const BatchLoss& loss, const Tensor& x,
                         double eps, std::span<Rng> streams, bool clamp = true);

// 1 - cos(grad_x L(x), grad_x L(x+eta)), eta ~ Unif[-eps,eps]^d, batch mean.
// A gradient with norm below 1e-12 makes the example's term 0 by convention.
TermResult gradalign_term(Graph& g, const BatchLoss& loss, const Tensor& x,
                          double eps, std::span<Rng> streams);

// (L(x+delta) - L(x) - delta . grad_x L(x))^2, delta ~ Unif[-eps,eps]^d.
TermResult llr_sq_term(Graph& g, const BatchLoss& loss, const Tensor& x,
                       double eps, std::span<Rng> streams);

// || grad_x L(x) - grad_x L(x_pert) ||_2 per example, batch mean; x_pert is
// the single-step adversarial point, supplied by the caller and not
// differentiated through.
TermResult cure_term(Graph& g, const BatchLoss& loss, const Tensor& x,
                     const Tensor& x_pert);

// Model-level wrapper matching the training use: builds the cross-entropy
// loss over fresh constant-parameter leaves and the FGSM point internally.
TermResult cure_term(Graph& g, const Mlp& m, const Tensor& x,
                     const std::vector<int>& y, double eps);

// Running history statistics of recorded E_lin values plus the current
// lambda. sigma is the population standard deviation; an empty history has
// mu = sigma = 0, so the very first positive E_lin trips the spike branch.
struct AdaptiveLambdaState {
  std::uint64_t n = 0;
  double mean = 0.0;
  double m2 = 0.0;  // running sum of squared deviations (Welford)
  double lambda = 0.0;
  double lambda_max = 0.0;
  double gamma = 0.99;

  double mu() const { return n ? mean : 0.0; }
  double sigma() const;
};

AdaptiveLambdaState make_adaptive_state(double lambda_max, double gamma);

// If e_lin > mu + 2 sigma over the history so far, lambda = lambda_max,
// else lambda = gamma * lambda; THEN e_lin joins the history. Returns the
// lambda to apply this step. The branch-before-append order is normative.
double adaptive_lambda_update(AdaptiveLambdaState& state, double e_lin);

}  // namespace linlab
