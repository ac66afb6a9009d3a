#pragma once
// Inner-maximization procedures: FGSM, PGD-k with restarts, noise-augmented
// FGSM, and uniform ball sampling. Attack outputs are plain tensors; the
// training objective treats them as fixed inputs (no differentiation through
// the attack itself).
//
// Randomness comes from caller-supplied per-example streams (one Rng per
// batch row), so draw sequences are independent of batch composition.

#include <span>
#include <vector>

#include "linlab/model.hpp"
#include "linlab/rng.hpp"
#include "linlab/tensor.hpp"

namespace linlab {

enum class AttackKind : std::uint8_t { none = 0, fgsm, pgd, nfgsm };

struct AttackSpec {
  AttackKind kind = AttackKind::fgsm;
  double eps = 0.1;
  int steps = 1;             // pgd
  double step_size = 0.0;    // pgd; 0 selects the 2.5*eps/steps default
  int restarts = 1;          // pgd
  double noise_factor = 2.0; // nfgsm
};

void validate_attack(const AttackSpec& spec);
double pgd_default_step(double eps, int steps);

// Gradient of the summed per-example loss w.r.t. the input batch, evaluated
// at xv. `loss` must be self-contained: it registers every leaf it needs in
// the graph it is handed.
Tensor input_grad_sum(const BatchLoss& loss, const Tensor& xv);

// Generic-loss attack cores (self-contained BatchLoss convention).
Tensor fgsm_at(const BatchLoss& loss, const Tensor& x, double eps);
Tensor pgd_at(const BatchLoss& loss, const Tensor& x, double eps, int steps,
              double step_size, int restarts, std::span<Rng> streams,
              bool center_start = false);
Tensor nfgsm_at(const BatchLoss& loss, const Tensor& x, double eps,
                double noise_factor, std::span<Rng> streams);

// Model-level attacks (cross-entropy loss, constant parameters).
Tensor fgsm(const Mlp& m, const Tensor& x, const std::vector<int>& y, double eps);
Tensor pgd(const Mlp& m, const Tensor& x, const std::vector<int>& y, double eps,
           int steps, double step_size, int restarts, std::span<Rng> streams,
           bool center_start = false);
Tensor nfgsm(const Mlp& m, const Tensor& x, const std::vector<int>& y,
             double eps, double noise_factor, std::span<Rng> streams);

// x + Unif[-eps, eps]^d per example; clamped to [0,1]^d unless disabled.
Tensor sample_ball(const Tensor& x, double eps, std::span<Rng> streams,
                   bool clamp = true);

// Dispatch on spec.kind; kind none returns x unchanged.
Tensor attack_input(const Mlp& m, const Tensor& x, const std::vector<int>& y,
                    const AttackSpec& spec, std::span<Rng> streams);

// Cross-entropy BatchLoss with constant parameters, for attack graphs.
// Captures the model by reference: it must outlive the returned closure.
BatchLoss ce_attack_loss(const Mlp& m, std::vector<int> y);

}  // namespace linlab
