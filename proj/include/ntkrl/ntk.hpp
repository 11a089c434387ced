#pragma once

#include <iosfwd>
#include <span>
#include <vector>

#include "ntkrl/grad.hpp"
#include "ntkrl/model.hpp"

namespace ntkrl::ntk {

/// The centering operator T = I_V - 1 pi^T for a conditioning distribution
/// pi. Applied to a logit-space direction it yields the first-order change
/// of log-probabilities: constant shifts are annihilated and
/// pi . (T a) = 0 for every a.
struct CenterOp {
  model::DistVector pi;
};
Vec center_apply(const CenterOp& T, const Vec& a);

/// d = e_y - pi: the gradient of log pi_y with respect to the logits. Sums
/// to zero; its argmax is the realized token whenever pi_y < 1.
struct ErrorDir {
  Vec d;
  TokenId token = 0;
};
ErrorDir error_dir(const model::DistVector& pi, TokenId y);

/// One V x V block of the empirical tangent kernel between two contexts,
/// split by parameter block:
///   rep_scalar = <phi_a, phi_b>          (classifier rows; R = rep_scalar * I)
///   grad       = (W J_a)(W J_b)^T        (feature-map parameters)
///   total      = rep_scalar * I + grad  = d f_a/d theta . (d f_b/d theta)^T
struct KernelBlock {
  double rep_scalar = 0.0;
  Mat grad;
  Mat total() const;
};

KernelBlock kernel_block(const model::Params& p, const model::ModelConfig& cfg,
                         const model::Context& ctx_a, const model::Context& ctx_b,
                         const grad::FeatureJacobian& Ja, const grad::FeatureJacobian& Jb);

enum class Component { rep, grad, combined };

struct UpdateVector {
  Vec v;
  Component role = Component::combined;
};

// The per-sample update directions: u_rep = T (rep_scalar * I) d,
// u_grad = T G d. They add up to T K d exactly.
UpdateVector u_rep(const KernelBlock& k, const CenterOp& T, const ErrorDir& d);
UpdateVector u_grad(const KernelBlock& k, const CenterOp& T, const ErrorDir& d);
UpdateVector u_combined(const KernelBlock& k, const CenterOp& T, const ErrorDir& d);

/// First-order prediction of the change in log pi(.|target) caused by one
/// policy-gradient step on `batch`:
///   eta_scale * (1/N) sum_i (1/k_i) sum_j weight_ij
///             * sum_l T_target K(target, ctx_ijl) d_ijl
/// where eta_scale is the realized step scale (learning rate times clip
/// factor) and weight_ij is the same per-sample coefficient the gradient
/// step used (the advantage).
Vec predicted_delta_logpi(const model::Params& p, const model::ModelConfig& cfg,
                          std::span<const grad::WeightedGroup> batch, double eta_scale,
                          const model::Context& target);

struct TaylorResult {
  Vec actual;      // log pi_after - log pi_before at the target
  Vec predicted;
  double residual = 0.0;  // max-abs(actual - predicted)
  double rel = 0.0;       // residual / max-abs(actual), 0 when both vanish
};

/// Replays one parameter step (theta += eta * clip_scale * g) on a copy and
/// compares measured against predicted log-probability changes per target.
/// The update goes through grad::apply_update with scale = eta * clip_scale,
/// the same expression the trainer uses, so replaying a recorded step
/// reproduces its residuals bit-exactly.
std::vector<TaylorResult> taylor_residual(const model::Params& before,
                                          const model::ModelConfig& cfg,
                                          std::span<const grad::WeightedGroup> batch,
                                          const grad::GradVector& g, double eta,
                                          double clip_scale,
                                          std::span<const model::Context> targets);

// CSV export, one row per entry: target_ctx_id,source_ctx_id,position,
// component,v,value. Update vectors use v = token id (1..V); kernel blocks
// write component "rep_scalar" as a single row with v = 0 and "grad"/
// "total" with v = the 0-based row-major flat index into the V x V matrix.
void write_vector_csv_header(std::ostream& out);
void append_update_vector_csv(std::ostream& out, int target_ctx_id, int source_ctx_id,
                              int position, const UpdateVector& u);
void append_kernel_block_csv(std::ostream& out, int target_ctx_id, int source_ctx_id,
                             int position, const KernelBlock& k);

}  // namespace ntkrl::ntk
