#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "ntkrl/config.hpp"

namespace ntkrl::cli {

struct CheckResult {
  std::string name;
  bool pass = false;
  double measured = 0.0;
  double threshold = 0.0;
  std::string detail;
};

// Individual checks. Tolerances are fixed here, not configurable: they are
// part of the contract being verified.

/// Analytic logprob_grad vs central differences (step 1e-5) over `draws`
/// random (params, context) pairs; measured = worst relative error.
CheckResult check_logprob_grad_fd(const RunConfig& cfg, int draws);
/// Analytic feature Jacobian vs central differences.
CheckResult check_feature_jacobian_fd(const RunConfig& cfg, int draws);
/// policy_gradient vs finite differences of the weighted log-likelihood
/// surrogate.
CheckResult check_policy_gradient_fd(const RunConfig& cfg, int draws);
/// rep_scalar * I + grad vs the finite-difference full kernel block.
CheckResult check_decomposition_fd(const RunConfig& cfg, int draws);
/// u_rep + u_grad vs T * total * d, max-abs difference.
CheckResult check_update_additivity(const RunConfig& cfg, int draws);
/// argmax(u_rep) == source token under the nonneg activation, `triples`
/// random (target, source, position) draws; measured = match fraction.
CheckResult check_prop2_argmax(const RunConfig& cfg, int triples);
/// Taylor residual ratio under eta halvings (quadratic scaling window
/// [3.2, 4.8]); measured = worst ratio.
CheckResult check_taylor_ratio(const RunConfig& cfg);
/// Relative Taylor residual at eta = 1e-4; measured = worst over targets.
CheckResult check_taylor_relative(const RunConfig& cfg);
/// Enumerated E_{y~pi}[grad log pi] for V=3, L=2; measured = worst max-abs
/// entry over 5 parameter draws.
CheckResult check_score_expectation();

std::vector<CheckResult> run_verify_suite(const RunConfig& cfg);
void print_check_table(std::span<const CheckResult> results, std::ostream& out);

}  // namespace ntkrl::cli
