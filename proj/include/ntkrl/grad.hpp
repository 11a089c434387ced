#pragma once

#include <functional>
#include <span>
#include <vector>

#include "ntkrl/common.hpp"
#include "ntkrl/model.hpp"

namespace ntkrl::grad {

/// Analytic Jacobian d phi / d theta_phi for one context (classifier
/// excluded by construction). Dense, D x |theta_phi|; kept explicit because
/// the kernel decomposition consumes it as data.
struct FeatureJacobian {
  Mat J;
  int context_prompt_id = 0;
};

/// Flat gradient over theta_phi ⊕ W, aligned with the serialized layout
/// (classifier block row-major at the tail).
using GradVector = Vec;

FeatureJacobian feature_jacobian(const model::Params& p, const model::ModelConfig& cfg,
                                 const model::Context& ctx);

/// Gradient of sequence_logprob: per position, the classifier block gets
/// outer(d, phi) with d = e_y - pi, and the feature block gets (W^T d)^T J.
GradVector logprob_grad(const model::Params& p, const model::ModelConfig& cfg,
                        const corpus::Prompt& prompt, std::span<const TokenId> response);

struct WeightedResponse {
  std::vector<TokenId> response;
  double weight = 0.0;  // advantage (or any per-sample coefficient)
};
struct WeightedGroup {
  corpus::Prompt prompt;
  std::vector<WeightedResponse> items;
};

/// (1/N) sum_i (1/k_i) sum_j weight_ij * logprob_grad(prompt_i, response_ij).
/// Pure aggregation; no RNG.
GradVector policy_gradient(const model::Params& p, const model::ModelConfig& cfg,
                           std::span<const WeightedGroup> batch);

/// theta += scale * g over both blocks. scale == 0 is an exact no-op. Every
/// parameter update in the project funnels through here so that replays are
/// bit-identical to the original step.
void apply_update(model::Params& p, const GradVector& g, double scale);

// --- oracles ---------------------------------------------------------------

/// Central differences over all coordinates (theta_phi and W).
GradVector fd_grad(const std::function<double(const model::Params&)>& f, model::Params p,
                   double step);

/// Central differences of features() w.r.t. theta_phi only.
Mat fd_feature_jacobian(const model::Params& p, const model::ModelConfig& cfg,
                        const model::Context& ctx, double step);

/// Enumerates all V^L responses and returns the max-abs entry of
/// E_{y~pi}[grad log pi(y|x)], which is identically zero in exact arithmetic.
double score_expectation_check(const model::Params& p, const model::ModelConfig& cfg,
                               const corpus::Prompt& prompt, int response_len);

/// max_i |a_i - b_i| / max(1, |a_i|): the repo-wide gradient-check metric.
double rel_err_max(const Vec& analytic, const Vec& numeric);

}  // namespace ntkrl::grad
