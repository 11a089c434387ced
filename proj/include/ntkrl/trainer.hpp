#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ntkrl/corpus.hpp"
#include "ntkrl/grad.hpp"
#include "ntkrl/model.hpp"
#include "ntkrl/ntk.hpp"

namespace ntkrl::trainer {

enum class Algo { reinforce, grpo, rloo };

struct TrainConfig {
  Algo algo = Algo::grpo;
  double learning_rate = 1e-4;  // eta
  double kl_coef = 0.05;        // lambda
  int epochs = 3;
  int prompts_per_batch = 8;
  int rollouts_per_prompt = 4;  // k
  std::optional<double> clip_norm = 1.0;
  int cf_stage_epochs = 1;  // classifier-only epochs at the start of cf_rl_run
  int normalizer_samples_per_prompt = 4;
  std::uint64_t seed = 123;
};
void validate(const TrainConfig& cfg);

// --- SFT -------------------------------------------------------------------

struct SftExample {
  corpus::Prompt prompt;
  std::vector<TokenId> target;
};

/// Reward-optimal responses for the first half of the prompts (rounded up),
/// uniformly random responses for the rest.
std::vector<SftExample> build_sft_corpus(std::span<const corpus::Prompt> prompts,
                                         const corpus::TaskSpec& spec, Rng& rng);

struct SftResult {
  model::Params params;
  std::vector<double> loss;  // negative mean log-likelihood, epochs+1 points
};

/// Full-batch gradient ascent on mean sequence log-likelihood.
SftResult sft_pretrain(model::Params params, const model::ModelConfig& cfg,
                       std::span<const SftExample> corpus, int epochs, double eta_sft);

// --- RL building blocks ------------------------------------------------------

/// reward - lambda * (log pi(y|x) - log pi_ref(y|x)); the KL penalty enters
/// as a per-sample log-ratio.
double khat(double reward, const corpus::Prompt& prompt, std::span<const TokenId> response,
            const model::Params& params, const model::ModelConfig& cfg,
            const model::Params& ref_params, double lambda);

/// reinforce: identity (inputs are already normalized); grpo: group-
/// standardized, population std floored at 1e-8; rloo: each reward minus
/// the mean of the other k-1.
std::vector<double> advantages(Algo algo, std::span<const double> rewards);

struct RolloutRecord {
  std::vector<TokenId> response;
  double raw_reward = 0.0;
  double norm_reward = 0.0;
  double log_ratio = 0.0;  // log pi - log pi_ref for this sample
  double khat = 0.0;
  double advantage = 0.0;
};
struct BatchGroup {
  corpus::Prompt prompt;
  std::vector<RolloutRecord> rollouts;
};
using Batch = std::vector<BatchGroup>;

/// Projects a batch onto the gradient-facing view; weight = advantage * scale.
std::vector<grad::WeightedGroup> to_weighted(const Batch& batch, double scale);

struct ComputedStep {
  grad::GradVector grad;   // post-mask, pre-clip
  double grad_norm = 0.0;  // norm of `grad`
  double clip_scale = 1.0; // min(1, clip_norm / grad_norm)
};

/// Deterministic pure function of its inputs; rerunning it on a recorded
/// batch reproduces the step's gradient bit-exactly.
ComputedStep compute_step(const model::Params& params, const model::ModelConfig& cfg,
                          const Batch& batch, bool classifier_only,
                          std::optional<double> clip_norm);

struct StepRecord {
  int step = 0;
  int epoch = 0;
  bool classifier_only = false;
  std::string params_before;  // sha256 of the serialized checkpoint
  std::string params_after;
  Batch batch;
  double grad_norm = 0.0;
  double clip_scale = 1.0;
  double eta = 0.0;
  std::vector<double> taylor_residuals;  // per configured target, may be empty
};

struct TrainerState {
  model::ModelConfig model_cfg;
  corpus::TaskSpec task;
  TrainConfig cfg;
  std::vector<corpus::Prompt> prompts;
  model::Params params;
  model::Params ref_params;
  corpus::RewardNormalizer normalizer;
  std::vector<double> normalizer_pool;  // raw rewards the normalizer was fitted on
};

/// Builds the RL state: params starts as a snapshot of ref_params and the
/// reward normalizer is fitted on the starting policy (substream 0 of the
/// train seed).
TrainerState make_state(const model::ModelConfig& model_cfg, const corpus::TaskSpec& task,
                        const TrainConfig& cfg, std::vector<corpus::Prompt> prompts,
                        model::Params ref_params);

/// One policy-gradient step over batch_prompts: sample k rollouts per prompt
/// (substream 1 + step_index of the train seed), score, normalize, weight by
/// khat, compute advantages, assemble/clip/apply the gradient, and record
/// everything needed to replay the step.
StepRecord rl_step(TrainerState& state, std::span<const corpus::Prompt> batch_prompts,
                   int step_index, int epoch, bool classifier_only,
                   std::span<const model::Context> taylor_targets);

// --- runs --------------------------------------------------------------------

struct GroupDistance {
  std::string name;
  double distance = 0.0;
};

/// Per-group L2 distance between two parameter snapshots (classifier included).
std::vector<GroupDistance> track_groups(const model::Params& reference,
                                        const model::Params& current,
                                        const model::ModelConfig& cfg);

struct EpochRow {
  int epoch = 0;
  double mean_raw_reward = 0.0;
  double mean_khat = 0.0;
  double mean_kl = 0.0;        // mean per-sample log-ratio
  double mean_grad_norm = 0.0; // pre-clip, post-mask, averaged over steps
  std::vector<GroupDistance> dists;  // vs the run's reference params
  double first_token_entropy = 0.0;  // mean over prompts
};

struct RunResult {
  std::vector<StepRecord> steps;
  std::vector<EpochRow> epochs;          // row 0 = pre-training state
  std::vector<model::Params> checkpoints;  // index = epoch, 0..epochs
};

/// The two-stage schedule: the first cf_stage_epochs epochs update only the
/// classifier block (theta_phi gradient zeroed), the rest update everything.
/// cf_stage_epochs = 0 is plain RL.
RunResult cf_rl_run(TrainerState& state, int cf_stage_epochs,
                    std::span<const model::Context> taylor_targets);

struct GroupTrackTable {
  std::vector<std::string> groups;
  Mat distance;    // (epochs+1) x groups
  Mat normalized;  // distance / final-epoch distance; all-zero column if final is 0
};
GroupTrackTable build_group_track(const model::Params& reference,
                                  std::span<const model::Params> checkpoints,
                                  const model::ModelConfig& cfg);

}  // namespace ntkrl::trainer
