#pragma once

#include <span>
#include <string>
#include <vector>

#include "ntkrl/corpus.hpp"
#include "ntkrl/model.hpp"

namespace ntkrl::analyzer {

struct EntropyReport {
  std::string tag;
  std::vector<int> prompt_ids;
  std::vector<double> entropy;  // nats, aligned with prompt_ids
  double mean = 0.0;
  double std_dev = 0.0;  // population
  double q25 = 0.0, median = 0.0, q75 = 0.0;
};

/// Shannon entropy of pi(.|x) per prompt, summarized.
EntropyReport first_token_entropy(const model::Params& p, const model::ModelConfig& cfg,
                                  std::span<const corpus::Prompt> prompts, std::string tag);

/// Paired low/high reports for a reward-median split of the prompt set.
std::pair<EntropyReport, EntropyReport> entropy_by_reward_group(
    const model::Params& p, const model::ModelConfig& cfg,
    std::span<const corpus::Prompt> low, std::span<const corpus::Prompt> high);

struct SimilarityStats {
  double mean = 0.0;
  double std_dev = 0.0;
  double min = 0.0;
  int excluded = 0;  // prompts dropped for zero-norm features
};

/// Pairwise cosine similarity of prompt features (empty prefix), all
/// unordered pairs.
SimilarityStats feature_cosine_stats(const model::Params& p, const model::ModelConfig& cfg,
                                     std::span<const corpus::Prompt> prompts);

struct BestOfNEntry {
  int n = 0;
  double mean_best_reward = 0.0;
};

/// One pool of `samples` responses per prompt; for each N the mean over
/// prompts of the best reward among the first N draws (prefix-max, so the
/// curve is monotone by construction).
std::vector<BestOfNEntry> best_of_n(const model::Params& p, const model::ModelConfig& cfg,
                                    std::span<const corpus::Prompt> prompts,
                                    const corpus::TaskSpec& task, std::span<const int> n_list,
                                    int samples, Rng& rng);

struct DiversityResult {
  double semantic = 0.0;  // mean pairwise cosine distance of reference-model response features
  double style = 0.0;     // mean pairwise cosine distance of token-unigram histograms
};

/// Samples responses from `policy`, embeds them with `reference` (mean over
/// response positions of the features of prompt + prefix-through-position),
/// and averages pairwise distances over prompts.
DiversityResult diversity(const model::Params& policy, const model::Params& reference,
                          const model::ModelConfig& cfg, std::span<const corpus::Prompt> prompts,
                          const corpus::TaskSpec& task, int samples_per_prompt, Rng& rng);

struct RowNormStats {
  double mean = 0.0;
  double std_dev = 0.0;  // population
};
RowNormStats classifier_norm_stats(const model::Params& p);

struct TokenUpdate {
  TokenId token = 0;
  double delta_norm = 0.0;
};

/// Tokens ranked by the L2 norm of their classifier-row change, descending;
/// ties break toward the smaller token id.
std::vector<TokenUpdate> top_token_updates(const RowMat& w_before, const RowMat& w_after, int k);

/// Per prompt: ||phi_a(x) - phi_sft(x)|| - ||phi_b(x) - phi_sft(x)||.
std::vector<double> feature_change_diff(const model::Params& sft, const model::Params& run_a,
                                        const model::Params& run_b, const model::ModelConfig& cfg,
                                        std::span<const corpus::Prompt> prompts);

}  // namespace ntkrl::analyzer
