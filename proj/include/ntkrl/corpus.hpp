#pragma once

#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "ntkrl/common.hpp"

namespace ntkrl::corpus {

struct Vocab {
  int size = 0;  // token ids are 1..size
};
void validate(const Vocab& v);

struct Prompt {
  int id = 0;
  std::vector<TokenId> tokens;
};

/// Fully specifies the synthetic task: the prompt distribution and the
/// target pattern that defines the reward. The target token at (0-based)
/// response position l is
///   ((sum of prompt tokens + pattern_offset + l * pattern_stride) mod V) + 1,
/// i.e. a prompt-dependent constant token when stride = 0 and a rotating
/// pattern otherwise.
struct TaskSpec {
  Vocab vocab{16};
  int prompt_count = 32;       // N
  int max_response_len = 8;    // L
  int min_prompt_len = 2;
  int max_prompt_len = 5;
  int pattern_offset = 0;
  int pattern_stride = 0;
  std::uint64_t seed = 7;
};
void validate(const TaskSpec& spec);

struct RewardNormalizer {
  double mean = 0.0;
  double std_dev = 1.0;  // strictly positive; floored at 1e-8
  bool floored = false;  // set when the raw population std fell below the floor
};

/// N prompts with ids 0..N-1, lengths uniform in [min,max], tokens uniform
/// in 1..V. Prompt i is generated from its own substream of spec.seed, so
/// it does not depend on the other prompts.
std::vector<Prompt> generate_prompts(const TaskSpec& spec);

TokenId target_token(const Prompt& prompt, const TaskSpec& spec, int position);

/// The length-`length` response that maximizes reward.
std::vector<TokenId> optimal_response(const Prompt& prompt, const TaskSpec& spec, int length);

/// 2 * (fraction of positions matching the target pattern) - 1, in [-1, 1].
/// An empty response counts as zero matches (reward -1).
double reward(const Prompt& prompt, std::span<const TokenId> response, const TaskSpec& spec);

using PolicySampler = std::function<std::vector<TokenId>(const Prompt&, Rng&)>;

/// samples_per_prompt responses per prompt, scored; each (prompt, sample)
/// pair draws from its own substream of `rng`. Pool order is prompt-major.
std::vector<double> sample_reward_pool(const PolicySampler& policy, std::span<const Prompt> prompts,
                                       const TaskSpec& spec, int samples_per_prompt, Rng& rng);

/// Pools sampled rewards via sample_reward_pool and fits mean/population-std
/// over them.
RewardNormalizer fit_normalizer(const PolicySampler& policy, std::span<const Prompt> prompts,
                                const TaskSpec& spec, int samples_per_prompt, Rng& rng);

/// Statistical core of fit_normalizer, exposed for tests and for reuse on
/// pre-scored reward pools.
RewardNormalizer fit_normalizer_from_rewards(std::span<const double> rewards);

double normalize(double r, const RewardNormalizer& n);

struct RewardSplit {
  std::vector<std::size_t> low;   // indices into the scored sequence
  std::vector<std::size_t> high;
};

/// Median split of per-prompt mean rewards; the median is the average of the
/// two middle order statistics and ties go to the low group.
RewardSplit split_by_reward(std::span<const double> mean_rewards);

// One prompt per line, space-separated integer token ids, in id order.
void save_prompts(const std::filesystem::path& path, std::span<const Prompt> prompts);
std::vector<Prompt> load_prompts(const std::filesystem::path& path);

}  // namespace ntkrl::corpus
