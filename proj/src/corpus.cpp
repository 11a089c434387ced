#include "ntkrl/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace ntkrl::corpus {

void validate(const Vocab& v) {
  if (v.size < 2) throw ConfigError("vocab size must be >= 2, got " + std::to_string(v.size));
  if (v.size > 64) throw ConfigError("vocab size must be <= 64, got " + std::to_string(v.size));
}

void validate(const TaskSpec& spec) {
  validate(spec.vocab);
  if (spec.prompt_count < 1) throw ConfigError("prompt_count must be >= 1");
  if (spec.max_response_len < 1) throw ConfigError("max_response_len must be >= 1");
  if (spec.min_prompt_len < 1) throw ConfigError("min_prompt_len must be >= 1");
  if (spec.max_prompt_len < spec.min_prompt_len)
    throw ConfigError("max_prompt_len must be >= min_prompt_len");
}

std::vector<Prompt> generate_prompts(const TaskSpec& spec) {
  validate(spec);
  Rng root(spec.seed);
  std::vector<Prompt> out;
  out.reserve(static_cast<std::size_t>(spec.prompt_count));
  for (int i = 0; i < spec.prompt_count; ++i) {
    Rng rng = root.split(static_cast<std::uint64_t>(i));
    const int len = spec.min_prompt_len + rng.uniform_int(spec.max_prompt_len - spec.min_prompt_len + 1);
    Prompt p;
    p.id = i;
    p.tokens.reserve(static_cast<std::size_t>(len));
    for (int j = 0; j < len; ++j)
      p.tokens.push_back(static_cast<TokenId>(1 + rng.uniform_int(spec.vocab.size)));
    out.push_back(std::move(p));
  }
  return out;
}

TokenId target_token(const Prompt& prompt, const TaskSpec& spec, int position) {
  if (position < 0 || position >= spec.max_response_len)
    throw ContractError("target_token: position out of range");
  long long sum = 0;
  for (TokenId t : prompt.tokens) sum += t;
  sum += spec.pattern_offset + static_cast<long long>(position) * spec.pattern_stride;
  const long long v = spec.vocab.size;
  return static_cast<TokenId>(((sum % v) + v) % v + 1);
}

std::vector<TokenId> optimal_response(const Prompt& prompt, const TaskSpec& spec, int length) {
  if (length < 0 || length > spec.max_response_len)
    throw ContractError("optimal_response: length out of range");
  std::vector<TokenId> out;
  out.reserve(static_cast<std::size_t>(length));
  for (int l = 0; l < length; ++l) out.push_back(target_token(prompt, spec, l));
  return out;
}

double reward(const Prompt& prompt, std::span<const TokenId> response, const TaskSpec& spec) {
  if (std::ssize(response) > spec.max_response_len)
    throw ContractError("reward: response longer than max_response_len");
  if (response.empty()) return -1.0;
  int matches = 0;
  for (int l = 0; l < std::ssize(response); ++l)
    if (response[static_cast<std::size_t>(l)] == target_token(prompt, spec, l)) ++matches;
  return 2.0 * static_cast<double>(matches) / static_cast<double>(response.size()) - 1.0;
}

RewardNormalizer fit_normalizer_from_rewards(std::span<const double> rewards) {
  if (rewards.empty()) throw ContractError("fit_normalizer: empty reward pool");
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= static_cast<double>(rewards.size());
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  var /= static_cast<double>(rewards.size());
  RewardNormalizer n;
  n.mean = mean;
  n.std_dev = std::sqrt(var);
  if (n.std_dev < 1e-8) {
    n.std_dev = 1e-8;
    n.floored = true;
  }
  return n;
}

std::vector<double> sample_reward_pool(const PolicySampler& policy, std::span<const Prompt> prompts,
                                       const TaskSpec& spec, int samples_per_prompt, Rng& rng) {
  if (samples_per_prompt < 1)
    throw ContractError("sample_reward_pool: samples_per_prompt must be >= 1");
  if (prompts.empty()) throw ContractError("sample_reward_pool: no prompts");
  std::vector<double> pool;
  pool.reserve(prompts.size() * static_cast<std::size_t>(samples_per_prompt));
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    for (int s = 0; s < samples_per_prompt; ++s) {
      Rng sub = rng.split(i * static_cast<std::size_t>(samples_per_prompt) + static_cast<std::size_t>(s));
      const std::vector<TokenId> resp = policy(prompts[i], sub);
      pool.push_back(reward(prompts[i], resp, spec));
    }
  }
  return pool;
}

RewardNormalizer fit_normalizer(const PolicySampler& policy, std::span<const Prompt> prompts,
                                const TaskSpec& spec, int samples_per_prompt, Rng& rng) {
  return fit_normalizer_from_rewards(sample_reward_pool(policy, prompts, spec, samples_per_prompt, rng));
}

double normalize(double r, const RewardNormalizer& n) {
  return (r - n.mean) / n.std_dev;
}

RewardSplit split_by_reward(std::span<const double> mean_rewards) {
  if (mean_rewards.size() < 2) throw ConfigError("split_by_reward: need at least 2 scored prompts");
  std::vector<double> sorted(mean_rewards.begin(), mean_rewards.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  const double median = (sorted[(n - 1) / 2] + sorted[n / 2]) / 2.0;
  RewardSplit split;
  for (std::size_t i = 0; i < mean_rewards.size(); ++i) {
    if (mean_rewards[i] <= median)
      split.low.push_back(i);
    else
      split.high.push_back(i);
  }
  return split;
}

void save_prompts(const std::filesystem::path& path, std::span<const Prompt> prompts) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  for (const Prompt& p : prompts) {
    for (std::size_t j = 0; j < p.tokens.size(); ++j) {
      if (j) out << ' ';
      out << p.tokens[j];
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<Prompt> load_prompts(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path.string());
  std::vector<Prompt> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    Prompt p;
    p.id = static_cast<int>(out.size());
    std::istringstream ss(line);
    long long tok = 0;
    while (ss >> tok) p.tokens.push_back(static_cast<TokenId>(tok));
    if (p.tokens.empty()) throw IoError("malformed prompt line in " + path.string());
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace ntkrl::corpus
