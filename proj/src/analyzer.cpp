#include "ntkrl/analyzer.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace ntkrl::analyzer {

namespace {

double quantile(std::vector<double> sorted, double q) {
  const std::size_t n = sorted.size();
  if (n == 1) return sorted[0];
  const double pos = q * static_cast<double>(n - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const double frac = pos - static_cast<double>(lo);
  if (lo + 1 >= n) return sorted[n - 1];
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

void summarize(EntropyReport& r) {
  const auto n = static_cast<double>(r.entropy.size());
  double mean = 0.0;
  for (double e : r.entropy) mean += e;
  mean /= n;
  double var = 0.0;
  for (double e : r.entropy) var += (e - mean) * (e - mean);
  r.mean = mean;
  r.std_dev = std::sqrt(var / n);
  std::vector<double> sorted = r.entropy;
  std::sort(sorted.begin(), sorted.end());
  r.q25 = quantile(sorted, 0.25);
  r.median = quantile(sorted, 0.5);
  r.q75 = quantile(sorted, 0.75);
}

}  // namespace

EntropyReport first_token_entropy(const model::Params& p, const model::ModelConfig& cfg,
                                  std::span<const corpus::Prompt> prompts, std::string tag) {
  if (prompts.empty()) throw ConfigError("first_token_entropy: no prompts");
  EntropyReport r;
  r.tag = std::move(tag);
  for (const corpus::Prompt& pr : prompts) {
    r.prompt_ids.push_back(pr.id);
    r.entropy.push_back(model::entropy_nats(model::next_token_dist(p, cfg, {pr, {}})));
  }
  summarize(r);
  return r;
}

std::pair<EntropyReport, EntropyReport> entropy_by_reward_group(
    const model::Params& p, const model::ModelConfig& cfg,
    std::span<const corpus::Prompt> low, std::span<const corpus::Prompt> high) {
  if (low.empty() || high.empty())
    throw ConfigError("entropy_by_reward_group: empty reward group");
  return {first_token_entropy(p, cfg, low, "low"), first_token_entropy(p, cfg, high, "high")};
}

SimilarityStats feature_cosine_stats(const model::Params& p, const model::ModelConfig& cfg,
                                     std::span<const corpus::Prompt> prompts) {
  if (prompts.size() < 2) throw ContractError("feature_cosine_stats: need >= 2 prompts");
  SimilarityStats st;
  std::vector<Vec> feats;
  feats.reserve(prompts.size());
  for (const corpus::Prompt& pr : prompts) {
    Vec f = model::features(p, cfg, {pr, {}});
    if (f.norm() < 1e-15) {
      ++st.excluded;
      continue;
    }
    feats.push_back(std::move(f));
  }
  if (feats.size() < 2)
    throw ContractError("feature_cosine_stats: fewer than 2 nonzero features");

  std::vector<double> cos;
  cos.reserve(feats.size() * (feats.size() - 1) / 2);
  for (std::size_t i = 0; i < feats.size(); ++i)
    for (std::size_t j = i + 1; j < feats.size(); ++j)
      cos.push_back(feats[i].dot(feats[j]) / (feats[i].norm() * feats[j].norm()));

  double mean = 0.0;
  for (double c : cos) mean += c;
  mean /= static_cast<double>(cos.size());
  double var = 0.0;
  for (double c : cos) var += (c - mean) * (c - mean);
  st.mean = mean;
  st.std_dev = std::sqrt(var / static_cast<double>(cos.size()));
  st.min = *std::min_element(cos.begin(), cos.end());
  return st;
}

std::vector<BestOfNEntry> best_of_n(const model::Params& p, const model::ModelConfig& cfg,
                                    std::span<const corpus::Prompt> prompts,
                                    const corpus::TaskSpec& task, std::span<const int> n_list,
                                    int samples, Rng& rng) {
  if (prompts.empty()) throw ConfigError("best_of_n: no prompts");
  if (n_list.empty()) throw ConfigError("best_of_n: empty N list");
  for (int n : n_list)
    if (n < 1 || n > samples) throw ConfigError("best_of_n: N out of range [1, samples]");

  // rewards[i][s] for prompt i, draw s; one pool reused across all N
  std::vector<std::vector<double>> rewards(prompts.size());
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    Rng prompt_rng = rng.split(i);
    rewards[i].reserve(static_cast<std::size_t>(samples));
    for (int s = 0; s < samples; ++s) {
      Rng draw = prompt_rng.split(static_cast<std::uint64_t>(s));
      const std::vector<TokenId> resp =
          model::sample_response(p, cfg, prompts[i], task.max_response_len, draw);
      rewards[i].push_back(corpus::reward(prompts[i], resp, task));
    }
  }

  std::vector<BestOfNEntry> out;
  out.reserve(n_list.size());
  for (int n : n_list) {
    double acc = 0.0;
    for (const std::vector<double>& rw : rewards) {
      double best = rw[0];
      for (int s = 1; s < n; ++s) best = std::max(best, rw[static_cast<std::size_t>(s)]);
      acc += best;
    }
    out.push_back({n, acc / static_cast<double>(prompts.size())});
  }
  return out;
}

namespace {

// Mean pairwise (1 - cosine); pairs where either vector is ~zero are skipped
// (can only happen for the feature embeddings, not histograms).
double mean_pairwise_cos_distance(const std::vector<Vec>& vs) {
  double acc = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < vs.size(); ++i)
    for (std::size_t j = i + 1; j < vs.size(); ++j) {
      const double ni = vs[i].norm(), nj = vs[j].norm();
      if (ni < 1e-15 || nj < 1e-15) continue;
      acc += 1.0 - vs[i].dot(vs[j]) / (ni * nj);
      ++pairs;
    }
  return pairs ? acc / static_cast<double>(pairs) : 0.0;
}

}  // namespace

DiversityResult diversity(const model::Params& policy, const model::Params& reference,
                          const model::ModelConfig& cfg, std::span<const corpus::Prompt> prompts,
                          const corpus::TaskSpec& task, int samples_per_prompt, Rng& rng) {
  if (samples_per_prompt < 2) throw ContractError("diversity: samples_per_prompt must be >= 2");
  if (prompts.empty()) throw ConfigError("diversity: no prompts");

  double sem = 0.0, sty = 0.0;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    Rng prompt_rng = rng.split(i);
    std::vector<Vec> embeds, hists;
    embeds.reserve(static_cast<std::size_t>(samples_per_prompt));
    hists.reserve(static_cast<std::size_t>(samples_per_prompt));
    for (int s = 0; s < samples_per_prompt; ++s) {
      Rng draw = prompt_rng.split(static_cast<std::uint64_t>(s));
      const std::vector<TokenId> resp =
          model::sample_response(policy, cfg, prompts[i], task.max_response_len, draw);

      Vec emb = Vec::Zero(cfg.feature_dim);
      model::Context ctx{prompts[i], {}};
      for (TokenId y : resp) {
        ctx.prefix.push_back(y);
        emb += model::features(reference, cfg, ctx);
      }
      emb /= static_cast<double>(resp.size());
      embeds.push_back(std::move(emb));

      Vec hist = Vec::Zero(cfg.vocab_size);
      for (TokenId y : resp) hist[y - 1] += 1.0;
      hist /= static_cast<double>(resp.size());
      hists.push_back(std::move(hist));
    }
    sem += mean_pairwise_cos_distance(embeds);
    sty += mean_pairwise_cos_distance(hists);
  }
  return {sem / static_cast<double>(prompts.size()), sty / static_cast<double>(prompts.size())};
}

RowNormStats classifier_norm_stats(const model::Params& p) {
  const auto rows = p.classifier.rows();
  if (rows == 0) throw ContractError("classifier_norm_stats: empty classifier");
  Vec norms(rows);
  for (Eigen::Index v = 0; v < rows; ++v) norms[v] = p.classifier.row(v).norm();
  RowNormStats st;
  st.mean = norms.mean();
  st.std_dev = std::sqrt((norms.array() - st.mean).square().sum() / static_cast<double>(rows));
  return st;
}

std::vector<TokenUpdate> top_token_updates(const RowMat& w_before, const RowMat& w_after, int k) {
  if (w_before.rows() != w_after.rows() || w_before.cols() != w_after.cols())
    throw ContractError("top_token_updates: shape mismatch");
  if (k < 1) throw ContractError("top_token_updates: k must be >= 1");
  std::vector<TokenUpdate> all;
  all.reserve(static_cast<std::size_t>(w_before.rows()));
  for (Eigen::Index v = 0; v < w_before.rows(); ++v)
    all.push_back({static_cast<TokenId>(v + 1), (w_after.row(v) - w_before.row(v)).norm()});
  std::stable_sort(all.begin(), all.end(), [](const TokenUpdate& a, const TokenUpdate& b) {
    if (a.delta_norm != b.delta_norm) return a.delta_norm > b.delta_norm;
    return a.token < b.token;
  });
  if (std::cmp_less(k, all.size())) all.resize(static_cast<std::size_t>(k));
  return all;
}

std::vector<double> feature_change_diff(const model::Params& sft, const model::Params& run_a,
                                        const model::Params& run_b, const model::ModelConfig& cfg,
                                        std::span<const corpus::Prompt> prompts) {
  std::vector<double> out;
  out.reserve(prompts.size());
  for (const corpus::Prompt& pr : prompts) {
    const model::Context ctx{pr, {}};
    const Vec base = model::features(sft, cfg, ctx);
    const double da = (model::features(run_a, cfg, ctx) - base).norm();
    const double db = (model::features(run_b, cfg, ctx) - base).norm();
    out.push_back(da - db);
  }
  return out;
}

}  // namespace ntkrl::analyzer
