#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest/doctest.h>

#include <cmath>
#include <vector>

#include "ntkrl/analyzer.hpp"

using namespace ntkrl;
using namespace ntkrl::analyzer;

namespace {

model::ModelConfig cfg5(model::Activation act = model::Activation::nonneg) {
  model::ModelConfig c;
  c.vocab_size = 5;
  c.feature_dim = 4;
  c.context_window = 3;
  c.hidden_width = 4;
  c.activation = act;
  c.seed = 19;
  return c;
}

corpus::TaskSpec task5() {
  corpus::TaskSpec t;
  t.vocab.size = 5;
  t.prompt_count = 4;
  t.max_response_len = 3;
  t.min_prompt_len = 2;
  t.max_prompt_len = 3;
  t.seed = 42;
  return t;
}

/// A policy whose next-token distribution is numerically one-hot on token 1
/// for every context: features are strictly positive, so a +/-200 classifier
/// separates the logits by hundreds of nats.
model::Params onehot_params(const model::ModelConfig& c) {
  model::Params p = model::init_params(c);
  p.classifier.setConstant(-200.0);
  p.classifier.row(0).setConstant(200.0);
  return p;
}

}  // namespace

TEST_CASE("uniform policy: entropy ln V for every prompt, zero spread") {
  const model::ModelConfig c = cfg5();
  model::Params p = model::init_params(c);
  p.classifier.setZero();
  const std::vector<corpus::Prompt> prompts = corpus::generate_prompts(task5());

  const EntropyReport r = first_token_entropy(p, c, prompts, "t0");
  CHECK(r.tag == "t0");
  REQUIRE(r.entropy.size() == prompts.size());
  const double lnv = std::log(5.0);
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    CHECK(r.prompt_ids[i] == prompts[i].id);
    CHECK(r.entropy[i] == doctest::Approx(lnv).epsilon(1e-12));
  }
  CHECK(r.mean == doctest::Approx(lnv).epsilon(1e-12));
  CHECK(r.std_dev <= 1e-12);
  CHECK(r.q25 == doctest::Approx(lnv).epsilon(1e-12));
  CHECK(r.median == doctest::Approx(lnv).epsilon(1e-12));
  CHECK(r.q75 == doctest::Approx(lnv).epsilon(1e-12));

  CHECK_THROWS_AS(first_token_entropy(p, c, {}, "x"), ConfigError);
}

TEST_CASE("entropy quantiles are ordered and bounded for a generic policy") {
  const model::ModelConfig c = cfg5();
  const model::Params p = model::init_params(c);
  const std::vector<corpus::Prompt> prompts = corpus::generate_prompts(task5());
  const EntropyReport r = first_token_entropy(p, c, prompts, "generic");
  CHECK(r.q25 <= r.median);
  CHECK(r.median <= r.q75);
  for (double e : r.entropy) {
    CHECK(e >= 0.0);
    CHECK(e <= std::log(5.0) + 1e-12);
  }
}

TEST_CASE("reward-group entropy carries fixed tags and rejects empty groups") {
  const model::ModelConfig c = cfg5();
  const model::Params p = model::init_params(c);
  const std::vector<corpus::Prompt> prompts = corpus::generate_prompts(task5());
  const std::vector<corpus::Prompt> low(prompts.begin(), prompts.begin() + 2);
  const std::vector<corpus::Prompt> high(prompts.begin() + 2, prompts.end());

  const auto [lo, hi] = entropy_by_reward_group(p, c, low, high);
  CHECK(lo.tag == "low");
  CHECK(hi.tag == "high");
  CHECK(lo.entropy.size() == 2);
  CHECK(hi.entropy.size() == 2);
  CHECK_THROWS_AS(entropy_by_reward_group(p, c, {}, high), ConfigError);
}

TEST_CASE("cosine stats: bounds, degenerate identity, zero-feature rejection") {
  const model::ModelConfig c = cfg5();
  const model::Params p = model::init_params(c);
  const std::vector<corpus::Prompt> prompts = corpus::generate_prompts(task5());

  const SimilarityStats s = feature_cosine_stats(p, c, prompts);
  CHECK(s.excluded == 0);
  CHECK(s.min >= -1.0 - 1e-12);
  CHECK(s.mean <= 1.0 + 1e-12);
  CHECK(s.min <= s.mean);
  CHECK(s.std_dev >= 0.0);

  const std::vector<corpus::Prompt> same = {{0, {2, 3}}, {1, {2, 3}}, {2, {2, 3}}};
  const SimilarityStats ident = feature_cosine_stats(p, c, same);
  CHECK(ident.mean == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(ident.std_dev <= 1e-12);
  CHECK(ident.min == doctest::Approx(1.0).epsilon(1e-12));

  CHECK_THROWS_AS(feature_cosine_stats(p, c, std::vector<corpus::Prompt>{{0, {1}}}),
                  ContractError);

  // a zeroed output gate kills every feature vector -> nothing left to compare
  const model::ModelConfig lin = cfg5(model::Activation::linear);
  model::Params zeroed = model::init_params(lin);
  for (const model::ParamGroup& g : model::layout(lin))
    if (g.name == "final_norm")
      for (std::size_t i = 0; i < g.size; ++i) model::set_coord(zeroed, g.offset + i, 0.0);
  CHECK_THROWS_AS(feature_cosine_stats(zeroed, lin, prompts), ContractError);
}

TEST_CASE("best-of-n curve is monotone and bounded by the reward range") {
  const model::ModelConfig c = cfg5();
  const model::Params p = model::init_params(c);
  const corpus::TaskSpec task = task5();
  const std::vector<corpus::Prompt> prompts = corpus::generate_prompts(task);
  const std::vector<int> n_list = {1, 2, 4, 8};

  Rng rng(31);
  const std::vector<BestOfNEntry> curve = best_of_n(p, c, prompts, task, n_list, 8, rng);
  REQUIRE(curve.size() == n_list.size());
  for (std::size_t i = 0; i < curve.size(); ++i) {
    CHECK(curve[i].n == n_list[i]);
    CHECK(curve[i].mean_best_reward >= -1.0);
    CHECK(curve[i].mean_best_reward <= 1.0);
    if (i > 0) CHECK(curve[i].mean_best_reward >= curve[i - 1].mean_best_reward);
  }

  Rng rng2(31);
  const std::vector<BestOfNEntry> again = best_of_n(p, c, prompts, task, n_list, 8, rng2);
  for (std::size_t i = 0; i < curve.size(); ++i)
    CHECK(curve[i].mean_best_reward == again[i].mean_best_reward);

  Rng rng3(31);
  CHECK_THROWS_AS(best_of_n(p, c, prompts, task, std::vector<int>{0}, 8, rng3), ConfigError);
  CHECK_THROWS_AS(best_of_n(p, c, prompts, task, std::vector<int>{9}, 8, rng3), ConfigError);
}

TEST_CASE("a collapsed policy has zero semantic and style diversity") {
  const model::ModelConfig c = cfg5();
  const model::Params collapsed = onehot_params(c);
  const model::Params reference = model::init_params(c);
  const corpus::TaskSpec task = task5();
  const std::vector<corpus::Prompt> prompts = corpus::generate_prompts(task);

  Rng rng(8);
  const DiversityResult d = diversity(collapsed, reference, c, prompts, task, 4, rng);
  CHECK(d.semantic == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(d.style == doctest::Approx(0.0).epsilon(1e-12));

  const model::Params spread = model::init_params(c);
  Rng rng2(8);
  const DiversityResult d2 = diversity(spread, reference, c, prompts, task, 4, rng2);
  CHECK(d2.semantic >= 0.0);
  CHECK(d2.style >= 0.0);
  CHECK(d2.style > d.style);

  Rng rng3(8);
  CHECK_THROWS_AS(diversity(spread, reference, c, prompts, task, 1, rng3), ContractError);
}

TEST_CASE("classifier row-norm stats from a hand-built matrix") {
  const model::ModelConfig c = cfg5();
  model::Params p = model::init_params(c);
  p.classifier.setZero();
  p.classifier(0, 0) = 3.0;  // row norm 3
  p.classifier(1, 1) = 4.0;  // row norm 4
  // remaining three rows: norm 0 -> mean 7/5, pop variance of {3,4,0,0,0}
  const RowNormStats s = classifier_norm_stats(p);
  CHECK(s.mean == doctest::Approx(1.4).epsilon(1e-15));
  const double var = (3.0 - 1.4) * (3.0 - 1.4) + (4.0 - 1.4) * (4.0 - 1.4) + 3 * 1.4 * 1.4;
  CHECK(s.std_dev == doctest::Approx(std::sqrt(var / 5.0)).epsilon(1e-12));
}

TEST_CASE("token update ranking: descending norms, id-ascending ties, clamped k") {
  RowMat before = RowMat::Zero(3, 2);
  RowMat after = RowMat::Zero(3, 2);
  after(0, 0) = 1.0;   // token 1: delta 1
  after(1, 1) = -5.0;  // token 2: delta 5
  after(2, 0) = 0.6;   // token 3: delta 1
  after(2, 1) = 0.8;

  const std::vector<TokenUpdate> top = top_token_updates(before, after, 2);
  REQUIRE(top.size() == 2);
  CHECK(top[0].token == 2);
  CHECK(top[0].delta_norm == doctest::Approx(5.0).epsilon(1e-15));
  CHECK(top[1].token == 1);  // tie with token 3 resolved toward the lower id
  CHECK(top[1].delta_norm == doctest::Approx(1.0).epsilon(1e-12));

  const std::vector<TokenUpdate> all = top_token_updates(before, after, 10);
  REQUIRE(all.size() == 3);
  CHECK(all[2].token == 3);

  CHECK_THROWS_AS(top_token_updates(before, after, 0), ContractError);
  CHECK_THROWS_AS(top_token_updates(before, RowMat::Zero(2, 2), 1), ContractError);
}

TEST_CASE("feature drift comparison is antisymmetric and zero on itself") {
  const model::ModelConfig c = cfg5();
  const model::Params sft = model::init_params(c);
  model::ModelConfig c2 = c;
  c2.seed = 77;
  const model::Params run_a = model::init_params(c2);
  c2.seed = 99;
  const model::Params run_b = model::init_params(c2);
  const std::vector<corpus::Prompt> prompts = corpus::generate_prompts(task5());

  const std::vector<double> self = feature_change_diff(sft, run_a, run_a, c, prompts);
  for (double v : self) CHECK(v == 0.0);

  const std::vector<double> ab = feature_change_diff(sft, run_a, run_b, c, prompts);
  const std::vector<double> ba = feature_change_diff(sft, run_b, run_a, c, prompts);
  REQUIRE(ab.size() == prompts.size());
  for (std::size_t i = 0; i < ab.size(); ++i)
    CHECK(ab[i] == doctest::Approx(-ba[i]).epsilon(1e-15));
}
