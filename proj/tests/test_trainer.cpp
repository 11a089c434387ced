#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest/doctest.h>

#include <cmath>
#include <vector>

#include "ntkrl/io.hpp"
#include "ntkrl/trainer.hpp"

using namespace ntkrl;
using namespace ntkrl::trainer;

namespace {

corpus::TaskSpec small_task() {
  corpus::TaskSpec t;
  t.vocab.size = 5;
  t.prompt_count = 6;
  t.max_response_len = 3;
  t.min_prompt_len = 2;
  t.max_prompt_len = 3;
  t.seed = 42;
  return t;
}

model::ModelConfig small_model() {
  model::ModelConfig c;
  c.vocab_size = 5;
  c.feature_dim = 4;
  c.context_window = 3;
  c.hidden_width = 4;
  c.activation = model::Activation::nonneg;
  c.seed = 11;
  return c;
}

TrainConfig small_train() {
  TrainConfig t;
  t.algo = Algo::grpo;
  t.learning_rate = 0.05;
  t.kl_coef = 0.1;
  t.epochs = 2;
  t.prompts_per_batch = 3;
  t.rollouts_per_prompt = 3;
  t.clip_norm = 1.0;
  t.cf_stage_epochs = 1;
  t.normalizer_samples_per_prompt = 4;
  t.seed = 900;
  return t;
}

TrainerState fresh_state(const TrainConfig& tc) {
  const corpus::TaskSpec task = small_task();
  const model::ModelConfig mc = small_model();
  return make_state(mc, task, tc, corpus::generate_prompts(task), model::init_params(mc));
}

Batch fixed_batch() {
  Batch b(2);
  b[0].prompt = {0, {1, 2}};
  b[0].rollouts.resize(2);
  b[0].rollouts[0] = {{3, 1}, 1.0, 0.9, 0.1, 0.89, 0.7};
  b[0].rollouts[1] = {{2}, -1.0, -1.1, -0.2, -1.08, -0.7};
  b[1].prompt = {1, {4, 3, 2}};
  b[1].rollouts.resize(2);
  b[1].rollouts[0] = {{1, 1, 5}, 0.0, 0.1, 0.0, 0.1, 0.4};
  b[1].rollouts[1] = {{5}, 0.0, 0.1, 0.3, 0.07, -0.4};
  return b;
}

}  // namespace

TEST_CASE("train config validation") {
  TrainConfig t = small_train();
  CHECK_NOTHROW(validate(t));
  t.learning_rate = 0.0;
  CHECK_THROWS_AS(validate(t), ConfigError);
  t = small_train();
  t.epochs = 0;
  CHECK_THROWS_AS(validate(t), ConfigError);
  t = small_train();
  t.rollouts_per_prompt = 1;  // grpo needs a group
  CHECK_THROWS_AS(validate(t), ConfigError);
  t.algo = Algo::reinforce;
  CHECK_NOTHROW(validate(t));
  t = small_train();
  t.clip_norm = 0.0;
  CHECK_THROWS_AS(validate(t), ConfigError);
  t.clip_norm.reset();
  CHECK_NOTHROW(validate(t));
  t.cf_stage_epochs = -1;
  CHECK_THROWS_AS(validate(t), ConfigError);
}

TEST_CASE("advantage estimators: identity, group-standardized, leave-one-out") {
  const std::vector<double> r = {1.0, 2.0, 3.0};

  const std::vector<double> id = advantages(Algo::reinforce, r);
  CHECK(id == r);

  const std::vector<double> g = advantages(Algo::grpo, r);
  REQUIRE(g.size() == 3);
  CHECK(std::abs(g[0] + 1.224744871391589) <= 1e-12);
  CHECK(std::abs(g[1]) <= 1e-12);
  CHECK(std::abs(g[2] - 1.224744871391589) <= 1e-12);

  // zero-sum across random groups
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> rewards(2 + rng.uniform_int(6));
    for (double& x : rewards) x = rng.uniform(-2.0, 2.0);
    const std::vector<double> adv = advantages(Algo::grpo, rewards);
    double sum = 0.0;
    for (double a : adv) sum += a;
    CHECK(std::abs(sum) <= 1e-9);
  }

  // a flat group standardizes to zeros (floored denominator); 0.5 keeps the
  // mean exact so no rounding leaks through the 1e-8 floor
  const std::vector<double> flat = advantages(Algo::grpo, std::vector<double>{0.5, 0.5, 0.5});
  for (double a : flat) CHECK(a == 0.0);

  // rloo matches the rescaled-centering closed form for k = 2, 3, 4
  Rng rr(6);
  for (int k = 2; k <= 4; ++k) {
    std::vector<double> rewards(static_cast<std::size_t>(k));
    for (double& x : rewards) x = rr.uniform(-1.0, 1.0);
    double mean = 0.0;
    for (double x : rewards) mean += x;
    mean /= k;
    const std::vector<double> adv = advantages(Algo::rloo, rewards);
    for (int j = 0; j < k; ++j) {
      const double expected = (static_cast<double>(k) / (k - 1)) * (rewards[j] - mean);
      CHECK(std::abs(adv[j] - expected) <= 1e-12);
    }
  }

  CHECK_THROWS_AS(advantages(Algo::grpo, std::vector<double>{}), ContractError);
  CHECK_THROWS_AS(advantages(Algo::grpo, std::vector<double>{1.0}), ConfigError);
  CHECK_THROWS_AS(advantages(Algo::rloo, std::vector<double>{1.0}), ConfigError);
}

TEST_CASE("khat subtracts the scaled log-ratio; zero coefficient passes through") {
  const model::ModelConfig mc = small_model();
  const model::Params ref = model::init_params(mc);
  model::Params cur = model::snapshot(ref);
  Rng rng(77);
  for (std::size_t i = 0; i < model::param_count(cur); ++i)
    model::set_coord(cur, i, model::get_coord(cur, i) + rng.uniform(-0.2, 0.2));

  const corpus::Prompt prompt{0, {2, 4}};
  const std::vector<TokenId> resp = {1, 3, 5};
  const double lp = model::sequence_logprob(cur, mc, prompt, resp);
  const double lp_ref = model::sequence_logprob(ref, mc, prompt, resp);

  CHECK(khat(0.3, prompt, resp, cur, mc, ref, 0.0) == 0.3);
  const double expected = 0.3 - 0.7 * (lp - lp_ref);
  CHECK(khat(0.3, prompt, resp, cur, mc, ref, 0.7) == doctest::Approx(expected).epsilon(1e-15));
}

TEST_CASE("sft corpus is half optimal, half random; training lowers the loss") {
  const corpus::TaskSpec task = small_task();
  const std::vector<corpus::Prompt> prompts = corpus::generate_prompts(task);
  Rng rng(3);
  const std::vector<SftExample> ex = build_sft_corpus(prompts, task, rng);
  REQUIRE(ex.size() == prompts.size());
  for (std::size_t i = 0; i < ex.size(); ++i) {
    CHECK(ex[i].target.size() == static_cast<std::size_t>(task.max_response_len));
    const double r = corpus::reward(ex[i].prompt, ex[i].target, task);
    if (i < (ex.size() + 1) / 2) CHECK(r == 1.0);
    for (TokenId t : ex[i].target) {
      CHECK(t >= 1);
      CHECK(t <= task.vocab.size);
    }
  }
  Rng rng2(3);
  const std::vector<SftExample> again = build_sft_corpus(prompts, task, rng2);
  for (std::size_t i = 0; i < ex.size(); ++i) CHECK(ex[i].target == again[i].target);

  const model::ModelConfig mc = small_model();
  const SftResult res = sft_pretrain(model::init_params(mc), mc, ex, 10, 0.5);
  REQUIRE(res.loss.size() == 11);
  CHECK(res.loss.back() < res.loss.front());
  for (double l : res.loss) CHECK(std::isfinite(l));

  CHECK_THROWS_AS(sft_pretrain(model::init_params(mc), mc, {}, 1, 0.5), ContractError);
}

TEST_CASE("make_state snapshots the reference and fits the normalizer") {
  const TrainConfig tc = small_train();
  TrainerState st = fresh_state(tc);

  CHECK(io::serialize_params(st.params, st.model_cfg) ==
        io::serialize_params(st.ref_params, st.model_cfg));
  CHECK(st.normalizer_pool.size() ==
        st.prompts.size() * static_cast<std::size_t>(tc.normalizer_samples_per_prompt));
  const corpus::RewardNormalizer refit = corpus::fit_normalizer_from_rewards(st.normalizer_pool);
  CHECK(st.normalizer.mean == refit.mean);
  CHECK(st.normalizer.std_dev == refit.std_dev);

  model::ModelConfig wrong = small_model();
  wrong.vocab_size = 4;
  wrong.seed = 11;
  CHECK_THROWS_AS(make_state(wrong, small_task(), tc, corpus::generate_prompts(small_task()),
                             model::init_params(wrong)),
                  ConfigError);
}

TEST_CASE("compute_step masks the feature stack and rescales to the clip norm") {
  const model::ModelConfig mc = small_model();
  const model::Params p = model::init_params(mc);
  const Batch batch = fixed_batch();
  const std::size_t theta_n = model::theta_size(mc);

  const ComputedStep full = compute_step(p, mc, batch, false, std::nullopt);
  CHECK(full.clip_scale == 1.0);
  CHECK(full.grad_norm == doctest::Approx(full.grad.norm()).epsilon(1e-15));
  CHECK(full.grad.head(static_cast<Eigen::Index>(theta_n)).norm() > 0.0);

  const ComputedStep masked = compute_step(p, mc, batch, true, std::nullopt);
  CHECK(masked.grad.head(static_cast<Eigen::Index>(theta_n)).norm() == 0.0);
  CHECK(masked.grad.tail(masked.grad.size() - static_cast<Eigen::Index>(theta_n)).norm() > 0.0);
  // classifier rows agree with the unmasked gradient
  CHECK((masked.grad.tail(masked.grad.size() - static_cast<Eigen::Index>(theta_n)) -
         full.grad.tail(full.grad.size() - static_cast<Eigen::Index>(theta_n)))
            .cwiseAbs()
            .maxCoeff() == 0.0);

  const double tiny_clip = full.grad_norm / 4.0;
  const ComputedStep clipped = compute_step(p, mc, batch, false, tiny_clip);
  CHECK(clipped.clip_scale == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(clipped.grad_norm * clipped.clip_scale == doctest::Approx(tiny_clip).epsilon(1e-12));
  // the gradient itself is reported pre-clip
  CHECK((clipped.grad - full.grad).cwiseAbs().maxCoeff() == 0.0);

  const ComputedStep loose = compute_step(p, mc, batch, false, full.grad_norm * 10.0);
  CHECK(loose.clip_scale == 1.0);
}

TEST_CASE("rl_step is deterministic and wires rewards through the recorded fields") {
  const TrainConfig tc = small_train();
  TrainerState a = fresh_state(tc);
  TrainerState b = fresh_state(tc);
  const std::vector<corpus::Prompt> batch_prompts(a.prompts.begin(), a.prompts.begin() + 3);

  const StepRecord ra = rl_step(a, batch_prompts, 0, 1, false, {});
  const StepRecord rb = rl_step(b, batch_prompts, 0, 1, false, {});

  CHECK(ra.params_before == rb.params_before);
  CHECK(ra.params_after == rb.params_after);
  CHECK(ra.params_after != ra.params_before);
  CHECK(ra.grad_norm == rb.grad_norm);
  CHECK(io::serialize_params(a.params, a.model_cfg) == io::serialize_params(b.params, b.model_cfg));

  REQUIRE(ra.batch.size() == 3);
  for (const BatchGroup& group : ra.batch) {
    REQUIRE(group.rollouts.size() == static_cast<std::size_t>(tc.rollouts_per_prompt));
    std::vector<double> khats;
    for (const RolloutRecord& roll : group.rollouts) {
      CHECK(roll.norm_reward ==
            doctest::Approx(corpus::normalize(roll.raw_reward, a.normalizer)).epsilon(1e-15));
      CHECK(roll.khat ==
            doctest::Approx(roll.norm_reward - tc.kl_coef * roll.log_ratio).epsilon(1e-15));
      khats.push_back(roll.khat);
    }
    const std::vector<double> adv = advantages(tc.algo, khats);
    for (std::size_t j = 0; j < adv.size(); ++j)
      CHECK(group.rollouts[j].advantage == doctest::Approx(adv[j]).epsilon(1e-15));
  }

  // replaying the recorded batch reproduces the recorded gradient scale
  const io::LoadedParams before = io::parse_params(
      io::serialize_params(fresh_state(tc).params, a.model_cfg));
  const ComputedStep replay =
      compute_step(before.params, a.model_cfg, ra.batch, false, tc.clip_norm);
  CHECK(replay.grad_norm == ra.grad_norm);
  CHECK(replay.clip_scale == ra.clip_scale);
}

TEST_CASE("cf_rl_run freezes the feature stack during the first stage") {
  TrainConfig tc = small_train();
  tc.epochs = 2;
  TrainerState st = fresh_state(tc);
  const RunResult run = cf_rl_run(st, 1, {});

  REQUIRE(run.checkpoints.size() == 3);
  REQUIRE(run.epochs.size() == 3);

  const std::size_t theta_n = model::theta_size(st.model_cfg);
  const auto theta_bytes = [&](const model::Params& p) {
    return io::serialize_params(p, st.model_cfg).substr(0, 28 + theta_n * 8);
  };
  CHECK(theta_bytes(run.checkpoints[1]) == theta_bytes(run.checkpoints[0]));
  CHECK(io::serialize_params(run.checkpoints[1], st.model_cfg) !=
        io::serialize_params(run.checkpoints[0], st.model_cfg));
  CHECK(theta_bytes(run.checkpoints[2]) != theta_bytes(run.checkpoints[1]));

  // epoch 0 row reports the pre-training policy
  const EpochRow& row0 = run.epochs[0];
  CHECK(row0.epoch == 0);
  CHECK(row0.mean_kl == 0.0);
  CHECK(row0.mean_grad_norm == 0.0);
  double pool_mean = 0.0;
  for (double r : st.normalizer_pool) pool_mean += r;
  pool_mean /= static_cast<double>(st.normalizer_pool.size());
  CHECK(row0.mean_raw_reward == doctest::Approx(pool_mean).epsilon(1e-15));
  for (const GroupDistance& d : row0.dists) CHECK(d.distance == 0.0);

  for (const StepRecord& s : run.steps)
    CHECK(s.classifier_only == (s.epoch <= 1));
}

TEST_CASE("cf_rl_run with a zero-length first stage matches plain full steps") {
  TrainConfig tc = small_train();
  tc.epochs = 1;
  TrainerState a = fresh_state(tc);
  TrainerState b = fresh_state(tc);

  const RunResult via_run = cf_rl_run(a, 0, {});
  // replicate by hand: chunks of prompts_per_batch prompts, in order
  std::vector<StepRecord> manual;
  int step_index = 0;
  for (std::size_t at = 0; at < b.prompts.size(); at += tc.prompts_per_batch) {
    const std::size_t n = std::min<std::size_t>(tc.prompts_per_batch, b.prompts.size() - at);
    manual.push_back(rl_step(b, std::span(b.prompts).subspan(at, n), step_index++, 1, false, {}));
  }
  REQUIRE(via_run.steps.size() == manual.size());
  for (std::size_t i = 0; i < manual.size(); ++i) {
    CHECK(via_run.steps[i].params_before == manual[i].params_before);
    CHECK(via_run.steps[i].params_after == manual[i].params_after);
  }
  CHECK(io::serialize_params(a.params, a.model_cfg) == io::serialize_params(b.params, b.model_cfg));
}

TEST_CASE("group distances isolate the touched block") {
  const model::ModelConfig mc = small_model();
  const model::Params p = model::init_params(mc);
  model::Params q = model::snapshot(p);

  std::vector<GroupDistance> zero = track_groups(p, q, mc);
  for (const GroupDistance& d : zero) CHECK(d.distance == 0.0);

  const std::size_t theta_n = model::theta_size(mc);
  model::set_coord(q, theta_n + 2, model::get_coord(q, theta_n + 2) + 0.5);
  std::vector<GroupDistance> moved = track_groups(p, q, mc);
  for (const GroupDistance& d : moved) {
    if (d.name == "classifier")
      CHECK(d.distance == doctest::Approx(0.5).epsilon(1e-15));
    else
      CHECK(d.distance == 0.0);
  }

  model::set_coord(q, 0, model::get_coord(q, 0) + 1.25);
  moved = track_groups(p, q, mc);
  for (const GroupDistance& d : moved) {
    if (d.name == "embeddings") CHECK(d.distance == doctest::Approx(1.25).epsilon(1e-15));
  }
}

TEST_CASE("group track table normalizes by the final distance") {
  const model::ModelConfig mc = small_model();
  const model::Params ref = model::init_params(mc);
  model::Params mid = model::snapshot(ref);
  model::Params end = model::snapshot(ref);
  const std::size_t theta_n = model::theta_size(mc);
  model::set_coord(mid, theta_n, model::get_coord(mid, theta_n) + 1.0);
  model::set_coord(end, theta_n, model::get_coord(end, theta_n) + 4.0);

  const std::vector<model::Params> ckpts = {model::snapshot(ref), std::move(mid), std::move(end)};
  const GroupTrackTable table = build_group_track(ref, ckpts, mc);

  REQUIRE(table.distance.rows() == 3);
  REQUIRE(table.groups.size() == static_cast<std::size_t>(table.distance.cols()));
  for (Eigen::Index c = 0; c < table.distance.cols(); ++c) {
    CHECK(table.distance(0, c) == 0.0);
    if (table.groups[static_cast<std::size_t>(c)] == "classifier") {
      CHECK(table.distance(1, c) == doctest::Approx(1.0).epsilon(1e-15));
      CHECK(table.normalized(1, c) == doctest::Approx(0.25).epsilon(1e-15));
      CHECK(table.normalized(2, c) == 1.0);
    } else {
      // untouched groups never move; their normalized column stays zero
      CHECK(table.normalized(2, c) == 0.0);
    }
  }
}
