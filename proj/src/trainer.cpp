#include "ntkrl/trainer.hpp"

#include <algorithm>
#include <cmath>

#include "ntkrl/io.hpp"

namespace ntkrl::trainer {

void validate(const TrainConfig& cfg) {
  if (!(cfg.learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (!(cfg.kl_coef >= 0.0)) throw ConfigError("kl_coef must be >= 0");
  if (cfg.epochs < 1) throw ConfigError("epochs must be >= 1");
  if (cfg.prompts_per_batch < 1) throw ConfigError("prompts_per_batch must be >= 1");
  if (cfg.rollouts_per_prompt < 1) throw ConfigError("rollouts_per_prompt must be >= 1");
  if ((cfg.algo == Algo::grpo || cfg.algo == Algo::rloo) && cfg.rollouts_per_prompt < 2)
    throw ConfigError("grpo/rloo need rollouts_per_prompt >= 2");
  if (cfg.clip_norm && !(*cfg.clip_norm > 0.0)) throw ConfigError("clip_norm must be > 0 if set");
  if (cfg.cf_stage_epochs < 0) throw ConfigError("cf_stage_epochs must be >= 0");
  if (cfg.normalizer_samples_per_prompt < 1)
    throw ConfigError("normalizer_samples_per_prompt must be >= 1");
}

std::vector<SftExample> build_sft_corpus(std::span<const corpus::Prompt> prompts,
                                         const corpus::TaskSpec& spec, Rng& rng) {
  if (prompts.empty()) throw ContractError("build_sft_corpus: no prompts");
  const std::size_t optimal_count = (prompts.size() + 1) / 2;
  std::vector<SftExample> out;
  out.reserve(prompts.size());
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    SftExample ex;
    ex.prompt = prompts[i];
    if (i < optimal_count) {
      ex.target = corpus::optimal_response(prompts[i], spec, spec.max_response_len);
    } else {
      Rng sub = rng.split(i);
      ex.target.reserve(static_cast<std::size_t>(spec.max_response_len));
      for (int l = 0; l < spec.max_response_len; ++l)
        ex.target.push_back(static_cast<TokenId>(1 + sub.uniform_int(spec.vocab.size)));
    }
    out.push_back(std::move(ex));
  }
  return out;
}

SftResult sft_pretrain(model::Params params, const model::ModelConfig& cfg,
                       std::span<const SftExample> corpus, int epochs, double eta_sft) {
  if (corpus.empty()) throw ContractError("sft_pretrain: empty corpus");
  if (epochs < 0) throw ConfigError("sft_pretrain: epochs must be >= 0");
  if (!(eta_sft > 0.0)) throw ConfigError("sft_pretrain: learning rate must be > 0");

  std::vector<grad::WeightedGroup> as_batch;
  as_batch.reserve(corpus.size());
  for (const SftExample& ex : corpus)
    as_batch.push_back({ex.prompt, {{ex.target, 1.0}}});

  auto mean_nll = [&](const model::Params& p) {
    double lp = 0.0;
    for (const SftExample& ex : corpus)
      lp += model::sequence_logprob(p, cfg, ex.prompt, ex.target);
    return -lp / static_cast<double>(corpus.size());
  };

  SftResult result;
  result.params = std::move(params);
  result.loss.reserve(static_cast<std::size_t>(epochs) + 1);
  for (int e = 0; e < epochs; ++e) {
    const double loss = mean_nll(result.params);
    if (!std::isfinite(loss))
      throw NumericError("sft_pretrain diverged at epoch " + std::to_string(e));
    result.loss.push_back(loss);
    const grad::GradVector g = grad::policy_gradient(result.params, cfg, as_batch);
    grad::apply_update(result.params, g, eta_sft);
  }
  const double final_loss = mean_nll(result.params);
  if (!std::isfinite(final_loss))
    throw NumericError("sft_pretrain diverged at epoch " + std::to_string(epochs));
  result.loss.push_back(final_loss);
  return result;
}

double khat(double reward, const corpus::Prompt& prompt, std::span<const TokenId> response,
            const model::Params& params, const model::ModelConfig& cfg,
            const model::Params& ref_params, double lambda) {
  if (!(lambda >= 0.0)) throw ContractError("khat: lambda must be >= 0");
  if (lambda == 0.0) return reward;
  const double log_ratio = model::sequence_logprob(params, cfg, prompt, response) -
                           model::sequence_logprob(ref_params, cfg, prompt, response);
  return reward - lambda * log_ratio;
}

std::vector<double> advantages(Algo algo, std::span<const double> rewards) {
  if (rewards.empty()) throw ContractError("advantages: empty reward group");
  const auto k = rewards.size();
  std::vector<double> out(rewards.begin(), rewards.end());
  switch (algo) {
    case Algo::reinforce:
      return out;  // rewards arrive normalized; the baseline is already removed
    case Algo::grpo: {
      if (k < 2) throw ConfigError("grpo needs k >= 2");
      double mean = 0.0;
      for (double r : rewards) mean += r;
      mean /= static_cast<double>(k);
      double var = 0.0;
      for (double r : rewards) var += (r - mean) * (r - mean);
      var /= static_cast<double>(k);
      const double sd = std::max(std::sqrt(var), 1e-8);
      for (double& a : out) a = (a - mean) / sd;
      return out;
    }
    case Algo::rloo: {
      if (k < 2) throw ConfigError("rloo needs k >= 2");
      double sum = 0.0;
      for (double r : rewards) sum += r;
      for (std::size_t j = 0; j < k; ++j)
        out[j] = rewards[j] - (sum - rewards[j]) / static_cast<double>(k - 1);
      return out;
    }
  }
  throw ContractError("advantages: unknown algorithm");
}

std::vector<grad::WeightedGroup> to_weighted(const Batch& batch, double scale) {
  std::vector<grad::WeightedGroup> out;
  out.reserve(batch.size());
  for (const BatchGroup& g : batch) {
    grad::WeightedGroup wg;
    wg.prompt = g.prompt;
    wg.items.reserve(g.rollouts.size());
    for (const RolloutRecord& r : g.rollouts)
      wg.items.push_back({r.response, r.advantage * scale});
    out.push_back(std::move(wg));
  }
  return out;
}

ComputedStep compute_step(const model::Params& params, const model::ModelConfig& cfg,
                          const Batch& batch, bool classifier_only,
                          std::optional<double> clip_norm) {
  ComputedStep cs;
  cs.grad = grad::policy_gradient(params, cfg, to_weighted(batch, 1.0));
  if (classifier_only) cs.grad.head(params.theta_phi.size()).setZero();
  if (!cs.grad.allFinite()) throw NumericError("compute_step: non-finite gradient");
  cs.grad_norm = cs.grad.norm();
  cs.clip_scale = (clip_norm && cs.grad_norm > *clip_norm) ? *clip_norm / cs.grad_norm : 1.0;
  return cs;
}

TrainerState make_state(const model::ModelConfig& model_cfg, const corpus::TaskSpec& task,
                        const TrainConfig& cfg, std::vector<corpus::Prompt> prompts,
                        model::Params ref_params) {
  model::validate(model_cfg);
  corpus::validate(task);
  validate(cfg);
  if (model_cfg.vocab_size != task.vocab.size)
    throw ConfigError("model and task disagree on vocab size");
  model::check_shape(ref_params, model_cfg);
  if (prompts.empty()) throw ConfigError("make_state: no prompts");

  TrainerState st;
  st.model_cfg = model_cfg;
  st.task = task;
  st.cfg = cfg;
  st.prompts = std::move(prompts);
  st.ref_params = std::move(ref_params);
  st.params = model::snapshot(st.ref_params);

  Rng norm_rng = Rng(cfg.seed).split(0);
  const corpus::PolicySampler sampler = [&](const corpus::Prompt& p, Rng& r) {
    return model::sample_response(st.params, st.model_cfg, p, st.task.max_response_len, r);
  };
  st.normalizer_pool = corpus::sample_reward_pool(sampler, st.prompts, st.task,
                                                  cfg.normalizer_samples_per_prompt, norm_rng);
  st.normalizer = corpus::fit_normalizer_from_rewards(st.normalizer_pool);
  return st;
}

StepRecord rl_step(TrainerState& state, std::span<const corpus::Prompt> batch_prompts,
                   int step_index, int epoch, bool classifier_only,
                   std::span<const model::Context> taylor_targets) {
  if (batch_prompts.empty()) throw ContractError("rl_step: empty prompt batch");
  const TrainConfig& cfg = state.cfg;
  const int k = cfg.rollouts_per_prompt;
  Rng step_rng = Rng(cfg.seed).split(1 + static_cast<std::uint64_t>(step_index));

  StepRecord rec;
  rec.step = step_index;
  rec.epoch = epoch;
  rec.classifier_only = classifier_only;
  rec.eta = cfg.learning_rate;
  rec.params_before = io::params_digest(state.params, state.model_cfg);

  for (std::size_t s = 0; s < batch_prompts.size(); ++s) {
    BatchGroup grp;
    grp.prompt = batch_prompts[s];
    grp.rollouts.reserve(static_cast<std::size_t>(k));
    std::vector<double> khats;
    khats.reserve(static_cast<std::size_t>(k));
    for (int j = 0; j < k; ++j) {
      Rng roll_rng = step_rng.split(s * static_cast<std::size_t>(k) + static_cast<std::size_t>(j));
      RolloutRecord r;
      r.response = model::sample_response(state.params, state.model_cfg, grp.prompt,
                                          state.task.max_response_len, roll_rng);
      r.raw_reward = corpus::reward(grp.prompt, r.response, state.task);
      r.norm_reward = corpus::normalize(r.raw_reward, state.normalizer);
      r.log_ratio = model::sequence_logprob(state.params, state.model_cfg, grp.prompt, r.response) -
                    model::sequence_logprob(state.ref_params, state.model_cfg, grp.prompt, r.response);
      r.khat = r.norm_reward - cfg.kl_coef * r.log_ratio;
      khats.push_back(r.khat);
      grp.rollouts.push_back(std::move(r));
    }
    const std::vector<double> adv = advantages(cfg.algo, khats);
    for (std::size_t j = 0; j < grp.rollouts.size(); ++j) grp.rollouts[j].advantage = adv[j];
    rec.batch.push_back(std::move(grp));
  }

  const ComputedStep cs = compute_step(state.params, state.model_cfg, rec.batch, classifier_only,
                                       cfg.clip_norm);
  rec.grad_norm = cs.grad_norm;
  rec.clip_scale = cs.clip_scale;

  if (!taylor_targets.empty()) {
    const std::vector<ntk::TaylorResult> tr =
        ntk::taylor_residual(state.params, state.model_cfg, to_weighted(rec.batch, 1.0), cs.grad,
                             rec.eta, cs.clip_scale, taylor_targets);
    rec.taylor_residuals.reserve(tr.size());
    for (const ntk::TaylorResult& t : tr) rec.taylor_residuals.push_back(t.residual);
  }

  grad::apply_update(state.params, cs.grad, rec.eta * cs.clip_scale);
  rec.params_after = io::params_digest(state.params, state.model_cfg);
  return rec;
}

std::vector<GroupDistance> track_groups(const model::Params& reference,
                                        const model::Params& current,
                                        const model::ModelConfig& cfg) {
  model::check_shape(reference, cfg);
  if (current.theta_phi.size() != reference.theta_phi.size() ||
      current.classifier.rows() != reference.classifier.rows() ||
      current.classifier.cols() != reference.classifier.cols())
    throw ContractError("track_groups: layout mismatch");
  std::vector<GroupDistance> out;
  const std::size_t theta_n = static_cast<std::size_t>(reference.theta_phi.size());
  for (const model::ParamGroup& g : model::layout(cfg)) {
    GroupDistance gd;
    gd.name = g.name;
    if (g.name == "classifier") {
      gd.distance = (current.classifier - reference.classifier).norm();
    } else {
      if (g.offset + g.size > theta_n) throw ContractError("track_groups: bad group range");
      gd.distance = (current.theta_phi.segment(static_cast<Eigen::Index>(g.offset),
                                               static_cast<Eigen::Index>(g.size)) -
                     reference.theta_phi.segment(static_cast<Eigen::Index>(g.offset),
                                                 static_cast<Eigen::Index>(g.size)))
                        .norm();
    }
    out.push_back(std::move(gd));
  }
  return out;
}

namespace {

double mean_first_token_entropy(const model::Params& p, const model::ModelConfig& cfg,
                                std::span<const corpus::Prompt> prompts) {
  double acc = 0.0;
  for (const corpus::Prompt& pr : prompts)
    acc += model::entropy_nats(model::next_token_dist(p, cfg, {pr, {}}));
  return acc / static_cast<double>(prompts.size());
}

}  // namespace

RunResult cf_rl_run(TrainerState& state, int cf_stage_epochs,
                    std::span<const model::Context> taylor_targets) {
  if (cf_stage_epochs < 0) throw ConfigError("cf_rl_run: cf_stage_epochs must be >= 0");
  const TrainConfig& cfg = state.cfg;

  RunResult run;
  run.checkpoints.push_back(model::snapshot(state.params));

  {  // epoch 0: state before any update, scored on the normalizer pool
    EpochRow row;
    row.epoch = 0;
    double raw = 0.0, norm = 0.0;
    for (double r : state.normalizer_pool) {
      raw += r;
      norm += corpus::normalize(r, state.normalizer);
    }
    row.mean_raw_reward = raw / static_cast<double>(state.normalizer_pool.size());
    row.mean_khat = norm / static_cast<double>(state.normalizer_pool.size());
    row.mean_kl = 0.0;
    row.mean_grad_norm = 0.0;
    row.dists = track_groups(state.ref_params, state.params, state.model_cfg);
    row.first_token_entropy = mean_first_token_entropy(state.params, state.model_cfg, state.prompts);
    run.epochs.push_back(std::move(row));
  }

  int step_index = 0;
  for (int e = 1; e <= cfg.epochs; ++e) {
    const bool mask = e <= cf_stage_epochs;
    double raw = 0.0, kh = 0.0, kl = 0.0, gn = 0.0;
    std::size_t samples = 0;
    int steps_in_epoch = 0;
    for (std::size_t at = 0; at < state.prompts.size();
         at += static_cast<std::size_t>(cfg.prompts_per_batch)) {
      const std::size_t len =
          std::min<std::size_t>(static_cast<std::size_t>(cfg.prompts_per_batch),
                                state.prompts.size() - at);
      StepRecord rec = rl_step(state, std::span(state.prompts).subspan(at, len), step_index, e,
                               mask, taylor_targets);
      for (const BatchGroup& g : rec.batch)
        for (const RolloutRecord& r : g.rollouts) {
          raw += r.raw_reward;
          kh += r.khat;
          kl += r.log_ratio;
          ++samples;
        }
      gn += rec.grad_norm;
      ++steps_in_epoch;
      ++step_index;
      run.steps.push_back(std::move(rec));
    }
    EpochRow row;
    row.epoch = e;
    row.mean_raw_reward = raw / static_cast<double>(samples);
    row.mean_khat = kh / static_cast<double>(samples);
    row.mean_kl = kl / static_cast<double>(samples);
    row.mean_grad_norm = gn / static_cast<double>(steps_in_epoch);
    row.dists = track_groups(state.ref_params, state.params, state.model_cfg);
    row.first_token_entropy = mean_first_token_entropy(state.params, state.model_cfg, state.prompts);
    run.epochs.push_back(std::move(row));
    run.checkpoints.push_back(model::snapshot(state.params));
  }
  return run;
}

GroupTrackTable build_group_track(const model::Params& reference,
                                  std::span<const model::Params> checkpoints,
                                  const model::ModelConfig& cfg) {
  if (checkpoints.empty()) throw ContractError("build_group_track: no checkpoints");
  GroupTrackTable table;
  for (const model::ParamGroup& g : model::layout(cfg)) table.groups.push_back(g.name);
  const auto rows = static_cast<Eigen::Index>(checkpoints.size());
  const auto cols = static_cast<Eigen::Index>(table.groups.size());
  table.distance = Mat::Zero(rows, cols);
  table.normalized = Mat::Zero(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const std::vector<GroupDistance> d =
        track_groups(reference, checkpoints[static_cast<std::size_t>(i)], cfg);
    for (Eigen::Index j = 0; j < cols; ++j) table.distance(i, j) = d[static_cast<std::size_t>(j)].distance;
  }
  for (Eigen::Index j = 0; j < cols; ++j) {
    const double last = table.distance(rows - 1, j);
    if (last > 0.0) table.normalized.col(j) = table.distance.col(j) / last;
  }
  return table;
}

}  // namespace ntkrl::trainer
