#include "ntkrl/verify.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "ntkrl/ntk.hpp"

namespace ntkrl::cli {

namespace {

constexpr double kFdStep = 1e-5;

// Random-but-reproducible parameters: seeded init plus a uniform perturbation
// so biases and the final scale leave their symmetric starting points.
model::Params draw_params(const model::ModelConfig& cfg, Rng& rng) {
  model::ModelConfig c = cfg;
  c.seed = rng.next_u64();
  model::Params p = model::init_params(c);
  for (std::size_t i = 0; i < model::param_count(p); ++i)
    model::set_coord(p, i, model::get_coord(p, i) + rng.uniform(-0.3, 0.3));
  return p;
}

corpus::Prompt draw_prompt(const corpus::TaskSpec& task, Rng& rng, int id) {
  corpus::Prompt p;
  p.id = id;
  const int len =
      task.min_prompt_len + rng.uniform_int(task.max_prompt_len - task.min_prompt_len + 1);
  for (int i = 0; i < len; ++i)
    p.tokens.push_back(static_cast<TokenId>(1 + rng.uniform_int(task.vocab.size)));
  return p;
}

model::Context draw_context(const corpus::TaskSpec& task, Rng& rng, int id) {
  model::Context ctx{draw_prompt(task, rng, id), {}};
  const int prefix_len = rng.uniform_int(task.max_response_len);
  for (int i = 0; i < prefix_len; ++i)
    ctx.prefix.push_back(static_cast<TokenId>(1 + rng.uniform_int(task.vocab.size)));
  return ctx;
}

std::vector<TokenId> draw_response(const corpus::TaskSpec& task, Rng& rng, int max_len) {
  const int len = 1 + rng.uniform_int(max_len);
  std::vector<TokenId> r;
  for (int i = 0; i < len; ++i)
    r.push_back(static_cast<TokenId>(1 + rng.uniform_int(task.vocab.size)));
  return r;
}

// Finite-difference Jacobian of the logits over the full parameter vector.
Mat fd_logit_jacobian(const model::Params& p, const model::ModelConfig& cfg,
                      const model::Context& ctx) {
  const std::size_t n = model::param_count(p);
  Mat J(cfg.vocab_size, static_cast<Eigen::Index>(n));
  for (int v = 0; v < cfg.vocab_size; ++v) {
    const auto f = [&, v](const model::Params& q) {
      return (q.classifier * model::features(q, cfg, ctx))(v);
    };
    J.row(v) = grad::fd_grad(f, p, kFdStep).transpose();
  }
  return J;
}

}  // namespace

CheckResult check_logprob_grad_fd(const RunConfig& cfg, int draws) {
  Rng rng(20240811);
  double worst = 0.0;
  for (int i = 0; i < draws; ++i) {
    Rng sub = rng.split(static_cast<std::uint64_t>(i));
    const model::Params p = draw_params(cfg.model, sub);
    const corpus::Prompt prompt = draw_prompt(cfg.task, sub, i);
    const std::vector<TokenId> resp = draw_response(cfg.task, sub, 4);
    const grad::GradVector analytic = grad::logprob_grad(p, cfg.model, prompt, resp);
    const grad::GradVector numeric = grad::fd_grad(
        [&](const model::Params& q) { return model::sequence_logprob(q, cfg.model, prompt, resp); },
        p, kFdStep);
    worst = std::max(worst, grad::rel_err_max(analytic, numeric));
  }
  return {"grad.logprob_fd", worst <= 1e-4, worst, 1e-4,
          std::to_string(draws) + " draws, central step 1e-5"};
}

CheckResult check_feature_jacobian_fd(const RunConfig& cfg, int draws) {
  Rng rng(20240812);
  double worst = 0.0;
  for (int i = 0; i < draws; ++i) {
    Rng sub = rng.split(static_cast<std::uint64_t>(i));
    const model::Params p = draw_params(cfg.model, sub);
    const model::Context ctx = draw_context(cfg.task, sub, i);
    const Mat analytic = grad::feature_jacobian(p, cfg.model, ctx).J;
    const Mat numeric = grad::fd_feature_jacobian(p, cfg.model, ctx, kFdStep);
    for (Eigen::Index r = 0; r < analytic.rows(); ++r)
      worst = std::max(worst,
                       grad::rel_err_max(analytic.row(r).transpose(), numeric.row(r).transpose()));
  }
  return {"grad.feature_jacobian_fd", worst <= 1e-4, worst, 1e-4,
          std::to_string(draws) + " draws, central step 1e-5"};
}

CheckResult check_policy_gradient_fd(const RunConfig& cfg, int draws) {
  Rng rng(20240813);
  double worst = 0.0;
  for (int i = 0; i < draws; ++i) {
    Rng sub = rng.split(static_cast<std::uint64_t>(i));
    const model::Params p = draw_params(cfg.model, sub);
    std::vector<grad::WeightedGroup> batch;
    for (int g = 0; g < 2; ++g) {
      grad::WeightedGroup grp;
      grp.prompt = draw_prompt(cfg.task, sub, 10 * i + g);
      for (int j = 0; j < 2; ++j)
        grp.items.push_back({draw_response(cfg.task, sub, 3), sub.uniform(-2.0, 2.0)});
      batch.push_back(std::move(grp));
    }
    const grad::GradVector analytic = grad::policy_gradient(p, cfg.model, batch);
    const grad::GradVector numeric = grad::fd_grad(
        [&](const model::Params& q) {
          double acc = 0.0;
          for (const grad::WeightedGroup& grp : batch) {
            double inner = 0.0;
            for (const grad::WeightedResponse& wr : grp.items)
              inner += wr.weight * model::sequence_logprob(q, cfg.model, grp.prompt, wr.response);
            acc += inner / static_cast<double>(grp.items.size());
          }
          return acc / static_cast<double>(batch.size());
        },
        p, kFdStep);
    worst = std::max(worst, grad::rel_err_max(analytic, numeric));
  }
  return {"grad.policy_gradient_fd", worst <= 1e-5, worst, 1e-5,
          std::to_string(draws) + " draws vs weighted surrogate"};
}

CheckResult check_decomposition_fd(const RunConfig& cfg, int draws) {
  Rng rng(20240814);
  double worst = 0.0;
  for (int i = 0; i < draws; ++i) {
    Rng sub = rng.split(static_cast<std::uint64_t>(i));
    const model::Params p = draw_params(cfg.model, sub);
    const model::Context a = draw_context(cfg.task, sub, 2 * i);
    const model::Context b = draw_context(cfg.task, sub, 2 * i + 1);
    const ntk::KernelBlock block =
        ntk::kernel_block(p, cfg.model, a, b, grad::feature_jacobian(p, cfg.model, a),
                          grad::feature_jacobian(p, cfg.model, b));
    const Mat analytic = block.total();
    const Mat fd = fd_logit_jacobian(p, cfg.model, a) * fd_logit_jacobian(p, cfg.model, b).transpose();
    for (Eigen::Index r = 0; r < analytic.rows(); ++r)
      worst = std::max(worst,
                       grad::rel_err_max(analytic.row(r).transpose(), fd.row(r).transpose()));
  }
  return {"ntk.decomposition_fd", worst <= 1e-4, worst, 1e-4,
          std::to_string(draws) + " draws vs fd logit-Jacobian product"};
}

CheckResult check_update_additivity(const RunConfig& cfg, int draws) {
  Rng rng(20240815);
  double worst = 0.0;
  for (int i = 0; i < draws; ++i) {
    Rng sub = rng.split(static_cast<std::uint64_t>(i));
    const model::Params p = draw_params(cfg.model, sub);
    const model::Context a = draw_context(cfg.task, sub, 2 * i);
    const model::Context b = draw_context(cfg.task, sub, 2 * i + 1);
    const ntk::KernelBlock block =
        ntk::kernel_block(p, cfg.model, a, b, grad::feature_jacobian(p, cfg.model, a),
                          grad::feature_jacobian(p, cfg.model, b));
    const ntk::CenterOp T{model::next_token_dist(p, cfg.model, a)};
    const model::DistVector pi_b = model::next_token_dist(p, cfg.model, b);
    const ntk::ErrorDir d =
        ntk::error_dir(pi_b, static_cast<TokenId>(1 + sub.uniform_int(cfg.model.vocab_size)));
    const Vec sum = ntk::u_rep(block, T, d).v + ntk::u_grad(block, T, d).v;
    const Vec direct = ntk::u_combined(block, T, d).v;
    worst = std::max(worst, (sum - direct).cwiseAbs().maxCoeff());
  }
  return {"ntk.additivity", worst <= 1e-12, worst, 1e-12,
          std::to_string(draws) + " draws, u_rep + u_grad vs T K d"};
}

CheckResult check_prop2_argmax(const RunConfig& cfg, int triples) {
  model::ModelConfig mc = cfg.model;
  mc.activation = model::Activation::nonneg;  // realizes <phi, phi'> >= 0
  Rng rng(20240816);
  int matched = 0;
  for (int i = 0; i < triples; ++i) {
    Rng sub = rng.split(static_cast<std::uint64_t>(i));
    const model::Params p = draw_params(mc, sub);
    const model::Context target = draw_context(cfg.task, sub, 2 * i);
    const model::Context source = draw_context(cfg.task, sub, 2 * i + 1);
    const ntk::KernelBlock block =
        ntk::kernel_block(p, mc, target, source, grad::feature_jacobian(p, mc, target),
                          grad::feature_jacobian(p, mc, source));
    const ntk::CenterOp T{model::next_token_dist(p, mc, target)};
    const model::DistVector pi_s = model::next_token_dist(p, mc, source);
    const TokenId y = model::sample_token(pi_s, sub);
    const ntk::UpdateVector u = ntk::u_rep(block, T, ntk::error_dir(pi_s, y));
    Eigen::Index argmax = 0;
    u.v.maxCoeff(&argmax);
    if (argmax == y - 1) ++matched;
  }
  const double frac = static_cast<double>(matched) / static_cast<double>(triples);
  return {"ntk.prop2_argmax", matched == triples, frac, 1.0,
          std::to_string(matched) + "/" + std::to_string(triples) + " triples (nonneg activation)"};
}

namespace {

struct TaylorSetup {
  model::Params params;
  trainer::Batch batch;
  trainer::ComputedStep step;
  std::vector<model::Context> targets;
};

// Builds a representative mid-training step on the configured task: init
// params, fit the normalizer, sample one batch with the trainer's own
// machinery, compute (but do not apply) the update.
TaylorSetup taylor_setup(const RunConfig& cfg) {
  std::vector<corpus::Prompt> prompts = corpus::generate_prompts(cfg.task);
  trainer::TrainerState state = trainer::make_state(
      cfg.model, cfg.task, cfg.train, prompts, model::init_params(cfg.model));
  const std::size_t batch_len =
      std::min<std::size_t>(static_cast<std::size_t>(cfg.train.prompts_per_batch),
                            state.prompts.size());
  std::vector<model::Context> targets;
  for (std::size_t i = 0; i < std::min<std::size_t>(3, state.prompts.size()); ++i)
    targets.push_back({state.prompts[i], {}});

  // one trainer step from the initial state, then discard the mutation
  model::Params before = model::snapshot(state.params);
  trainer::StepRecord rec =
      trainer::rl_step(state, std::span(state.prompts).subspan(0, batch_len), 0, 1, false, {});

  TaylorSetup setup;
  setup.params = std::move(before);
  setup.batch = std::move(rec.batch);
  setup.step = trainer::compute_step(setup.params, cfg.model, setup.batch, false,
                                     cfg.train.clip_norm);
  setup.targets = std::move(targets);
  return setup;
}

double worst_residual(const TaylorSetup& s, const model::ModelConfig& mc, double eta,
                      double* worst_rel = nullptr) {
  const std::vector<ntk::TaylorResult> res =
      ntk::taylor_residual(s.params, mc, trainer::to_weighted(s.batch, 1.0), s.step.grad, eta,
                           s.step.clip_scale, s.targets);
  double worst = 0.0, rel = 0.0;
  for (const ntk::TaylorResult& r : res) {
    worst = std::max(worst, r.residual);
    rel = std::max(rel, r.rel);
  }
  if (worst_rel) *worst_rel = rel;
  return worst;
}

}  // namespace

CheckResult check_taylor_ratio(const RunConfig& cfg) {
  const TaylorSetup setup = taylor_setup(cfg);
  const double etas[4] = {1e-4, 5e-5, 2.5e-5, 1.25e-5};
  double res[4];
  for (int i = 0; i < 4; ++i) res[i] = worst_residual(setup, cfg.model, etas[i]);
  double lo = HUGE_VAL, hi = 0.0;
  std::ostringstream detail;
  detail << "ratios";
  for (int i = 0; i + 1 < 4; ++i) {
    const double ratio = res[i] / res[i + 1];
    lo = std::min(lo, ratio);
    hi = std::max(hi, ratio);
    detail << ' ' << fmt_double(ratio);
  }
  const bool pass = lo >= 3.2 && hi <= 4.8;
  return {"ntk.taylor_ratio", pass, lo, 3.2, detail.str() + " (window [3.2, 4.8])"};
}

CheckResult check_taylor_relative(const RunConfig& cfg) {
  const TaylorSetup setup = taylor_setup(cfg);
  double rel = 0.0;
  worst_residual(setup, cfg.model, 1e-4, &rel);
  return {"ntk.taylor_relative", rel <= 0.05, rel, 0.05, "eta 1e-4, worst target"};
}

CheckResult check_score_expectation() {
  model::ModelConfig mc;
  mc.vocab_size = 3;
  mc.feature_dim = 2;
  mc.context_window = 2;
  mc.hidden_width = 3;
  mc.hidden_depth = 1;
  corpus::TaskSpec task;
  task.vocab.size = 3;
  task.min_prompt_len = 1;
  task.max_prompt_len = 3;

  Rng rng(20240817);
  double worst = 0.0;
  for (int i = 0; i < 5; ++i) {
    Rng sub = rng.split(static_cast<std::uint64_t>(i));
    const model::Params p = draw_params(mc, sub);
    const corpus::Prompt prompt = draw_prompt(task, sub, i);
    worst = std::max(worst, grad::score_expectation_check(p, mc, prompt, 2));
  }
  return {"grad.score_expectation", worst <= 1e-8, worst, 1e-8, "V=3, L=2, 5 parameter draws"};
}

std::vector<CheckResult> run_verify_suite(const RunConfig& cfg) {
  validate(cfg);
  std::vector<CheckResult> results;
  results.push_back(check_logprob_grad_fd(cfg, 20));
  results.push_back(check_feature_jacobian_fd(cfg, 20));
  results.push_back(check_policy_gradient_fd(cfg, 5));
  results.push_back(check_decomposition_fd(cfg, 20));
  results.push_back(check_update_additivity(cfg, 20));
  results.push_back(check_prop2_argmax(cfg, 1000));
  results.push_back(check_taylor_ratio(cfg));
  results.push_back(check_taylor_relative(cfg));
  results.push_back(check_score_expectation());
  return results;
}

void print_check_table(std::span<const CheckResult> results, std::ostream& out) {
  std::size_t width = 0;
  for (const CheckResult& r : results) width = std::max(width, r.name.size());
  for (const CheckResult& r : results) {
    out << (r.pass ? "PASS  " : "FAIL  ") << std::left << std::setw(static_cast<int>(width) + 2)
        << r.name << " measured " << fmt_double(r.measured) << "  threshold "
        << fmt_double(r.threshold);
    if (!r.detail.empty()) out << "  [" << r.detail << "]";
    out << '\n';
  }
}

}  // namespace ntkrl::cli
