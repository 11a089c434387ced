#include "ntkrl/grad.hpp"

#include <cmath>

namespace ntkrl::grad {

namespace {

double act_deriv(model::Activation a, double pre) {
  if (a == model::Activation::linear) return 1.0;
  return 0.5 * (1.0 + std::tanh(0.5 * pre));  // sigmoid, softplus'
}

}  // namespace

FeatureJacobian feature_jacobian(const model::Params& p, const model::ModelConfig& cfg,
                                 const model::Context& ctx) {
  const model::Offsets o = model::offsets(cfg);
  const model::ForwardTrace tr = model::forward_features(p, cfg, ctx);
  const int D = cfg.feature_dim;
  const int h = cfg.hidden_width;

  FeatureJacobian out;
  out.context_prompt_id = ctx.prompt.id;
  out.J = Mat::Zero(D, o.theta_total);

  const Vec& z_last = (cfg.hidden_depth == 2) ? tr.act2 : tr.act1;
  const auto s = Eigen::Map<const Vec>(p.theta_phi.data() + o.scale, D);

  Vec delta(D);  // d phi_d / d z_last_d
  for (int d = 0; d < D; ++d) delta[d] = act_deriv(cfg.activation, tr.gated[d]) * s[d];

  // final_norm: d phi_d / d s_d = act'(g_d) * z_last_d
  for (int d = 0; d < D; ++d)
    out.J(d, o.scale + d) = act_deriv(cfg.activation, tr.gated[d]) * z_last[d];

  Mat M;  // d phi / d pooled, D x h
  if (cfg.hidden_depth == 1) {
    const auto W1 = Eigen::Map<const RowMat>(p.theta_phi.data() + o.w1, o.out1, o.in1);
    Vec d1(D);  // d phi_d / d pre1_d
    for (int d = 0; d < D; ++d) d1[d] = delta[d] * (1.0 - tr.act1[d] * tr.act1[d]);
    for (int d = 0; d < D; ++d) {
      for (int i = 0; i < h; ++i)
        out.J(d, o.w1 + static_cast<Eigen::Index>(d) * o.in1 + i) = d1[d] * tr.pooled[i];
      out.J(d, o.b1 + d) = d1[d];
    }
    M = d1.asDiagonal() * W1;
  } else {
    const auto W1 = Eigen::Map<const RowMat>(p.theta_phi.data() + o.w1, o.out1, o.in1);
    const auto W2 = Eigen::Map<const RowMat>(p.theta_phi.data() + o.w2, o.out2, o.in2);
    Vec d2(D);  // d phi_d / d pre2_d
    for (int d = 0; d < D; ++d) d2[d] = delta[d] * (1.0 - tr.act2[d] * tr.act2[d]);
    for (int d = 0; d < D; ++d) {
      for (int i = 0; i < h; ++i)
        out.J(d, o.w2 + static_cast<Eigen::Index>(d) * o.in2 + i) = d2[d] * tr.act1[i];
      out.J(d, o.b2 + d) = d2[d];
    }
    Mat Q(D, h);  // d phi / d pre1
    for (int d = 0; d < D; ++d)
      for (int i = 0; i < h; ++i)
        Q(d, i) = d2[d] * W2(d, i) * (1.0 - tr.act1[i] * tr.act1[i]);
    for (int d = 0; d < D; ++d)
      for (int i = 0; i < h; ++i) {
        for (int j = 0; j < h; ++j)
          out.J(d, o.w1 + static_cast<Eigen::Index>(i) * o.in1 + j) = Q(d, i) * tr.pooled[j];
        out.J(d, o.b1 + i) = Q(d, i);
      }
    M = Q * W1;
  }

  // embeddings: pooled = (1/w) sum over window, so token v contributes
  // count_v / w on its row.
  const double w = static_cast<double>(tr.window.size());
  std::vector<int> counts(static_cast<std::size_t>(cfg.vocab_size) + 1, 0);
  for (TokenId t : tr.window) ++counts[static_cast<std::size_t>(t)];
  for (int v = 1; v <= cfg.vocab_size; ++v) {
    if (counts[static_cast<std::size_t>(v)] == 0) continue;
    const double cf = counts[static_cast<std::size_t>(v)] / w;
    for (int d = 0; d < D; ++d)
      for (int j = 0; j < h; ++j)
        out.J(d, o.emb + static_cast<Eigen::Index>(v - 1) * h + j) = cf * M(d, j);
  }
  return out;
}

GradVector logprob_grad(const model::Params& p, const model::ModelConfig& cfg,
                        const corpus::Prompt& prompt, std::span<const TokenId> response) {
  if (response.empty()) throw ContractError("logprob_grad: empty response");
  const model::Offsets o = model::offsets(cfg);
  const Eigen::Index P = o.theta_total;
  const Eigen::Index WN = static_cast<Eigen::Index>(cfg.vocab_size) * cfg.feature_dim;
  GradVector g = GradVector::Zero(P + WN);
  auto Wblock = Eigen::Map<RowMat>(g.data() + P, cfg.vocab_size, cfg.feature_dim);

  model::Context ctx{prompt, {}};
  for (TokenId y : response) {
    const FeatureJacobian fj = feature_jacobian(p, cfg, ctx);
    const Vec phi = model::features(p, cfg, ctx);
    Vec logits = p.classifier * phi;
    const double m = logits.maxCoeff();
    Vec pi = (logits.array() - m).exp();
    pi /= pi.sum();
    Vec d = -pi;
    d[y - 1] += 1.0;

    Wblock.noalias() += d * phi.transpose();
    g.head(P).noalias() += fj.J.transpose() * (p.classifier.transpose() * d);
    ctx.prefix.push_back(y);
  }
  return g;
}

GradVector policy_gradient(const model::Params& p, const model::ModelConfig& cfg,
                           std::span<const WeightedGroup> batch) {
  if (batch.empty()) throw ContractError("policy_gradient: empty batch");
  const model::Offsets o = model::offsets(cfg);
  const Eigen::Index total =
      o.theta_total + static_cast<Eigen::Index>(cfg.vocab_size) * cfg.feature_dim;
  GradVector g = GradVector::Zero(total);
  const double n_inv = 1.0 / static_cast<double>(batch.size());
  for (const WeightedGroup& grp : batch) {
    if (grp.items.empty()) throw ContractError("policy_gradient: group without rollouts");
    const double k_inv = 1.0 / static_cast<double>(grp.items.size());
    for (const WeightedResponse& wr : grp.items) {
      if (!std::isfinite(wr.weight)) throw NumericError("policy_gradient: non-finite weight");
      if (wr.weight == 0.0) continue;
      g.noalias() += (n_inv * k_inv * wr.weight) * logprob_grad(p, cfg, grp.prompt, wr.response);
    }
  }
  return g;
}

void apply_update(model::Params& p, const GradVector& g, double scale) {
  if (scale == 0.0) return;
  const Eigen::Index P = p.theta_phi.size();
  const Eigen::Index WN = p.classifier.size();
  if (g.size() != P + WN) throw ContractError("apply_update: gradient/params layout mismatch");
  p.theta_phi += scale * g.head(P);
  Eigen::Map<RowMat>(p.classifier.data(), p.classifier.rows(), p.classifier.cols()) +=
      scale * Eigen::Map<const RowMat>(g.data() + P, p.classifier.rows(), p.classifier.cols());
}

GradVector fd_grad(const std::function<double(const model::Params&)>& f, model::Params p,
                   double step) {
  if (!(step > 0.0)) throw ContractError("fd_grad: step must be positive");
  const std::size_t n = model::param_count(p);
  GradVector g(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const double x0 = model::get_coord(p, i);
    model::set_coord(p, i, x0 + step);
    const double fp = f(p);
    model::set_coord(p, i, x0 - step);
    const double fm = f(p);
    model::set_coord(p, i, x0);
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NumericError("fd_grad: non-finite objective at coordinate " + std::to_string(i));
    g[static_cast<Eigen::Index>(i)] = (fp - fm) / (2.0 * step);
  }
  return g;
}

Mat fd_feature_jacobian(const model::Params& p, const model::ModelConfig& cfg,
                        const model::Context& ctx, double step) {
  if (!(step > 0.0)) throw ContractError("fd_feature_jacobian: step must be positive");
  model::Params work = model::snapshot(p);
  const Eigen::Index P = work.theta_phi.size();
  Mat J(cfg.feature_dim, P);
  for (Eigen::Index i = 0; i < P; ++i) {
    const double x0 = work.theta_phi[i];
    work.theta_phi[i] = x0 + step;
    const Vec fp = model::features(work, cfg, ctx);
    work.theta_phi[i] = x0 - step;
    const Vec fm = model::features(work, cfg, ctx);
    work.theta_phi[i] = x0;
    if (!fp.allFinite() || !fm.allFinite())
      throw NumericError("fd_feature_jacobian: non-finite features at coordinate " +
                         std::to_string(i));
    J.col(i) = (fp - fm) / (2.0 * step);
  }
  return J;
}

double score_expectation_check(const model::Params& p, const model::ModelConfig& cfg,
                               const corpus::Prompt& prompt, int response_len) {
  if (response_len < 1) throw ContractError("score_expectation_check: response_len must be >= 1");
  double count = std::pow(static_cast<double>(cfg.vocab_size), response_len);
  if (count > 1e4) throw ConfigError("score_expectation_check: V^L too large to enumerate");

  const model::Offsets o = model::offsets(cfg);
  const Eigen::Index total =
      o.theta_total + static_cast<Eigen::Index>(cfg.vocab_size) * cfg.feature_dim;
  Vec acc = Vec::Zero(total);

  std::vector<TokenId> resp(static_cast<std::size_t>(response_len), 1);
  while (true) {
    const double w = std::exp(model::sequence_logprob(p, cfg, prompt, resp));
    acc += w * logprob_grad(p, cfg, prompt, resp);
    int pos = response_len - 1;
    while (pos >= 0 && resp[static_cast<std::size_t>(pos)] == cfg.vocab_size) {
      resp[static_cast<std::size_t>(pos)] = 1;
      --pos;
    }
    if (pos < 0) break;
    ++resp[static_cast<std::size_t>(pos)];
  }
  return acc.cwiseAbs().maxCoeff();
}

double rel_err_max(const Vec& analytic, const Vec& numeric) {
  if (analytic.size() != numeric.size()) throw ContractError("rel_err_max: size mismatch");
  double worst = 0.0;
  for (Eigen::Index i = 0; i < analytic.size(); ++i) {
    const double denom = std::max(1.0, std::abs(analytic[i]));
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
  }
  return worst;
}

}  // namespace ntkrl::grad
