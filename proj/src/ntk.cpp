#include "ntkrl/ntk.hpp"

#include <cmath>
#include <ostream>

namespace ntkrl::ntk {

Vec center_apply(const CenterOp& T, const Vec& a) {
  if (T.pi.p.size() != a.size()) throw ContractError("center_apply: size mismatch");
  const double shift = T.pi.p.dot(a);
  return a.array() - shift;
}

ErrorDir error_dir(const model::DistVector& pi, TokenId y) {
  if (y < 1 || y > pi.p.size()) throw ContractError("error_dir: token out of range");
  ErrorDir e;
  e.token = y;
  e.d = -pi.p;
  e.d[y - 1] += 1.0;
  return e;
}

Mat KernelBlock::total() const {
  Mat t = grad;
  t.diagonal().array() += rep_scalar;
  return t;
}

KernelBlock kernel_block(const model::Params& p, const model::ModelConfig& cfg,
                         const model::Context& ctx_a, const model::Context& ctx_b,
                         const grad::FeatureJacobian& Ja, const grad::FeatureJacobian& Jb) {
  const model::Offsets o = model::offsets(cfg);
  if (Ja.J.cols() != o.theta_total || Jb.J.cols() != o.theta_total ||
      Ja.J.rows() != cfg.feature_dim || Jb.J.rows() != cfg.feature_dim)
    throw ConfigError("kernel_block: Jacobian shape does not match config");
  KernelBlock k;
  k.rep_scalar = model::features(p, cfg, ctx_a).dot(model::features(p, cfg, ctx_b));
  const Mat Aa = p.classifier * Ja.J;  // V x |theta|
  const Mat Ab = p.classifier * Jb.J;
  k.grad = Aa * Ab.transpose();
  return k;
}

UpdateVector u_rep(const KernelBlock& k, const CenterOp& T, const ErrorDir& d) {
  return {k.rep_scalar * center_apply(T, d.d), Component::rep};
}

UpdateVector u_grad(const KernelBlock& k, const CenterOp& T, const ErrorDir& d) {
  return {center_apply(T, k.grad * d.d), Component::grad};
}

UpdateVector u_combined(const KernelBlock& k, const CenterOp& T, const ErrorDir& d) {
  return {center_apply(T, k.total() * d.d), Component::combined};
}

namespace {

Vec log_dist(const model::Params& p, const model::ModelConfig& cfg, const model::Context& ctx) {
  const Vec phi = model::features(p, cfg, ctx);
  Vec logits = p.classifier * phi;
  if (!logits.allFinite())
    throw NumericError("non-finite logits for prompt " + std::to_string(ctx.prompt.id));
  const double m = logits.maxCoeff();
  const double lse = std::log((logits.array() - m).exp().sum()) + m;
  return logits.array() - lse;
}

}  // namespace

Vec predicted_delta_logpi(const model::Params& p, const model::ModelConfig& cfg,
                          std::span<const grad::WeightedGroup> batch, double eta_scale,
                          const model::Context& target) {
  if (batch.empty()) throw ContractError("predicted_delta_logpi: empty batch");
  const CenterOp T{model::next_token_dist(p, cfg, target)};
  const Vec phi_t = model::features(p, cfg, target);
  const grad::FeatureJacobian Jt = grad::feature_jacobian(p, cfg, target);
  const Mat At = p.classifier * Jt.J;  // V x |theta|

  Vec acc = Vec::Zero(cfg.vocab_size);
  const double n_inv = 1.0 / static_cast<double>(batch.size());
  for (const grad::WeightedGroup& grp : batch) {
    if (grp.items.empty()) throw ContractError("predicted_delta_logpi: group without rollouts");
    const double k_inv = 1.0 / static_cast<double>(grp.items.size());
    for (const grad::WeightedResponse& wr : grp.items) {
      if (wr.weight == 0.0) continue;
      model::Context ctx{grp.prompt, {}};
      for (TokenId y : wr.response) {
        const model::DistVector pi_s = model::next_token_dist(p, cfg, ctx);
        const ErrorDir d = error_dir(pi_s, y);
        const Vec phi_s = model::features(p, cfg, ctx);
        const grad::FeatureJacobian Js = grad::feature_jacobian(p, cfg, ctx);
        Vec Kd = phi_t.dot(phi_s) * d.d;
        Kd.noalias() += At * (Js.J.transpose() * (p.classifier.transpose() * d.d));
        acc += (n_inv * k_inv * wr.weight) * center_apply(T, Kd);
        ctx.prefix.push_back(y);
      }
    }
  }
  return eta_scale * acc;
}

std::vector<TaylorResult> taylor_residual(const model::Params& before,
                                          const model::ModelConfig& cfg,
                                          std::span<const grad::WeightedGroup> batch,
                                          const grad::GradVector& g, double eta,
                                          double clip_scale,
                                          std::span<const model::Context> targets) {
  model::Params after = model::snapshot(before);
  grad::apply_update(after, g, eta * clip_scale);

  std::vector<TaylorResult> out;
  out.reserve(targets.size());
  for (const model::Context& t : targets) {
    TaylorResult r;
    r.actual = log_dist(after, cfg, t) - log_dist(before, cfg, t);
    r.predicted = predicted_delta_logpi(before, cfg, batch, eta * clip_scale, t);
    r.residual = (r.actual - r.predicted).cwiseAbs().maxCoeff();
    const double scale = r.actual.cwiseAbs().maxCoeff();
    r.rel = (scale > 0.0) ? r.residual / scale : (r.residual > 0.0 ? HUGE_VAL : 0.0);
    out.push_back(std::move(r));
  }
  return out;
}

namespace {

const char* component_name(Component c) {
  switch (c) {
    case Component::rep: return "u_rep";
    case Component::grad: return "u_grad";
    case Component::combined: return "u_combined";
  }
  return "?";
}

}  // namespace

void write_vector_csv_header(std::ostream& out) {
  out << "target_ctx_id,source_ctx_id,position,component,v,value\n";
}

void append_update_vector_csv(std::ostream& out, int target_ctx_id, int source_ctx_id,
                              int position, const UpdateVector& u) {
  for (Eigen::Index v = 0; v < u.v.size(); ++v)
    out << target_ctx_id << ',' << source_ctx_id << ',' << position << ','
        << component_name(u.role) << ',' << (v + 1) << ',' << fmt_double(u.v[v]) << '\n';
}

void append_kernel_block_csv(std::ostream& out, int target_ctx_id, int source_ctx_id,
                             int position, const KernelBlock& k) {
  out << target_ctx_id << ',' << source_ctx_id << ',' << position << ",rep_scalar,0,"
      << fmt_double(k.rep_scalar) << '\n';
  const Mat total = k.total();
  for (Eigen::Index r = 0; r < k.grad.rows(); ++r)
    for (Eigen::Index c = 0; c < k.grad.cols(); ++c) {
      const Eigen::Index flat = r * k.grad.cols() + c;
      out << target_ctx_id << ',' << source_ctx_id << ',' << position << ",grad," << flat << ','
          << fmt_double(k.grad(r, c)) << '\n';
    }
  for (Eigen::Index r = 0; r < total.rows(); ++r)
    for (Eigen::Index c = 0; c < total.cols(); ++c) {
      const Eigen::Index flat = r * total.cols() + c;
      out << target_ctx_id << ',' << source_ctx_id << ',' << position << ",total," << flat << ','
          << fmt_double(total(r, c)) << '\n';
    }
}

}  // namespace ntkrl::ntk
