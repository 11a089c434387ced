#include "ntkrl/model.hpp"

#include <cmath>

namespace ntkrl::model {

void validate(const ModelConfig& cfg) {
  corpus::validate(corpus::Vocab{cfg.vocab_size});
  if (cfg.feature_dim < 1 || cfg.feature_dim > 64)
    throw ConfigError("feature_dim must be in [1, 64]");
  if (cfg.context_window < 1) throw ConfigError("context_window must be >= 1");
  if (cfg.hidden_width < 1 || cfg.hidden_width > 64)
    throw ConfigError("hidden_width must be in [1, 64]");
  if (cfg.hidden_depth != 1 && cfg.hidden_depth != 2)
    throw ConfigError("hidden_depth must be 1 or 2");
}

Offsets offsets(const ModelConfig& cfg) {
  Offsets o;
  const Eigen::Index V = cfg.vocab_size, D = cfg.feature_dim, h = cfg.hidden_width;
  o.emb = 0;
  Eigen::Index at = V * h;
  if (cfg.hidden_depth == 1) {
    o.in1 = cfg.hidden_width;
    o.out1 = cfg.feature_dim;
  } else {
    o.in1 = cfg.hidden_width;
    o.out1 = cfg.hidden_width;
    o.in2 = cfg.hidden_width;
    o.out2 = cfg.feature_dim;
  }
  o.w1 = at;
  at += static_cast<Eigen::Index>(o.out1) * o.in1;
  o.b1 = at;
  at += o.out1;
  if (cfg.hidden_depth == 2) {
    o.w2 = at;
    at += static_cast<Eigen::Index>(o.out2) * o.in2;
    o.b2 = at;
    at += o.out2;
  }
  o.scale = at;
  at += D;
  o.theta_total = at;
  return o;
}

std::size_t theta_size(const ModelConfig& cfg) {
  return static_cast<std::size_t>(offsets(cfg).theta_total);
}

std::vector<ParamGroup> layout(const ModelConfig& cfg) {
  const Offsets o = offsets(cfg);
  std::vector<ParamGroup> g;
  g.push_back({"embeddings", 0, static_cast<std::size_t>(o.w1)});
  g.push_back({"hidden_1", static_cast<std::size_t>(o.w1),
               static_cast<std::size_t>(o.out1) * o.in1 + o.out1});
  if (cfg.hidden_depth == 2)
    g.push_back({"hidden_2", static_cast<std::size_t>(o.w2),
                 static_cast<std::size_t>(o.out2) * o.in2 + o.out2});
  g.push_back({"final_norm", static_cast<std::size_t>(o.scale),
               static_cast<std::size_t>(cfg.feature_dim)});
  g.push_back({"classifier", static_cast<std::size_t>(o.theta_total),
               static_cast<std::size_t>(cfg.vocab_size) * cfg.feature_dim});
  return g;
}

namespace {

// Views into the flat theta vector. Weight matrices are stored row-major.
Eigen::Map<const RowMat> emb_view(const Vec& t, const ModelConfig& cfg, const Offsets& o) {
  return {t.data() + o.emb, cfg.vocab_size, cfg.hidden_width};
}
Eigen::Map<const RowMat> w1_view(const Vec& t, const Offsets& o) {
  return {t.data() + o.w1, o.out1, o.in1};
}
Eigen::Map<const Vec> b1_view(const Vec& t, const Offsets& o) {
  return {t.data() + o.b1, o.out1};
}
Eigen::Map<const RowMat> w2_view(const Vec& t, const Offsets& o) {
  return {t.data() + o.w2, o.out2, o.in2};
}
Eigen::Map<const Vec> b2_view(const Vec& t, const Offsets& o) {
  return {t.data() + o.b2, o.out2};
}
Eigen::Map<const Vec> scale_view(const Vec& t, const ModelConfig& cfg, const Offsets& o) {
  return {t.data() + o.scale, cfg.feature_dim};
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

}  // namespace

Params init_params(const ModelConfig& cfg) {
  validate(cfg);
  const Offsets o = offsets(cfg);
  Rng rng(cfg.seed);
  Params p;
  p.theta_phi = Vec::Zero(o.theta_total);

  auto fill_uniform = [](Rng r, double bound, double* dst, Eigen::Index n) {
    for (Eigen::Index i = 0; i < n; ++i) dst[i] = r.uniform(-bound, bound);
  };
  fill_uniform(rng.split(0), 1.0 / std::sqrt(static_cast<double>(cfg.hidden_width)),
               p.theta_phi.data() + o.emb, static_cast<Eigen::Index>(cfg.vocab_size) * cfg.hidden_width);
  fill_uniform(rng.split(1), 1.0 / std::sqrt(static_cast<double>(o.in1)),
               p.theta_phi.data() + o.w1, static_cast<Eigen::Index>(o.out1) * o.in1);
  // biases start at zero
  if (cfg.hidden_depth == 2)
    fill_uniform(rng.split(2), 1.0 / std::sqrt(static_cast<double>(o.in2)),
                 p.theta_phi.data() + o.w2, static_cast<Eigen::Index>(o.out2) * o.in2);
  p.theta_phi.segment(o.scale, cfg.feature_dim).setOnes();

  p.classifier = RowMat(cfg.vocab_size, cfg.feature_dim);
  {
    Rng r = rng.split(3);
    const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.feature_dim));
    for (Eigen::Index i = 0; i < p.classifier.rows(); ++i)
      for (Eigen::Index j = 0; j < p.classifier.cols(); ++j)
        p.classifier(i, j) = r.uniform(-bound, bound);
  }
  return p;
}

Params snapshot(const Params& p) { return p; }

void check_shape(const Params& p, const ModelConfig& cfg) {
  const Offsets o = offsets(cfg);
  if (p.theta_phi.size() != o.theta_total)
    throw ConfigError("params/config mismatch: theta_phi has " +
                      std::to_string(p.theta_phi.size()) + " entries, layout wants " +
                      std::to_string(o.theta_total));
  if (p.classifier.rows() != cfg.vocab_size || p.classifier.cols() != cfg.feature_dim)
    throw ConfigError("params/config mismatch: classifier shape");
}

std::size_t param_count(const Params& p) {
  return static_cast<std::size_t>(p.theta_phi.size() + p.classifier.size());
}

double get_coord(const Params& p, std::size_t i) {
  const auto n = static_cast<std::size_t>(p.theta_phi.size());
  if (i < n) return p.theta_phi[static_cast<Eigen::Index>(i)];
  i -= n;
  if (i >= static_cast<std::size_t>(p.classifier.size()))
    throw ContractError("get_coord: index out of range");
  return p.classifier.data()[i];  // row-major storage
}

void set_coord(Params& p, std::size_t i, double v) {
  const auto n = static_cast<std::size_t>(p.theta_phi.size());
  if (i < n) {
    p.theta_phi[static_cast<Eigen::Index>(i)] = v;
    return;
  }
  i -= n;
  if (i >= static_cast<std::size_t>(p.classifier.size()))
    throw ContractError("set_coord: index out of range");
  p.classifier.data()[i] = v;
}

void check_simplex(const DistVector& d) {
  double sum = 0.0;
  for (Eigen::Index v = 0; v < d.p.size(); ++v) {
    if (!(d.p[v] >= 0.0)) throw NumericError("distribution entry negative or NaN");
    sum += d.p[v];
  }
  if (std::abs(sum - 1.0) > 1e-9) throw NumericError("distribution does not sum to 1");
}

double entropy_nats(const DistVector& d) {
  double h = 0.0;
  for (Eigen::Index v = 0; v < d.p.size(); ++v)
    if (d.p[v] > 0.0) h -= d.p[v] * std::log(d.p[v]);
  return h;
}

ForwardTrace forward_features(const Params& p, const ModelConfig& cfg, const Context& ctx) {
  check_shape(p, cfg);
  const Offsets o = offsets(cfg);

  std::vector<TokenId> seq = ctx.prompt.tokens;
  seq.insert(seq.end(), ctx.prefix.begin(), ctx.prefix.end());
  if (seq.empty()) throw ContractError("forward_features: empty context");
  const std::size_t w = std::min<std::size_t>(static_cast<std::size_t>(cfg.context_window), seq.size());

  ForwardTrace tr;
  tr.window.assign(seq.end() - static_cast<std::ptrdiff_t>(w), seq.end());
  for (TokenId t : tr.window)
    if (t < 1 || t > cfg.vocab_size)
      throw ContractError("forward_features: token " + std::to_string(t) + " out of range (prompt " +
                          std::to_string(ctx.prompt.id) + ")");

  const auto E = emb_view(p.theta_phi, cfg, o);
  tr.pooled = Vec::Zero(cfg.hidden_width);
  for (TokenId t : tr.window) tr.pooled += E.row(t - 1).transpose();
  tr.pooled /= static_cast<double>(w);

  tr.pre1 = w1_view(p.theta_phi, o) * tr.pooled + b1_view(p.theta_phi, o);
  tr.act1 = tr.pre1.array().tanh();
  const Vec* last = &tr.act1;
  if (cfg.hidden_depth == 2) {
    tr.pre2 = w2_view(p.theta_phi, o) * tr.act1 + b2_view(p.theta_phi, o);
    tr.act2 = tr.pre2.array().tanh();
    last = &tr.act2;
  }
  tr.gated = scale_view(p.theta_phi, cfg, o).cwiseProduct(*last);
  if (cfg.activation == Activation::linear) {
    tr.phi = tr.gated;
  } else {
    tr.phi = Vec(cfg.feature_dim);
    for (Eigen::Index d = 0; d < tr.phi.size(); ++d) tr.phi[d] = softplus(tr.gated[d]);
  }
  return tr;
}

Vec features(const Params& p, const ModelConfig& cfg, const Context& ctx) {
  return forward_features(p, cfg, ctx).phi;
}

DistVector next_token_dist(const Params& p, const ModelConfig& cfg, const Context& ctx) {
  const Vec phi = features(p, cfg, ctx);
  Vec logits = p.classifier * phi;
  if (!logits.allFinite())
    throw NumericError("non-finite logits for prompt " + std::to_string(ctx.prompt.id));
  const double m = logits.maxCoeff();
  Vec e = (logits.array() - m).exp();
  DistVector d;
  d.p = e / e.sum();
  check_simplex(d);
  return d;
}

double sequence_logprob(const Params& p, const ModelConfig& cfg, const corpus::Prompt& prompt,
                        std::span<const TokenId> response) {
  if (response.empty()) throw ContractError("sequence_logprob: empty response");
  Context ctx{prompt, {}};
  double lp = 0.0;
  for (TokenId y : response) {
    if (y < 1 || y > cfg.vocab_size) throw ContractError("sequence_logprob: token out of range");
    const DistVector d = next_token_dist(p, cfg, ctx);
    const double py = d.p[y - 1];
    if (!(py > 0.0)) throw NumericError("zero-probability token in sequence_logprob");
    lp += std::log(py);
    ctx.prefix.push_back(y);
  }
  return lp;
}

TokenId sample_token(const DistVector& d, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (Eigen::Index v = 0; v < d.p.size(); ++v) {
    acc += d.p[v];
    if (u < acc) return static_cast<TokenId>(v + 1);
  }
  return static_cast<TokenId>(d.p.size());  // guard against rounding in the final bin
}

std::vector<TokenId> sample_response(const Params& p, const ModelConfig& cfg,
                                     const corpus::Prompt& prompt, int length, Rng& rng) {
  if (length < 1) throw ContractError("sample_response: length must be >= 1");
  Context ctx{prompt, {}};
  std::vector<TokenId> out;
  out.reserve(static_cast<std::size_t>(length));
  for (int l = 0; l < length; ++l) {
    const TokenId y = sample_token(next_token_dist(p, cfg, ctx), rng);
    out.push_back(y);
    ctx.prefix.push_back(y);
  }
  return out;
}

}  // namespace ntkrl::model
