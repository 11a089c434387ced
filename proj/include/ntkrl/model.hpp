#pragma once

#include <span>
#include <string>
#include <vector>

#include "ntkrl/common.hpp"
#include "ntkrl/corpus.hpp"

namespace ntkrl::model {

enum class Activation { linear, nonneg };

struct ModelConfig {
  int vocab_size = 16;     // V
  int feature_dim = 8;     // D
  int context_window = 4;  // c: tokens pooled by the encoder
  int hidden_width = 8;    // h
  int hidden_depth = 1;    // 1 or 2 tanh layers
  Activation activation = Activation::linear;
  std::uint64_t seed = 1;
};
void validate(const ModelConfig& cfg);

/// Index arithmetic for the flat theta_phi layout. Group order is
/// embeddings, hidden_1[, hidden_2], final_norm; each hidden block stores
/// the weight matrix row-major followed by its bias.
struct Offsets {
  Eigen::Index emb = 0, w1 = 0, b1 = 0, w2 = 0, b2 = 0, scale = 0;
  Eigen::Index theta_total = 0;
  int in1 = 0, out1 = 0, in2 = 0, out2 = 0;
};
Offsets offsets(const ModelConfig& cfg);

struct ParamGroup {
  std::string name;
  std::size_t offset = 0;  // float index into the flat layout
  std::size_t size = 0;
};

/// Named index ranges over theta_phi ⊕ W (classifier last), covering the
/// serialized layout exactly.
std::vector<ParamGroup> layout(const ModelConfig& cfg);

struct Params {
  Vec theta_phi;     // feature-map parameters, flat
  RowMat classifier; // W: V x D
};

std::size_t theta_size(const ModelConfig& cfg);
Params init_params(const ModelConfig& cfg);
Params snapshot(const Params& p);
void check_shape(const Params& p, const ModelConfig& cfg);  // ConfigError on mismatch

// Flat coordinate access over theta_phi ⊕ W, used by the finite-difference
// oracles. Coordinate order matches the serialized layout.
std::size_t param_count(const Params& p);
double get_coord(const Params& p, std::size_t i);
void set_coord(Params& p, std::size_t i, double v);

struct Context {
  corpus::Prompt prompt;
  std::vector<TokenId> prefix;  // y_{<l}, possibly empty
};

struct DistVector {
  Vec p;  // length V, entries >= 0, sums to 1 within 1e-9
};
void check_simplex(const DistVector& d);  // NumericError on violation
double entropy_nats(const DistVector& d);

/// Everything the forward pass computes, kept for the analytic Jacobian.
struct ForwardTrace {
  std::vector<TokenId> window;  // last min(c, len) tokens actually pooled
  Vec pooled;                   // mean embedding, length h
  Vec pre1, act1;               // hidden_1 pre-activation / tanh output
  Vec pre2, act2;               // hidden_2 (depth 2 only)
  Vec gated;                    // final_norm scale applied, length D
  Vec phi;                      // feature output, length D
};
ForwardTrace forward_features(const Params& p, const ModelConfig& cfg, const Context& ctx);

/// phi(x, y_<l>): mean-pooled embeddings over the last c tokens, 1-2 tanh
/// layers, learned diagonal scale, optional softplus so the output is
/// entrywise positive (the nonneg variant).
Vec features(const Params& p, const ModelConfig& cfg, const Context& ctx);

DistVector next_token_dist(const Params& p, const ModelConfig& cfg, const Context& ctx);

double sequence_logprob(const Params& p, const ModelConfig& cfg, const corpus::Prompt& prompt,
                        std::span<const TokenId> response);

TokenId sample_token(const DistVector& d, Rng& rng);

/// Fixed-length autoregressive sampling: always exactly `length` tokens.
std::vector<TokenId> sample_response(const Params& p, const ModelConfig& cfg,
                                     const corpus::Prompt& prompt, int length, Rng& rng);

}  // namespace ntkrl::model
