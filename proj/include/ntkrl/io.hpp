#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "ntkrl/model.hpp"

namespace ntkrl::io {

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

// Checkpoint format: 7 little-endian int32 header fields
// (vocab_size, feature_dim, context_window, hidden_width, hidden_depth,
// activation tag, format version), then little-endian 64-bit floats in
// group order: embeddings, hidden_1[, hidden_2], final_norm, classifier
// row-major. The seed is a runtime concern and is not stored.
inline constexpr int kParamsFormatVersion = 1;

std::string serialize_params(const model::Params& p, const model::ModelConfig& cfg);

struct LoadedParams {
  model::Params params;
  model::ModelConfig cfg;  // seed field is left at 0
};
LoadedParams parse_params(std::string_view bytes);

/// Writes <path> plus a "<path>.json" sidecar mapping group names to
/// offset/length in float units within the float section.
void write_params_file(const std::filesystem::path& path, const model::Params& p,
                       const model::ModelConfig& cfg);
LoadedParams read_params_file(const std::filesystem::path& path);

std::string params_digest(const model::Params& p, const model::ModelConfig& cfg);

nlohmann::json sidecar_json(const model::ModelConfig& cfg);

// Raw little-endian f64 blobs (gradient/Jacobian export).
void write_floats(const std::filesystem::path& path, std::span<const double> values);
std::vector<double> read_floats(const std::filesystem::path& path);

void write_text_file(const std::filesystem::path& path, std::string_view text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace ntkrl::io
