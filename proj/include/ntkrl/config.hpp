#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ntkrl/corpus.hpp"
#include "ntkrl/model.hpp"
#include "ntkrl/trainer.hpp"

namespace ntkrl::cli {

struct SftConfig {
  int epochs = 40;
  double learning_rate = 0.5;
};

struct AnalysisConfig {
  std::vector<int> best_of_n = {1, 2, 4, 8};
  int bon_samples = 8;
  int diversity_samples = 4;
  int taylor_targets = 0;  // first K prompts become per-step residual targets
};

inline constexpr int kConfigFormatVersion = 1;

struct RunConfig {
  int format_version = kConfigFormatVersion;
  model::ModelConfig model;
  corpus::TaskSpec task;
  trainer::TrainConfig train;
  SftConfig sft;
  AnalysisConfig analysis;
};

RunConfig default_config();

/// Strict: unknown keys are configuration errors; missing keys take
/// defaults. clip_norm accepts a number or null (no clipping).
RunConfig parse_config(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& cfg);
RunConfig load_config_file(const std::filesystem::path& path);

/// Environment overrides: NTKRL_<SECTION>_<KEY> (upper-cased path, e.g.
/// NTKRL_TRAIN_LEARNING_RATE=2e-4, NTKRL_MODEL_ACTIVATION=nonneg,
/// NTKRL_ANALYSIS_BEST_OF_N='[1,2,4]', NTKRL_TRAIN_CLIP_NORM=null). Values
/// parse as JSON, falling back to a string.
RunConfig apply_env_overrides(const RunConfig& cfg);

/// Cross-field checks on top of the per-module validators (vocab agreement,
/// estimator/k compatibility, analysis ranges).
void validate(const RunConfig& cfg);

}  // namespace ntkrl::cli
