#include "ntkrl/config.hpp"

#include <cctype>
#include <cstdlib>
#include <string>
#include <vector>

#include "ntkrl/io.hpp"

namespace ntkrl::cli {

using nlohmann::json;

RunConfig default_config() { return RunConfig{}; }

namespace {

void check_keys(const json& j, const char* section, std::initializer_list<const char*> known) {
  if (!j.is_object()) throw ConfigError(std::string(section) + ": expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    bool found = false;
    for (const char* k : known)
      if (key == k) {
        found = true;
        break;
      }
    if (!found) throw ConfigError(std::string(section) + ": unknown field '" + key + "'");
  }
}

template <typename T>
void get_to_if(const json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end()) it->get_to(out);
}

void parse_model(const json& j, model::ModelConfig& m) {
  check_keys(j, "model",
             {"vocab_size", "feature_dim", "context_window", "hidden_width", "hidden_depth",
              "activation", "seed"});
  get_to_if(j, "vocab_size", m.vocab_size);
  get_to_if(j, "feature_dim", m.feature_dim);
  get_to_if(j, "context_window", m.context_window);
  get_to_if(j, "hidden_width", m.hidden_width);
  get_to_if(j, "hidden_depth", m.hidden_depth);
  if (auto it = j.find("activation"); it != j.end()) {
    const std::string a = it->get<std::string>();
    if (a == "linear")
      m.activation = model::Activation::linear;
    else if (a == "nonneg")
      m.activation = model::Activation::nonneg;
    else
      throw ConfigError("model.activation: expected 'linear' or 'nonneg', got '" + a + "'");
  }
  get_to_if(j, "seed", m.seed);
}

void parse_task(const json& j, corpus::TaskSpec& t) {
  check_keys(j, "task",
             {"vocab_size", "prompt_count", "max_response_len", "min_prompt_len", "max_prompt_len",
              "pattern_offset", "pattern_stride", "seed"});
  get_to_if(j, "vocab_size", t.vocab.size);
  get_to_if(j, "prompt_count", t.prompt_count);
  get_to_if(j, "max_response_len", t.max_response_len);
  get_to_if(j, "min_prompt_len", t.min_prompt_len);
  get_to_if(j, "max_prompt_len", t.max_prompt_len);
  get_to_if(j, "pattern_offset", t.pattern_offset);
  get_to_if(j, "pattern_stride", t.pattern_stride);
  get_to_if(j, "seed", t.seed);
}

void parse_train(const json& j, trainer::TrainConfig& t) {
  check_keys(j, "train",
             {"algo", "learning_rate", "kl_coef", "epochs", "prompts_per_batch",
              "rollouts_per_prompt", "clip_norm", "cf_stage_epochs",
              "normalizer_samples_per_prompt", "seed"});
  if (auto it = j.find("algo"); it != j.end()) {
    const std::string a = it->get<std::string>();
    if (a == "reinforce")
      t.algo = trainer::Algo::reinforce;
    else if (a == "grpo")
      t.algo = trainer::Algo::grpo;
    else if (a == "rloo")
      t.algo = trainer::Algo::rloo;
    else
      throw ConfigError("train.algo: expected reinforce|grpo|rloo, got '" + a + "'");
  }
  get_to_if(j, "learning_rate", t.learning_rate);
  get_to_if(j, "kl_coef", t.kl_coef);
  get_to_if(j, "epochs", t.epochs);
  get_to_if(j, "prompts_per_batch", t.prompts_per_batch);
  get_to_if(j, "rollouts_per_prompt", t.rollouts_per_prompt);
  if (auto it = j.find("clip_norm"); it != j.end()) {
    if (it->is_null())
      t.clip_norm.reset();
    else
      t.clip_norm = it->get<double>();
  }
  get_to_if(j, "cf_stage_epochs", t.cf_stage_epochs);
  get_to_if(j, "normalizer_samples_per_prompt", t.normalizer_samples_per_prompt);
  get_to_if(j, "seed", t.seed);
}

void parse_sft(const json& j, SftConfig& s) {
  check_keys(j, "sft", {"epochs", "learning_rate"});
  get_to_if(j, "epochs", s.epochs);
  get_to_if(j, "learning_rate", s.learning_rate);
}

void parse_analysis(const json& j, AnalysisConfig& a) {
  check_keys(j, "analysis", {"best_of_n", "bon_samples", "diversity_samples", "taylor_targets"});
  get_to_if(j, "best_of_n", a.best_of_n);
  get_to_if(j, "bon_samples", a.bon_samples);
  get_to_if(j, "diversity_samples", a.diversity_samples);
  get_to_if(j, "taylor_targets", a.taylor_targets);
}

}  // namespace

RunConfig parse_config(const json& j) {
  check_keys(j, "config", {"format_version", "model", "task", "train", "sft", "analysis"});
  RunConfig cfg;
  get_to_if(j, "format_version", cfg.format_version);
  if (cfg.format_version != kConfigFormatVersion)
    throw ConfigError("config.format_version: unsupported version " +
                      std::to_string(cfg.format_version));
  if (auto it = j.find("model"); it != j.end()) parse_model(*it, cfg.model);
  if (auto it = j.find("task"); it != j.end()) parse_task(*it, cfg.task);
  if (auto it = j.find("train"); it != j.end()) parse_train(*it, cfg.train);
  if (auto it = j.find("sft"); it != j.end()) parse_sft(*it, cfg.sft);
  if (auto it = j.find("analysis"); it != j.end()) parse_analysis(*it, cfg.analysis);
  return cfg;
}

json to_json(const RunConfig& cfg) {
  json j;
  j["format_version"] = cfg.format_version;
  j["model"] = {{"vocab_size", cfg.model.vocab_size},
                {"feature_dim", cfg.model.feature_dim},
                {"context_window", cfg.model.context_window},
                {"hidden_width", cfg.model.hidden_width},
                {"hidden_depth", cfg.model.hidden_depth},
                {"activation",
                 cfg.model.activation == model::Activation::linear ? "linear" : "nonneg"},
                {"seed", cfg.model.seed}};
  j["task"] = {{"vocab_size", cfg.task.vocab.size},
               {"prompt_count", cfg.task.prompt_count},
               {"max_response_len", cfg.task.max_response_len},
               {"min_prompt_len", cfg.task.min_prompt_len},
               {"max_prompt_len", cfg.task.max_prompt_len},
               {"pattern_offset", cfg.task.pattern_offset},
               {"pattern_stride", cfg.task.pattern_stride},
               {"seed", cfg.task.seed}};
  j["train"] = {{"algo", cfg.train.algo == trainer::Algo::reinforce  ? "reinforce"
                         : cfg.train.algo == trainer::Algo::grpo ? "grpo"
                                                                 : "rloo"},
                {"learning_rate", cfg.train.learning_rate},
                {"kl_coef", cfg.train.kl_coef},
                {"epochs", cfg.train.epochs},
                {"prompts_per_batch", cfg.train.prompts_per_batch},
                {"rollouts_per_prompt", cfg.train.rollouts_per_prompt},
                {"clip_norm", cfg.train.clip_norm ? json(*cfg.train.clip_norm) : json(nullptr)},
                {"cf_stage_epochs", cfg.train.cf_stage_epochs},
                {"normalizer_samples_per_prompt", cfg.train.normalizer_samples_per_prompt},
                {"seed", cfg.train.seed}};
  j["sft"] = {{"epochs", cfg.sft.epochs}, {"learning_rate", cfg.sft.learning_rate}};
  j["analysis"] = {{"best_of_n", cfg.analysis.best_of_n},
                   {"bon_samples", cfg.analysis.bon_samples},
                   {"diversity_samples", cfg.analysis.diversity_samples},
                   {"taylor_targets", cfg.analysis.taylor_targets}};
  return j;
}

RunConfig load_config_file(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(io::read_text_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path.string() + ": " + e.what());
  }
  return parse_config(j);
}

RunConfig apply_env_overrides(const RunConfig& cfg) {
  json j = to_json(cfg);
  std::vector<std::string> applied;
  auto override_from_env = [&applied](std::string var, json& slot) {
    for (char& c : var) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    if (const char* v = std::getenv(var.c_str())) {
      applied.push_back(var);
      try {
        slot = json::parse(v);
      } catch (const json::parse_error&) {
        slot = std::string(v);
      }
    }
  };
  for (auto& [section, body] : j.items()) {
    if (!body.is_object()) {
      // top-level scalar (format_version)
      override_from_env("NTKRL_" + section, body);
      continue;
    }
    for (auto& [key, value] : body.items())
      override_from_env("NTKRL_" + section + "_" + key, value);
  }
  try {
    return parse_config(j);
  } catch (const json::exception& e) {
    std::string names;
    for (const std::string& a : applied) names += (names.empty() ? "" : ", ") + a;
    throw ConfigError("environment override produced an invalid config (applied: " + names +
                      "): " + e.what());
  }
}

void validate(const RunConfig& cfg) {
  model::validate(cfg.model);
  corpus::validate(cfg.task);
  trainer::validate(cfg.train);
  if (cfg.model.vocab_size != cfg.task.vocab.size)
    throw ConfigError("model.vocab_size and task.vocab_size must agree");
  if (cfg.sft.epochs < 0) throw ConfigError("sft.epochs must be >= 0");
  if (!(cfg.sft.learning_rate > 0.0)) throw ConfigError("sft.learning_rate must be > 0");
  if (cfg.analysis.best_of_n.empty()) throw ConfigError("analysis.best_of_n must be non-empty");
  for (int n : cfg.analysis.best_of_n)
    if (n < 1 || n > cfg.analysis.bon_samples)
      throw ConfigError("analysis.best_of_n entries must lie in [1, bon_samples]");
  if (cfg.analysis.diversity_samples < 2)
    throw ConfigError("analysis.diversity_samples must be >= 2");
  if (cfg.analysis.taylor_targets < 0 || cfg.analysis.taylor_targets > cfg.task.prompt_count)
    throw ConfigError("analysis.taylor_targets must lie in [0, prompt_count]");
}

}  // namespace ntkrl::cli
