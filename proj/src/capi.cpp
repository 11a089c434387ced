#include "ntkrl/ntkrl.h"

#include <cstdlib>
#include <cstring>
#include <exception>
#include <filesystem>
#include <new>
#include <sstream>
#include <string>
#include <vector>

#include "ntkrl/common.hpp"
#include "ntkrl/config.hpp"
#include "ntkrl/runner.hpp"

struct ntkrl_config {
  ntkrl::cli::RunConfig cfg;
};

namespace {

thread_local std::string g_last_error;

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

template <typename Fn>
ntkrl_status guarded(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return NTKRL_OK;
  } catch (const ntkrl::ConfigError& e) {
    g_last_error = e.what();
    return NTKRL_ERR_CONFIG;
  } catch (const ntkrl::ContractError& e) {
    g_last_error = e.what();
    return NTKRL_ERR_CONTRACT;
  } catch (const ntkrl::NumericError& e) {
    g_last_error = e.what();
    return NTKRL_ERR_NUMERIC;
  } catch (const ntkrl::IoError& e) {
    g_last_error = e.what();
    return NTKRL_ERR_IO;
  } catch (const ntkrl::IntegrityError& e) {
    g_last_error = e.what();
    return NTKRL_ERR_INTEGRITY;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return NTKRL_ERR_UNKNOWN;
  } catch (...) {
    g_last_error = "unrecognized exception";
    return NTKRL_ERR_UNKNOWN;
  }
}

ntkrl_status invalid_argument(const char* msg) {
  g_last_error = msg;
  return NTKRL_ERR_INVALID_ARGUMENT;
}

}  // namespace

extern "C" {

const char* ntkrl_version(void) { return "1.0.0"; }

const char* ntkrl_last_error(void) { return g_last_error.c_str(); }

const char* ntkrl_status_name(ntkrl_status s) {
  switch (s) {
    case NTKRL_OK: return "ok";
    case NTKRL_ERR_CONFIG: return "config error";
    case NTKRL_ERR_CONTRACT: return "contract violation";
    case NTKRL_ERR_NUMERIC: return "numeric error";
    case NTKRL_ERR_IO: return "io error";
    case NTKRL_ERR_INTEGRITY: return "integrity error";
    case NTKRL_ERR_INVALID_ARGUMENT: return "invalid argument";
    case NTKRL_ERR_UNKNOWN: break;
  }
  return "unknown error";
}

ntkrl_status ntkrl_config_default(ntkrl_config** out) {
  if (!out) return invalid_argument("out is null");
  return guarded([&] { *out = new ntkrl_config{ntkrl::cli::default_config()}; });
}

ntkrl_status ntkrl_config_load(const char* path, ntkrl_config** out) {
  if (!path || !out) return invalid_argument("path or out is null");
  return guarded([&] {
    *out = new ntkrl_config{ntkrl::cli::load_config_file(std::filesystem::path(path))};
  });
}

ntkrl_status ntkrl_config_from_json(const char* json_text, ntkrl_config** out) {
  if (!json_text || !out) return invalid_argument("json_text or out is null");
  return guarded([&] {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::parse_error& e) {
      throw ntkrl::ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    *out = new ntkrl_config{ntkrl::cli::parse_config(j)};
  });
}

ntkrl_status ntkrl_config_apply_env(ntkrl_config* cfg) {
  if (!cfg) return invalid_argument("cfg is null");
  return guarded([&] { cfg->cfg = ntkrl::cli::apply_env_overrides(cfg->cfg); });
}

ntkrl_status ntkrl_config_set_train_seed(ntkrl_config* cfg, uint64_t seed) {
  if (!cfg) return invalid_argument("cfg is null");
  return guarded([&] { cfg->cfg.train.seed = seed; });
}

ntkrl_status ntkrl_config_to_json(const ntkrl_config* cfg, char** out_json) {
  if (!cfg || !out_json) return invalid_argument("cfg or out_json is null");
  return guarded([&] { *out_json = dup_string(ntkrl::cli::to_json(cfg->cfg).dump(2)); });
}

void ntkrl_config_free(ntkrl_config* cfg) { delete cfg; }

void ntkrl_string_free(char* s) { std::free(s); }

ntkrl_status ntkrl_run_pretrain(const ntkrl_config* cfg, const char* out_dir) {
  if (!cfg || !out_dir) return invalid_argument("cfg or out_dir is null");
  return guarded([&] { ntkrl::cli::cmd_pretrain(cfg->cfg, std::filesystem::path(out_dir)); });
}

ntkrl_status ntkrl_run_rl(const ntkrl_config* cfg, const char* ref_dir, const char* out_dir) {
  if (!cfg || !ref_dir || !out_dir) return invalid_argument("cfg, ref_dir or out_dir is null");
  return guarded([&] {
    ntkrl::cli::cmd_rl(cfg->cfg, std::filesystem::path(ref_dir), std::filesystem::path(out_dir));
  });
}

ntkrl_status ntkrl_run_cfrl(const ntkrl_config* cfg, const char* ref_dir, const char* out_dir) {
  if (!cfg || !ref_dir || !out_dir) return invalid_argument("cfg, ref_dir or out_dir is null");
  return guarded([&] {
    ntkrl::cli::cmd_cfrl(cfg->cfg, std::filesystem::path(ref_dir), std::filesystem::path(out_dir));
  });
}

ntkrl_status ntkrl_run_verify(const ntkrl_config* cfg, char** out_table, int* out_failures) {
  if (!cfg || !out_failures) return invalid_argument("cfg or out_failures is null");
  return guarded([&] {
    std::ostringstream table;
    *out_failures = ntkrl::cli::cmd_verify(cfg->cfg, table);
    if (out_table) *out_table = dup_string(table.str());
  });
}

ntkrl_status ntkrl_run_analyze(const char* const* run_dirs, size_t run_count,
                               const char* out_dir) {
  if (!run_dirs || run_count == 0 || !out_dir)
    return invalid_argument("run_dirs is null/empty or out_dir is null");
  for (size_t i = 0; i < run_count; ++i)
    if (!run_dirs[i]) return invalid_argument("run_dirs contains a null entry");
  return guarded([&] {
    std::vector<std::filesystem::path> dirs(run_dirs, run_dirs + run_count);
    ntkrl::cli::cmd_analyze(dirs, std::filesystem::path(out_dir));
  });
}

ntkrl_status ntkrl_run_report(const char* run_dir, char** out_text) {
  if (!run_dir || !out_text) return invalid_argument("run_dir or out_text is null");
  return guarded([&] {
    std::ostringstream text;
    ntkrl::cli::cmd_report(std::filesystem::path(run_dir), text);
    *out_text = dup_string(text.str());
  });
}

}  // extern "C"
