/* C interface to the ntkrl core. All entry points are thread-compatible:
 * distinct handles may be used from distinct threads, a single handle must
 * not be shared without external locking. Strings returned through char**
 * outputs are heap copies owned by the caller; release them with
 * ntkrl_string_free. */
#ifndef NTKRL_NTKRL_H
#define NTKRL_NTKRL_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define NTKRL_API __declspec(dllexport)
#else
#define NTKRL_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum ntkrl_status {
  NTKRL_OK = 0,
  NTKRL_ERR_CONFIG = 1,    /* invalid configuration or unknown field */
  NTKRL_ERR_CONTRACT = 2,  /* an operation precondition was violated */
  NTKRL_ERR_NUMERIC = 3,   /* non-finite values where finite ones are required */
  NTKRL_ERR_IO = 4,        /* filesystem or serialization failure */
  NTKRL_ERR_INTEGRITY = 5, /* stored artifact does not match its digest */
  NTKRL_ERR_INVALID_ARGUMENT = 6, /* null pointer or out-of-range argument */
  NTKRL_ERR_UNKNOWN = 7
} ntkrl_status;

/* Opaque run configuration. */
typedef struct ntkrl_config ntkrl_config;

NTKRL_API const char* ntkrl_version(void);

/* Message for the most recent failing call on this thread; empty string
 * after a success. The pointer stays valid until the next call from the
 * same thread. */
NTKRL_API const char* ntkrl_last_error(void);

NTKRL_API const char* ntkrl_status_name(ntkrl_status s);

NTKRL_API ntkrl_status ntkrl_config_default(ntkrl_config** out);
NTKRL_API ntkrl_status ntkrl_config_load(const char* path, ntkrl_config** out);
NTKRL_API ntkrl_status ntkrl_config_from_json(const char* json_text, ntkrl_config** out);

/* Re-reads NTKRL_* environment overrides into the handle. */
NTKRL_API ntkrl_status ntkrl_config_apply_env(ntkrl_config* cfg);

/* Overrides the training seed (the --seed flag of the CLI). */
NTKRL_API ntkrl_status ntkrl_config_set_train_seed(ntkrl_config* cfg, uint64_t seed);

/* Serializes the full configuration; *out_json is owned by the caller. */
NTKRL_API ntkrl_status ntkrl_config_to_json(const ntkrl_config* cfg, char** out_json);

NTKRL_API void ntkrl_config_free(ntkrl_config* cfg);
NTKRL_API void ntkrl_string_free(char* s);

/* Supervised pre-training; writes a fresh run directory at out_dir. */
NTKRL_API ntkrl_status ntkrl_run_pretrain(const ntkrl_config* cfg, const char* out_dir);

/* RL post-training from the reference run at ref_dir. ntkrl_run_rl ignores
 * the classifier-first stage; ntkrl_run_cfrl honours train.cf_stage_epochs. */
NTKRL_API ntkrl_status ntkrl_run_rl(const ntkrl_config* cfg, const char* ref_dir,
                                    const char* out_dir);
NTKRL_API ntkrl_status ntkrl_run_cfrl(const ntkrl_config* cfg, const char* ref_dir,
                                      const char* out_dir);

/* Runs the self-check suite. *out_failures receives the number of failing
 * checks; out_table (optional, may be NULL) receives the rendered table.
 * Returns NTKRL_OK whenever the suite ran to completion, red or green. */
NTKRL_API ntkrl_status ntkrl_run_verify(const ntkrl_config* cfg, char** out_table,
                                        int* out_failures);

/* Cross-run measurement pass over run_count completed run directories. */
NTKRL_API ntkrl_status ntkrl_run_analyze(const char* const* run_dirs, size_t run_count,
                                         const char* out_dir);

/* Integrity-checked textual dump of one run directory; *out_text is owned
 * by the caller. */
NTKRL_API ntkrl_status ntkrl_run_report(const char* run_dir, char** out_text);

#ifdef __cplusplus
}
#endif

#endif /* NTKRL_NTKRL_H */
