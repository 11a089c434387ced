// Command-line front end. Talks to the core exclusively through the C
// interface in ntkrl/ntkrl.h; exit codes: 0 success, 1 failing verify
// checks, 2 any reported error.
#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI/CLI.hpp>

#include "ntkrl/ntkrl.h"

namespace {

struct ConfigHandle {
  ntkrl_config* p = nullptr;
  ~ConfigHandle() { ntkrl_config_free(p); }
  ConfigHandle() = default;
  ConfigHandle(const ConfigHandle&) = delete;
  ConfigHandle& operator=(const ConfigHandle&) = delete;
};

struct OwnedString {
  char* p = nullptr;
  ~OwnedString() { ntkrl_string_free(p); }
};

int report_error(ntkrl_status s) {
  std::cerr << "ntkrl: " << ntkrl_status_name(s) << ": " << ntkrl_last_error() << '\n';
  return 2;
}

// config file (or defaults) -> NTKRL_* env overrides -> --seed override
int build_config(const std::string& config_path, const std::optional<std::uint64_t>& seed,
                 ConfigHandle& out) {
  ntkrl_status s = config_path.empty() ? ntkrl_config_default(&out.p)
                                       : ntkrl_config_load(config_path.c_str(), &out.p);
  if (s != NTKRL_OK) return report_error(s);
  if ((s = ntkrl_config_apply_env(out.p)) != NTKRL_OK) return report_error(s);
  if (seed && (s = ntkrl_config_set_train_seed(out.p, *seed)) != NTKRL_OK)
    return report_error(s);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"deterministic tangent-kernel RL laboratory"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::string ref_dir;
  std::vector<std::string> run_dirs;

  auto add_config_opts = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON run configuration; defaults when omitted");
    cmd->add_option("--seed", seed, "override the training seed");
  };

  CLI::App* pretrain = app.add_subcommand("pretrain", "supervised pre-training (reference policy)");
  add_config_opts(pretrain);
  pretrain->add_option("--out", out_dir, "run directory to create")->required();

  CLI::App* rl = app.add_subcommand("rl", "RL post-training from a reference run");
  add_config_opts(rl);
  rl->add_option("--ref", ref_dir, "reference (pretrain) run directory")->required();
  rl->add_option("--out", out_dir, "run directory to create")->required();

  CLI::App* cfrl = app.add_subcommand("cfrl", "classifier-first RL post-training");
  add_config_opts(cfrl);
  cfrl->add_option("--ref", ref_dir, "reference (pretrain) run directory")->required();
  cfrl->add_option("--out", out_dir, "run directory to create")->required();

  CLI::App* verify = app.add_subcommand("verify", "run the self-check suite");
  add_config_opts(verify);

  CLI::App* analyze = app.add_subcommand("analyze", "measurement pass over completed runs");
  analyze->add_option("--ref", run_dirs, "run directory (repeatable)")->required();
  analyze->add_option("--out", out_dir, "output directory to create")->required();

  CLI::App* report = app.add_subcommand("report", "integrity-checked dump of one run");
  report->add_option("--ref", ref_dir, "run directory")->required();
  report->add_option("--out", out_dir, "write the report here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;  // keep --help at 0, fold usage errors into 2
  }

  if (pretrain->parsed() || rl->parsed() || cfrl->parsed() || verify->parsed()) {
    ConfigHandle cfg;
    if (int rc = build_config(config_path, seed, cfg)) return rc;

    if (pretrain->parsed()) {
      if (ntkrl_status s = ntkrl_run_pretrain(cfg.p, out_dir.c_str()); s != NTKRL_OK)
        return report_error(s);
      std::cout << "pretrain run written to " << out_dir << '\n';
      return 0;
    }
    if (rl->parsed() || cfrl->parsed()) {
      ntkrl_status s = rl->parsed() ? ntkrl_run_rl(cfg.p, ref_dir.c_str(), out_dir.c_str())
                                    : ntkrl_run_cfrl(cfg.p, ref_dir.c_str(), out_dir.c_str());
      if (s != NTKRL_OK) return report_error(s);
      std::cout << (rl->parsed() ? "rl" : "cfrl") << " run written to " << out_dir << '\n';
      return 0;
    }
    // verify
    OwnedString table;
    int failures = 0;
    if (ntkrl_status s = ntkrl_run_verify(cfg.p, &table.p, &failures); s != NTKRL_OK)
      return report_error(s);
    std::cout << table.p;
    if (failures > 0) {
      std::cerr << failures << " check(s) failed\n";
      return 1;
    }
    return 0;
  }

  if (analyze->parsed()) {
    std::vector<const char*> dirs;
    dirs.reserve(run_dirs.size());
    for (const std::string& d : run_dirs) dirs.push_back(d.c_str());
    if (ntkrl_status s = ntkrl_run_analyze(dirs.data(), dirs.size(), out_dir.c_str());
        s != NTKRL_OK)
      return report_error(s);
    std::cout << "analysis written to " << out_dir << '\n';
    return 0;
  }

  // report
  OwnedString text;
  if (ntkrl_status s = ntkrl_run_report(ref_dir.c_str(), &text.p); s != NTKRL_OK)
    return report_error(s);
  if (out_dir.empty()) {
    std::cout << text.p;
  } else {
    std::ofstream f(out_dir, std::ios::binary);
    if (!f) {
      std::cerr << "ntkrl: io error: cannot open " << out_dir << " for writing\n";
      return 2;
    }
    f << text.p;
  }
  return 0;
}
