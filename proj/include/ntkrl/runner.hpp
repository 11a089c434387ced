#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ntkrl/config.hpp"

namespace ntkrl::cli {

/// Creates a run directory (must not exist, or be an empty directory),
/// holds a lock file while writing, and finalizes with a manifest listing
/// the sha256 of every output file.
class RunDirWriter {
 public:
  explicit RunDirWriter(std::filesystem::path dir);
  ~RunDirWriter();
  RunDirWriter(const RunDirWriter&) = delete;
  RunDirWriter& operator=(const RunDirWriter&) = delete;

  const std::filesystem::path& dir() const { return dir_; }
  void write_file(const std::string& name, std::string_view bytes);
  std::filesystem::path reserve(const std::string& name);  // for writers that stream directly

  /// Digests every reserved/written file, writes manifest.json, releases the
  /// lock. `extra` merges into the manifest root.
  void finalize(const std::string& command, const nlohmann::json& extra);

 private:
  std::filesystem::path dir_;
  std::vector<std::string> files_;
  bool finalized_ = false;
};

/// Loads manifest.json and re-digests every listed file; IntegrityError on
/// any mismatch, IoError if the directory or manifest is missing.
nlohmann::json verify_run_dir(const std::filesystem::path& dir);

struct LoadedRun {
  std::filesystem::path dir;
  nlohmann::json manifest;
  RunConfig config;
  std::vector<corpus::Prompt> prompts;
};
LoadedRun load_run(const std::filesystem::path& dir);  // verifies integrity first

// Subcommand bodies. Each validates its config, writes a complete run
// directory, and throws on error.
void cmd_pretrain(const RunConfig& cfg, const std::filesystem::path& out);
void cmd_rl(const RunConfig& cfg, const std::filesystem::path& ref,
            const std::filesystem::path& out);
void cmd_cfrl(const RunConfig& cfg, const std::filesystem::path& ref,
              const std::filesystem::path& out);
int cmd_verify(const RunConfig& cfg, std::ostream& out);  // returns failure count
void cmd_analyze(std::span<const std::filesystem::path> runs, const std::filesystem::path& out);
void cmd_report(const std::filesystem::path& run, std::ostream& out);

}  // namespace ntkrl::cli
