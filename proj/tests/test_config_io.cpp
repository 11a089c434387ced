#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest/doctest.h>

#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <string>

#include "ntkrl/config.hpp"
#include "ntkrl/io.hpp"
#include "ntkrl/runner.hpp"

using namespace ntkrl;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& stem) {
    path = fs::temp_directory_path() / (stem + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

struct EnvGuard {
  std::string name;
  EnvGuard(const std::string& n, const std::string& value) : name(n) {
    ::setenv(name.c_str(), value.c_str(), 1);
  }
  ~EnvGuard() { ::unsetenv(name.c_str()); }
};

model::ModelConfig tiny_model() {
  model::ModelConfig c;
  c.vocab_size = 4;
  c.feature_dim = 3;
  c.context_window = 2;
  c.hidden_width = 3;
  c.seed = 5;
  return c;
}

}  // namespace

TEST_CASE("config json round trip preserves every field") {
  cli::RunConfig cfg = cli::default_config();
  cfg.model.vocab_size = 12;
  cfg.model.activation = model::Activation::linear;
  cfg.task.vocab.size = 12;
  cfg.task.pattern_stride = 2;
  cfg.train.algo = trainer::Algo::rloo;
  cfg.train.clip_norm.reset();
  cfg.train.seed = 999;
  cfg.sft.epochs = 7;
  cfg.analysis.best_of_n = {1, 3};
  cfg.analysis.taylor_targets = 2;

  const cli::RunConfig back = cli::parse_config(cli::to_json(cfg));
  CHECK(cli::to_json(back) == cli::to_json(cfg));
  CHECK(back.train.algo == trainer::Algo::rloo);
  CHECK(!back.train.clip_norm.has_value());
  CHECK(back.analysis.best_of_n == std::vector<int>{1, 3});
}

TEST_CASE("config parsing: unknown fields, bad enums, version gate") {
  nlohmann::json j = cli::to_json(cli::default_config());
  j["model"]["unknown"] = 1;
  CHECK_THROWS_WITH_AS(static_cast<void>(cli::parse_config(j)),
                       doctest::Contains("unknown field"), ConfigError);

  j = cli::to_json(cli::default_config());
  j["model"]["activation"] = "relu";
  CHECK_THROWS_AS(static_cast<void>(cli::parse_config(j)), ConfigError);

  j = cli::to_json(cli::default_config());
  j["train"]["algo"] = "ppo";
  CHECK_THROWS_AS(static_cast<void>(cli::parse_config(j)), ConfigError);

  j = cli::to_json(cli::default_config());
  j["format_version"] = 2;
  CHECK_THROWS_AS(static_cast<void>(cli::parse_config(j)), ConfigError);

  // clip_norm: null means no clipping
  j = cli::to_json(cli::default_config());
  j["train"]["clip_norm"] = nullptr;
  CHECK(!cli::parse_config(j).train.clip_norm.has_value());

  // missing sections keep defaults
  const cli::RunConfig sparse = cli::parse_config(nlohmann::json::object());
  CHECK(cli::to_json(sparse) == cli::to_json(cli::default_config()));
}

TEST_CASE("environment overrides parse as json with string fallback") {
  const cli::RunConfig base = cli::default_config();
  {
    EnvGuard e1("NTKRL_TRAIN_LEARNING_RATE", "2e-4");
    EnvGuard e2("NTKRL_MODEL_ACTIVATION", "linear");
    EnvGuard e3("NTKRL_ANALYSIS_BEST_OF_N", "[1,2]");
    EnvGuard e4("NTKRL_TRAIN_CLIP_NORM", "null");
    const cli::RunConfig out = cli::apply_env_overrides(base);
    CHECK(out.train.learning_rate == 2e-4);
    CHECK(out.model.activation == model::Activation::linear);
    CHECK(out.analysis.best_of_n == std::vector<int>{1, 2});
    CHECK(!out.train.clip_norm.has_value());
  }
  // guards removed: no overrides apply
  CHECK(cli::to_json(cli::apply_env_overrides(base)) == cli::to_json(base));

  EnvGuard bad("NTKRL_TRAIN_EPOCHS", "three");
  CHECK_THROWS_AS(static_cast<void>(cli::apply_env_overrides(base)), ConfigError);
}

TEST_CASE("cross-field validation") {
  cli::RunConfig cfg = cli::default_config();
  CHECK_NOTHROW(cli::validate(cfg));

  cfg.model.vocab_size = cfg.task.vocab.size + 1;
  CHECK_THROWS_AS(cli::validate(cfg), ConfigError);

  cfg = cli::default_config();
  cfg.analysis.best_of_n = {1, 99};
  CHECK_THROWS_AS(cli::validate(cfg), ConfigError);

  cfg = cli::default_config();
  cfg.analysis.taylor_targets = cfg.task.prompt_count + 1;
  CHECK_THROWS_AS(cli::validate(cfg), ConfigError);

  cfg = cli::default_config();
  cfg.sft.learning_rate = 0.0;
  CHECK_THROWS_AS(cli::validate(cfg), ConfigError);
}

TEST_CASE("sha256 of a known vector") {
  CHECK(io::sha256_hex("abc") ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(io::sha256_hex("") ==
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST_CASE("parameter snapshots round trip through bytes and files") {
  const model::ModelConfig cfg = tiny_model();
  const model::Params p = model::init_params(cfg);

  const std::string bytes = io::serialize_params(p, cfg);
  CHECK(bytes.size() == 28 + 8 * model::param_count(p));
  const io::LoadedParams back = io::parse_params(bytes);
  CHECK(back.cfg.vocab_size == cfg.vocab_size);
  CHECK(back.cfg.feature_dim == cfg.feature_dim);
  CHECK(back.cfg.hidden_depth == cfg.hidden_depth);
  CHECK(back.cfg.activation == cfg.activation);
  CHECK(back.cfg.seed == 0);
  CHECK(io::serialize_params(back.params, back.cfg) == bytes);
  CHECK(io::params_digest(p, cfg) == io::sha256_hex(bytes));

  TempDir tmp("ntkrl_params");
  fs::create_directories(tmp.path);
  const fs::path file = tmp.path / "params.bin";
  io::write_params_file(file, p, cfg);
  CHECK(fs::exists(file));
  REQUIRE(fs::exists(tmp.path / "params.bin.json"));
  const io::LoadedParams from_disk = io::read_params_file(file);
  CHECK(io::serialize_params(from_disk.params, from_disk.cfg) == bytes);

  const nlohmann::json sidecar =
      nlohmann::json::parse(io::read_text_file(tmp.path / "params.bin.json"));
  REQUIRE(sidecar.contains("groups"));
  std::size_t covered = 0;
  for (const auto& g : sidecar["groups"]) covered += g["length"].get<std::size_t>();
  CHECK(covered == model::param_count(p));
}

TEST_CASE("corrupt checkpoints are rejected") {
  const model::ModelConfig cfg = tiny_model();
  const model::Params p = model::init_params(cfg);
  std::string bytes = io::serialize_params(p, cfg);

  std::string truncated = bytes.substr(0, bytes.size() - 4);
  CHECK_THROWS_AS(static_cast<void>(io::parse_params(truncated)), IoError);
  CHECK_THROWS_AS(static_cast<void>(io::parse_params("short")), IoError);

  std::string wrong_version = bytes;
  wrong_version[24] = 9;  // 7th header int: format version
  CHECK_THROWS_AS(static_cast<void>(io::parse_params(wrong_version)), IoError);
}

TEST_CASE("float blobs round trip") {
  TempDir tmp("ntkrl_floats");
  fs::create_directories(tmp.path);
  const fs::path file = tmp.path / "values.bin";
  const std::vector<double> values = {0.0, -1.5, 3.141592653589793, 1e-300};
  io::write_floats(file, values);
  CHECK(io::read_floats(file) == values);
  CHECK_THROWS_AS(static_cast<void>(io::read_floats(tmp.path / "missing.bin")), IoError);
}

TEST_CASE("run directory writer: lock, manifest, tamper detection") {
  TempDir tmp("ntkrl_rundir");
  const fs::path dir = tmp.path / "run";
  {
    cli::RunDirWriter w(dir);
    CHECK(fs::exists(dir / ".lock"));
    // a second writer sees a non-empty directory (the lock file counts)
    CHECK_THROWS_AS((cli::RunDirWriter(dir)), ConfigError);
    w.write_file("a.txt", "alpha\n");
    io::write_text_file(w.reserve("b.csv"), "x\n1\n");
    w.finalize("testcmd", {{"note", 7}});
    CHECK(!fs::exists(dir / ".lock"));
  }

  const nlohmann::json manifest = cli::verify_run_dir(dir);
  CHECK(manifest["command"] == "testcmd");
  CHECK(manifest["note"] == 7);
  CHECK(manifest["format_version"] == 1);
  REQUIRE(manifest["files"].contains("a.txt"));
  CHECK(manifest["files"]["a.txt"] == io::sha256_hex("alpha\n"));

  // non-empty directory cannot be reused
  CHECK_THROWS_AS((cli::RunDirWriter(dir)), ConfigError);

  io::write_text_file(dir / "a.txt", "tampered\n");
  CHECK_THROWS_AS(static_cast<void>(cli::verify_run_dir(dir)), IntegrityError);

  CHECK_THROWS_AS(static_cast<void>(cli::verify_run_dir(tmp.path / "nope")), IoError);
}

TEST_CASE("abandoned writers release the lock so the path can be retried") {
  TempDir tmp("ntkrl_relock");
  const fs::path dir = tmp.path / "run";
  {
    cli::RunDirWriter w(dir);
    // destructor runs without finalize: the lock must not leak
  }
  CHECK(!fs::exists(dir / ".lock"));
  cli::RunDirWriter again(dir);  // empty dir: accepted
  again.finalize("retry", nlohmann::json::object());
  CHECK(cli::verify_run_dir(dir)["command"] == "retry");
}

TEST_CASE("prompts file round trip") {
  corpus::TaskSpec t;
  t.vocab.size = 6;
  t.prompt_count = 5;
  t.min_prompt_len = 2;
  t.max_prompt_len = 4;
  t.seed = 3;
  const std::vector<corpus::Prompt> prompts = corpus::generate_prompts(t);

  TempDir tmp("ntkrl_prompts");
  fs::create_directories(tmp.path);
  const fs::path file = tmp.path / "prompts.txt";
  corpus::save_prompts(file, prompts);
  const std::vector<corpus::Prompt> back = corpus::load_prompts(file);
  REQUIRE(back.size() == prompts.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].id == prompts[i].id);
    CHECK(back[i].tokens == prompts[i].tokens);
  }
}
