#include "ntkrl/runner.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <map>
#include <ostream>
#include <sstream>

#include "ntkrl/analyzer.hpp"
#include "ntkrl/io.hpp"
#include "ntkrl/ntk.hpp"
#include "ntkrl/verify.hpp"

namespace ntkrl::cli {

using nlohmann::json;

namespace {

constexpr int kManifestFormatVersion = 1;
constexpr std::uint64_t kSftCorpusStream = 0xFFFF0001ull;
constexpr std::uint64_t kAnalyzeStream = 0xA7A1ull;

std::string epoch_file_name(int epoch) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "params_epoch_%04d.bin", epoch);
  return buf;
}

}  // namespace

RunDirWriter::RunDirWriter(std::filesystem::path dir) : dir_(std::move(dir)) {
  namespace fs = std::filesystem;
  if (fs::exists(dir_)) {
    if (!fs::is_directory(dir_) || !fs::is_empty(dir_))
      throw ConfigError("output path exists and is not an empty directory: " + dir_.string());
  } else {
    fs::create_directories(dir_);
  }
  const fs::path lock = dir_ / ".lock";
  const int fd = ::open(lock.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) throw IoError("run directory is locked (cannot create " + lock.string() + ")");
  ::close(fd);
}

RunDirWriter::~RunDirWriter() {
  if (!finalized_) {
    std::error_code ec;
    std::filesystem::remove(dir_ / ".lock", ec);
  }
}

void RunDirWriter::write_file(const std::string& name, std::string_view bytes) {
  io::write_text_file(dir_ / name, bytes);
  files_.push_back(name);
}

std::filesystem::path RunDirWriter::reserve(const std::string& name) {
  files_.push_back(name);
  return dir_ / name;
}

void RunDirWriter::finalize(const std::string& command, const json& extra) {
  json files = json::object();
  std::vector<std::string> sorted = files_;
  std::sort(sorted.begin(), sorted.end());
  for (const std::string& f : sorted) files[f] = io::sha256_file(dir_ / f);
  json manifest{{"format_version", kManifestFormatVersion},
                {"command", command},
                {"created_unix",
                 std::chrono::duration_cast<std::chrono::seconds>(
                     std::chrono::system_clock::now().time_since_epoch())
                     .count()},
                {"files", files}};
  for (const auto& [k, v] : extra.items()) manifest[k] = v;
  io::write_text_file(dir_ / "manifest.json", manifest.dump(2) + "\n");
  std::filesystem::remove(dir_ / ".lock");
  finalized_ = true;
}

json verify_run_dir(const std::filesystem::path& dir) {
  const json manifest = json::parse(io::read_text_file(dir / "manifest.json"));
  if (!manifest.contains("files")) throw IntegrityError("manifest has no file table: " + dir.string());
  for (const auto& [name, digest] : manifest.at("files").items()) {
    const std::string actual = io::sha256_file(dir / name);
    if (actual != digest.get<std::string>())
      throw IntegrityError("digest mismatch for " + (dir / name).string());
  }
  return manifest;
}

LoadedRun load_run(const std::filesystem::path& dir) {
  LoadedRun run;
  run.dir = dir;
  run.manifest = verify_run_dir(dir);
  const int ver = run.manifest.value("format_version", -1);
  if (ver != kManifestFormatVersion)
    throw ConfigError("run " + dir.string() + ": unsupported manifest format version " +
                      std::to_string(ver));
  run.config = parse_config(json::parse(io::read_text_file(dir / "config.json")));
  run.prompts = corpus::load_prompts(dir / "prompts.txt");
  return run;
}

namespace {

json seeds_json(const RunConfig& cfg) {
  return json{{"model", cfg.model.seed}, {"task", cfg.task.seed}, {"train", cfg.train.seed}};
}

std::string prompts_text(std::span<const corpus::Prompt> prompts) {
  std::ostringstream ss;
  for (const corpus::Prompt& p : prompts) {
    for (std::size_t j = 0; j < p.tokens.size(); ++j) {
      if (j) ss << ' ';
      ss << p.tokens[j];
    }
    ss << '\n';
  }
  return ss.str();
}

std::string metrics_csv(const std::vector<trainer::EpochRow>& rows) {
  std::ostringstream ss;
  ss << "epoch,mean_raw_reward,mean_khat,mean_kl,mean_grad_norm";
  for (const trainer::GroupDistance& g : rows.front().dists) ss << ",dist_" << g.name;
  ss << ",first_token_entropy\n";
  for (const trainer::EpochRow& r : rows) {
    ss << r.epoch << ',' << fmt_double(r.mean_raw_reward) << ',' << fmt_double(r.mean_khat) << ','
       << fmt_double(r.mean_kl) << ',' << fmt_double(r.mean_grad_norm);
    for (const trainer::GroupDistance& g : r.dists) ss << ',' << fmt_double(g.distance);
    ss << ',' << fmt_double(r.first_token_entropy) << '\n';
  }
  return ss.str();
}

std::string group_track_csv(const trainer::GroupTrackTable& t) {
  std::ostringstream ss;
  ss << "epoch,group,distance,normalized\n";
  for (Eigen::Index e = 0; e < t.distance.rows(); ++e)
    for (std::size_t g = 0; g < t.groups.size(); ++g)
      ss << e << ',' << t.groups[g] << ','
         << fmt_double(t.distance(e, static_cast<Eigen::Index>(g))) << ','
         << fmt_double(t.normalized(e, static_cast<Eigen::Index>(g))) << '\n';
  return ss.str();
}

json step_record_json(const trainer::StepRecord& rec) {
  json batch = json::array();
  for (const trainer::BatchGroup& g : rec.batch) {
    json rollouts = json::array();
    for (const trainer::RolloutRecord& r : g.rollouts)
      rollouts.push_back({{"response", r.response},
                          {"raw_reward", r.raw_reward},
                          {"norm_reward", r.norm_reward},
                          {"log_ratio", r.log_ratio},
                          {"khat", r.khat},
                          {"advantage", r.advantage}});
    batch.push_back({{"prompt_id", g.prompt.id}, {"rollouts", std::move(rollouts)}});
  }
  return json{{"step", rec.step},
              {"epoch", rec.epoch},
              {"classifier_only", rec.classifier_only},
              {"params_before", rec.params_before},
              {"params_after", rec.params_after},
              {"eta", rec.eta},
              {"grad_norm", rec.grad_norm},
              {"clip_scale", rec.clip_scale},
              {"batch", std::move(batch)},
              {"taylor_residuals", rec.taylor_residuals}};
}

void run_rl_command(const RunConfig& cfg, const std::filesystem::path& ref,
                    const std::filesystem::path& out, bool classifier_first) {
  validate(cfg);
  const LoadedRun ref_run = load_run(ref);
  if (to_json(cfg).at("model") != to_json(ref_run.config).at("model"))
    throw ConfigError("model section differs from the reference run's config");
  if (to_json(cfg).at("task") != to_json(ref_run.config).at("task"))
    throw ConfigError("task section differs from the reference run's config");

  const io::LoadedParams ref_params = io::read_params_file(ref / "params_final.bin");
  model::check_shape(ref_params.params, cfg.model);

  trainer::TrainerState state = trainer::make_state(cfg.model, cfg.task, cfg.train,
                                                    ref_run.prompts, ref_params.params);
  if (state.normalizer.floored)
    std::fprintf(stderr, "warning: reward std floored to 1e-8 during normalizer fit\n");

  std::vector<model::Context> targets;
  for (int i = 0; i < cfg.analysis.taylor_targets; ++i)
    targets.push_back({state.prompts[static_cast<std::size_t>(i)], {}});

  const int stage = classifier_first ? cfg.train.cf_stage_epochs : 0;
  trainer::RunResult result = trainer::cf_rl_run(state, stage, targets);

  RunDirWriter w(out);
  w.write_file("config.json", to_json(cfg).dump(2) + "\n");
  w.write_file("prompts.txt", prompts_text(state.prompts));
  w.write_file("normalizer.json", json{{"mean", state.normalizer.mean},
                                       {"std_dev", state.normalizer.std_dev},
                                       {"floored", state.normalizer.floored},
                                       {"pool_size", state.normalizer_pool.size()}}
                                      .dump(2) +
                                      "\n");
  {
    std::ostringstream log;
    for (const trainer::StepRecord& rec : result.steps) log << step_record_json(rec).dump() << '\n';
    w.write_file("run_log.ndjson", log.str());
  }
  w.write_file("metrics.csv", metrics_csv(result.epochs));
  w.write_file("group_track.csv",
               group_track_csv(trainer::build_group_track(state.ref_params, result.checkpoints,
                                                          cfg.model)));
  for (std::size_t e = 0; e < result.checkpoints.size(); ++e) {
    const std::string name = epoch_file_name(static_cast<int>(e));
    io::write_params_file(w.reserve(name), result.checkpoints[e], cfg.model);
    w.reserve(name + ".json");  // sidecar written by write_params_file
  }
  io::write_params_file(w.reserve("params_final.bin"), result.checkpoints.back(), cfg.model);
  w.reserve("params_final.bin.json");
  w.finalize(classifier_first ? "cfrl" : "rl",
             json{{"config_sha256", io::sha256_hex(to_json(cfg).dump(2) + "\n")},
                  {"seeds", seeds_json(cfg)},
                  {"ref_config_sha256", ref_run.manifest.value("config_sha256", "")},
                  {"cf_stage_epochs_used", stage}});
}

}  // namespace

void cmd_pretrain(const RunConfig& cfg, const std::filesystem::path& out) {
  validate(cfg);
  const std::vector<corpus::Prompt> prompts = corpus::generate_prompts(cfg.task);
  Rng corpus_rng = Rng(cfg.task.seed).split(kSftCorpusStream);
  const std::vector<trainer::SftExample> sft_corpus =
      trainer::build_sft_corpus(prompts, cfg.task, corpus_rng);
  trainer::SftResult sft = trainer::sft_pretrain(model::init_params(cfg.model), cfg.model,
                                                 sft_corpus, cfg.sft.epochs, cfg.sft.learning_rate);

  RunDirWriter w(out);
  w.write_file("config.json", to_json(cfg).dump(2) + "\n");
  w.write_file("prompts.txt", prompts_text(prompts));
  {
    std::ostringstream ss;
    ss << "epoch,loss\n";
    for (std::size_t e = 0; e < sft.loss.size(); ++e)
      ss << e << ',' << fmt_double(sft.loss[e]) << '\n';
    w.write_file("sft_loss.csv", ss.str());
  }
  io::write_params_file(w.reserve("params_final.bin"), sft.params, cfg.model);
  w.reserve("params_final.bin.json");
  w.finalize("pretrain", json{{"config_sha256", io::sha256_hex(to_json(cfg).dump(2) + "\n")},
                              {"seeds", seeds_json(cfg)}});
}

void cmd_rl(const RunConfig& cfg, const std::filesystem::path& ref,
            const std::filesystem::path& out) {
  run_rl_command(cfg, ref, out, false);
}

void cmd_cfrl(const RunConfig& cfg, const std::filesystem::path& ref,
              const std::filesystem::path& out) {
  run_rl_command(cfg, ref, out, true);
}

int cmd_verify(const RunConfig& cfg, std::ostream& out) {
  const std::vector<CheckResult> results = run_verify_suite(cfg);
  print_check_table(results, out);
  int failures = 0;
  for (const CheckResult& r : results)
    if (!r.pass) ++failures;
  return failures;
}

namespace {

std::vector<model::Params> load_checkpoints(const LoadedRun& run) {
  std::vector<std::string> names;
  for (const auto& [name, digest] : run.manifest.at("files").items())
    if (name.starts_with("params_epoch_") && name.ends_with(".bin")) names.push_back(name);
  std::sort(names.begin(), names.end());
  std::vector<model::Params> out;
  for (const std::string& n : names) out.push_back(io::read_params_file(run.dir / n).params);
  if (out.empty()) throw ConfigError("run " + run.dir.string() + " has no epoch checkpoints");
  return out;
}

std::string entropy_csv(const std::vector<analyzer::EntropyReport>& reports) {
  std::ostringstream ss;
  ss << "epoch,prompt_id,entropy\n";
  for (std::size_t e = 0; e < reports.size(); ++e)
    for (std::size_t i = 0; i < reports[e].prompt_ids.size(); ++i)
      ss << e << ',' << reports[e].prompt_ids[i] << ',' << fmt_double(reports[e].entropy[i])
         << '\n';
  return ss.str();
}

std::string entropy_summary_csv(const std::vector<analyzer::EntropyReport>& reports) {
  std::ostringstream ss;
  ss << "epoch,mean,std,q25,median,q75\n";
  for (std::size_t e = 0; e < reports.size(); ++e)
    ss << e << ',' << fmt_double(reports[e].mean) << ',' << fmt_double(reports[e].std_dev) << ','
       << fmt_double(reports[e].q25) << ',' << fmt_double(reports[e].median) << ','
       << fmt_double(reports[e].q75) << '\n';
  return ss.str();
}

}  // namespace

void cmd_analyze(std::span<const std::filesystem::path> runs, const std::filesystem::path& out) {
  if (runs.empty()) throw ConfigError("analyze: need at least one run directory");
  std::vector<LoadedRun> loaded;
  for (const std::filesystem::path& r : runs) loaded.push_back(load_run(r));
  for (std::size_t i = 1; i < loaded.size(); ++i) {
    if (to_json(loaded[i].config).at("model") != to_json(loaded[0].config).at("model") ||
        to_json(loaded[i].config).at("task") != to_json(loaded[0].config).at("task"))
      throw ConfigError("analyze: runs disagree on model/task sections");
  }

  const RunConfig& cfg = loaded[0].config;
  const std::vector<corpus::Prompt>& prompts = loaded[0].prompts;
  RunDirWriter w(out);

  std::map<std::string, int> seen;
  for (const LoadedRun& run : loaded) {
    std::string base = run.dir.filename().string();
    if (base.empty()) base = run.dir.parent_path().filename().string();
    const int n = ++seen[base];
    if (n > 1) base += "_" + std::to_string(n);

    const std::vector<model::Params> ckpts = load_checkpoints(run);
    const model::Params& start = ckpts.front();
    const model::Params& last = ckpts.back();
    Rng rng = Rng(run.config.train.seed).split(kAnalyzeStream);

    std::vector<analyzer::EntropyReport> entropy;
    std::ostringstream cosine, cnorms, div;
    cosine << "epoch,mean,std,min,excluded\n";
    cnorms << "epoch,mean,std\n";
    div << "epoch,semantic,style\n";
    for (std::size_t e = 0; e < ckpts.size(); ++e) {
      entropy.push_back(
          analyzer::first_token_entropy(ckpts[e], cfg.model, prompts, std::to_string(e)));
      const analyzer::SimilarityStats cs =
          analyzer::feature_cosine_stats(ckpts[e], cfg.model, prompts);
      cosine << e << ',' << fmt_double(cs.mean) << ',' << fmt_double(cs.std_dev) << ','
             << fmt_double(cs.min) << ',' << cs.excluded << '\n';
      const analyzer::RowNormStats rs = analyzer::classifier_norm_stats(ckpts[e]);
      cnorms << e << ',' << fmt_double(rs.mean) << ',' << fmt_double(rs.std_dev) << '\n';
      Rng div_rng = rng.split(100 + e);
      const analyzer::DiversityResult dr =
          analyzer::diversity(ckpts[e], start, cfg.model, prompts, cfg.task,
                              cfg.analysis.diversity_samples, div_rng);
      div << e << ',' << fmt_double(dr.semantic) << ',' << fmt_double(dr.style) << '\n';
    }
    w.write_file(base + "_entropy.csv", entropy_csv(entropy));
    w.write_file(base + "_entropy_summary.csv", entropy_summary_csv(entropy));
    w.write_file(base + "_cosine.csv", cosine.str());
    w.write_file(base + "_classifier_norms.csv", cnorms.str());
    w.write_file(base + "_diversity.csv", div.str());

    {
      std::ostringstream bon;
      bon << "stage,n,mean_best_reward\n";
      Rng r0 = rng.split(200);
      for (const analyzer::BestOfNEntry& e :
           analyzer::best_of_n(start, cfg.model, prompts, cfg.task, cfg.analysis.best_of_n,
                               cfg.analysis.bon_samples, r0))
        bon << "epoch_0," << e.n << ',' << fmt_double(e.mean_best_reward) << '\n';
      Rng r1 = rng.split(201);
      for (const analyzer::BestOfNEntry& e :
           analyzer::best_of_n(last, cfg.model, prompts, cfg.task, cfg.analysis.best_of_n,
                               cfg.analysis.bon_samples, r1))
        bon << "final," << e.n << ',' << fmt_double(e.mean_best_reward) << '\n';
      w.write_file(base + "_bon.csv", bon.str());
    }
    {
      std::ostringstream tt;
      tt << "rank,token,delta_norm\n";
      const std::vector<analyzer::TokenUpdate> top =
          analyzer::top_token_updates(start.classifier, last.classifier, 5);
      for (std::size_t i = 0; i < top.size(); ++i)
        tt << (i + 1) << ',' << top[i].token << ',' << fmt_double(top[i].delta_norm) << '\n';
      w.write_file(base + "_top_tokens.csv", tt.str());
    }
    {
      // Table-2 analog: median split on mean sampled reward under the final policy
      Rng split_rng = rng.split(300);
      const corpus::PolicySampler sampler = [&](const corpus::Prompt& p, Rng& r) {
        return model::sample_response(last, cfg.model, p, cfg.task.max_response_len, r);
      };
      const std::vector<double> pool = corpus::sample_reward_pool(
          sampler, prompts, cfg.task, cfg.train.normalizer_samples_per_prompt, split_rng);
      const int spp = cfg.train.normalizer_samples_per_prompt;
      std::vector<double> means(prompts.size(), 0.0);
      for (std::size_t i = 0; i < prompts.size(); ++i) {
        for (int s = 0; s < spp; ++s) means[i] += pool[i * static_cast<std::size_t>(spp) + s];
        means[i] /= static_cast<double>(spp);
      }
      const corpus::RewardSplit split = corpus::split_by_reward(means);
      std::vector<corpus::Prompt> low, high;
      for (std::size_t i : split.low) low.push_back(prompts[i]);
      for (std::size_t i : split.high) high.push_back(prompts[i]);
      std::ostringstream gg;
      gg << "group,count,mean,std\n";
      if (!low.empty() && !high.empty()) {
        const auto [lo, hi] = analyzer::entropy_by_reward_group(last, cfg.model, low, high);
        gg << "low," << low.size() << ',' << fmt_double(lo.mean) << ',' << fmt_double(lo.std_dev)
           << '\n';
        gg << "high," << high.size() << ',' << fmt_double(hi.mean) << ',' << fmt_double(hi.std_dev)
           << '\n';
      } else {
        // degenerate split (all rewards tie): report the whole set as "low"
        const analyzer::EntropyReport all =
            analyzer::first_token_entropy(last, cfg.model, prompts, "low");
        gg << "low," << prompts.size() << ',' << fmt_double(all.mean) << ','
           << fmt_double(all.std_dev) << '\n';
      }
      w.write_file(base + "_entropy_by_group.csv", gg.str());
    }
    {
      const trainer::GroupTrackTable track = trainer::build_group_track(start, ckpts, cfg.model);
      std::ostringstream gs;
      gs << "group,first_epoch_at_half\n";
      for (std::size_t g = 0; g < track.groups.size(); ++g) {
        int at = -1;
        for (Eigen::Index e = 0; e < track.normalized.rows(); ++e)
          if (track.normalized(e, static_cast<Eigen::Index>(g)) >= 0.5) {
            at = static_cast<int>(e);
            break;
          }
        gs << track.groups[g] << ',' << at << '\n';
      }
      w.write_file(base + "_group_speed.csv", gs.str());
    }
  }

  {
    // Kernel and update-vector sample from the first run's final checkpoint.
    const std::vector<model::Params> ckpts = load_checkpoints(loaded[0]);
    const model::Params& last = ckpts.back();
    const model::Context target{prompts[0], {}};
    const corpus::Prompt& src_prompt = prompts.size() > 1 ? prompts[1] : prompts[0];
    Rng rng = Rng(cfg.train.seed).split(kAnalyzeStream + 1);
    const std::vector<TokenId> resp =
        model::sample_response(last, cfg.model, src_prompt, cfg.task.max_response_len, rng);

    std::ostringstream uv, kb;
    ntk::write_vector_csv_header(uv);
    ntk::write_vector_csv_header(kb);
    const grad::FeatureJacobian Jt = grad::feature_jacobian(last, cfg.model, target);
    const ntk::CenterOp T{model::next_token_dist(last, cfg.model, target)};
    model::Context src{src_prompt, {}};
    const int positions = std::min<int>(2, static_cast<int>(resp.size()));
    for (int l = 0; l < positions; ++l) {
      const grad::FeatureJacobian Js = grad::feature_jacobian(last, cfg.model, src);
      const ntk::KernelBlock k = ntk::kernel_block(last, cfg.model, target, src, Jt, Js);
      const ntk::ErrorDir d =
          ntk::error_dir(model::next_token_dist(last, cfg.model, src), resp[static_cast<std::size_t>(l)]);
      ntk::append_update_vector_csv(uv, target.prompt.id, src.prompt.id, l, ntk::u_rep(k, T, d));
      ntk::append_update_vector_csv(uv, target.prompt.id, src.prompt.id, l, ntk::u_grad(k, T, d));
      ntk::append_update_vector_csv(uv, target.prompt.id, src.prompt.id, l,
                                    ntk::u_combined(k, T, d));
      ntk::append_kernel_block_csv(kb, target.prompt.id, src.prompt.id, l, k);
      src.prefix.push_back(resp[static_cast<std::size_t>(l)]);
    }
    w.write_file("update_vectors_sample.csv", uv.str());
    w.write_file("kernel_sample.csv", kb.str());
  }

  {
    // Per-prompt feature-change comparison: first run vs second (or itself).
    const std::vector<model::Params> a = load_checkpoints(loaded[0]);
    const std::vector<model::Params> b =
        loaded.size() > 1 ? load_checkpoints(loaded[1]) : a;
    const std::vector<double> diff =
        analyzer::feature_change_diff(a.front(), a.back(), b.back(), cfg.model, prompts);
    std::ostringstream fd;
    fd << "prompt_id,diff\n";
    for (std::size_t i = 0; i < prompts.size(); ++i)
      fd << prompts[i].id << ',' << fmt_double(diff[i]) << '\n';
    w.write_file("feature_diff.csv", fd.str());
  }

  json inputs = json::array();
  for (const LoadedRun& run : loaded)
    inputs.push_back({{"path", run.dir.string()},
                      {"command", run.manifest.value("command", "")},
                      {"config_sha256", run.manifest.value("config_sha256", "")}});
  w.finalize("analyze", json{{"inputs", std::move(inputs)}});
}

void cmd_report(const std::filesystem::path& run, std::ostream& out) {
  const json manifest = verify_run_dir(run);
  out << "# run: " << run.string() << '\n';
  out << "# command: " << manifest.value("command", "?") << '\n';
  if (manifest.contains("config_sha256"))
    out << "# config_sha256: " << manifest["config_sha256"].get<std::string>() << '\n';
  std::vector<std::string> csvs;
  for (const auto& [name, digest] : manifest.at("files").items())
    if (name.ends_with(".csv")) csvs.push_back(name);
  std::sort(csvs.begin(), csvs.end());
  for (const std::string& name : csvs) {
    out << "\n# file: " << name << '\n';
    out << io::read_text_file(run / name);
  }
}

}  // namespace ntkrl::cli
