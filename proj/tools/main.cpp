#include <iostream>

#include <CLI11.hpp>

#include "avsr/error.hpp"
#include "commands.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

}  // namespace

int main(int argc, char** argv) {
  using namespace avsr::cli;
  CLI::App app{"Audio-visual speech recognition on a synthetic multilingual corpus"};
  app.require_subcommand(1);

  GlobalOptions g;
  std::string config, out;
  std::uint64_t seed = 0;
  auto add_globals = [&](CLI::App* sub) {
    sub->add_option("--config", config, "run configuration (JSON)")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "root seed; overrides the config");
    sub->add_option("--out", out, "run directory; overrides the config");
    sub->add_flag("--force", g.force, "overwrite existing outputs");
    sub->add_option("--jobs", g.jobs, "parallel sweep cells")->check(CLI::PositiveNumber);
  };

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic corpus");
  add_globals(gen);

  TrainOptions train_opt;
  std::string resume;
  auto* train = app.add_subcommand("train", "run one training stage");
  add_globals(train);
  train->add_option("--stage", train_opt.stage, "1 (audio-only) or 2 (gated fusion)")
      ->required()
      ->check(CLI::IsMember({1, 2}));
  train->add_option("--resume", resume, "continue from a last.ckpt")->check(CLI::ExistingFile);

  EvalOptions eval_opt;
  std::string mode, noise;
  double snr = 0.0;
  auto* eval = app.add_subcommand("eval", "decode the test split under one condition");
  add_globals(eval);
  std::string ckpt;
  eval->add_option("--ckpt", ckpt, "checkpoint to evaluate")->required()->check(CLI::ExistingFile);
  eval->add_option("--mode", mode, "av, a or v")->check(CLI::IsMember({"av", "a", "v", "AV", "A", "V"}));
  eval->add_option("--noise", noise, "babble, speech, music or natural");
  auto* snr_opt = eval->add_option("--snr", snr, "SNR in dB");
  eval->add_flag("--clean", eval_opt.clean, "no added noise");

  SweepCmdOptions sweep_opt;
  std::string ckpt_a, ckpt_av;
  auto* sweep = app.add_subcommand("sweep", "noise category x SNR grid for the A-only and AV models");
  add_globals(sweep);
  sweep->add_option("--ckpt-a", ckpt_a, "audio-only checkpoint (default <out>/stage1/best.ckpt)")
      ->check(CLI::ExistingFile);
  sweep->add_option("--ckpt-av", ckpt_av, "audio-visual checkpoint (default <out>/stage2/best.ckpt)")
      ->check(CLI::ExistingFile);

  AblateCmdOptions ablate_opt;
  std::string policies, ablate_ckpt;
  auto* ablate = app.add_subcommand("ablate", "stage-2 dropout policy ablation");
  add_globals(ablate);
  ablate->add_option("--policies", policies, "JSON array of {p_av, p_a, p_v}")->check(CLI::ExistingFile);
  ablate->add_option("--ckpt", ablate_ckpt, "stage-1 checkpoint (default <out>/stage1/best.ckpt)")
      ->check(CLI::ExistingFile);

  PipelineOptions pipe_opt;
  auto* pipeline = app.add_subcommand("pipeline", "gen-data, stage 1, stage 2, sweep and report");
  add_globals(pipeline);
  pipeline->add_flag("--skip-stage2", pipe_opt.skip_stage2, "audio-only baseline only");

  std::string run_dir;
  auto* report = app.add_subcommand("report", "summarize a run's sweep");
  add_globals(report);
  report->add_option("run", run_dir, "run directory (default --out)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  auto* sub = app.get_subcommands().front();
  if (!config.empty()) g.config = config;
  if (sub->count("--seed")) g.seed = seed;
  if (!out.empty()) g.out = out;

  try {
    if (sub == gen) return cmd_gen_data(g, std::cout);
    if (sub == train) {
      if (!resume.empty()) train_opt.resume = resume;
      return cmd_train(g, train_opt, std::cout);
    }
    if (sub == eval) {
      eval_opt.ckpt = ckpt;
      if (!mode.empty()) eval_opt.mode = mode;
      if (!noise.empty()) eval_opt.noise = noise;
      if (snr_opt->count()) eval_opt.snr_db = snr;
      return cmd_eval(g, eval_opt, std::cout);
    }
    if (sub == sweep) {
      if (!ckpt_a.empty()) sweep_opt.ckpt_a = ckpt_a;
      if (!ckpt_av.empty()) sweep_opt.ckpt_av = ckpt_av;
      return cmd_sweep(g, sweep_opt, std::cout);
    }
    if (sub == ablate) {
      if (!policies.empty()) ablate_opt.policies = policies;
      if (!ablate_ckpt.empty()) ablate_opt.ckpt = ablate_ckpt;
      return cmd_ablate(g, ablate_opt, std::cout);
    }
    if (sub == pipeline) return cmd_pipeline(g, pipe_opt, std::cout);
    if (sub == report) {
      return cmd_report(g, run_dir.empty() ? std::nullopt : std::optional<std::filesystem::path>(run_dir), std::cout);
    }
  } catch (const avsr::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
