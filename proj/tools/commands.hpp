#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>

#include "avsr/config.hpp"
#include "avsr/eval.hpp"

namespace avsr::cli {

/// Flags shared by every command.
struct GlobalOptions {
  std::optional<std::filesystem::path> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out;
  bool force = false;
  std::size_t jobs = 1;
  bool quiet = false;
};

/// Loads --config (or <out>/config.json when present, else defaults) and applies --seed/--out.
RunConfig resolve_config(const GlobalOptions& g);

// Fixed layout of a run directory.
namespace layout {
inline const char* kConfig = "config.json";
inline const char* kManifest = "MANIFEST";
inline const char* kSummary = "run_summary.json";
inline const char* kCorpus = "corpus";
inline std::filesystem::path stage_dir(int stage) { return "stage" + std::to_string(stage); }
inline const char* kBest = "best.ckpt";
inline const char* kLast = "last.ckpt";
inline const char* kTrainLog = "train_log.csv";
inline const char* kSweep = "sweep";
inline const char* kEval = "eval";
inline const char* kAblate = "ablate";
inline const char* kReport = "report.txt";
}  // namespace layout

int cmd_gen_data(const GlobalOptions& g, std::ostream& log);

struct TrainOptions {
  int stage = 1;
  std::optional<std::filesystem::path> resume;
};
int cmd_train(const GlobalOptions& g, const TrainOptions& t, std::ostream& log);

struct EvalOptions {
  std::filesystem::path ckpt;
  std::optional<std::string> mode;
  std::optional<std::string> noise;
  std::optional<double> snr_db;
  bool clean = false;
};
int cmd_eval(const GlobalOptions& g, const EvalOptions& e, std::ostream& log);

struct SweepCmdOptions {
  std::optional<std::filesystem::path> ckpt_a;
  std::optional<std::filesystem::path> ckpt_av;
};
int cmd_sweep(const GlobalOptions& g, const SweepCmdOptions& s, std::ostream& log);

struct AblateCmdOptions {
  std::optional<std::filesystem::path> policies;
  std::optional<std::filesystem::path> ckpt;
};
int cmd_ablate(const GlobalOptions& g, const AblateCmdOptions& a, std::ostream& log);

struct PipelineOptions {
  bool skip_stage2 = false;
};
int cmd_pipeline(const GlobalOptions& g, const PipelineOptions& p, std::ostream& log);

int cmd_report(const GlobalOptions& g, const std::optional<std::filesystem::path>& run_dir, std::ostream& log);

/// Reads a policies file: a JSON array of {"p_av", "p_a", "p_v"} objects.
std::vector<DropoutPolicy> load_policies(const std::filesystem::path& path);

/// Rewrites <run>/MANIFEST: every file under the run directory with its SHA-256.
void write_manifest(const std::filesystem::path& run_dir);

/// Human-readable report text built from the sweep CSV of a run.
std::string build_report(const std::filesystem::path& run_dir);

}  // namespace avsr::cli
