#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "avsr/fusion_dropout.hpp"
#include "avsr/model.hpp"
#include "avsr/noise.hpp"
#include "avsr/synth_data.hpp"
#include "avsr/train.hpp"

namespace avsr {

struct DecodeResult {
  std::vector<TokenId> tokens;  ///< generated tokens, excluding bos/lang and the final eos
  bool truncated = false;       ///< max_len reached without eos
};

/// Greedy decoding from [bos, lang_token]; stops at eos or after max_len tokens.
DecodeResult greedy_decode(const AvsrModel& model, const EncodedStreams& streams, TokenId lang_token,
                           std::size_t max_len);

/// Lower-cases, removes punctuation except apostrophes (ASCII ' and U+2019),
/// collapses whitespace runs and trims.
std::string normalize_text(std::string_view s);

/// Splits normalized text on single spaces.
std::vector<std::string> split_words(std::string_view s);

/// Content tokens become "l<lang>w<index>"; anything else becomes a tag such as "<eos>".
std::vector<std::string> render_words(std::span<const TokenId> tokens, const CorpusConfig& corpus);

struct WerBreakdown {
  std::size_t substitutions = 0;
  std::size_t deletions = 0;
  std::size_t insertions = 0;
  std::size_t ref_words = 0;

  std::size_t errors() const { return substitutions + deletions + insertions; }
  double wer() const { return static_cast<double>(errors()) / static_cast<double>(ref_words); }
  WerBreakdown& operator+=(const WerBreakdown& o);
  friend bool operator==(const WerBreakdown&, const WerBreakdown&) = default;
};

/// Minimum edit distance alignment with unit costs; either side may be empty.
WerBreakdown edit_alignment(std::span<const std::string> ref, std::span<const std::string> hyp);

/// edit_alignment for scoring: throws on an empty reference, where WER is undefined.
WerBreakdown wer(std::span<const std::string> ref, std::span<const std::string> hyp);

/// Language sets over which averages are taken, by label.
struct LanguageGroups {
  std::vector<std::string> non_en;
  std::vector<std::string> hr;
  std::vector<std::string> lr;
};

std::string language_label(std::size_t lang_id);

/// Non-lang-0 languages; the higher-resource half (by training count) is HR,
/// the rest LR.
LanguageGroups default_groups(const CorpusConfig& corpus);

struct EvalCondition {
  NoiseCategory category = NoiseCategory::babble;
  double snr_db = 0.0;
  Modality mode = Modality::AV;
  bool clean = false;

  std::string category_label() const { return clean ? "clean" : to_string(category); }
};

struct EvalReport {
  std::map<std::string, double> per_language;
  std::map<std::string, WerBreakdown> breakdown;
  double avg_non_en = 0.0;
  double avg_hr = 0.0;
  double avg_lr = 0.0;
  EvalCondition condition;
};

/// Unweighted means of per-language WER over each group. Missing languages throw.
EvalReport aggregate(const std::map<std::string, double>& per_language, const LanguageGroups& groups);

struct Hypothesis {
  std::uint64_t utterance_id = 0;
  std::size_t lang_id = 0;
  std::vector<TokenId> tokens;
  std::vector<std::string> words;
  bool truncated = false;
  WerBreakdown score;
};

struct EvalResult {
  EvalReport report;
  std::vector<Hypothesis> hypotheses;
};

/// Decodes a split under one noise condition. Noise for an utterance depends
/// only on (seed, category, utterance id), never on the model.
EvalResult evaluate(const AvsrModel& model, const Corpus& corpus, const std::vector<Utterance>& split,
                    const NoiseBank& bank, const EvalCondition& condition, std::uint64_t seed,
                    const LanguageGroups& groups, std::size_t max_len);

/// Noisy audio for one evaluation cell.
Frames eval_audio(const Utterance& utt, const NoiseBank& bank, const EvalCondition& condition, std::uint64_t seed);

struct SweepModel {
  std::string name;
  const AvsrModel* model = nullptr;
  Modality mode = Modality::AV;
};

struct SweepRow {
  std::string model;
  Modality mode = Modality::AV;
  std::string category;  ///< noise category, "clean" or "music+natural"
  std::optional<double> snr_db;
  std::map<std::string, double> per_language;
  double avg_non_en = 0.0;
  double avg_hr = 0.0;
  double avg_lr = 0.0;
  bool failed = false;
  std::string error;
};

struct SweepOptions {
  std::vector<NoiseCategory> categories{kNoiseCategories.begin(), kNoiseCategories.end()};
  std::vector<double> snrs_db = {-10.0, -5.0, 0.0, 5.0, 10.0};
  bool include_clean = true;
  /// Adds the merged music+natural rows (mean of the two per language).
  bool merge_music_natural = true;
  std::size_t jobs = 1;
};

/// One row per (model, category, snr), plus clean and merged rows. A failing
/// cell is marked failed; the rest of the grid still runs.
std::vector<SweepRow> sweep(const std::vector<SweepModel>& models, const Corpus& corpus, const NoiseBank& bank,
                            const SweepOptions& options, std::uint64_t seed, const LanguageGroups& groups,
                            std::size_t max_len);

/// Per-category mean over SNRs of one average column, per model.
struct PlotPoint {
  std::string category;
  std::map<std::string, double> mean_wer;  ///< model name -> mean WER
};

enum class AverageColumn { non_en, hr, lr };
double column_value(const SweepRow& row, AverageColumn column);

std::vector<PlotPoint> plot_data(const std::vector<SweepRow>& rows, AverageColumn column);

/// 100 (wer_a - wer_av) / wer_a; 0 when both are 0, NaN when only wer_a is 0.
double relative_improvement(double wer_a, double wer_av);

void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepRow>& rows,
                     const std::vector<std::string>& languages);
std::vector<SweepRow> read_sweep_csv(const std::filesystem::path& path);
void write_plot_csv(const std::filesystem::path& path, const std::vector<PlotPoint>& points,
                    const std::string& model_a, const std::string& model_av);

struct AblationRow {
  DropoutPolicy policy;
  double avg_non_en = 0.0;
  double avg_hr = 0.0;
  double avg_lr = 0.0;
  std::size_t best_step = 0;
  double dev_accuracy = 0.0;
};

struct AblationOptions {
  StageConfig stage2;
  std::vector<DropoutPolicy> policies;
  EvalCondition condition;
  std::uint64_t eval_seed = 0;
  std::size_t max_len = 0;
  /// Called after each policy finishes, in input order.
  std::function<void(const AblationRow&)> on_row;
};

/// Trains one stage-2 model per policy from the same stage-1 model and seed,
/// evaluates each on the test split, and sorts by avg_non_en (stable).
std::vector<AblationRow> ablate(const AvsrModel& stage1, const Corpus& corpus, const NoiseBank& bank,
                                const AblationOptions& options, const LanguageGroups& groups);

void write_ablation_csv(const std::filesystem::path& path, const std::vector<AblationRow>& rows);

/// Formats a double the way every CSV in a run does (shortest round-trip form).
std::string format_number(double v);

}  // namespace avsr
