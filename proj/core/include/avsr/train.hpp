#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "avsr/fusion_dropout.hpp"
#include "avsr/model.hpp"
#include "avsr/noise.hpp"
#include "avsr/optim.hpp"
#include "avsr/synth_data.hpp"

namespace avsr {

/// Settings for one training stage.
struct StageConfig {
  int stage = 1;
  std::size_t steps = 3000;
  std::size_t batch_size = 16;
  AdamWConfig adamw{};
  std::size_t warmup_steps = 100;
  std::size_t validation_interval = 200;
  /// Stage 2 only.
  std::optional<DropoutPolicy> dropout;
  /// Stage 2 only: whether the visual encoder is fine-tuned or frozen.
  bool finetune_video_encoder = true;
  double snr_db = 0.0;
  std::uint64_t seed = 0;
  /// Keys the frozen validation noise; shared by both stages.
  std::uint64_t validation_seed = 0;

  /// Throws ConfigError (stage-1 dropout policy, interval not dividing steps, ...).
  void validate() const;
  double learning_rate(std::size_t step) const;
};

struct ValidationRecord {
  std::size_t step = 0;
  double accuracy = 0.0;
  double loss = 0.0;
};

struct StepRecord {
  std::size_t step = 0;  ///< 1-based index of the completed update
  double loss = 0.0;     ///< token-weighted mean loss of the batch
  double accuracy = 0.0;
  std::optional<ValidationRecord> validation;
};

struct TrainResult;

/// State handed to TrainHooks::on_validation after every validation pass.
struct TrainSnapshot {
  const AvsrModel& model;
  const AdamW& optimizer;
  std::size_t step;
  const TrainResult& progress;
  bool improved;  ///< this validation produced a new best model
};

/// Optional instrumentation for training runs.
struct TrainHooks {
  std::function<void(const StepRecord&)> on_step;
  std::function<void(const TrainSnapshot&)> on_validation;
  /// Called after every example's backward pass with the L2 norm of the
  /// change it caused in the visual-encoder gradients (stage 2 only).
  std::function<void(std::size_t step, Modality selection, double video_grad_delta)> on_example;
};

struct TrainResult {
  AvsrModel best_model;
  std::size_t best_step = 0;
  double best_accuracy = 0.0;
  std::vector<ValidationRecord> history;
  std::vector<StepRecord> log;
  std::size_t final_step = 0;
};

/// Everything needed to continue an interrupted stage bit-exactly.
struct ResumeState {
  AvsrModel model;
  AdamW optimizer;
  std::size_t step = 0;  ///< last completed update
  std::vector<ValidationRecord> history;
  AvsrModel best_model;
};

/// Continues a stage from `state.step + 1` to `cfg.steps`. Trainable flags are
/// re-applied from the stage number. The returned log covers resumed steps only.
TrainResult resume_training(ResumeState state, const Corpus& corpus, const NoiseBank& bank, const StageConfig& cfg,
                            const TrainHooks& hooks = {});

/// One teacher-forcing example: decoder inputs and shifted targets.
struct TeacherForcedExample {
  std::vector<TokenId> inputs;   ///< [bos, lang, c_0 .. c_{L-1}]
  std::vector<TokenId> targets;  ///< [pad, c_0 .. c_{L-1}, eos]; pad is ignored
};

TeacherForcedExample make_example(const SpecialTokens& specials, const Utterance& utt);

/// Audio frames with frozen validation/evaluation noise for one example.
struct NoisyInput {
  Frames audio;
  NoiseCategory category = NoiseCategory::babble;
};

/// Mixes noise of a category drawn uniformly from the four categories.
NoisyInput noisy_audio(const Utterance& utt, const NoiseBank& bank, double snr_db, Rng& rng);

struct ValidationResult {
  double accuracy = 0.0;
  double loss = 0.0;
  std::size_t counted = 0;
};

/// Teacher-forced token accuracy on a noisy split. Noise for example i is keyed
/// by (seed, i) only, so repeated calls see identical inputs.
ValidationResult validate(const AvsrModel& model, const std::vector<Utterance>& split, const NoiseBank& bank,
                          double snr_db, std::uint64_t seed, Modality mode = Modality::AV);

/// Index of the best record: highest accuracy, earliest step on ties.
std::size_t select_best(const std::vector<ValidationRecord>& history);

/// Builds the stage-1 (audio-only) model for a corpus.
ModelConfig model_config_for(const ModelConfig& dims, const CorpusConfig& corpus);

/// Fine-tunes every audio-backbone parameter on noisy audio. The model must not
/// have gated layers.
TrainResult train_stage1(AvsrModel model, const Corpus& corpus, const NoiseBank& bank, const StageConfig& cfg,
                         const TrainHooks& hooks = {});

/// Adds gated layers to a copy of the stage-1 model, freezes the audio
/// backbone, and trains gated layers (plus the visual encoder when enabled)
/// with decoder modality dropout.
TrainResult train_stage2(const AvsrModel& stage1, const Corpus& corpus, const NoiseBank& bank, const StageConfig& cfg,
                         const TrainHooks& hooks = {});

/// Prepares the stage-2 model (gated layers + trainable flags) without training.
AvsrModel prepare_stage2_model(const AvsrModel& stage1, const StageConfig& cfg);

}  // namespace avsr
