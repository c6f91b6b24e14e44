#include "avsr/train.hpp"

#include <algorithm>
#include <cmath>

#include "avsr/error.hpp"

namespace avsr {
namespace {

double video_grad_norm_delta(const AvsrModel& model, const std::vector<std::vector<double>>& before) {
  double acc = 0.0;
  std::size_t k = 0;
  for (const auto& p : model.params().all()) {
    if (p.name().rfind("video_encoder.", 0) != 0) continue;
    const auto& prev = before[k++];
    if (!p.tensor().has_grad()) continue;
    const auto g = p.tensor().grad();
    for (std::size_t i = 0; i < g.size(); ++i) acc += (g[i] - prev[i]) * (g[i] - prev[i]);
  }
  return std::sqrt(acc);
}

std::vector<std::vector<double>> snapshot_video_grads(const AvsrModel& model) {
  std::vector<std::vector<double>> out;
  for (const auto& p : model.params().all()) {
    if (p.name().rfind("video_encoder.", 0) != 0) continue;
    if (p.tensor().has_grad()) {
      out.emplace_back(p.tensor().grad().begin(), p.tensor().grad().end());
    } else {
      out.emplace_back(p.tensor().size(), 0.0);
    }
  }
  return out;
}

void apply_stage_flags(AvsrModel& model, const StageConfig& cfg) {
  const auto groups = parameter_groups(model);
  if (cfg.stage == 1) {
    model.params().set_trainable([&](const std::string& n) { return groups.audio_backbone.count(n) != 0; });
  } else {
    model.params().set_trainable([&](const std::string& n) {
      return groups.gated_layers.count(n) != 0 || (cfg.finetune_video_encoder && groups.video_encoder.count(n) != 0);
    });
  }
}

TrainResult run_training(AvsrModel model, AdamW optimizer, std::size_t first_step, TrainResult result,
                         const Corpus& corpus, const NoiseBank& bank, const StageConfig& cfg, const TrainHooks& hooks) {
  const auto& train = corpus.train;
  if (train.empty()) throw ConfigError("training split is empty");
  const bool stage2 = cfg.stage == 2;
  const SpecialTokens& specials = model.specials();
  const Rng train_rng = Rng(cfg.seed).substream("train");

  auto run_validation = [&](std::size_t step) {
    const auto v = validate(model, corpus.dev, bank, cfg.snr_db, cfg.validation_seed, Modality::AV);
    ValidationRecord rec{step, v.accuracy, v.loss};
    result.history.push_back(rec);
    const bool improved = result.history.size() == 1 || rec.accuracy > result.best_accuracy;
    if (improved) {
      result.best_accuracy = rec.accuracy;
      result.best_step = step;
      result.best_model = model.clone();
    }
    if (hooks.on_validation) hooks.on_validation(TrainSnapshot{model, optimizer, step, result, improved});
    return rec;
  };
  if (result.history.empty()) run_validation(0);

  for (std::size_t step = first_step; step <= cfg.steps; ++step) {
    Rng step_rng = train_rng.substream(static_cast<std::uint64_t>(step));
    model.params().zero_grad();
    std::vector<std::size_t> batch(cfg.batch_size);
    for (auto& b : batch) b = step_rng.below(train.size());
    std::size_t total_tokens = 0;
    for (const auto b : batch) total_tokens += train[b].tokens.size() + 1;

    double loss_sum = 0.0;
    std::size_t correct = 0;
    try {
      for (std::size_t i = 0; i < batch.size(); ++i) {
        const Utterance& utt = train[batch[i]];
        Rng ex_rng = step_rng.substream(static_cast<std::uint64_t>(i));
        const NoisyInput noisy = noisy_audio(utt, bank, cfg.snr_db, ex_rng);
        const Modality selection = stage2 ? sample_selection(*cfg.dropout, ex_rng) : Modality::AV;
        const EncodedStreams streams = encode_with_selection(model, noisy.audio, utt.video, selection);
        const auto ex = make_example(specials, utt);
        const Tensor logits = model.forward_teacher_forced(ex.inputs, streams);
        const auto ce = softmax_cross_entropy(logits, ex.targets, specials.pad);
        const double weight = static_cast<double>(ce.counted) / static_cast<double>(total_tokens);
        loss_sum += ce.loss.item() * static_cast<double>(ce.counted);
        correct += ce.correct;
        if (stage2 && hooks.on_example) {
          const auto before = snapshot_video_grads(model);
          backward(mul_scalar(ce.loss, weight));
          hooks.on_example(step, selection, video_grad_norm_delta(model, before));
        } else {
          backward(mul_scalar(ce.loss, weight));
        }
      }
      optimizer.step(model.params(), cfg.learning_rate(step));
    } catch (const NumericError& e) {
      throw NumericError("stage " + std::to_string(cfg.stage) + " diverged at step " + std::to_string(step) + ": " +
                         e.what());
    }

    StepRecord rec;
    rec.step = step;
    rec.loss = loss_sum / static_cast<double>(total_tokens);
    rec.accuracy = static_cast<double>(correct) / static_cast<double>(total_tokens);
    if (!std::isfinite(rec.loss)) {
      throw NumericError("stage " + std::to_string(cfg.stage) + " diverged at step " + std::to_string(step) +
                         ": loss is not finite");
    }
    if (step % cfg.validation_interval == 0) rec.validation = run_validation(step);
    result.log.push_back(rec);
    if (hooks.on_step) hooks.on_step(rec);
  }
  result.final_step = cfg.steps;
  return result;
}

}  // namespace

void StageConfig::validate() const {
  const std::string p = "stage" + std::to_string(stage);
  if (stage != 1 && stage != 2) throw ConfigError("stage: must be 1 or 2, got " + std::to_string(stage));
  if (steps == 0) throw ConfigError(p + ".steps: must be positive");
  if (batch_size == 0) throw ConfigError(p + ".batch_size: must be positive");
  if (validation_interval == 0 || steps % validation_interval != 0) {
    throw ConfigError(p + ".validation_interval: must divide steps (" + std::to_string(steps) + ")");
  }
  if (stage == 1 && dropout) throw ConfigError(p + ".dropout: stage 1 trains audio-only and takes no dropout policy");
  if (stage == 2) {
    if (!dropout) throw ConfigError(p + ".dropout: stage 2 needs a dropout policy");
    dropout->validate();
  }
  if (!std::isfinite(snr_db)) throw ConfigError(p + ".snr_db: must be finite");
}

double StageConfig::learning_rate(std::size_t step) const {
  if (warmup_steps == 0 || step >= warmup_steps) return adamw.lr;
  return adamw.lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
}

TeacherForcedExample make_example(const SpecialTokens& specials, const Utterance& utt) {
  TeacherForcedExample ex;
  ex.inputs = {specials.bos, specials.lang_token(utt.lang_id)};
  ex.inputs.insert(ex.inputs.end(), utt.tokens.begin(), utt.tokens.end());
  ex.targets = {specials.pad};
  ex.targets.insert(ex.targets.end(), utt.tokens.begin(), utt.tokens.end());
  ex.targets.push_back(specials.eos);
  return ex;
}

NoisyInput noisy_audio(const Utterance& utt, const NoiseBank& bank, double snr_db, Rng& rng) {
  NoisyInput out;
  out.category = kNoiseCategories[rng.below(kNoiseCategories.size())];
  const Frames noise = draw_noise(bank, out.category, utt.audio.rows, utt.audio.cols, rng, utt.id);
  out.audio = mix(utt.audio, noise, snr_db);
  return out;
}

ValidationResult validate(const AvsrModel& model, const std::vector<Utterance>& split, const NoiseBank& bank,
                          double snr_db, std::uint64_t seed, Modality mode) {
  if (split.empty()) throw ConfigError("validate: split is empty");
  NoGradGuard no_grad;
  const Rng base(seed);
  double nll = 0.0;
  std::size_t correct = 0;
  std::size_t counted = 0;
  for (std::size_t i = 0; i < split.size(); ++i) {
    Rng rng = base.substream(static_cast<std::uint64_t>(i));
    const NoisyInput noisy = noisy_audio(split[i], bank, snr_db, rng);
    const EncodedStreams streams = encode_with_selection(model, noisy.audio, split[i].video, mode);
    const auto ex = make_example(model.specials(), split[i]);
    const auto ce = softmax_cross_entropy(model.forward_teacher_forced(ex.inputs, streams), ex.targets,
                                          model.specials().pad);
    nll += ce.loss.item() * static_cast<double>(ce.counted);
    correct += ce.correct;
    counted += ce.counted;
  }
  return {static_cast<double>(correct) / static_cast<double>(counted), nll / static_cast<double>(counted), counted};
}

std::size_t select_best(const std::vector<ValidationRecord>& history) {
  if (history.empty()) throw ConfigError("select_best: empty validation history");
  std::size_t best = 0;
  for (std::size_t i = 1; i < history.size(); ++i) {
    const bool better = history[i].accuracy > history[best].accuracy ||
                        (history[i].accuracy == history[best].accuracy && history[i].step < history[best].step);
    if (better) best = i;
  }
  return best;
}

ModelConfig model_config_for(const ModelConfig& dims, const CorpusConfig& corpus) {
  ModelConfig c = dims;
  c.vocab_size = corpus.vocab_size();
  c.n_languages = corpus.n_languages;
  c.max_target_len = 2 * corpus.max_tokens + 2;
  c.audio_feat_dim = corpus.audio_feat_dim;
  c.video_feat_dim = corpus.video_feat_dim;
  c.audio_frames_per_token = static_cast<double>(corpus.audio_frames_per_token);
  c.validate();
  return c;
}

TrainResult train_stage1(AvsrModel model, const Corpus& corpus, const NoiseBank& bank, const StageConfig& cfg,
                         const TrainHooks& hooks) {
  cfg.validate();
  if (cfg.stage != 1) throw ConfigError("train_stage1: config is for stage " + std::to_string(cfg.stage));
  if (model.has_gated_layers()) throw ConfigError("train_stage1: model already has gated layers");
  apply_stage_flags(model, cfg);
  AvsrModel best = model.clone();
  return run_training(std::move(model), AdamW(cfg.adamw), 1, TrainResult{std::move(best), 0, 0.0, {}, {}, 0}, corpus,
                      bank, cfg, hooks);
}

AvsrModel prepare_stage2_model(const AvsrModel& stage1, const StageConfig& cfg) {
  AvsrModel model = stage1.clone();
  if (!model.has_gated_layers()) model.add_gated_layers(Rng::derive_seed(cfg.seed, "gated_layers"));
  apply_stage_flags(model, cfg);
  return model;
}

TrainResult train_stage2(const AvsrModel& stage1, const Corpus& corpus, const NoiseBank& bank, const StageConfig& cfg,
                         const TrainHooks& hooks) {
  cfg.validate();
  if (cfg.stage != 2) throw ConfigError("train_stage2: config is for stage " + std::to_string(cfg.stage));
  AvsrModel model = prepare_stage2_model(stage1, cfg);
  AvsrModel best = model.clone();
  return run_training(std::move(model), AdamW(cfg.adamw), 1, TrainResult{std::move(best), 0, 0.0, {}, {}, 0}, corpus,
                      bank, cfg, hooks);
}

TrainResult resume_training(ResumeState state, const Corpus& corpus, const NoiseBank& bank, const StageConfig& cfg,
                            const TrainHooks& hooks) {
  cfg.validate();
  if (state.history.empty()) throw ConfigError("resume: checkpoint carries no validation history");
  if (state.step > cfg.steps) {
    throw ConfigError("resume: checkpoint is at step " + std::to_string(state.step) + ", past the configured " +
                      std::to_string(cfg.steps) + " steps");
  }
  if ((cfg.stage == 2) != state.model.has_gated_layers()) {
    throw ConfigError("resume: checkpoint does not belong to stage " + std::to_string(cfg.stage));
  }
  apply_stage_flags(state.model, cfg);
  apply_stage_flags(state.best_model, cfg);
  const std::size_t best = select_best(state.history);
  TrainResult init{std::move(state.best_model), state.history[best].step, state.history[best].accuracy,
                   std::move(state.history), {}, 0};
  TrainResult r = run_training(std::move(state.model), std::move(state.optimizer), state.step + 1, std::move(init),
                               corpus, bank, cfg, hooks);
  r.final_step = cfg.steps;
  return r;
}

}  // namespace avsr
