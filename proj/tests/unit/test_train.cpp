#include <cmath>
#include <optional>

#include <gtest/gtest.h>

#include "avsr/checkpoint.hpp"
#include "avsr/error.hpp"
#include "avsr/train.hpp"
#include "oracles.hpp"

namespace avsr {
namespace {

struct World {
  RunConfig run = testing::tiny_run_config(20, 20);
  Corpus corpus = build_corpus(run.corpus);
  NoiseBank bank = NoiseBank::from_utterances(corpus.train, run.noise_bank_streams, Rng(run.derived_seed("noise")));

  AvsrModel fresh_model() const { return AvsrModel(run.resolved_model(), run.derived_seed("model")); }
};

bool same_values(const AvsrModel& a, const AvsrModel& b) {
  const auto& pa = a.params().all();
  const auto& pb = b.params().all();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i].name() != pb[i].name()) return false;
    const auto va = pa[i].tensor().values();
    const auto vb = pb[i].tensor().values();
    if (!std::equal(va.begin(), va.end(), vb.begin(), vb.end())) return false;
  }
  return true;
}

TEST(SelectBest, Rules) {
  EXPECT_EQ(select_best({{200, 0.4, 1.0}}), 0u);
  EXPECT_EQ(select_best({{200, 0.5, 1.0}, {400, 0.9, 1.0}, {600, 0.9, 1.0}}), 1u);
  EXPECT_EQ(select_best({{200, 0.1, 1.0}, {400, 0.2, 1.0}, {600, 0.3, 1.0}}), 2u);
  EXPECT_THROW(select_best({}), ConfigError);
}

TEST(StageConfig, Validation) {
  StageConfig s;
  EXPECT_NO_THROW(s.validate());
  s.dropout = DropoutPolicy{};
  EXPECT_THROW(s.validate(), ConfigError);
  s = StageConfig{};
  s.validation_interval = 7;
  EXPECT_THROW(s.validate(), ConfigError);
  s = StageConfig{};
  s.stage = 2;
  EXPECT_THROW(s.validate(), ConfigError);
  s.dropout = DropoutPolicy{0.6, 0.0, 0.6};
  EXPECT_THROW(s.validate(), ConfigError);
  s.dropout = DropoutPolicy{};
  EXPECT_NO_THROW(s.validate());
  s.stage = 3;
  EXPECT_THROW(s.validate(), ConfigError);
}

TEST(StageConfig, LinearWarmupThenConstant) {
  StageConfig s;
  s.adamw.lr = 1e-3;
  s.warmup_steps = 100;
  EXPECT_DOUBLE_EQ(s.learning_rate(50), 5e-4);
  EXPECT_DOUBLE_EQ(s.learning_rate(100), 1e-3);
  EXPECT_DOUBLE_EQ(s.learning_rate(2500), 1e-3);
}

TEST(MakeExample, ShiftedTargets) {
  const auto sp = SpecialTokens::for_languages(3);
  Utterance u;
  u.lang_id = 2;
  u.tokens = {10, 11, 12};
  const auto ex = make_example(sp, u);
  EXPECT_EQ(ex.inputs, (std::vector<TokenId>{sp.bos, sp.lang_token(2), 10, 11, 12}));
  EXPECT_EQ(ex.targets, (std::vector<TokenId>{sp.pad, 10, 11, 12, sp.eos}));
}

TEST(Validate, RepeatableAndBounded) {
  World w;
  const auto model = w.fresh_model();
  const auto a = validate(model, w.corpus.dev, w.bank, 0.0, 5);
  const auto b = validate(model, w.corpus.dev, w.bank, 0.0, 5);
  EXPECT_EQ(a.accuracy, b.accuracy);
  EXPECT_EQ(a.loss, b.loss);
  EXPECT_GE(a.accuracy, 0.0);
  EXPECT_LE(a.accuracy, 1.0);
  EXPECT_THROW(validate(model, {}, w.bank, 0.0, 5), ConfigError);
}

TEST(Stage1, DeterministicLossCurve) {
  World w;
  const auto a = train_stage1(w.fresh_model(), w.corpus, w.bank, w.run.stage1);
  const auto b = train_stage1(w.fresh_model(), w.corpus, w.bank, w.run.stage1);
  ASSERT_EQ(a.log.size(), 20u);
  for (std::size_t i = 0; i < a.log.size(); ++i) EXPECT_EQ(a.log[i].loss, b.log[i].loss);
  EXPECT_TRUE(same_values(a.best_model, b.best_model));
  ASSERT_EQ(a.history.size(), 3u);
  EXPECT_EQ(a.history.front().step, 0u);
}

TEST(Stage1, LossDecreases) {
  World w;
  auto cfg = w.run.stage1;
  cfg.steps = 60;
  cfg.validation_interval = 30;
  const auto r = train_stage1(w.fresh_model(), w.corpus, w.bank, cfg);
  double first = 0.0, last = 0.0;
  for (std::size_t i = 0; i < 10; ++i) {
    first += r.log[i].loss;
    last += r.log[r.log.size() - 1 - i].loss;
  }
  EXPECT_LT(last, first);
}

TEST(Stage1, RejectsGatedModelAndDivergenceIsReported) {
  World w;
  auto gated = w.fresh_model();
  gated.add_gated_layers(1);
  EXPECT_THROW(train_stage1(std::move(gated), w.corpus, w.bank, w.run.stage1), ConfigError);

  auto cfg = w.run.stage1;
  cfg.adamw.lr = 1e200;
  cfg.warmup_steps = 0;
  try {
    train_stage1(w.fresh_model(), w.corpus, w.bank, cfg);
    FAIL() << "expected divergence";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("stage 1 diverged at step"), std::string::npos) << e.what();
  }
}

// Freeze integrity over a 50-step stage-2 run: the audio backbone never moves,
// and audio-only examples leave the visual-encoder gradients untouched.
TEST(Stage2, FreezeIntegrity) {
  World w;
  const auto stage1 = w.fresh_model();
  auto cfg = w.run.stage2;
  cfg.steps = 50;
  cfg.validation_interval = 25;
  cfg.dropout = DropoutPolicy{0.4, 0.3, 0.3};
  const auto groups = parameter_groups(prepare_stage2_model(stage1, cfg));
  const auto backbone = parameter_digest(stage1, groups.audio_backbone);
  const auto video_before = parameter_digest(stage1, groups.video_encoder);

  std::size_t a_examples = 0, other_examples = 0, moved = 0;
  std::vector<std::string> final_digests;
  TrainHooks hooks;
  hooks.on_example = [&](std::size_t, Modality sel, double delta) {
    if (sel == Modality::A) {
      ++a_examples;
      EXPECT_EQ(delta, 0.0);
    } else {
      ++other_examples;
      moved += delta > 0.0;
    }
  };
  hooks.on_validation = [&](const TrainSnapshot& s) {
    EXPECT_EQ(parameter_digest(s.model, groups.audio_backbone), backbone) << "step " << s.step;
    if (s.step == cfg.steps) final_digests.push_back(parameter_digest(s.model, groups.video_encoder));
  };
  const auto r = train_stage2(stage1, w.corpus, w.bank, cfg, hooks);
  EXPECT_EQ(parameter_digest(r.best_model, groups.audio_backbone), backbone);
  EXPECT_GT(a_examples, 0u);
  EXPECT_GT(moved, 0u);
  EXPECT_EQ(a_examples + other_examples, 50u * cfg.batch_size);
  ASSERT_EQ(final_digests.size(), 1u);
  EXPECT_NE(final_digests.front(), video_before);
}

TEST(Stage2, FrozenVideoEncoderStaysPut) {
  World w;
  const auto stage1 = w.fresh_model();
  auto cfg = w.run.stage2;
  cfg.finetune_video_encoder = false;
  const auto model = prepare_stage2_model(stage1, cfg);
  const auto groups = parameter_groups(model);
  for (const auto& p : model.params().all()) {
    EXPECT_EQ(p.trainable(), groups.gated_layers.count(p.name()) != 0) << p.name();
  }
  std::string last;
  TrainHooks hooks;
  hooks.on_validation = [&](const TrainSnapshot& s) { last = parameter_digest(s.model, groups.video_encoder); };
  train_stage2(stage1, w.corpus, w.bank, cfg, hooks);
  EXPECT_EQ(last, parameter_digest(stage1, groups.video_encoder));
}

TEST(Stage2, TrainableSetsPerStage) {
  World w;
  auto m = w.fresh_model();
  const auto s2 = prepare_stage2_model(m, w.run.stage2);
  const auto groups = parameter_groups(s2);
  for (const auto& p : s2.params().all()) {
    const bool expect = groups.gated_layers.count(p.name()) || groups.video_encoder.count(p.name());
    EXPECT_EQ(p.trainable(), expect) << p.name();
  }
}

// Stopping at a validation point and resuming reproduces the uninterrupted run.
TEST(Resume, MatchesUninterruptedRun) {
  World w;
  for (const int stage : {1, 2}) {
    SCOPED_TRACE("stage " + std::to_string(stage));
    const auto stage1 = w.fresh_model();
    const auto& cfg = stage == 1 ? w.run.stage1 : w.run.stage2;
    std::optional<ResumeState> saved;
    TrainHooks hooks;
    hooks.on_validation = [&](const TrainSnapshot& s) {
      if (s.step != 10) return;
      saved.emplace(ResumeState{s.model.clone(), s.optimizer, s.step, s.progress.history, s.progress.best_model.clone()});
    };
    const auto full = stage == 1 ? train_stage1(stage1.clone(), w.corpus, w.bank, cfg, hooks)
                                 : train_stage2(stage1, w.corpus, w.bank, cfg, hooks);
    ASSERT_TRUE(saved.has_value());
    const auto resumed = resume_training(std::move(*saved), w.corpus, w.bank, cfg);
    ASSERT_EQ(resumed.log.size(), 10u);
    for (std::size_t i = 0; i < 10; ++i) {
      EXPECT_EQ(resumed.log[i].step, full.log[10 + i].step);
      EXPECT_EQ(resumed.log[i].loss, full.log[10 + i].loss);
    }
    ASSERT_EQ(resumed.history.size(), full.history.size());
    for (std::size_t i = 0; i < full.history.size(); ++i) EXPECT_EQ(resumed.history[i].accuracy, full.history[i].accuracy);
    EXPECT_EQ(resumed.best_step, full.best_step);
    EXPECT_TRUE(same_values(resumed.best_model, full.best_model));
  }
}

TEST(Resume, RejectsMismatchedState) {
  World w;
  ResumeState s{w.fresh_model(), AdamW{}, 5, {}, w.fresh_model()};
  EXPECT_THROW(resume_training(std::move(s), w.corpus, w.bank, w.run.stage1), ConfigError);
  ResumeState wrong_stage{w.fresh_model(), AdamW{}, 5, {{0, 0.1, 1.0}}, w.fresh_model()};
  EXPECT_THROW(resume_training(std::move(wrong_stage), w.corpus, w.bank, w.run.stage2), ConfigError);
}

TEST(NoisyAudio, UniformCategoriesAtTheRequestedSnr) {
  World w;
  std::array<std::size_t, 4> counts{};
  Rng rng(3);
  for (int i = 0; i < 4000; ++i) {
    const auto& utt = w.corpus.train[static_cast<std::size_t>(i) % w.corpus.train.size()];
    counts[static_cast<std::size_t>(noisy_audio(utt, w.bank, 0.0, rng).category)]++;
  }
  for (const auto c : counts) EXPECT_NEAR(static_cast<double>(c) / 4000.0, 0.25, 0.03);
}

}  // namespace
}  // namespace avsr
