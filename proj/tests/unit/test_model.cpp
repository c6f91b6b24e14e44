#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "avsr/error.hpp"
#include "avsr/fusion_dropout.hpp"
#include "avsr/model.hpp"
#include "avsr/train.hpp"
#include "oracles.hpp"

namespace avsr {
namespace {

struct Fixture {
  Corpus corpus;
  AvsrModel model;

  explicit Fixture(std::size_t dev_per_language = 3) : corpus(make(dev_per_language)), model(build(corpus)) {}

  static Corpus make(std::size_t dev_per_language) {
    auto c = testing::tiny_corpus_config();
    c.dev_per_language = dev_per_language;
    return build_corpus(c);
  }
  static AvsrModel build(const Corpus& corpus) {
    return AvsrModel(model_config_for(testing::tiny_model_dims(), corpus.config), 99);
  }
};

StageConfig stage2_config() {
  StageConfig cfg;
  cfg.stage = 2;
  cfg.dropout = DropoutPolicy{};
  cfg.seed = 1234;
  return cfg;
}

Tensor logits_for(const AvsrModel& model, const Utterance& utt, Modality selection = Modality::AV) {
  NoGradGuard guard;
  const auto streams = encode_with_selection(model, utt.audio, utt.video, selection);
  return model.forward_teacher_forced(make_example(model.specials(), utt).inputs, streams);
}

TEST(Model, DefaultEncoderShapes) {
  ModelConfig mc;
  mc.vocab_size = 40;
  mc.n_languages = 5;
  mc.max_target_len = 20;
  mc.audio_feat_dim = 16;
  mc.video_feat_dim = 10;
  const AvsrModel model(mc, 1);
  EXPECT_EQ(model.encode_audio(Frames(40, 16)).shape(), (Shape{40, 64}));
  const auto v = model.encode_video(Frames(10, 10));
  EXPECT_EQ(v.shape(), (Shape{10, 64}));
  for (const double x : v.values()) EXPECT_TRUE(std::isfinite(x));
}

TEST(Model, EncodingIsDeterministic) {
  Fixture f;
  const auto& utt = f.corpus.train.front();
  const auto a = f.model.encode_audio(utt.audio);
  const auto b = f.model.encode_audio(utt.audio);
  EXPECT_TRUE(std::equal(a.values().begin(), a.values().end(), b.values().begin()));
}

TEST(Model, InputErrors) {
  Fixture f;
  EXPECT_THROW(f.model.encode_audio(Frames(4, f.model.config().audio_feat_dim + 1)), ShapeError);
  const auto& utt = f.corpus.train.front();
  const auto streams = f.model.encode(utt.audio, utt.video);
  const std::vector<TokenId> bad = {1, static_cast<TokenId>(f.model.config().vocab_size)};
  EXPECT_THROW(f.model.forward_teacher_forced(bad, streams), ShapeError);
}

TEST(Model, ConfigInvariants) {
  ModelConfig mc;
  mc.vocab_size = 40;
  mc.n_languages = 5;
  mc.max_target_len = 20;
  mc.audio_feat_dim = 16;
  mc.video_feat_dim = 10;
  mc.n_heads = 5;
  EXPECT_THROW(mc.validate(), ConfigError);
  mc.n_heads = 4;
  mc.vocab_size = 8;
  EXPECT_THROW(mc.validate(), ConfigError);
}

TEST(Model, LogitsAreCausal) {
  Fixture f;
  const auto& utt = f.corpus.train.front();
  const auto streams = f.model.encode(utt.audio, utt.video);
  auto tokens = make_example(f.model.specials(), utt).inputs;
  const auto before = f.model.forward_teacher_forced(tokens, streams);
  tokens.back() = tokens.back() == 5 ? 6 : 5;
  const auto after = f.model.forward_teacher_forced(tokens, streams);
  const std::size_t v = f.model.config().vocab_size;
  for (std::size_t i = 0; i < (tokens.size() - 1) * v; ++i) EXPECT_EQ(before.values()[i], after.values()[i]);
}

TEST(Model, ParameterGroupsPartitionEverything) {
  Fixture f;
  f.model.add_gated_layers(5);
  const auto g = parameter_groups(f.model);
  EXPECT_EQ(g.audio_backbone.size() + g.video_encoder.size() + g.gated_layers.size(), f.model.params().size());
  EXPECT_FALSE(g.gated_layers.empty());
  EXPECT_FALSE(g.video_encoder.empty());
  for (const auto& n : g.gated_layers) EXPECT_NE(n.find(".gated_xattn."), std::string::npos);
  for (const auto& n : g.video_encoder) EXPECT_EQ(n.rfind("video_encoder.", 0), 0u);
  EXPECT_TRUE(g.audio_backbone.count("decoder.token_embedding"));
}

TEST(Model, CloneIsIndependent) {
  Fixture f;
  auto copy = f.model.clone();
  copy.params().all().front().tensor().mutable_values()[0] += 1.0;
  EXPECT_NE(copy.params().all().front().tensor().values()[0], f.model.params().all().front().tensor().values()[0]);
}

TEST(Model, AudioPositionsShareTheTokenTimeAxis) {
  const auto audio = sinusoidal_positions(8, 6, 0.25);
  const auto tokens = sinusoidal_positions(2, 6, 1.0);
  // Audio frame 4 sits at token time 1.
  for (std::size_t c = 0; c < 6; ++c) EXPECT_DOUBLE_EQ(audio[4 * 6 + c], tokens[1 * 6 + c]);
}

// Identity at initialization: adding zero-gated layers changes no logit bit.
TEST(Model, GatedLayersStartAsIdentity) {
  Fixture f(34);
  const auto stage2 = prepare_stage2_model(f.model, stage2_config());
  ASSERT_TRUE(stage2.has_gated_layers());
  ASSERT_GE(f.corpus.dev.size(), 100u);
  for (std::size_t i = 0; i < 100; ++i) {
    const auto& utt = f.corpus.dev[i];
    const auto a = logits_for(f.model, utt);
    const auto b = logits_for(stage2, utt);
    ASSERT_EQ(a.shape(), b.shape());
    for (std::size_t k = 0; k < a.size(); ++k) ASSERT_EQ(a.values()[k], b.values()[k]) << "utterance " << i;
  }
}

TEST(Model, GatedLayersStartAsIdentityForDevAccuracy) {
  Fixture f(34);
  const auto stage2 = prepare_stage2_model(f.model, stage2_config());
  auto bank = NoiseBank::from_utterances(f.corpus.train, 16, Rng(3));
  const auto a = validate(f.model, f.corpus.dev, bank, 0.0, 77);
  const auto b = validate(stage2, f.corpus.dev, bank, 0.0, 77);
  EXPECT_EQ(a.accuracy, b.accuracy);
  EXPECT_EQ(a.loss, b.loss);
}

// A cross-attention sublayer over an all-zero stream sees identical keys and
// values (both equal to their biases), so it emits W_o b_v + b_o everywhere.
void expect_bias_path(const AttentionWeights& w, std::size_t n_heads, std::size_t d, std::size_t kv_rows, Rng& rng) {
  std::vector<double> q(5 * d);
  for (auto& x : q) x = rng.normal();
  const auto out = multi_head_attention(Tensor::from({5, d}, q), Tensor::zeros({kv_rows, d}), w, n_heads, false);
  const auto bias_path = linear(
      Tensor::from({1, d}, std::vector<double>(w.b_v.values().begin(), w.b_v.values().end())), w.w_o, w.b_o);
  double magnitude = 0.0;
  for (std::size_t c = 0; c < d; ++c) magnitude += std::abs(bias_path.at(0, c));
  ASSERT_GT(magnitude, 1e-3);
  for (std::size_t r = 0; r < 5; ++r) {
    for (std::size_t c = 0; c < d; ++c) ASSERT_NEAR(out.at(r, c), bias_path.at(0, c), 1e-12);
  }
}

TEST(Model, DroppedStreamGivesBiasPathInEveryCrossAttention) {
  Fixture f;
  f.model.add_gated_layers(7);
  // Randomize biases so the bias path is not trivially zero.
  Rng rng(8);
  for (auto& p : f.model.params().all()) {
    if (p.name().ends_with(".bias")) {
      for (auto& x : p.tensor().mutable_values()) x = rng.normal();
    }
  }
  const std::size_t d = f.model.config().d_model;
  for (const auto& block : f.model.decoder_blocks()) {
    expect_bias_path(block.audio_xattn, f.model.config().n_heads, d, 12, rng);
    expect_bias_path(block.gated->xattn, f.model.config().n_heads, d, 3, rng);
  }
}

TEST(Model, DroppedStreamWithZeroBiasesContributesNothing) {
  Fixture f;
  f.model.add_gated_layers(7);
  Rng rng(4);
  std::size_t zeroed = 0;
  for (auto& p : f.model.params().all()) {
    if (!p.name().ends_with(".bias")) continue;
    const bool cross = p.name().find(".gated_xattn.xattn.") != std::string::npos ||
                       p.name().find(".audio_xattn.") != std::string::npos;
    for (auto& x : p.tensor().mutable_values()) x = cross ? 0.0 : rng.normal();
    zeroed += cross;
  }
  ASSERT_EQ(zeroed, 8 * f.model.config().n_dec_layers);
  set_gates(f.model, 0.7);
  const std::size_t d = f.model.config().d_model;
  for (const auto& block : f.model.decoder_blocks()) {
    for (const auto* w : {&block.gated->xattn, &block.audio_xattn}) {
      const auto out = multi_head_attention(Tensor::full({3, d}, 0.3), Tensor::zeros({4, d}), *w,
                                            f.model.config().n_heads, false);
      for (const double x : out.values()) ASSERT_EQ(x, 0.0);
    }
  }
  // With the visual cross-attention silenced, closing its gate changes nothing;
  // only the gated feed-forward still contributes.
  const auto& utt = f.corpus.dev.front();
  const auto open = logits_for(f.model, utt, Modality::A);
  for (auto& p : f.model.params().all()) {
    if (p.name().ends_with(".g_attn")) p.tensor().mutable_values()[0] = 0.0;
  }
  const auto closed = logits_for(f.model, utt, Modality::A);
  for (std::size_t k = 0; k < open.size(); ++k) ASSERT_EQ(open.values()[k], closed.values()[k]);
}

TEST(Model, DroppedStreamLengthDoesNotMatter) {
  Fixture f;
  f.model.add_gated_layers(7);
  set_gates(f.model, 0.5);
  const auto& utt = f.corpus.dev.front();
  const auto streams = f.model.encode(utt.audio, utt.video);
  const auto tokens = make_example(f.model.specials(), utt).inputs;
  const std::size_t d = f.model.config().d_model;
  NoGradGuard guard;
  const auto a = f.model.forward_teacher_forced(tokens, {Tensor::zeros({4, d}), streams.video});
  const auto b = f.model.forward_teacher_forced(tokens, {Tensor::zeros({40, d}), streams.video});
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_NEAR(a.values()[k], b.values()[k], 1e-12);
}

TEST(Model, FullGradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto r = testing::full_model_gradient_check(seed);
    EXPECT_LE(r.max_rel_error, 1e-4) << "seed " << seed << " worst " << r.worst;
    EXPECT_GT(r.checked, 1000u);
  }
}

}  // namespace
}  // namespace avsr
