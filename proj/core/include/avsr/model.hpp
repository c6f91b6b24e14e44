#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "avsr/frames.hpp"
#include "avsr/ops.hpp"
#include "avsr/parameter.hpp"
#include "avsr/rng.hpp"

namespace avsr {

struct ModelConfig {
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t n_audio_enc_layers = 2;
  std::size_t n_video_enc_layers = 2;
  std::size_t n_dec_layers = 2;
  std::size_t ffw_mult = 4;
  std::size_t vocab_size = 0;
  std::size_t n_languages = 0;
  std::size_t max_target_len = 0;
  std::size_t audio_feat_dim = 0;
  std::size_t video_feat_dim = 0;
  /// Audio frames per decoder step. Audio positions are encoded at
  /// frame / audio_frames_per_token so both streams share the token time axis.
  double audio_frames_per_token = 4.0;

  /// Throws ConfigError on violated invariants.
  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Reserved ids: pad, bos, eos, then one language tag per language.
/// Content tokens start at first_content().
struct SpecialTokens {
  TokenId pad = 0;
  TokenId bos = 1;
  TokenId eos = 2;
  std::vector<TokenId> lang_tokens;

  static SpecialTokens for_languages(std::size_t n_languages);
  TokenId first_content() const { return static_cast<TokenId>(3 + lang_tokens.size()); }
  TokenId lang_token(std::size_t lang) const { return lang_tokens.at(lang); }
};

/// Encoder outputs consumed by the decoder's cross-attention sublayers.
struct EncodedStreams {
  Tensor audio;  ///< [T_a, d_model]
  Tensor video;  ///< [T_v, d_model]
};

struct LinearLayer {
  Tensor weight;
  Tensor bias;
  Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }
};

struct LayerNormLayer {
  Tensor gamma;
  Tensor beta;
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gamma, beta); }
};

struct FeedForward {
  LinearLayer fc1;
  LinearLayer fc2;
  Tensor operator()(const Tensor& x) const { return fc2(gelu(fc1(x))); }
};

struct EncoderLayer {
  LayerNormLayer ln_attn;
  AttentionWeights attn;
  LayerNormLayer ln_ffw;
  FeedForward ffw;
};

struct Encoder {
  LinearLayer input;
  std::vector<EncoderLayer> layers;
  LayerNormLayer ln_post;
  double frames_per_token = 1.0;
};

/// Visual cross-attention and feed-forward sublayers, each scaled by tanh of a
/// scalar gate. Gates start at zero, which makes the block an identity map.
struct GatedXAttnBlock {
  LayerNormLayer ln_attn;
  AttentionWeights xattn;
  Tensor g_attn;
  LayerNormLayer ln_ffw;
  FeedForward ffw;
  Tensor g_ffw;
};

struct DecoderBlock {
  LayerNormLayer ln_self;
  AttentionWeights self_attn;
  std::optional<GatedXAttnBlock> gated;
  LayerNormLayer ln_audio;
  AttentionWeights audio_xattn;
  LayerNormLayer ln_ffw;
  FeedForward ffw;
};

struct ParameterGroups {
  std::set<std::string> audio_backbone;
  std::set<std::string> video_encoder;
  std::set<std::string> gated_layers;
};

/// Audio encoder + visual encoder + decoder with optional gated visual
/// cross-attention in every block.
class AvsrModel {
 public:
  /// Builds a model without gated layers. All weights are drawn from `seed`.
  AvsrModel(ModelConfig config, std::uint64_t seed);

  AvsrModel(AvsrModel&&) = default;
  AvsrModel& operator=(AvsrModel&&) = default;
  AvsrModel(const AvsrModel&) = delete;
  AvsrModel& operator=(const AvsrModel&) = delete;

  /// Deep copy: independent parameter storage, same values and flags.
  AvsrModel clone() const;

  /// Inserts a gated visual block before the audio cross-attention of every
  /// decoder block. Gates are zero; other gated weights are drawn from `seed`.
  void add_gated_layers(std::uint64_t seed);
  bool has_gated_layers() const { return has_gated_; }

  const ModelConfig& config() const { return config_; }
  const SpecialTokens& specials() const { return specials_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }
  std::uint64_t seed() const { return seed_; }
  std::uint64_t gated_seed() const { return gated_seed_; }

  Tensor encode_audio(const Frames& frames) const;
  Tensor encode_video(const Frames& frames) const;
  EncodedStreams encode(const Frames& audio, const Frames& video) const;

  /// Logits [L, vocab] for a token prefix starting with [bos, lang_token].
  /// Position t sees tokens <= t and both streams.
  Tensor forward_teacher_forced(std::span<const TokenId> tokens, const EncodedStreams& streams) const;

  const std::vector<DecoderBlock>& decoder_blocks() const { return blocks_; }
  const Encoder& audio_encoder() const { return audio_enc_; }
  const Encoder& video_encoder() const { return video_enc_; }

 private:
  Tensor run_encoder(const Encoder& enc, const Frames& frames, std::size_t feat_dim, const char* which) const;
  GatedXAttnBlock make_gated_block(std::size_t index, Rng& rng);

  ModelConfig config_;
  SpecialTokens specials_;
  std::uint64_t seed_;
  std::uint64_t gated_seed_ = 0;
  bool has_gated_ = false;
  ParameterStore params_;
  Encoder audio_enc_;
  Encoder video_enc_;
  Tensor token_embedding_;
  std::vector<DecoderBlock> blocks_;
  LayerNormLayer dec_ln_post_;
  LinearLayer output_;
};

/// Partition of parameter names used to set per-stage trainable flags.
ParameterGroups parameter_groups(const AvsrModel& model);

/// Sinusoidal encoding of `length` positions at `position_step` time units apart.
std::vector<double> sinusoidal_positions(std::size_t length, std::size_t d_model, double position_step);

/// Sets every gate scalar to `value` (testing and probing helper).
void set_gates(AvsrModel& model, double value);

}  // namespace avsr
