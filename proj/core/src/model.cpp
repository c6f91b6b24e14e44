#include "avsr/model.hpp"

#include <cmath>

#include "avsr/error.hpp"

namespace avsr {
namespace {

Tensor random_matrix(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = stddev * rng.normal();
  return Tensor::from({rows, cols}, std::move(v));
}

class Builder {
 public:
  Builder(ParameterStore& store, Rng& rng) : store_(store), rng_(rng) {}

  LinearLayer linear_layer(const std::string& name, std::size_t d_in, std::size_t d_out, double gain = 1.0) {
    const double stddev = gain / std::sqrt(static_cast<double>(d_in));
    return {store_.add(name + ".weight", random_matrix(d_in, d_out, stddev, rng_)),
            store_.add(name + ".bias", Tensor::zeros({d_out}))};
  }

  LayerNormLayer layer_norm_layer(const std::string& name, std::size_t d) {
    return {store_.add(name + ".gamma", Tensor::full({d}, 1.0)), store_.add(name + ".beta", Tensor::zeros({d}))};
  }

  AttentionWeights attention(const std::string& name, std::size_t d) {
    const auto q = linear_layer(name + ".q", d, d);
    const auto k = linear_layer(name + ".k", d, d);
    const auto v = linear_layer(name + ".v", d, d);
    const auto o = linear_layer(name + ".o", d, d);
    return {q.weight, q.bias, k.weight, k.bias, v.weight, v.bias, o.weight, o.bias};
  }

  FeedForward feed_forward(const std::string& name, std::size_t d, std::size_t mult) {
    return {linear_layer(name + ".fc1", d, d * mult), linear_layer(name + ".fc2", d * mult, d)};
  }

  Encoder encoder(const std::string& name, std::size_t feat_dim, std::size_t n_layers, const ModelConfig& cfg,
                  double frames_per_token) {
    Encoder enc;
    enc.input = linear_layer(name + ".input", feat_dim, cfg.d_model);
    for (std::size_t i = 0; i < n_layers; ++i) {
      const std::string p = name + ".layer" + std::to_string(i);
      EncoderLayer layer;
      layer.ln_attn = layer_norm_layer(p + ".ln_attn", cfg.d_model);
      layer.attn = attention(p + ".self_attn", cfg.d_model);
      layer.ln_ffw = layer_norm_layer(p + ".ln_ffw", cfg.d_model);
      layer.ffw = feed_forward(p + ".ffw", cfg.d_model, cfg.ffw_mult);
      enc.layers.push_back(std::move(layer));
    }
    enc.ln_post = layer_norm_layer(name + ".ln_post", cfg.d_model);
    enc.frames_per_token = frames_per_token;
    return enc;
  }

 private:
  ParameterStore& store_;
  Rng& rng_;
};

Tensor self_attention(const Tensor& x, const AttentionWeights& w, std::size_t n_heads, bool causal) {
  return multi_head_attention(x, x, w, n_heads, causal);
}

}  // namespace

void ModelConfig::validate() const {
  if (d_model == 0) throw ConfigError("model.d_model: must be positive");
  if (n_heads == 0 || d_model % n_heads != 0) {
    throw ConfigError("model.n_heads: d_model " + std::to_string(d_model) + " not divisible by " +
                      std::to_string(n_heads));
  }
  if (ffw_mult == 0) throw ConfigError("model.ffw_mult: must be positive");
  if (n_languages == 0) throw ConfigError("model.n_languages: must be positive");
  if (vocab_size <= n_languages + 3) throw ConfigError("model.vocab_size: no room for content tokens");
  if (max_target_len < 3) throw ConfigError("model.max_target_len: must be at least 3");
  if (audio_feat_dim == 0) throw ConfigError("model.audio_feat_dim: must be positive");
  if (video_feat_dim == 0) throw ConfigError("model.video_feat_dim: must be positive");
  if (!(audio_frames_per_token > 0.0)) throw ConfigError("model.audio_frames_per_token: must be positive");
}

SpecialTokens SpecialTokens::for_languages(std::size_t n_languages) {
  SpecialTokens s;
  for (std::size_t i = 0; i < n_languages; ++i) s.lang_tokens.push_back(static_cast<TokenId>(3 + i));
  return s;
}

std::vector<double> sinusoidal_positions(std::size_t length, std::size_t d_model, double position_step) {
  std::vector<double> pe(length * d_model, 0.0);
  const std::size_t half = d_model / 2;
  for (std::size_t t = 0; t < length; ++t) {
    const double pos = static_cast<double>(t) * position_step;
    for (std::size_t i = 0; i < half; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(std::max<std::size_t>(half, 1)));
      pe[t * d_model + 2 * i] = std::sin(pos * freq);
      pe[t * d_model + 2 * i + 1] = std::cos(pos * freq);
    }
  }
  return pe;
}

AvsrModel::AvsrModel(ModelConfig config, std::uint64_t seed)
    : config_(std::move(config)), specials_(SpecialTokens::for_languages(config_.n_languages)), seed_(seed) {
  config_.validate();
  Rng rng(seed);
  Builder b(params_, rng);
  const std::size_t d = config_.d_model;
  audio_enc_ = b.encoder("audio_encoder", config_.audio_feat_dim, config_.n_audio_enc_layers, config_,
                         config_.audio_frames_per_token);
  video_enc_ = b.encoder("video_encoder", config_.video_feat_dim, config_.n_video_enc_layers, config_, 1.0);
  token_embedding_ = params_.add("decoder.token_embedding", random_matrix(config_.vocab_size, d, 1.0, rng));
  for (std::size_t i = 0; i < config_.n_dec_layers; ++i) {
    const std::string p = "decoder.block" + std::to_string(i);
    DecoderBlock block;
    block.ln_self = b.layer_norm_layer(p + ".ln_self", d);
    block.self_attn = b.attention(p + ".self_attn", d);
    block.ln_audio = b.layer_norm_layer(p + ".ln_audio", d);
    block.audio_xattn = b.attention(p + ".audio_xattn", d);
    block.ln_ffw = b.layer_norm_layer(p + ".ln_ffw", d);
    block.ffw = b.feed_forward(p + ".ffw", d, config_.ffw_mult);
    blocks_.push_back(std::move(block));
  }
  dec_ln_post_ = b.layer_norm_layer("decoder.ln_post", d);
  output_ = b.linear_layer("decoder.output", d, config_.vocab_size, 0.1);
}

GatedXAttnBlock AvsrModel::make_gated_block(std::size_t index, Rng& rng) {
  Builder b(params_, rng);
  const std::size_t d = config_.d_model;
  const std::string p = "decoder.block" + std::to_string(index) + ".gated_xattn";
  GatedXAttnBlock g;
  g.ln_attn = b.layer_norm_layer(p + ".ln_attn", d);
  g.xattn = b.attention(p + ".xattn", d);
  g.g_attn = params_.add(p + ".g_attn", Tensor::scalar(0.0));
  g.ln_ffw = b.layer_norm_layer(p + ".ln_ffw", d);
  g.ffw = b.feed_forward(p + ".ffw", d, config_.ffw_mult);
  g.g_ffw = params_.add(p + ".g_ffw", Tensor::scalar(0.0));
  return g;
}

void AvsrModel::add_gated_layers(std::uint64_t seed) {
  if (has_gated_) throw ConfigError("model already has gated layers");
  Rng rng(seed);
  for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].gated = make_gated_block(i, rng);
  has_gated_ = true;
  gated_seed_ = seed;
}

AvsrModel AvsrModel::clone() const {
  AvsrModel copy(config_, seed_);
  if (has_gated_) copy.add_gated_layers(gated_seed_);
  for (const auto& p : params_.all()) {
    auto& dst = copy.params_.get(p.name());
    auto values = dst.tensor().mutable_values();
    std::copy(p.tensor().values().begin(), p.tensor().values().end(), values.begin());
    dst.set_trainable(p.trainable());
  }
  return copy;
}

Tensor AvsrModel::run_encoder(const Encoder& enc, const Frames& frames, std::size_t feat_dim, const char* which) const {
  if (frames.rows == 0) throw ShapeError(std::string(which) + ": no frames");
  if (frames.cols != feat_dim) {
    throw ShapeError(std::string(which) + ": frames have " + std::to_string(frames.cols) + " features, expected " +
                     std::to_string(feat_dim));
  }
  const Tensor input = Tensor::from({frames.rows, frames.cols}, frames.data);
  const Tensor pe = Tensor::from({frames.rows, config_.d_model},
                                 sinusoidal_positions(frames.rows, config_.d_model, 1.0 / enc.frames_per_token));
  Tensor x = add(enc.input(input), pe);
  for (const auto& layer : enc.layers) {
    x = add(x, self_attention(layer.ln_attn(x), layer.attn, config_.n_heads, false));
    x = add(x, layer.ffw(layer.ln_ffw(x)));
  }
  return enc.ln_post(x);
}

Tensor AvsrModel::encode_audio(const Frames& frames) const {
  return run_encoder(audio_enc_, frames, config_.audio_feat_dim, "encode_audio");
}

Tensor AvsrModel::encode_video(const Frames& frames) const {
  return run_encoder(video_enc_, frames, config_.video_feat_dim, "encode_video");
}

EncodedStreams AvsrModel::encode(const Frames& audio, const Frames& video) const {
  return {encode_audio(audio), encode_video(video)};
}

Tensor AvsrModel::forward_teacher_forced(std::span<const TokenId> tokens, const EncodedStreams& streams) const {
  if (tokens.empty()) throw ShapeError("forward_teacher_forced: empty token sequence");
  if (tokens.size() > config_.max_target_len) {
    throw ShapeError("forward_teacher_forced: " + std::to_string(tokens.size()) + " tokens exceed max_target_len " +
                     std::to_string(config_.max_target_len));
  }
  for (const TokenId t : tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= config_.vocab_size) {
      throw ShapeError("forward_teacher_forced: unknown token id " + std::to_string(t));
    }
  }
  const std::size_t d = config_.d_model;
  if (streams.audio.rank() != 2 || streams.audio.dim(1) != d || streams.video.rank() != 2 ||
      streams.video.dim(1) != d) {
    throw ShapeError("forward_teacher_forced: streams " + shape_str(streams.audio.shape()) + " / " +
                     shape_str(streams.video.shape()) + " do not match d_model " + std::to_string(d));
  }
  const Tensor pe = Tensor::from({tokens.size(), d}, sinusoidal_positions(tokens.size(), d, 1.0));
  Tensor x = add(embedding(token_embedding_, tokens), pe);
  for (const auto& block : blocks_) {
    x = add(x, self_attention(block.ln_self(x), block.self_attn, config_.n_heads, true));
    if (block.gated) {
      const auto& g = *block.gated;
      x = add(x, tanh_gate(multi_head_attention(g.ln_attn(x), streams.video, g.xattn, config_.n_heads, false),
                           g.g_attn));
      x = add(x, tanh_gate(g.ffw(g.ln_ffw(x)), g.g_ffw));
    }
    x = add(x, multi_head_attention(block.ln_audio(x), streams.audio, block.audio_xattn, config_.n_heads, false));
    x = add(x, block.ffw(block.ln_ffw(x)));
  }
  return output_(dec_ln_post_(x));
}

ParameterGroups parameter_groups(const AvsrModel& model) {
  ParameterGroups groups;
  for (const auto& p : model.params().all()) {
    const auto& n = p.name();
    if (n.find(".gated_xattn.") != std::string::npos) {
      groups.gated_layers.insert(n);
    } else if (n.rfind("video_encoder.", 0) == 0) {
      groups.video_encoder.insert(n);
    } else {
      groups.audio_backbone.insert(n);
    }
  }
  return groups;
}

void set_gates(AvsrModel& model, double value) {
  for (auto& p : model.params().all()) {
    const auto& n = p.name();
    if (n.ends_with(".g_attn") || n.ends_with(".g_ffw")) p.tensor().mutable_values()[0] = value;
  }
}

}  // namespace avsr
