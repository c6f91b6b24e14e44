#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>

#include "avsr/error.hpp"
#include "avsr/fusion_dropout.hpp"
#include "avsr/ops.hpp"
#include "avsr/rng.hpp"

namespace avsr::testing {

double relative_error(double analytic, double numeric, double floor) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

GradCheckResult full_model_gradient_check(std::uint64_t seed, double h) {
  Rng rng(seed);
  ModelConfig mc;
  mc.d_model = 8;
  mc.n_heads = 2;
  mc.n_audio_enc_layers = 1;
  mc.n_video_enc_layers = 1;
  mc.n_dec_layers = 1;
  mc.ffw_mult = 2;
  mc.n_languages = 2;
  mc.vocab_size = 3 + mc.n_languages + 8;
  mc.max_target_len = 12;
  mc.audio_feat_dim = 3;
  mc.video_feat_dim = 4;
  AvsrModel model(mc, rng.substream("model").next_u64());
  model.add_gated_layers(rng.substream("gated").next_u64());
  // Gates at zero would zero the gradient of every other gated weight.
  Rng gate_rng = rng.substream("gates");
  for (auto& block : model.decoder_blocks()) {
    auto g_attn = block.gated->g_attn;
    auto g_ffw = block.gated->g_ffw;
    g_attn.mutable_values()[0] = 0.2 + 0.6 * gate_rng.uniform();
    g_ffw.mutable_values()[0] = -0.2 - 0.6 * gate_rng.uniform();
  }

  Rng data = rng.substream("data");
  const std::size_t length = 2 + data.below(3);
  const std::size_t frames_per_token = 4;
  Frames audio(length * frames_per_token, mc.audio_feat_dim);
  Frames video(length, mc.video_feat_dim);
  for (auto& x : audio.data) x = data.normal();
  for (auto& x : video.data) x = data.normal();
  const auto& sp = model.specials();
  std::vector<TokenId> inputs = {sp.bos, sp.lang_token(data.below(mc.n_languages))};
  std::vector<TokenId> targets = {sp.pad};
  for (std::size_t i = 0; i < length; ++i) {
    const auto t = static_cast<TokenId>(sp.first_content() + data.below(8));
    inputs.push_back(t);
    targets.push_back(t);
  }
  targets.push_back(sp.eos);

  auto loss = [&] {
    const auto streams = model.encode(audio, video);
    return softmax_cross_entropy(model.forward_teacher_forced(inputs, streams), targets, sp.pad).loss;
  };
  model.params().zero_grad();
  backward(loss());

  GradCheckResult result;
  for (auto& p : model.params().all()) {
    auto values = p.tensor().mutable_values();
    const std::vector<double> grad(p.tensor().grad().begin(), p.tensor().grad().end());
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      double plus = 0.0, minus = 0.0;
      {
        NoGradGuard guard;
        values[i] = saved + h;
        plus = loss().item();
        values[i] = saved - h;
        minus = loss().item();
      }
      values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * h);
      const double err = relative_error(grad[i], numeric);
      ++result.checked;
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst = p.name() + "[" + std::to_string(i) + "]";
      }
    }
  }
  return result;
}

std::size_t brute_force_edit_distance(const std::vector<std::string>& ref, const std::vector<std::string>& hyp) {
  // Walks every monotone alignment path; each step is a match/substitution,
  // a deletion of a reference word, or an insertion of a hypothesis word.
  std::size_t best = std::numeric_limits<std::size_t>::max();
  std::function<void(std::size_t, std::size_t, std::size_t)> walk = [&](std::size_t i, std::size_t j, std::size_t cost) {
    if (cost >= best) return;
    if (i == ref.size() && j == hyp.size()) {
      best = cost;
      return;
    }
    if (i < ref.size() && j < hyp.size()) walk(i + 1, j + 1, cost + (ref[i] == hyp[j] ? 0 : 1));
    if (i < ref.size()) walk(i + 1, j, cost + 1);
    if (j < hyp.size()) walk(i, j + 1, cost + 1);
  };
  walk(0, 0, 0);
  return best;
}

std::vector<std::vector<std::string>> all_sequences(const std::vector<std::string>& alphabet, std::size_t max_len) {
  std::vector<std::vector<std::string>> out = {{}};
  std::size_t begin = 0;
  for (std::size_t len = 1; len <= max_len; ++len) {
    const std::size_t end = out.size();
    for (std::size_t k = begin; k < end; ++k) {
      for (const auto& a : alphabet) {
        auto next = out[k];
        next.push_back(a);
        out.push_back(std::move(next));
      }
    }
    begin = end;
  }
  return out;
}

const std::vector<PrintedRow>& published_clean_rows() {
  // The "Intuitive Multilingual" row is left out: its printed non-En average
  // (39.5) differs from the mean of its printed values (39.44) by more than
  // input rounding allows.
  static const std::vector<PrintedRow> rows = {
      {"AV-HuBERT", {89.4, 52.0, 46.2, 17.4, 20.3, 20.8, 22.1, 44.7}, 39.1, 20.2, 58.1},
      {"XLAVS-R 300M", {81.7, 44.7, 24.3, 10.9, 14.4, 12.8, 13.2, 32.7}, 29.3, 12.8, 45.9},
      {"XLAVS-R 2B", {79.3, 44.4, 19.0, 9.1, 12.3, 10.6, 11.2, 25.0}, 26.4, 10.8, 41.9},
      {"Whisper Small Zero-Shot", {78.9, 23.9, 23.5, 11.4, 17.7, 20.0, 17.1, 23.7}, 27.0, 16.6, 37.5},
      {"Whisper Medium Zero-Shot", {75.6, 21.3, 15.7, 9.5, 15.6, 11.6, 13.1, 20.7}, 22.9, 12.5, 33.3},
      {"Whisper Large Zero-Shot", {73.2, 20.1, 12.7, 8.9, 14.5, 10.2, 11.7, 19.0}, 21.3, 11.3, 31.3},
      {"Whisper Small Fine-Tuned", {73.3, 26.4, 18.4, 9.5, 13.8, 12.8, 12.8, 21.2}, 23.5, 12.2, 34.8},
      {"Gated AV Small", {74.9, 26.6, 18.9, 9.6, 13.8, 12.7, 12.9, 21.2}, 23.8, 12.3, 35.4},
      {"Whisper Medium Fine-Tuned", {68.9, 21.5, 13.6, 7.9, 11.3, 10.1, 10.7, 16.7}, 20.1, 10.0, 30.2},
      {"Gated AV Medium", {70.2, 22.0, 14.0, 8.1, 11.3, 10.2, 10.8, 16.7}, 20.4, 10.1, 30.7},
  };
  return rows;
}

const std::array<std::string, 8>& published_languages() {
  static const std::array<std::string, 8> langs = {"ar", "de", "el", "es", "fr", "it", "pt", "ru"};
  return langs;
}

LanguageGroups published_groups() {
  return LanguageGroups{{"ar", "de", "el", "es", "fr", "it", "pt", "ru"}, {"es", "fr", "it", "pt"}, {"ar", "de", "el", "ru"}};
}

double chi_square_sf(double x, int dof) {
  if (x <= 0.0) return 1.0;
  if (dof == 1) return std::erfc(std::sqrt(x / 2.0));
  if (dof == 2) return std::exp(-x / 2.0);
  throw std::invalid_argument("chi_square_sf: only 1 or 2 degrees of freedom");
}

GoodnessOfFit selection_goodness_of_fit(const DropoutPolicy& policy, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::array<std::size_t, 3> counts{};
  for (std::size_t i = 0; i < n; ++i) counts[static_cast<std::size_t>(sample_selection(policy, rng))]++;
  const std::array<double, 3> p = {policy.p_av, policy.p_a, policy.p_v};
  GoodnessOfFit fit;
  int categories = 0;
  for (std::size_t k = 0; k < 3; ++k) {
    fit.frequency[k] = static_cast<double>(counts[k]) / static_cast<double>(n);
    if (p[k] == 0.0) {
      if (counts[k] != 0) fit.impossible_outcome = true;
      continue;
    }
    const double expected = p[k] * static_cast<double>(n);
    const double diff = static_cast<double>(counts[k]) - expected;
    fit.statistic += diff * diff / expected;
    ++categories;
  }
  fit.dof = categories - 1;
  fit.p_value = fit.dof == 0 ? 1.0 : chi_square_sf(fit.statistic, fit.dof);
  return fit;
}

const std::vector<DropoutPolicy>& published_policies() {
  static const std::vector<DropoutPolicy> policies = {
      {0.5, 0.0, 0.5}, {1.0, 0.0, 0.0},   {0.5, 0.5, 0.0}, {0.5, 0.25, 0.25},
      {0.25, 0.25, 0.5}, {0.75, 0.0, 0.25}, {0.25, 0.0, 0.75},
  };
  return policies;
}

CorpusConfig tiny_corpus_config() {
  CorpusConfig c;
  c.n_languages = 3;
  c.tokens_per_language = 8;
  c.visemes_per_language = 3;
  c.train_counts = {24, 12};
  c.imbalance = 2.0;
  c.dev_per_language = 3;
  c.test_per_language = 3;
  c.min_tokens = 2;
  c.max_tokens = 4;
  c.audio_feat_dim = 6;
  c.video_feat_dim = 3;
  return c;
}

ModelConfig tiny_model_dims() {
  ModelConfig m;
  m.d_model = 8;
  m.n_heads = 2;
  m.n_audio_enc_layers = 1;
  m.n_video_enc_layers = 1;
  m.n_dec_layers = 1;
  m.ffw_mult = 2;
  return m;
}

RunConfig tiny_run_config(std::size_t stage1_steps, std::size_t stage2_steps) {
  RunConfig c;
  const auto seed = c.seed;
  c.corpus = tiny_corpus_config();
  c.model = tiny_model_dims();
  c.noise_bank_streams = 16;
  for (auto* s : {&c.stage1, &c.stage2}) {
    s->batch_size = 4;
    s->warmup_steps = 2;
    s->adamw.lr = 3e-3;
  }
  c.stage1.steps = stage1_steps;
  c.stage1.validation_interval = stage1_steps / 2;
  c.stage2.steps = stage2_steps;
  c.stage2.validation_interval = stage2_steps / 2;
  c.sweep.snrs_db = {0.0, 10.0};
  c.apply_seed(seed);
  return c;
}

}  // namespace avsr::testing
