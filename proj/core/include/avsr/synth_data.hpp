#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "avsr/frames.hpp"
#include "avsr/ops.hpp"
#include "avsr/rng.hpp"

namespace avsr {

/// Generator settings for the synthetic multilingual audio-visual corpus.
///
/// Language 0 plays the role of the high-resource "English" language: its
/// training count is `imbalance` times the mean count of the other languages.
struct CorpusConfig {
  std::size_t n_languages = 5;
  std::size_t tokens_per_language = 30;
  std::size_t visemes_per_language = 10;
  /// Training utterances for languages 1..n-1.
  std::vector<std::size_t> train_counts = {700, 700, 300, 300};
  double imbalance = 13.6;
  std::size_t dev_per_language = 40;
  std::size_t test_per_language = 60;
  std::size_t min_tokens = 5;
  std::size_t max_tokens = 15;
  std::size_t audio_feat_dim = 16;
  std::size_t video_feat_dim = 10;
  std::size_t audio_frames_per_token = 4;
  double audio_jitter = 0.1;
  double viseme_confusion = 0.1;
  /// Zipf exponent of each language's unigram distribution (0 = uniform).
  double zipf_exponent = 0.7;
  std::uint64_t seed = 1234;

  void validate() const;
  /// Per-language training counts, language 0 included.
  std::vector<std::size_t> language_train_counts() const;
  std::size_t vocab_size() const { return 3 + n_languages + n_languages * tokens_per_language; }
  friend bool operator==(const CorpusConfig&, const CorpusConfig&) = default;
};

struct LanguageSpec {
  std::size_t lang_id = 0;
  TokenId first_token = 0;           ///< content ids are [first_token, first_token + n_tokens)
  std::size_t n_tokens = 0;
  std::vector<double> unigram;       ///< sums to 1
  double hours_weight = 0.0;         ///< share of training utterances
  std::size_t train_count = 0;

  bool owns(TokenId t) const { return t >= first_token && t < first_token + static_cast<TokenId>(n_tokens); }
};

/// Many-to-one token -> viseme map for one language.
struct VisemeMap {
  std::size_t n_visemes = 0;
  std::vector<std::size_t> viseme_of;  ///< indexed by (token - first_token)
};

struct Utterance {
  std::uint64_t id = 0;
  std::size_t lang_id = 0;
  std::vector<TokenId> tokens;  ///< content tokens only
  Frames audio;                 ///< [frames_per_token * L, audio_feat_dim]
  Frames video;                 ///< [L, video_feat_dim]
};

struct Corpus {
  CorpusConfig config;
  std::vector<LanguageSpec> languages;
  std::vector<VisemeMap> visemes;
  Frames codebook;  ///< one audio vector per content token, row = token - first content id
  std::vector<Utterance> train;
  std::vector<Utterance> dev;
  std::vector<Utterance> test;

  const LanguageSpec& language_of(TokenId token) const;
  const std::vector<Utterance>& split(const std::string& name) const;
};

std::vector<LanguageSpec> make_languages(const CorpusConfig& config);
std::vector<VisemeMap> make_viseme_maps(const CorpusConfig& config);
/// Per-token audio prototype vectors, [n_languages * tokens_per_language, audio_feat_dim].
Frames make_codebook(const CorpusConfig& config);

Utterance synthesize_utterance(const CorpusConfig& config, const LanguageSpec& spec, const VisemeMap& vmap,
                               const Frames& codebook, Rng& rng);

/// Deterministically generates all three splits. Splits use disjoint seed streams.
Corpus build_corpus(const CorpusConfig& config);

/// Nearest-prototype token recovery from the audio stream alone (noise-free oracle).
std::vector<TokenId> bayes_audio_decode(const Corpus& corpus, const Utterance& utt);

/// Best achievable per-token accuracy from the video stream alone: sum over
/// observed visemes of the largest joint mass P(token) P(viseme | token).
double video_accuracy_ceiling(const LanguageSpec& spec, const VisemeMap& vmap, double confusion);

// On-disk corpus: manifest.json plus <split>.bin record files.
inline constexpr int kCorpusFormatVersion = 1;

/// Writes the corpus and returns the manifest digest (SHA-256 of manifest.json).
std::string save_corpus(const Corpus& corpus, const std::filesystem::path& dir);
Corpus load_corpus(const std::filesystem::path& dir);
/// Digest over every split record file, stable for identical corpora.
std::string corpus_checksum(const Corpus& corpus);

void write_utterances(const std::vector<Utterance>& utts, const std::filesystem::path& path);
std::vector<Utterance> read_utterances(const std::filesystem::path& path);

}  // namespace avsr
