#include "avsr/synth_data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "avsr/binary_io.hpp"
#include "avsr/config.hpp"
#include "avsr/digest.hpp"
#include "avsr/error.hpp"

namespace avsr {
namespace {

constexpr char kRecordMagic[9] = "AVSRUTT1";

std::uint64_t utterance_id(std::size_t split_code, std::size_t lang, std::size_t index) {
  return (static_cast<std::uint64_t>(split_code) << 48) | (static_cast<std::uint64_t>(lang) << 32) |
         static_cast<std::uint64_t>(index);
}

std::size_t split_size_for(const CorpusConfig& c, const std::string& split, std::size_t lang) {
  if (split == "train") return c.language_train_counts()[lang];
  if (split == "dev") return c.dev_per_language;
  return c.test_per_language;
}

std::vector<Utterance> generate_split(const CorpusConfig& config, const std::vector<LanguageSpec>& langs,
                                      const std::vector<VisemeMap>& vmaps, const Frames& codebook,
                                      const std::string& split, std::size_t split_code) {
  const Rng split_rng = Rng(config.seed).substream("split:" + split);
  std::vector<Utterance> out;
  for (std::size_t lang = 0; lang < langs.size(); ++lang) {
    const Rng lang_rng = split_rng.substream(static_cast<std::uint64_t>(lang));
    const std::size_t n = split_size_for(config, split, lang);
    for (std::size_t i = 0; i < n; ++i) {
      Rng rng = lang_rng.substream(static_cast<std::uint64_t>(i));
      Utterance u = synthesize_utterance(config, langs[lang], vmaps[lang], codebook, rng);
      u.id = utterance_id(split_code, lang, i);
      out.push_back(std::move(u));
    }
  }
  return out;
}

}  // namespace

void CorpusConfig::validate() const {
  if (n_languages < 2) throw ConfigError("corpus.n_languages: need at least 2 languages, got " + std::to_string(n_languages));
  if (train_counts.size() != n_languages - 1) {
    throw ConfigError("corpus.train_counts: expected " + std::to_string(n_languages - 1) + " entries (languages 1.." +
                      std::to_string(n_languages - 1) + "), got " + std::to_string(train_counts.size()));
  }
  for (std::size_t i = 0; i < train_counts.size(); ++i) {
    if (train_counts[i] == 0) throw ConfigError("corpus.train_counts[" + std::to_string(i) + "]: zero-size split");
  }
  if (!(imbalance > 0.0)) throw ConfigError("corpus.imbalance: must be positive");
  if (dev_per_language == 0) throw ConfigError("corpus.dev_per_language: zero-size split");
  if (test_per_language == 0) throw ConfigError("corpus.test_per_language: zero-size split");
  if (tokens_per_language < 2) throw ConfigError("corpus.tokens_per_language: need at least 2");
  if (visemes_per_language < 1 || visemes_per_language >= tokens_per_language) {
    throw ConfigError("corpus.visemes_per_language: must be in [1, tokens_per_language)");
  }
  if (video_feat_dim < visemes_per_language) {
    throw ConfigError("corpus.video_feat_dim: must be at least visemes_per_language");
  }
  if (min_tokens == 0 || max_tokens < min_tokens) throw ConfigError("corpus.min_tokens/max_tokens: invalid range");
  if (audio_feat_dim == 0) throw ConfigError("corpus.audio_feat_dim: must be positive");
  if (audio_frames_per_token == 0) throw ConfigError("corpus.audio_frames_per_token: must be positive");
  if (!(audio_jitter >= 0.0)) throw ConfigError("corpus.audio_jitter: must be non-negative");
  if (!(viseme_confusion >= 0.0 && viseme_confusion <= 1.0)) {
    throw ConfigError("corpus.viseme_confusion: must be in [0, 1]");
  }
  if (!(zipf_exponent >= 0.0)) throw ConfigError("corpus.zipf_exponent: must be non-negative");
}

std::vector<std::size_t> CorpusConfig::language_train_counts() const {
  std::vector<std::size_t> counts;
  const double mean = std::accumulate(train_counts.begin(), train_counts.end(), 0.0) /
                      static_cast<double>(std::max<std::size_t>(train_counts.size(), 1));
  counts.push_back(static_cast<std::size_t>(std::llround(imbalance * mean)));
  counts.insert(counts.end(), train_counts.begin(), train_counts.end());
  return counts;
}

const LanguageSpec& Corpus::language_of(TokenId token) const {
  for (const auto& l : languages) {
    if (l.owns(token)) return l;
  }
  throw ShapeError("token " + std::to_string(token) + " belongs to no language");
}

const std::vector<Utterance>& Corpus::split(const std::string& name) const {
  if (name == "train") return train;
  if (name == "dev") return dev;
  if (name == "test") return test;
  throw ConfigError("unknown split: " + name);
}

std::vector<LanguageSpec> make_languages(const CorpusConfig& config) {
  config.validate();
  const auto counts = config.language_train_counts();
  const double total = std::accumulate(counts.begin(), counts.end(), 0.0);
  Rng rng = Rng(config.seed).substream("languages");
  std::vector<LanguageSpec> langs;
  for (std::size_t l = 0; l < config.n_languages; ++l) {
    LanguageSpec s;
    s.lang_id = l;
    s.first_token = static_cast<TokenId>(3 + config.n_languages + l * config.tokens_per_language);
    s.n_tokens = config.tokens_per_language;
    // Zipf weights assigned to a random permutation of the language's tokens.
    std::vector<std::size_t> perm(s.n_tokens);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
    s.unigram.assign(s.n_tokens, 0.0);
    double z = 0.0;
    for (std::size_t rank = 0; rank < s.n_tokens; ++rank) {
      const double w = std::pow(static_cast<double>(rank + 1), -config.zipf_exponent);
      s.unigram[perm[rank]] = w;
      z += w;
    }
    for (auto& w : s.unigram) w /= z;
    s.train_count = counts[l];
    s.hours_weight = static_cast<double>(counts[l]) / total;
    langs.push_back(std::move(s));
  }
  return langs;
}

std::vector<VisemeMap> make_viseme_maps(const CorpusConfig& config) {
  config.validate();
  Rng rng = Rng(config.seed).substream("visemes");
  std::vector<VisemeMap> maps;
  for (std::size_t l = 0; l < config.n_languages; ++l) {
    std::vector<std::size_t> perm(config.tokens_per_language);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
    VisemeMap m;
    m.n_visemes = config.visemes_per_language;
    m.viseme_of.assign(config.tokens_per_language, 0);
    for (std::size_t i = 0; i < perm.size(); ++i) m.viseme_of[perm[i]] = i % m.n_visemes;
    maps.push_back(std::move(m));
  }
  return maps;
}

Frames make_codebook(const CorpusConfig& config) {
  Rng rng = Rng(config.seed).substream("codebook");
  Frames cb(config.n_languages * config.tokens_per_language, config.audio_feat_dim);
  for (auto& v : cb.data) v = rng.normal();
  return cb;
}

Utterance synthesize_utterance(const CorpusConfig& config, const LanguageSpec& spec, const VisemeMap& vmap,
                               const Frames& codebook, Rng& rng) {
  Utterance u;
  u.lang_id = spec.lang_id;
  const std::size_t len = config.min_tokens + rng.below(config.max_tokens - config.min_tokens + 1);
  const std::size_t fpt = config.audio_frames_per_token;
  const TokenId first_content = static_cast<TokenId>(3 + config.n_languages);
  u.audio = Frames(len * fpt, config.audio_feat_dim);
  u.video = Frames(len, config.video_feat_dim);
  for (std::size_t t = 0; t < len; ++t) {
    const double r = rng.uniform();
    std::size_t k = 0;
    double acc = spec.unigram[0];
    while (r >= acc && k + 1 < spec.n_tokens) acc += spec.unigram[++k];
    const TokenId token = spec.first_token + static_cast<TokenId>(k);
    u.tokens.push_back(token);
    const auto proto = codebook.row(static_cast<std::size_t>(token - first_content));
    for (std::size_t f = 0; f < fpt; ++f) {
      auto frame = u.audio.row(t * fpt + f);
      for (std::size_t j = 0; j < frame.size(); ++j) frame[j] = proto[j] + config.audio_jitter * rng.normal();
    }
    std::size_t viseme = vmap.viseme_of[k];
    if (rng.uniform() < config.viseme_confusion) viseme = rng.below(vmap.n_visemes);
    u.video(t, viseme) = 1.0;
  }
  return u;
}

Corpus build_corpus(const CorpusConfig& config) {
  config.validate();
  Corpus c;
  c.config = config;
  c.languages = make_languages(config);
  c.visemes = make_viseme_maps(config);
  c.codebook = make_codebook(config);
  c.train = generate_split(config, c.languages, c.visemes, c.codebook, "train", 1);
  c.dev = generate_split(config, c.languages, c.visemes, c.codebook, "dev", 2);
  c.test = generate_split(config, c.languages, c.visemes, c.codebook, "test", 3);
  return c;
}

std::vector<TokenId> bayes_audio_decode(const Corpus& corpus, const Utterance& utt) {
  const auto& cfg = corpus.config;
  const LanguageSpec& spec = corpus.languages.at(utt.lang_id);
  const TokenId first_content = static_cast<TokenId>(3 + cfg.n_languages);
  const std::size_t fpt = cfg.audio_frames_per_token;
  std::vector<TokenId> out;
  for (std::size_t t = 0; t * fpt < utt.audio.rows; ++t) {
    std::vector<double> mean(cfg.audio_feat_dim, 0.0);
    for (std::size_t f = 0; f < fpt; ++f) {
      const auto frame = utt.audio.row(t * fpt + f);
      for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += frame[j] / static_cast<double>(fpt);
    }
    TokenId best = spec.first_token;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < spec.n_tokens; ++k) {
      const TokenId tok = spec.first_token + static_cast<TokenId>(k);
      const auto proto = corpus.codebook.row(static_cast<std::size_t>(tok - first_content));
      double dist = 0.0;
      for (std::size_t j = 0; j < mean.size(); ++j) dist += (mean[j] - proto[j]) * (mean[j] - proto[j]);
      if (dist < best_dist) {
        best_dist = dist;
        best = tok;
      }
    }
    out.push_back(best);
  }
  return out;
}

double video_accuracy_ceiling(const LanguageSpec& spec, const VisemeMap& vmap, double confusion) {
  const double nv = static_cast<double>(vmap.n_visemes);
  double total = 0.0;
  for (std::size_t v = 0; v < vmap.n_visemes; ++v) {
    double best = 0.0;
    for (std::size_t k = 0; k < spec.n_tokens; ++k) {
      const double p_obs = (vmap.viseme_of[k] == v ? 1.0 - confusion : 0.0) + confusion / nv;
      best = std::max(best, spec.unigram[k] * p_obs);
    }
    total += best;
  }
  return total;
}

void write_utterances(const std::vector<Utterance>& utts, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  binio::write_magic(out, kRecordMagic);
  binio::write<std::uint32_t>(out, kCorpusFormatVersion);
  binio::write<std::uint32_t>(out, 0);
  binio::write<std::uint64_t>(out, utts.size());
  for (const auto& u : utts) {
    binio::write<std::uint64_t>(out, u.id);
    binio::write<std::uint32_t>(out, static_cast<std::uint32_t>(u.lang_id));
    binio::write<std::uint32_t>(out, static_cast<std::uint32_t>(u.tokens.size()));
    binio::write<std::uint32_t>(out, static_cast<std::uint32_t>(u.audio.rows));
    binio::write<std::uint32_t>(out, static_cast<std::uint32_t>(u.audio.cols));
    binio::write<std::uint32_t>(out, static_cast<std::uint32_t>(u.video.rows));
    binio::write<std::uint32_t>(out, static_cast<std::uint32_t>(u.video.cols));
    binio::write_array<TokenId>(out, u.tokens);
    binio::write_array<double>(out, u.audio.data);
    binio::write_array<double>(out, u.video.data);
  }
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<Utterance> read_utterances(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  binio::expect_magic(in, kRecordMagic, path.string());
  const auto version = binio::read<std::uint32_t>(in);
  if (version != kCorpusFormatVersion) {
    throw IoError(path.string() + ": unsupported record format version " + std::to_string(version));
  }
  binio::read<std::uint32_t>(in);
  const auto count = binio::read<std::uint64_t>(in);
  std::vector<Utterance> utts;
  utts.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    Utterance u;
    u.id = binio::read<std::uint64_t>(in);
    u.lang_id = binio::read<std::uint32_t>(in);
    const auto n_tokens = binio::read<std::uint32_t>(in);
    const auto a_rows = binio::read<std::uint32_t>(in);
    const auto a_cols = binio::read<std::uint32_t>(in);
    const auto v_rows = binio::read<std::uint32_t>(in);
    const auto v_cols = binio::read<std::uint32_t>(in);
    u.tokens = binio::read_array<TokenId>(in, n_tokens);
    u.audio = Frames(a_rows, a_cols);
    u.audio.data = binio::read_array<double>(in, static_cast<std::size_t>(a_rows) * a_cols);
    u.video = Frames(v_rows, v_cols);
    u.video.data = binio::read_array<double>(in, static_cast<std::size_t>(v_rows) * v_cols);
    utts.push_back(std::move(u));
  }
  return utts;
}

namespace {

std::string split_digest(const std::vector<Utterance>& utts) {
  Sha256 h;
  for (const auto& u : utts) {
    const std::uint64_t header[3] = {u.id, u.lang_id, u.tokens.size()};
    h.update(header, sizeof(header));
    h.update(u.tokens.data(), u.tokens.size() * sizeof(TokenId));
    h.update(u.audio.data);
    h.update(u.video.data);
  }
  return h.hex();
}

}  // namespace

std::string corpus_checksum(const Corpus& corpus) {
  Sha256 h;
  h.update(split_digest(corpus.train));
  h.update(split_digest(corpus.dev));
  h.update(split_digest(corpus.test));
  return h.hex();
}

std::string save_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json manifest;
  manifest["format"] = "avsr-corpus";
  manifest["format_version"] = kCorpusFormatVersion;
  manifest["config"] = to_json(corpus.config);
  nlohmann::ordered_json langs = nlohmann::ordered_json::array();
  for (const auto& l : corpus.languages) {
    langs.push_back({{"lang_id", l.lang_id},
                     {"first_token", l.first_token},
                     {"n_tokens", l.n_tokens},
                     {"train_count", l.train_count},
                     {"hours_weight", l.hours_weight}});
  }
  manifest["languages"] = langs;
  for (const std::string split : {"train", "dev", "test"}) {
    const auto& utts = corpus.split(split);
    const auto file = dir / (split + ".bin");
    write_utterances(utts, file);
    std::vector<std::size_t> per_lang(corpus.config.n_languages, 0);
    for (const auto& u : utts) ++per_lang[u.lang_id];
    manifest["splits"][split] = {{"file", split + ".bin"},
                                 {"count", utts.size()},
                                 {"per_language", per_lang},
                                 {"seed", Rng::derive_seed(corpus.config.seed, "split:" + split)},
                                 {"sha256", sha256_file(file)}};
  }
  manifest["checksum"] = corpus_checksum(corpus);
  const std::string text = manifest.dump(2) + "\n";
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
  out << text;
  return sha256_hex(text);
}

Corpus load_corpus(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw IoError("corpus manifest not found: " + manifest_path.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(manifest_path.string() + ": " + e.what());
  }
  if (manifest.value("format_version", -1) != kCorpusFormatVersion) {
    throw IoError(manifest_path.string() + ": unsupported corpus format version");
  }
  Corpus c;
  c.config = corpus_config_from_json(manifest.at("config"), "corpus");
  c.languages = make_languages(c.config);
  c.visemes = make_viseme_maps(c.config);
  c.codebook = make_codebook(c.config);
  for (const std::string split : {"train", "dev", "test"}) {
    const auto& entry = manifest.at("splits").at(split);
    const auto file = dir / entry.at("file").get<std::string>();
    if (sha256_file(file) != entry.at("sha256").get<std::string>()) {
      throw IoError(file.string() + ": checksum mismatch against manifest");
    }
    auto utts = read_utterances(file);
    if (split == "train") c.train = std::move(utts);
    if (split == "dev") c.dev = std::move(utts);
    if (split == "test") c.test = std::move(utts);
  }
  return c;
}

}  // namespace avsr
