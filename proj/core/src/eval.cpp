#include "avsr/eval.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include "avsr/error.hpp"

namespace avsr {
namespace {

// ---- UTF-8 helpers for normalize_text ----

bool decode_utf8(std::string_view s, std::size_t& i, char32_t& cp) {
  const auto b0 = static_cast<unsigned char>(s[i]);
  auto cont = [&](std::size_t k) {
    return i + k < s.size() && (static_cast<unsigned char>(s[i + k]) & 0xC0) == 0x80;
  };
  auto bits = [&](std::size_t k) { return static_cast<char32_t>(static_cast<unsigned char>(s[i + k]) & 0x3F); };
  if (b0 < 0x80) {
    cp = b0;
    i += 1;
    return true;
  }
  if ((b0 & 0xE0) == 0xC0 && cont(1)) {
    cp = (static_cast<char32_t>(b0 & 0x1F) << 6) | bits(1);
    i += 2;
    return cp >= 0x80;
  }
  if ((b0 & 0xF0) == 0xE0 && cont(1) && cont(2)) {
    cp = (static_cast<char32_t>(b0 & 0x0F) << 12) | (bits(1) << 6) | bits(2);
    i += 3;
    return cp >= 0x800;
  }
  if ((b0 & 0xF8) == 0xF0 && cont(1) && cont(2) && cont(3)) {
    cp = (static_cast<char32_t>(b0 & 0x07) << 18) | (bits(1) << 12) | (bits(2) << 6) | bits(3);
    i += 4;
    return cp >= 0x10000 && cp <= 0x10FFFF;
  }
  i += 1;
  return false;
}

void encode_utf8(char32_t cp, std::string& out) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

constexpr char32_t kRightSingleQuote = 0x2019;

bool is_space(char32_t c) {
  return c == ' ' || (c >= 0x09 && c <= 0x0D) || c == 0xA0 || (c >= 0x2000 && c <= 0x200A) || c == 0x2028 ||
         c == 0x2029 || c == 0x202F || c == 0x205F || c == 0x3000;
}

bool is_punct(char32_t c) {
  if (c == '\'' || c == kRightSingleQuote) return false;
  if (c < 0x80) return (c >= 0x21 && c <= 0x2F) || (c >= 0x3A && c <= 0x40) || (c >= 0x5B && c <= 0x60) ||
                       (c >= 0x7B && c <= 0x7E);
  switch (c) {
    case 0xA1: case 0xA7: case 0xAB: case 0xB6: case 0xB7: case 0xBB: case 0xBF:
    case 0x37E: case 0x387:                            // Greek question mark, ano teleia
    case 0x55A: case 0x55B: case 0x55C: case 0x55D: case 0x55E: case 0x55F: case 0x589:
    case 0x60C: case 0x61B: case 0x61F: case 0x66A: case 0x66B: case 0x66C: case 0x6D4:  // Arabic
      return true;
    default:
      break;
  }
  return (c >= 0x2010 && c <= 0x2027) || (c >= 0x2030 && c <= 0x205E) || (c >= 0x3001 && c <= 0x3003) ||
         (c >= 0x3008 && c <= 0x3011) || (c >= 0xFF01 && c <= 0xFF0F);
}

char32_t to_lower(char32_t c) {
  if (c >= 'A' && c <= 'Z') return c + 0x20;
  if (c >= 0xC0 && c <= 0xDE && c != 0xD7) return c + 0x20;
  if (c >= 0x391 && c <= 0x3A9 && c != 0x3A2) return c + 0x20;
  if (c == 0x386) return 0x3AC;
  if (c >= 0x388 && c <= 0x38A) return c + 37;
  if (c == 0x38C) return 0x3CC;
  if (c == 0x38E || c == 0x38F) return c + 63;
  if (c >= 0x410 && c <= 0x42F) return c + 0x20;
  if (c >= 0x400 && c <= 0x40F) return c + 0x50;
  return c;
}

std::string csv_escape(std::string s) {
  std::replace(s.begin(), s.end(), ',', ';');
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_number(const std::string& s, const std::string& what) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw IoError(what + ": not a number: '" + s + "'");
  return v;
}

double mean_of(const std::map<std::string, double>& per_language, const std::vector<std::string>& labels,
               const char* group) {
  if (labels.empty()) return std::numeric_limits<double>::quiet_NaN();
  double acc = 0.0;
  for (const auto& l : labels) {
    const auto it = per_language.find(l);
    if (it == per_language.end()) {
      throw ConfigError(std::string("aggregate: language '") + l + "' of group " + group + " has no WER");
    }
    acc += it->second;
  }
  return acc / static_cast<double>(labels.size());
}

SweepRow row_from_report(const std::string& model, Modality mode, const EvalReport& r, std::optional<double> snr) {
  SweepRow row;
  row.model = model;
  row.mode = mode;
  row.category = r.condition.category_label();
  row.snr_db = snr;
  row.per_language = r.per_language;
  row.avg_non_en = r.avg_non_en;
  row.avg_hr = r.avg_hr;
  row.avg_lr = r.avg_lr;
  return row;
}

}  // namespace

DecodeResult greedy_decode(const AvsrModel& model, const EncodedStreams& streams, TokenId lang_token,
                           std::size_t max_len) {
  const auto& sp = model.specials();
  if (max_len + 1 > model.config().max_target_len) {
    throw ConfigError("greedy_decode: max_len " + std::to_string(max_len) + " exceeds the model's max_target_len " +
                      std::to_string(model.config().max_target_len) + " - 1");
  }
  NoGradGuard no_grad;
  std::vector<TokenId> prefix = {sp.bos, lang_token};
  DecodeResult out;
  while (true) {
    if (out.tokens.size() == max_len) {
      out.truncated = true;
      break;
    }
    const Tensor logits = model.forward_teacher_forced(prefix, streams);
    const std::size_t vocab = logits.shape()[1];
    const auto last = logits.values().subspan((prefix.size() - 1) * vocab, vocab);
    const auto best = static_cast<TokenId>(std::max_element(last.begin(), last.end()) - last.begin());
    if (best == sp.eos) break;
    out.tokens.push_back(best);
    prefix.push_back(best);
  }
  return out;
}

std::string normalize_text(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool pending_space = false;
  std::size_t i = 0;
  while (i < s.size()) {
    const std::size_t start = i;
    char32_t cp = 0;
    const bool valid = decode_utf8(s, i, cp);
    if (valid && is_space(cp)) {
      pending_space = !out.empty();
      continue;
    }
    if (valid && is_punct(cp)) continue;
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    if (valid) {
      encode_utf8(to_lower(cp), out);
    } else {
      out.append(s.substr(start, i - start));
    }
  }
  return out;
}

std::vector<std::string> split_words(std::string_view s) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos < s.size()) {
    const auto next = s.find(' ', pos);
    const auto end = next == std::string_view::npos ? s.size() : next;
    if (end > pos) out.emplace_back(s.substr(pos, end - pos));
    pos = end + 1;
  }
  return out;
}

std::vector<std::string> render_words(std::span<const TokenId> tokens, const CorpusConfig& corpus) {
  const auto first = static_cast<TokenId>(3 + corpus.n_languages);
  const auto vocab = static_cast<TokenId>(corpus.vocab_size());
  const auto per_lang = static_cast<TokenId>(corpus.tokens_per_language);
  std::vector<std::string> out;
  out.reserve(tokens.size());
  for (const TokenId t : tokens) {
    if (t >= first && t < vocab) {
      out.push_back("l" + std::to_string((t - first) / per_lang) + "w" + std::to_string((t - first) % per_lang));
    } else if (t == 0) {
      out.emplace_back("<pad>");
    } else if (t == 1) {
      out.emplace_back("<bos>");
    } else if (t == 2) {
      out.emplace_back("<eos>");
    } else if (t > 2 && t < first) {
      out.push_back("<lang" + std::to_string(t - 3) + ">");
    } else {
      throw ShapeError("render_words: token id " + std::to_string(t) + " outside the vocabulary");
    }
  }
  return out;
}

WerBreakdown& WerBreakdown::operator+=(const WerBreakdown& o) {
  substitutions += o.substitutions;
  deletions += o.deletions;
  insertions += o.insertions;
  ref_words += o.ref_words;
  return *this;
}

WerBreakdown edit_alignment(std::span<const std::string> ref, std::span<const std::string> hyp) {
  const std::size_t n = ref.size();
  const std::size_t m = hyp.size();
  std::vector<std::size_t> d((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) -> std::size_t& { return d[i * (m + 1) + j]; };
  for (std::size_t i = 0; i <= n; ++i) at(i, 0) = i;
  for (std::size_t j = 0; j <= m; ++j) at(0, j) = j;
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t sub = at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      at(i, j) = std::min({sub, at(i - 1, j) + 1, at(i, j - 1) + 1});
    }
  }
  WerBreakdown w;
  w.ref_words = n;
  std::size_t i = n;
  std::size_t j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 && at(i, j) == at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1)) {
      if (ref[i - 1] != hyp[j - 1]) ++w.substitutions;
      --i;
      --j;
    } else if (i > 0 && at(i, j) == at(i - 1, j) + 1) {
      ++w.deletions;
      --i;
    } else {
      ++w.insertions;
      --j;
    }
  }
  return w;
}

WerBreakdown wer(std::span<const std::string> ref, std::span<const std::string> hyp) {
  if (ref.empty()) throw ConfigError("wer: empty reference");
  return edit_alignment(ref, hyp);
}

std::string language_label(std::size_t lang_id) { return "l" + std::to_string(lang_id); }

LanguageGroups default_groups(const CorpusConfig& corpus) {
  LanguageGroups g;
  const auto counts = corpus.language_train_counts();
  std::vector<std::size_t> others;
  for (std::size_t l = 1; l < corpus.n_languages; ++l) {
    g.non_en.push_back(language_label(l));
    others.push_back(l);
  }
  std::stable_sort(others.begin(), others.end(), [&](std::size_t a, std::size_t b) { return counts[a] > counts[b]; });
  const std::size_t n_hr = (others.size() + 1) / 2;
  std::vector<std::size_t> hr(others.begin(), others.begin() + static_cast<std::ptrdiff_t>(n_hr));
  std::vector<std::size_t> lr(others.begin() + static_cast<std::ptrdiff_t>(n_hr), others.end());
  std::sort(hr.begin(), hr.end());
  std::sort(lr.begin(), lr.end());
  for (const auto l : hr) g.hr.push_back(language_label(l));
  for (const auto l : lr) g.lr.push_back(language_label(l));
  return g;
}

EvalReport aggregate(const std::map<std::string, double>& per_language, const LanguageGroups& groups) {
  EvalReport r;
  r.per_language = per_language;
  r.avg_non_en = mean_of(per_language, groups.non_en, "non_en");
  r.avg_hr = mean_of(per_language, groups.hr, "hr");
  r.avg_lr = mean_of(per_language, groups.lr, "lr");
  return r;
}

Frames eval_audio(const Utterance& utt, const NoiseBank& bank, const EvalCondition& condition, std::uint64_t seed) {
  if (condition.clean) return utt.audio;
  Rng rng = Rng(seed).substream("eval:" + to_string(condition.category)).substream(utt.id);
  const Frames noise = draw_noise(bank, condition.category, utt.audio.rows, utt.audio.cols, rng, utt.id);
  return mix(utt.audio, noise, condition.snr_db);
}

EvalResult evaluate(const AvsrModel& model, const Corpus& corpus, const std::vector<Utterance>& split,
                    const NoiseBank& bank, const EvalCondition& condition, std::uint64_t seed,
                    const LanguageGroups& groups, std::size_t max_len) {
  if (split.empty()) throw ConfigError("evaluate: split is empty");
  NoGradGuard no_grad;
  EvalResult result;
  std::map<std::string, WerBreakdown> totals;
  for (const auto& utt : split) {
    const Frames audio = eval_audio(utt, bank, condition, seed);
    const EncodedStreams streams = encode_with_selection(model, audio, utt.video, condition.mode);
    const auto decoded = greedy_decode(model, streams, model.specials().lang_token(utt.lang_id), max_len);
    Hypothesis h;
    h.utterance_id = utt.id;
    h.lang_id = utt.lang_id;
    h.tokens = decoded.tokens;
    h.truncated = decoded.truncated;
    h.words = render_words(decoded.tokens, corpus.config);
    const auto ref = render_words(utt.tokens, corpus.config);
    h.score = wer(ref, h.words);
    totals[language_label(utt.lang_id)] += h.score;
    result.hypotheses.push_back(std::move(h));
  }
  std::map<std::string, double> per_language;
  for (const auto& [label, w] : totals) per_language[label] = w.wer();
  result.report = aggregate(per_language, groups);
  result.report.breakdown = std::move(totals);
  result.report.condition = condition;
  return result;
}

std::vector<SweepRow> sweep(const std::vector<SweepModel>& models, const Corpus& corpus, const NoiseBank& bank,
                            const SweepOptions& options, std::uint64_t seed, const LanguageGroups& groups,
                            std::size_t max_len) {
  struct Cell {
    std::size_t model = 0;
    EvalCondition condition;
  };
  std::vector<Cell> cells;
  for (std::size_t m = 0; m < models.size(); ++m) {
    if (models[m].model == nullptr) throw ConfigError("sweep: model '" + models[m].name + "' is missing");
    if (options.include_clean) cells.push_back({m, {NoiseCategory::babble, 0.0, models[m].mode, true}});
    for (const auto cat : options.categories) {
      for (const double snr : options.snrs_db) cells.push_back({m, {cat, snr, models[m].mode, false}});
    }
  }

  std::vector<SweepRow> rows(cells.size());
  auto run_cell = [&](std::size_t i) {
    const Cell& c = cells[i];
    const SweepModel& sm = models[c.model];
    const std::optional<double> snr = c.condition.clean ? std::nullopt : std::optional<double>(c.condition.snr_db);
    try {
      const auto r = evaluate(*sm.model, corpus, corpus.test, bank, c.condition, seed, groups, max_len);
      rows[i] = row_from_report(sm.name, sm.mode, r.report, snr);
    } catch (const std::exception& e) {
      SweepRow row;
      row.model = sm.name;
      row.mode = sm.mode;
      row.category = c.condition.category_label();
      row.snr_db = snr;
      row.failed = true;
      row.error = e.what();
      row.avg_non_en = row.avg_hr = row.avg_lr = std::numeric_limits<double>::quiet_NaN();
      rows[i] = std::move(row);
    }
  };

  const std::size_t jobs = std::max<std::size_t>(1, std::min(options.jobs, cells.size()));
  if (jobs == 1) {
    for (std::size_t i = 0; i < cells.size(); ++i) run_cell(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> workers;
    for (std::size_t w = 0; w < jobs; ++w) {
      workers.emplace_back([&] {
        for (std::size_t i = next++; i < cells.size(); i = next++) run_cell(i);
      });
    }
    for (auto& t : workers) t.join();
  }

  if (options.merge_music_natural) {
    const std::string music = to_string(NoiseCategory::music);
    const std::string natural = to_string(NoiseCategory::natural);
    std::vector<SweepRow> merged;
    for (const auto& sm : models) {
      for (const double snr : options.snrs_db) {
        const SweepRow* a = nullptr;
        const SweepRow* b = nullptr;
        for (const auto& r : rows) {
          if (r.model != sm.name || !r.snr_db || *r.snr_db != snr) continue;
          if (r.category == music) a = &r;
          if (r.category == natural) b = &r;
        }
        if (a == nullptr || b == nullptr) continue;
        SweepRow m;
        m.model = sm.name;
        m.mode = sm.mode;
        m.category = music + "+" + natural;
        m.snr_db = snr;
        if (a->failed || b->failed) {
          m.failed = true;
          m.error = "component cell failed";
          m.avg_non_en = m.avg_hr = m.avg_lr = std::numeric_limits<double>::quiet_NaN();
        } else {
          for (const auto& [label, w] : a->per_language) m.per_language[label] = 0.5 * (w + b->per_language.at(label));
          const auto rep = aggregate(m.per_language, groups);
          m.avg_non_en = rep.avg_non_en;
          m.avg_hr = rep.avg_hr;
          m.avg_lr = rep.avg_lr;
        }
        merged.push_back(std::move(m));
      }
    }
    rows.insert(rows.end(), merged.begin(), merged.end());
  }
  return rows;
}

double column_value(const SweepRow& row, AverageColumn column) {
  switch (column) {
    case AverageColumn::non_en:
      return row.avg_non_en;
    case AverageColumn::hr:
      return row.avg_hr;
    case AverageColumn::lr:
      return row.avg_lr;
  }
  return std::numeric_limits<double>::quiet_NaN();
}

std::vector<PlotPoint> plot_data(const std::vector<SweepRow>& rows, AverageColumn column) {
  std::vector<PlotPoint> points;
  std::map<std::pair<std::string, std::string>, std::pair<double, std::size_t>> sums;
  for (const auto& r : rows) {
    if (!r.snr_db) continue;
    const bool known = std::any_of(points.begin(), points.end(), [&](const PlotPoint& p) { return p.category == r.category; });
    if (!known) points.push_back({r.category, {}});
    auto& s = sums[{r.category, r.model}];
    s.first += r.failed ? std::numeric_limits<double>::quiet_NaN() : column_value(r, column);
    s.second += 1;
  }
  for (auto& p : points) {
    for (const auto& [key, s] : sums) {
      if (key.first == p.category) p.mean_wer[key.second] = s.first / static_cast<double>(s.second);
    }
  }
  return points;
}

double relative_improvement(double wer_a, double wer_av) {
  if (wer_a == wer_av) return 0.0;
  if (wer_a == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return 100.0 * (wer_a - wer_av) / wer_a;
}

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepRow>& rows,
                     const std::vector<std::string>& languages) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "model,mode,category,snr_db";
  for (const auto& l : languages) out << ',' << l;
  out << ",avg_non_en,avg_hr,avg_lr,status\n";
  for (const auto& r : rows) {
    out << csv_escape(r.model) << ',' << to_string(r.mode) << ',' << r.category << ','
        << (r.snr_db ? format_number(*r.snr_db) : "");
    for (const auto& l : languages) {
      const auto it = r.per_language.find(l);
      out << ',' << (it == r.per_language.end() ? "nan" : format_number(it->second));
    }
    out << ',' << format_number(r.avg_non_en) << ',' << format_number(r.avg_hr) << ',' << format_number(r.avg_lr)
        << ',' << (r.failed ? "failed: " + csv_escape(r.error) : "ok") << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<SweepRow> read_sweep_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw IoError(path.string() + ": empty file");
  const auto header = split_csv_line(line);
  const std::vector<std::string> head = {"model", "mode", "category", "snr_db"};
  const std::vector<std::string> tail = {"avg_non_en", "avg_hr", "avg_lr", "status"};
  if (header.size() < head.size() + tail.size() || !std::equal(head.begin(), head.end(), header.begin()) ||
      !std::equal(tail.begin(), tail.end(), header.end() - static_cast<std::ptrdiff_t>(tail.size()))) {
    throw IoError(path.string() + ": unexpected header '" + line + "'");
  }
  const std::size_t n_lang = header.size() - head.size() - tail.size();
  std::vector<SweepRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    const std::string where = path.string() + ":" + std::to_string(line_no);
    if (cells.size() != header.size()) throw IoError(where + ": expected " + std::to_string(header.size()) + " cells");
    SweepRow r;
    r.model = cells[0];
    r.mode = modality_from_string(cells[1]);
    r.category = cells[2];
    if (!cells[3].empty()) r.snr_db = parse_number(cells[3], where);
    for (std::size_t k = 0; k < n_lang; ++k) {
      const double v = parse_number(cells[4 + k], where);
      if (!std::isnan(v)) r.per_language[header[4 + k]] = v;
    }
    r.avg_non_en = parse_number(cells[4 + n_lang], where);
    r.avg_hr = parse_number(cells[5 + n_lang], where);
    r.avg_lr = parse_number(cells[6 + n_lang], where);
    const std::string& status = cells[7 + n_lang];
    if (status != "ok") {
      r.failed = true;
      r.error = status.rfind("failed: ", 0) == 0 ? status.substr(8) : status;
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_plot_csv(const std::filesystem::path& path, const std::vector<PlotPoint>& points,
                    const std::string& model_a, const std::string& model_av) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "category,wer_" << model_a << ",wer_" << model_av << ",abs_improvement,relative_improvement\n";
  for (const auto& p : points) {
    const auto a = p.mean_wer.find(model_a);
    const auto av = p.mean_wer.find(model_av);
    if (a == p.mean_wer.end() || av == p.mean_wer.end()) continue;
    out << p.category << ',' << format_number(a->second) << ',' << format_number(av->second) << ','
        << format_number(a->second - av->second) << ',' << format_number(relative_improvement(a->second, av->second))
        << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<AblationRow> ablate(const AvsrModel& stage1, const Corpus& corpus, const NoiseBank& bank,
                                const AblationOptions& options, const LanguageGroups& groups) {
  if (options.policies.empty()) throw ConfigError("ablate: no policies");
  for (const auto& p : options.policies) p.validate();
  std::vector<AblationRow> rows;
  for (const auto& policy : options.policies) {
    StageConfig cfg = options.stage2;
    cfg.dropout = policy;
    const TrainResult trained = train_stage2(stage1, corpus, bank, cfg);
    EvalCondition cond = options.condition;
    cond.mode = Modality::AV;
    const auto ev = evaluate(trained.best_model, corpus, corpus.test, bank, cond, options.eval_seed, groups,
                             options.max_len);
    AblationRow row{policy, ev.report.avg_non_en, ev.report.avg_hr, ev.report.avg_lr, trained.best_step,
                    trained.best_accuracy};
    if (options.on_row) options.on_row(row);
    rows.push_back(row);
  }
  std::stable_sort(rows.begin(), rows.end(),
                   [](const AblationRow& a, const AblationRow& b) { return a.avg_non_en < b.avg_non_en; });
  return rows;
}

void write_ablation_csv(const std::filesystem::path& path, const std::vector<AblationRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "rank,p_av,p_a,p_v,avg_non_en,avg_hr,avg_lr,best_step,dev_accuracy\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    out << i + 1 << ',' << format_number(r.policy.p_av) << ',' << format_number(r.policy.p_a) << ','
        << format_number(r.policy.p_v) << ',' << format_number(r.avg_non_en) << ',' << format_number(r.avg_hr) << ','
        << format_number(r.avg_lr) << ',' << r.best_step << ',' << format_number(r.dev_accuracy) << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace avsr
