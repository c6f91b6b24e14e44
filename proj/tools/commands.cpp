#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "avsr/checkpoint.hpp"
#include "avsr/digest.hpp"
#include "avsr/error.hpp"

namespace avsr::cli {
namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr std::size_t kProbeUtterances = 8;

struct RunContext {
  RunConfig cfg;
  fs::path run;
  LanguageGroups groups;
};

RunContext open_run(const GlobalOptions& g) {
  RunContext ctx{resolve_config(g), {}, {}};
  ctx.run = ctx.cfg.out_dir;
  ctx.groups = default_groups(ctx.cfg.corpus);
  fs::create_directories(ctx.run);
  std::ofstream out(ctx.run / layout::kConfig, std::ios::trunc);
  if (!out) throw IoError("cannot write " + (ctx.run / layout::kConfig).string());
  out << to_json(ctx.cfg).dump(2) << "\n";
  return ctx;
}

Corpus load_run_corpus(const RunContext& ctx) {
  const fs::path dir = ctx.run / layout::kCorpus;
  if (!fs::exists(dir / "manifest.json")) {
    throw IoError("no corpus in " + dir.string() + "; run gen-data first");
  }
  Corpus c = load_corpus(dir);
  if (!(c.config == ctx.cfg.corpus)) {
    throw ConfigError("corpus in " + dir.string() +
                      " was generated from a different corpus config or seed; rerun gen-data with --force");
  }
  return c;
}

NoiseBank make_bank(const RunContext& ctx, const Corpus& corpus) {
  return NoiseBank::from_utterances(corpus.train, ctx.cfg.noise_bank_streams, Rng(ctx.cfg.derived_seed("noise")));
}

const StageConfig& stage_config(const RunConfig& cfg, int stage) { return stage == 1 ? cfg.stage1 : cfg.stage2; }

// Clean-audio logits of the first dev utterances, hashed; recorded in every
// checkpoint so a reload can be checked bit for bit.
ordered_json probe_record(const AvsrModel& model, const Corpus& corpus) {
  NoGradGuard no_grad;
  Sha256 h;
  ordered_json ids = ordered_json::array();
  const std::size_t n = std::min(kProbeUtterances, corpus.dev.size());
  for (std::size_t i = 0; i < n; ++i) {
    const Utterance& u = corpus.dev[i];
    const auto streams = encode_with_selection(model, u.audio, u.video, Modality::AV);
    const auto ex = make_example(model.specials(), u);
    h.update(model.forward_teacher_forced(ex.inputs, streams).values());
    ids.push_back(u.id);
  }
  return {{"utterance_ids", ids}, {"logits_sha256", h.hex()}};
}

ordered_json history_json(const std::vector<ValidationRecord>& history) {
  ordered_json arr = ordered_json::array();
  for (const auto& r : history) arr.push_back({{"step", r.step}, {"accuracy", r.accuracy}, {"loss", r.loss}});
  return arr;
}

std::vector<ValidationRecord> history_from_json(const json& j) {
  std::vector<ValidationRecord> out;
  for (const auto& r : j) {
    out.push_back({r.at("step").get<std::size_t>(), r.at("accuracy").get<double>(), r.at("loss").get<double>()});
  }
  return out;
}

ordered_json checkpoint_metadata(const RunContext& ctx, const Corpus& corpus, int stage, const AvsrModel& model,
                                 std::size_t step, const TrainResult& progress) {
  ordered_json m;
  m["stage"] = stage;
  m["stage_config"] = to_json(stage_config(ctx.cfg, stage));
  m["corpus_checksum"] = corpus_checksum(corpus);
  m["step"] = step;
  m["best_step"] = progress.best_step;
  m["best_dev_accuracy"] = progress.best_accuracy;
  m["history"] = history_json(progress.history);
  m["probe"] = probe_record(model, corpus);
  return m;
}

void check_probe(const fs::path& path, const Checkpoint& ck, const Corpus& corpus) {
  if (!ck.metadata.contains("probe")) return;
  const auto now = probe_record(ck.model, corpus);
  if (now.at("logits_sha256").get<std::string>() != ck.metadata.at("probe").at("logits_sha256").get<std::string>()) {
    throw IoError(path.string() + ": probe logits differ from the ones recorded at save time");
  }
}

Checkpoint load_verified(const fs::path& path, const Corpus& corpus) {
  Checkpoint ck = load_checkpoint(path);
  check_probe(path, ck, corpus);
  return ck;
}

std::string fmt(double v, int precision = 4) {
  if (std::isnan(v)) return "nan";
  std::ostringstream s;
  s << std::fixed << std::setprecision(precision) << v;
  return s.str();
}

class TrainLog {
 public:
  TrainLog(const fs::path& path, std::optional<std::size_t> keep_through) : path_(path) {
    std::vector<std::string> kept;
    if (keep_through) {
      std::ifstream in(path);
      std::string line;
      std::getline(in, line);
      while (std::getline(in, line)) {
        if (std::stoull(line.substr(0, line.find(','))) <= *keep_through) kept.push_back(line);
      }
    }
    out_.open(path, std::ios::trunc);
    if (!out_) throw IoError("cannot write " + path.string());
    out_ << "step,loss,accuracy,dev_accuracy,dev_loss\n";
    for (const auto& l : kept) out_ << l << '\n';
  }

  void row(const StepRecord& r) {
    out_ << r.step << ',' << format_number(r.loss) << ',' << format_number(r.accuracy) << ',';
    if (r.validation) out_ << format_number(r.validation->accuracy) << ',' << format_number(r.validation->loss);
    else out_ << ',';
    out_ << '\n';
  }

 private:
  fs::path path_;
  std::ofstream out_;
};

struct StageOutcome {
  std::size_t best_step = 0;
  double best_accuracy = 0.0;
};

StageOutcome run_stage(const RunContext& ctx, const Corpus& corpus, const NoiseBank& bank, int stage,
                       const std::optional<fs::path>& resume, bool force, std::ostream& log) {
  const StageConfig& scfg = stage_config(ctx.cfg, stage);
  const fs::path dir = ctx.run / layout::stage_dir(stage);
  const fs::path best_path = dir / layout::kBest;
  if (!resume && fs::exists(best_path) && !force) {
    throw ConfigError(best_path.string() + " exists; pass --force to retrain or --resume to continue");
  }
  fs::create_directories(dir);

  std::optional<ResumeState> state;
  if (resume) {
    Checkpoint ck = load_verified(*resume, corpus);
    if (!ck.optimizer || !ck.metadata.contains("history")) {
      throw ConfigError(resume->string() + ": checkpoint has no optimizer state; resume from a last.ckpt");
    }
    if (ck.metadata.value("stage", 0) != stage) {
      throw ConfigError(resume->string() + ": checkpoint is not from stage " + std::to_string(stage));
    }
    Checkpoint best = load_verified(best_path, corpus);
    state.emplace(ResumeState{std::move(ck.model), std::move(*ck.optimizer), static_cast<std::size_t>(ck.step),
                              history_from_json(ck.metadata.at("history")), std::move(best.model)});
    log << "[stage" << stage << "] resuming at step " << state->step << "\n";
  }

  TrainLog train_log(dir / layout::kTrainLog,
                     state ? std::optional<std::size_t>(state->step) : std::optional<std::size_t>());
  TrainHooks hooks;
  hooks.on_step = [&](const StepRecord& r) {
    train_log.row(r);
    if (r.validation) {
      log << "[stage" << stage << "] step " << r.step << "/" << scfg.steps << " loss " << fmt(r.loss) << " dev_acc "
          << fmt(r.validation->accuracy) << "\n";
      log.flush();
    }
  };
  hooks.on_validation = [&](const TrainSnapshot& s) {
    const Rng rng(scfg.seed, s.step);
    const auto meta = checkpoint_metadata(ctx, corpus, stage, s.model, s.step, s.progress);
    if (s.improved) save_checkpoint(best_path, s.model, rng, s.step, meta);
    save_checkpoint(dir / layout::kLast, s.model, rng, s.step, meta, &s.optimizer);
  };

  TrainResult result = [&] {
    if (state) return resume_training(std::move(*state), corpus, bank, scfg, hooks);
    if (stage == 1) {
      return train_stage1(AvsrModel(ctx.cfg.resolved_model(), ctx.cfg.derived_seed("model")), corpus, bank, scfg,
                          hooks);
    }
    const fs::path s1 = ctx.run / layout::stage_dir(1) / layout::kBest;
    if (!fs::exists(s1)) throw IoError("missing stage-1 checkpoint " + s1.string() + "; run train --stage 1 first");
    const Checkpoint stage1 = load_verified(s1, corpus);
    return train_stage2(stage1.model, corpus, bank, scfg, hooks);
  }();
  log << "[stage" << stage << "] best dev accuracy " << fmt(result.best_accuracy) << " at step " << result.best_step
      << "\n";
  return {result.best_step, result.best_accuracy};
}

template <class Fn>
auto tagged(const std::string& tag, Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    throw ConfigError("[" + tag + "] " + e.what());
  } catch (const NumericError& e) {
    throw NumericError("[" + tag + "] " + e.what());
  } catch (const IoError& e) {
    throw IoError("[" + tag + "] " + e.what());
  } catch (const ShapeError& e) {
    throw ShapeError("[" + tag + "] " + e.what());
  }
}

std::vector<std::string> language_labels(const CorpusConfig& c) {
  std::vector<std::string> out;
  for (std::size_t l = 0; l < c.n_languages; ++l) out.push_back(language_label(l));
  return out;
}

std::string file_stem_for(const EvalCondition& c) {
  std::string s = to_string(c.mode) + "_" + c.category_label();
  if (!c.clean) s += "_" + format_number(c.snr_db) + "dB";
  return s;
}

std::vector<SweepRow> run_sweep(const RunContext& ctx, const Corpus& corpus, const NoiseBank& bank,
                                const AvsrModel* model_a, const AvsrModel* model_av, std::size_t jobs,
                                std::ostream& log) {
  std::vector<SweepModel> models;
  if (model_a != nullptr) models.push_back({"A", model_a, Modality::A});
  if (model_av != nullptr) models.push_back({"AV", model_av, Modality::AV});
  SweepOptions opt;
  opt.categories = ctx.cfg.sweep.categories;
  opt.snrs_db = ctx.cfg.sweep.snrs_db;
  opt.jobs = jobs;
  const auto rows =
      sweep(models, corpus, bank, opt, ctx.cfg.derived_seed("eval"), ctx.groups, ctx.cfg.decode_len());
  const fs::path dir = ctx.run / layout::kSweep;
  fs::create_directories(dir);
  write_sweep_csv(dir / "sweep.csv", rows, language_labels(ctx.cfg.corpus));
  if (model_a != nullptr && model_av != nullptr) {
    write_plot_csv(dir / "plot_hr.csv", plot_data(rows, AverageColumn::hr), "A", "AV");
    write_plot_csv(dir / "plot_non_en.csv", plot_data(rows, AverageColumn::non_en), "A", "AV");
  }
  std::size_t failed = 0;
  for (const auto& r : rows) failed += r.failed ? 1 : 0;
  log << "[sweep] " << rows.size() << " rows written to " << (dir / "sweep.csv").string();
  if (failed) log << " (" << failed << " failed)";
  log << "\n";
  return rows;
}

std::vector<fs::path> run_files(const fs::path& run) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(run)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), run);
    const std::string name = rel.filename().string();
    if (rel == layout::kManifest || rel == layout::kSummary || (name.size() > 4 && name.substr(name.size() - 4) == ".tmp")) {
      continue;
    }
    files.push_back(rel);
  }
  std::sort(files.begin(), files.end());
  return files;
}

const SweepRow* find_row(const std::vector<SweepRow>& rows, const std::string& model, const std::string& category,
                         double snr) {
  for (const auto& r : rows) {
    if (r.model == model && r.category == category && r.snr_db && *r.snr_db == snr) return &r;
  }
  return nullptr;
}

void remove_outputs(const fs::path& run) {
  for (const fs::path& p : {layout::stage_dir(1), layout::stage_dir(2), fs::path(layout::kSweep),
                           fs::path(layout::kEval), fs::path(layout::kAblate), fs::path(layout::kReport),
                           fs::path(layout::kSummary), fs::path(layout::kManifest)}) {
    fs::remove_all(run / p);
  }
}

int generate_corpus(const RunContext& ctx, bool force, std::ostream& log) {
  const fs::path dir = ctx.run / layout::kCorpus;
  if (fs::exists(dir)) {
    if (!force) throw ConfigError(dir.string() + " exists; pass --force to regenerate");
    fs::remove_all(dir);
  }
  const Corpus corpus = build_corpus(ctx.cfg.corpus);
  const std::string digest = save_corpus(corpus, dir);
  log << "[gen-data] corpus written to " << dir.string() << " (manifest sha256 " << digest << ")\n";
  log << "  lang  train  dev  test\n";
  for (std::size_t l = 0; l < corpus.config.n_languages; ++l) {
    auto count = [&](const std::vector<Utterance>& s) {
      return std::count_if(s.begin(), s.end(), [&](const Utterance& u) { return u.lang_id == l; });
    };
    log << "  " << std::setw(4) << language_label(l) << " " << std::setw(6) << count(corpus.train) << " "
        << std::setw(4) << count(corpus.dev) << " " << std::setw(5) << count(corpus.test) << "\n";
  }
  log << "  checksum " << corpus_checksum(corpus) << "\n";
  return 0;
}

}  // namespace

RunConfig resolve_config(const GlobalOptions& g) {
  RunConfig cfg;
  if (g.config) {
    cfg = load_run_config(*g.config);
  } else if (g.out && fs::exists(*g.out / layout::kConfig)) {
    cfg = load_run_config(*g.out / layout::kConfig);
  }
  if (g.seed) cfg.apply_seed(*g.seed);
  if (g.out) cfg.out_dir = *g.out;
  cfg.validate();
  return cfg;
}

std::vector<DropoutPolicy> load_policies(const fs::path& path) {
  const json j = parse_json_file(path);
  if (!j.is_array()) throw ConfigError(path.string() + ": expected a JSON array of policies");
  std::vector<DropoutPolicy> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    out.push_back(dropout_policy_from_json(j[i], path.string() + "[" + std::to_string(i) + "]"));
  }
  if (out.empty()) throw ConfigError(path.string() + ": no policies");
  return out;
}

void write_manifest(const fs::path& run_dir) {
  ordered_json files = ordered_json::object();
  for (const auto& rel : run_files(run_dir)) files[rel.generic_string()] = sha256_file(run_dir / rel);
  ordered_json m;
  m["format"] = "avsr-run";
  m["files"] = files;
  std::ofstream out(run_dir / layout::kManifest, std::ios::trunc);
  if (!out) throw IoError("cannot write " + (run_dir / layout::kManifest).string());
  out << m.dump(2) << "\n";
}

int cmd_gen_data(const GlobalOptions& g, std::ostream& log) {
  const RunContext ctx = open_run(g);
  generate_corpus(ctx, g.force, log);
  write_manifest(ctx.run);
  return 0;
}

int cmd_train(const GlobalOptions& g, const TrainOptions& t, std::ostream& log) {
  if (t.stage != 1 && t.stage != 2) throw ConfigError("--stage must be 1 or 2");
  const RunContext ctx = open_run(g);
  const Corpus corpus = load_run_corpus(ctx);
  const NoiseBank bank = make_bank(ctx, corpus);
  tagged("stage" + std::to_string(t.stage),
         [&] { return run_stage(ctx, corpus, bank, t.stage, t.resume, g.force, log); });
  write_manifest(ctx.run);
  return 0;
}

int cmd_eval(const GlobalOptions& g, const EvalOptions& e, std::ostream& log) {
  const RunContext ctx = open_run(g);
  const Corpus corpus = load_run_corpus(ctx);
  const NoiseBank bank = make_bank(ctx, corpus);
  const Checkpoint ck = load_verified(e.ckpt, corpus);
  EvalCondition cond;
  cond.category = e.noise ? noise_category_from_string(*e.noise) : ctx.cfg.eval.category;
  cond.snr_db = e.snr_db.value_or(ctx.cfg.eval.snr_db);
  cond.mode = e.mode ? modality_from_string(*e.mode) : ctx.cfg.eval.mode;
  cond.clean = e.clean || ctx.cfg.eval.clean;
  const auto res = evaluate(ck.model, corpus, corpus.test, bank, cond, ctx.cfg.derived_seed("eval"), ctx.groups,
                            ctx.cfg.decode_len());
  const fs::path dir = ctx.run / layout::kEval;
  fs::create_directories(dir);
  const std::string stem = e.ckpt.parent_path().filename().string() + "_" + file_stem_for(cond);
  SweepRow row;
  row.model = e.ckpt.parent_path().filename().string();
  row.mode = cond.mode;
  row.category = cond.category_label();
  if (!cond.clean) row.snr_db = cond.snr_db;
  row.per_language = res.report.per_language;
  row.avg_non_en = res.report.avg_non_en;
  row.avg_hr = res.report.avg_hr;
  row.avg_lr = res.report.avg_lr;
  write_sweep_csv(dir / (stem + ".csv"), {row}, language_labels(ctx.cfg.corpus));
  std::ofstream hyp(dir / (stem + "_hyp.tsv"), std::ios::trunc);
  hyp << "utterance_id\tlang\tsubstitutions\tdeletions\tinsertions\tref_words\ttruncated\thypothesis\n";
  for (const auto& h : res.hypotheses) {
    hyp << h.utterance_id << '\t' << language_label(h.lang_id) << '\t' << h.score.substitutions << '\t'
        << h.score.deletions << '\t' << h.score.insertions << '\t' << h.score.ref_words << '\t'
        << (h.truncated ? 1 : 0) << '\t';
    for (std::size_t i = 0; i < h.words.size(); ++i) hyp << (i ? " " : "") << h.words[i];
    hyp << '\n';
  }
  log << "[eval] " << e.ckpt.string() << " mode " << to_string(cond.mode) << ", " << cond.category_label();
  if (!cond.clean) log << " at " << format_number(cond.snr_db) << " dB";
  log << "\n";
  for (const auto& [label, w] : res.report.per_language) log << "  " << label << " WER " << fmt(100.0 * w, 1) << "\n";
  log << "  avg non-lang0 " << fmt(100.0 * res.report.avg_non_en, 1) << "  HR " << fmt(100.0 * res.report.avg_hr, 1)
      << "  LR " << fmt(100.0 * res.report.avg_lr, 1) << "\n";
  write_manifest(ctx.run);
  return 0;
}

int cmd_sweep(const GlobalOptions& g, const SweepCmdOptions& s, std::ostream& log) {
  const RunContext ctx = open_run(g);
  const Corpus corpus = load_run_corpus(ctx);
  const NoiseBank bank = make_bank(ctx, corpus);
  const fs::path a_path = s.ckpt_a.value_or(ctx.run / layout::stage_dir(1) / layout::kBest);
  const fs::path av_default = ctx.run / layout::stage_dir(2) / layout::kBest;
  const Checkpoint a = load_verified(a_path, corpus);
  std::optional<Checkpoint> av;
  if (s.ckpt_av) {
    av.emplace(load_verified(*s.ckpt_av, corpus));
  } else if (fs::exists(av_default)) {
    av.emplace(load_verified(av_default, corpus));
  }
  run_sweep(ctx, corpus, bank, &a.model, av ? &av->model : nullptr, g.jobs, log);
  write_manifest(ctx.run);
  return 0;
}

int cmd_ablate(const GlobalOptions& g, const AblateCmdOptions& a, std::ostream& log) {
  const RunContext ctx = open_run(g);
  const Corpus corpus = load_run_corpus(ctx);
  const NoiseBank bank = make_bank(ctx, corpus);
  const fs::path s1 = a.ckpt.value_or(ctx.run / layout::stage_dir(1) / layout::kBest);
  if (!fs::exists(s1)) throw IoError("missing stage-1 checkpoint " + s1.string());
  const Checkpoint stage1 = load_verified(s1, corpus);
  AblationOptions opt;
  opt.stage2 = ctx.cfg.stage2;
  opt.policies = a.policies ? load_policies(*a.policies) : ctx.cfg.ablate.policies;
  opt.condition.category = ctx.cfg.ablate.category;
  opt.condition.snr_db = ctx.cfg.ablate.snr_db;
  opt.eval_seed = ctx.cfg.derived_seed("eval");
  opt.max_len = ctx.cfg.decode_len();
  opt.on_row = [&](const AblationRow& r) {
    log << "[ablate] policy (" << format_number(r.policy.p_av) << ", " << format_number(r.policy.p_a) << ", "
        << format_number(r.policy.p_v) << ") avg non-lang0 WER " << fmt(100.0 * r.avg_non_en, 2) << "\n";
    log.flush();
  };
  const auto rows = ablate(stage1.model, corpus, bank, opt, ctx.groups);
  const fs::path dir = ctx.run / layout::kAblate;
  fs::create_directories(dir);
  write_ablation_csv(dir / "ablation.csv", rows);
  log << "[ablate] ranking written to " << (dir / "ablation.csv").string() << "\n";
  write_manifest(ctx.run);
  return 0;
}

std::string build_report(const fs::path& run_dir) {
  const fs::path csv = run_dir / layout::kSweep / "sweep.csv";
  if (!fs::exists(csv)) {
    throw IoError("report needs " + csv.string() + " (written by sweep or pipeline); expected files: sweep/sweep.csv");
  }
  const auto rows = read_sweep_csv(csv);
  std::ostringstream out;
  out << "WER (%) per noise category, mean over SNRs\n";
  const bool has_av = std::any_of(rows.begin(), rows.end(), [](const SweepRow& r) { return r.model == "AV"; });
  for (const auto& [column, title] : {std::pair{AverageColumn::hr, "higher-resource average"},
                                     std::pair{AverageColumn::non_en, "non-lang0 average"}}) {
    out << "\n" << title << "\n";
    out << std::left << std::setw(16) << "category" << std::right << std::setw(10) << "A-only";
    if (has_av) out << std::setw(10) << "AV" << std::setw(10) << "abs" << std::setw(12) << "rel %";
    out << "\n";
    for (const auto& p : plot_data(rows, column)) {
      const double a = p.mean_wer.count("A") ? p.mean_wer.at("A") : std::nan("");
      out << std::left << std::setw(16) << p.category << std::right << std::setw(10) << fmt(100.0 * a, 1);
      if (has_av) {
        const double av = p.mean_wer.count("AV") ? p.mean_wer.at("AV") : std::nan("");
        out << std::setw(10) << fmt(100.0 * av, 1) << std::setw(10) << fmt(100.0 * (a - av), 1) << std::setw(12)
            << fmt(relative_improvement(a, av), 1);
      }
      out << "\n";
    }
  }
  if (has_av) {
    out << "\nRelative improvement of AV over A-only, non-lang0 average (%)\n";
    out << std::left << std::setw(16) << "category";
    std::vector<double> snrs;
    std::vector<std::string> cats;
    for (const auto& r : rows) {
      if (r.snr_db && std::find(snrs.begin(), snrs.end(), *r.snr_db) == snrs.end()) snrs.push_back(*r.snr_db);
      if (r.snr_db && std::find(cats.begin(), cats.end(), r.category) == cats.end()) cats.push_back(r.category);
    }
    for (const double s : snrs) out << std::right << std::setw(11) << (format_number(s) + "dB");
    out << "\n";
    for (const auto& c : cats) {
      out << std::left << std::setw(16) << c;
      for (const double s : snrs) {
        const SweepRow* a = find_row(rows, "A", c, s);
        const SweepRow* av = find_row(rows, "AV", c, s);
        const double v = (a && av && !a->failed && !av->failed) ? relative_improvement(a->avg_non_en, av->avg_non_en)
                                                                : std::nan("");
        out << std::right << std::setw(11) << fmt(v, 1);
      }
      out << "\n";
    }
  }
  for (const auto& r : rows) {
    if (r.category != "clean") continue;
    out << "\nclean audio, " << r.model << " (" << to_string(r.mode) << "): non-lang0 " << fmt(100.0 * r.avg_non_en, 1)
        << "  HR " << fmt(100.0 * r.avg_hr, 1) << "  LR " << fmt(100.0 * r.avg_lr, 1);
  }
  out << "\n";
  std::size_t failed = 0;
  for (const auto& r : rows) failed += r.failed ? 1 : 0;
  if (failed) out << "\n" << failed << " sweep cells failed; see sweep/sweep.csv\n";
  return out.str();
}

int cmd_report(const GlobalOptions& g, const std::optional<fs::path>& run_dir, std::ostream& log) {
  const fs::path run = run_dir.value_or(g.out.value_or(RunConfig{}.out_dir));
  const std::string text = build_report(run);
  std::ofstream out(run / layout::kReport, std::ios::trunc);
  if (!out) throw IoError("cannot write " + (run / layout::kReport).string());
  out << text;
  out.close();
  log << text;
  write_manifest(run);
  return 0;
}

int cmd_pipeline(const GlobalOptions& g, const PipelineOptions& p, std::ostream& log) {
  const RunContext ctx = open_run(g);
  if (fs::exists(ctx.run / layout::kSummary) && !g.force) {
    throw ConfigError((ctx.run / layout::kSummary).string() + " exists; pass --force to rerun the pipeline");
  }
  remove_outputs(ctx.run);
  // open_run wrote config.json; remove_outputs leaves it in place.
  const fs::path corpus_dir = ctx.run / layout::kCorpus;
  bool reuse = false;
  if (fs::exists(corpus_dir / "manifest.json")) {
    try {
      reuse = load_corpus(corpus_dir).config == ctx.cfg.corpus;
    } catch (const Error&) {
      reuse = false;
    }
  }
  if (reuse) {
    log << "[gen-data] reusing corpus in " << corpus_dir.string() << "\n";
  } else {
    tagged("gen-data", [&] { return generate_corpus(ctx, true, log); });
  }
  const Corpus corpus = load_run_corpus(ctx);
  const NoiseBank bank = make_bank(ctx, corpus);

  const StageOutcome s1 = tagged("stage1", [&] { return run_stage(ctx, corpus, bank, 1, std::nullopt, true, log); });
  std::optional<StageOutcome> s2;
  if (!p.skip_stage2) {
    s2 = tagged("stage2", [&] { return run_stage(ctx, corpus, bank, 2, std::nullopt, true, log); });
  }

  const auto rows = tagged("sweep", [&] {
    const Checkpoint a = load_verified(ctx.run / layout::stage_dir(1) / layout::kBest, corpus);
    std::optional<Checkpoint> av;
    if (s2) av.emplace(load_verified(ctx.run / layout::stage_dir(2) / layout::kBest, corpus));
    return run_sweep(ctx, corpus, bank, &a.model, av ? &av->model : nullptr, g.jobs, log);
  });

  const std::string report = tagged("report", [&] { return build_report(ctx.run); });
  {
    std::ofstream out(ctx.run / layout::kReport, std::ios::trunc);
    out << report;
  }
  log << report;

  ordered_json metrics;
  metrics["stage1"] = {{"best_step", s1.best_step}, {"best_dev_accuracy", s1.best_accuracy}};
  if (s2) metrics["stage2"] = {{"best_step", s2->best_step}, {"best_dev_accuracy", s2->best_accuracy}};
  const std::string eval_cat = to_string(ctx.cfg.eval.category);
  const SweepRow* a = find_row(rows, "A", eval_cat, ctx.cfg.eval.snr_db);
  const SweepRow* av = find_row(rows, "AV", eval_cat, ctx.cfg.eval.snr_db);
  if (a != nullptr) {
    ordered_json e;
    e["category"] = eval_cat;
    e["snr_db"] = ctx.cfg.eval.snr_db;
    e["wer_a_non_en"] = a->avg_non_en;
    if (av != nullptr) {
      e["wer_av_non_en"] = av->avg_non_en;
      e["relative_improvement"] = relative_improvement(a->avg_non_en, av->avg_non_en);
    }
    metrics["headline"] = e;
  }
  if (s2) {
    ordered_json plot = ordered_json::object();
    for (const auto& pt : plot_data(rows, AverageColumn::hr)) {
      plot[pt.category] = {{"A", pt.mean_wer.at("A")}, {"AV", pt.mean_wer.at("AV")}};
    }
    metrics["plot_hr"] = plot;
  }

  // The digest must not depend on where the run lives: the config is hashed
  // without out_dir, and config.json itself is left out of the file list.
  ordered_json files = ordered_json::object();
  for (const auto& rel : run_files(ctx.run)) {
    if (rel != layout::kConfig) files[rel.generic_string()] = sha256_file(ctx.run / rel);
  }
  ordered_json canonical = to_json(ctx.cfg);
  canonical.erase("out_dir");
  ordered_json summary;
  summary["config_sha256"] = sha256_hex(canonical.dump());
  summary["corpus_checksum"] = corpus_checksum(corpus);
  summary["metrics"] = metrics;
  summary["files"] = files;
  summary["digest"] = sha256_hex(summary.dump());
  std::ofstream out(ctx.run / layout::kSummary, std::ios::trunc);
  if (!out) throw IoError("cannot write " + (ctx.run / layout::kSummary).string());
  out << summary.dump(2) << "\n";
  out.close();
  log << "[pipeline] run summary digest " << summary["digest"].get<std::string>() << "\n";
  write_manifest(ctx.run);
  return 0;
}

}  // namespace avsr::cli
