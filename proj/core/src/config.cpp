#include "avsr/config.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <set>

#include "avsr/error.hpp"

namespace avsr {
namespace {

using nlohmann::json;
using nlohmann::ordered_json;

// Reads fields from one JSON object and rejects keys nobody asked for.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }
  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json* child(const std::string& key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void get(const std::string& key, std::size_t& out) { read(key, out, &ObjectReader::as_size); }
  void get(const std::string& key, double& out) { read(key, out, &ObjectReader::as_double); }
  void get(const std::string& key, bool& out) {
    read(key, out, +[](const json& v, const std::string& f) {
      if (!v.is_boolean()) throw ConfigError(f + ": expected a boolean");
      return v.get<bool>();
    });
  }
  void get(const std::string& key, std::string& out) {
    read(key, out, +[](const json& v, const std::string& f) {
      if (!v.is_string()) throw ConfigError(f + ": expected a string");
      return v.get<std::string>();
    });
  }
  void get(const std::string& key, std::vector<std::size_t>& out) {
    read(key, out, +[](const json& v, const std::string& f) {
      if (!v.is_array()) throw ConfigError(f + ": expected an array");
      std::vector<std::size_t> r;
      for (std::size_t i = 0; i < v.size(); ++i) r.push_back(as_size(v[i], f + "[" + std::to_string(i) + "]"));
      return r;
    });
  }
  void get(const std::string& key, std::vector<double>& out) {
    read(key, out, +[](const json& v, const std::string& f) {
      if (!v.is_array()) throw ConfigError(f + ": expected an array");
      std::vector<double> r;
      for (std::size_t i = 0; i < v.size(); ++i) r.push_back(as_double(v[i], f + "[" + std::to_string(i) + "]"));
      return r;
    });
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(field(it.key()) + ": unknown key");
    }
  }

  static std::size_t as_size(const json& v, const std::string& f) {
    if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
      throw ConfigError(f + ": expected a non-negative integer");
    }
    return v.get<std::size_t>();
  }
  static double as_double(const json& v, const std::string& f) {
    if (!v.is_number()) throw ConfigError(f + ": expected a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw ConfigError(f + ": must be finite");
    return d;
  }

 private:
  template <class T, class Fn>
  void read(const std::string& key, T& out, Fn fn) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it != j_.end()) out = fn(*it, field(key));
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

NoiseCategory read_category(ObjectReader& r, const std::string& key, NoiseCategory fallback) {
  std::string s = to_string(fallback);
  r.get(key, s);
  try {
    return noise_category_from_string(s);
  } catch (const ConfigError& e) {
    throw ConfigError(r.field(key) + ": " + e.what());
  }
}

ordered_json model_dims_to_json(const ModelConfig& c) {
  ordered_json j;
  j["d_model"] = c.d_model;
  j["n_heads"] = c.n_heads;
  j["n_audio_enc_layers"] = c.n_audio_enc_layers;
  j["n_video_enc_layers"] = c.n_video_enc_layers;
  j["n_dec_layers"] = c.n_dec_layers;
  j["ffw_mult"] = c.ffw_mult;
  return j;
}

ModelConfig model_dims_from_json(const json& j, const std::string& path) {
  ModelConfig c;
  ObjectReader r(j, path);
  r.get("d_model", c.d_model);
  r.get("n_heads", c.n_heads);
  r.get("n_audio_enc_layers", c.n_audio_enc_layers);
  r.get("n_video_enc_layers", c.n_video_enc_layers);
  r.get("n_dec_layers", c.n_dec_layers);
  r.get("ffw_mult", c.ffw_mult);
  r.finish();
  return c;
}

}  // namespace

ordered_json to_json(const CorpusConfig& c) {
  ordered_json j;
  j["n_languages"] = c.n_languages;
  j["tokens_per_language"] = c.tokens_per_language;
  j["visemes_per_language"] = c.visemes_per_language;
  j["train_counts"] = c.train_counts;
  j["imbalance"] = c.imbalance;
  j["dev_per_language"] = c.dev_per_language;
  j["test_per_language"] = c.test_per_language;
  j["min_tokens"] = c.min_tokens;
  j["max_tokens"] = c.max_tokens;
  j["audio_feat_dim"] = c.audio_feat_dim;
  j["video_feat_dim"] = c.video_feat_dim;
  j["audio_frames_per_token"] = c.audio_frames_per_token;
  j["audio_jitter"] = c.audio_jitter;
  j["viseme_confusion"] = c.viseme_confusion;
  j["zipf_exponent"] = c.zipf_exponent;
  j["seed"] = c.seed;
  return j;
}

CorpusConfig corpus_config_from_json(const json& j, const std::string& path) {
  CorpusConfig c;
  ObjectReader r(j, path);
  r.get("n_languages", c.n_languages);
  r.get("tokens_per_language", c.tokens_per_language);
  r.get("visemes_per_language", c.visemes_per_language);
  r.get("train_counts", c.train_counts);
  r.get("imbalance", c.imbalance);
  r.get("dev_per_language", c.dev_per_language);
  r.get("test_per_language", c.test_per_language);
  r.get("min_tokens", c.min_tokens);
  r.get("max_tokens", c.max_tokens);
  r.get("audio_feat_dim", c.audio_feat_dim);
  r.get("video_feat_dim", c.video_feat_dim);
  r.get("audio_frames_per_token", c.audio_frames_per_token);
  r.get("audio_jitter", c.audio_jitter);
  r.get("viseme_confusion", c.viseme_confusion);
  r.get("zipf_exponent", c.zipf_exponent);
  r.get("seed", c.seed);
  r.finish();
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return c;
}

ordered_json to_json(const DropoutPolicy& p) {
  ordered_json j;
  j["p_av"] = p.p_av;
  j["p_a"] = p.p_a;
  j["p_v"] = p.p_v;
  return j;
}

DropoutPolicy dropout_policy_from_json(const json& j, const std::string& path) {
  DropoutPolicy p;
  ObjectReader r(j, path);
  r.get("p_av", p.p_av);
  r.get("p_a", p.p_a);
  r.get("p_v", p.p_v);
  r.finish();
  try {
    p.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return p;
}

ordered_json to_json(const StageConfig& c) {
  ordered_json j;
  j["steps"] = c.steps;
  j["batch_size"] = c.batch_size;
  j["lr"] = c.adamw.lr;
  j["beta1"] = c.adamw.beta1;
  j["beta2"] = c.adamw.beta2;
  j["eps"] = c.adamw.eps;
  j["weight_decay"] = c.adamw.weight_decay;
  j["warmup_steps"] = c.warmup_steps;
  j["validation_interval"] = c.validation_interval;
  j["snr_db"] = c.snr_db;
  if (c.stage == 2) {
    j["dropout"] = to_json(c.dropout.value_or(DropoutPolicy{}));
    j["finetune_video_encoder"] = c.finetune_video_encoder;
  }
  return j;
}

StageConfig stage_config_from_json(const json& j, const std::string& path, int stage) {
  StageConfig c;
  c.stage = stage;
  if (stage == 2) c.dropout = DropoutPolicy{};
  ObjectReader r(j, path);
  r.get("steps", c.steps);
  r.get("batch_size", c.batch_size);
  r.get("lr", c.adamw.lr);
  r.get("beta1", c.adamw.beta1);
  r.get("beta2", c.adamw.beta2);
  r.get("eps", c.adamw.eps);
  r.get("weight_decay", c.adamw.weight_decay);
  r.get("warmup_steps", c.warmup_steps);
  r.get("validation_interval", c.validation_interval);
  r.get("snr_db", c.snr_db);
  if (stage == 2) {
    if (const json* d = r.child("dropout")) c.dropout = dropout_policy_from_json(*d, r.field("dropout"));
    r.get("finetune_video_encoder", c.finetune_video_encoder);
  }
  r.finish();
  return c;
}

RunConfig::RunConfig() {
  stage2.stage = 2;
  stage2.dropout = DropoutPolicy{};
  apply_seed(seed);
}

void RunConfig::apply_seed(std::uint64_t root) {
  seed = root;
  corpus.seed = derived_seed("data");
  stage1.seed = derived_seed("train.stage1");
  stage2.seed = derived_seed("train.stage2");
  stage1.validation_seed = stage2.validation_seed = derived_seed("validation");
}

std::uint64_t RunConfig::derived_seed(std::string_view component) const { return Rng::derive_seed(seed, component); }

ModelConfig RunConfig::resolved_model() const { return model_config_for(model, corpus); }

std::size_t RunConfig::decode_len() const { return max_decode_len != 0 ? max_decode_len : corpus.max_tokens + 5; }

void RunConfig::validate() const {
  corpus.validate();
  resolved_model();
  if (stage1.stage != 1 || stage2.stage != 2) throw ConfigError("stage1/stage2: stage numbers mismatched");
  stage1.validate();
  stage2.validate();
  if (noise_bank_streams <= kBabbleStreams) {
    throw ConfigError("noise_bank_streams: need more than " + std::to_string(kBabbleStreams) +
                      " streams so babble can exclude the utterance being mixed");
  }
  if (sweep.categories.empty()) throw ConfigError("sweep.categories: must not be empty");
  if (sweep.snrs_db.empty()) throw ConfigError("sweep.snrs_db: must not be empty");
  if (ablate.policies.empty()) throw ConfigError("ablate.policies: must not be empty");
  for (std::size_t i = 0; i < ablate.policies.size(); ++i) {
    try {
      ablate.policies[i].validate();
    } catch (const ConfigError& e) {
      throw ConfigError("ablate.policies[" + std::to_string(i) + "]: " + e.what());
    }
  }
  if (out_dir.empty()) throw ConfigError("out_dir: must not be empty");
}

ordered_json to_json(const RunConfig& c) {
  ordered_json j;
  j["seed"] = c.seed;
  j["out_dir"] = c.out_dir.string();
  ordered_json corpus = to_json(c.corpus);
  corpus.erase("seed");
  j["corpus"] = corpus;
  j["model"] = model_dims_to_json(c.model);
  j["stage1"] = to_json(c.stage1);
  j["stage2"] = to_json(c.stage2);
  j["noise_bank_streams"] = c.noise_bank_streams;
  j["max_decode_len"] = c.max_decode_len;
  ordered_json eval;
  eval["noise"] = to_string(c.eval.category);
  eval["snr_db"] = c.eval.snr_db;
  eval["mode"] = to_string(c.eval.mode);
  eval["clean"] = c.eval.clean;
  j["eval"] = eval;
  ordered_json sweep;
  sweep["categories"] = ordered_json::array();
  for (const auto cat : c.sweep.categories) sweep["categories"].push_back(to_string(cat));
  sweep["snrs_db"] = c.sweep.snrs_db;
  j["sweep"] = sweep;
  ordered_json ablate;
  ablate["policies"] = ordered_json::array();
  for (const auto& p : c.ablate.policies) ablate["policies"].push_back(to_json(p));
  ablate["noise"] = to_string(c.ablate.category);
  ablate["snr_db"] = c.ablate.snr_db;
  j["ablate"] = ablate;
  return j;
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  ObjectReader r(j, "");
  std::uint64_t seed = c.seed;
  r.get("seed", seed);
  std::string out = c.out_dir.string();
  r.get("out_dir", out);
  c.out_dir = out;
  if (const json* v = r.child("corpus")) {
    if (v->is_object() && v->contains("seed")) {
      throw ConfigError("corpus.seed: the corpus seed is derived from the root 'seed'");
    }
    c.corpus = corpus_config_from_json(*v, "corpus");
  }
  if (const json* v = r.child("model")) c.model = model_dims_from_json(*v, "model");
  if (const json* v = r.child("stage1")) c.stage1 = stage_config_from_json(*v, "stage1", 1);
  if (const json* v = r.child("stage2")) c.stage2 = stage_config_from_json(*v, "stage2", 2);
  r.get("noise_bank_streams", c.noise_bank_streams);
  r.get("max_decode_len", c.max_decode_len);
  if (const json* v = r.child("eval")) {
    ObjectReader e(*v, "eval");
    c.eval.category = read_category(e, "noise", c.eval.category);
    e.get("snr_db", c.eval.snr_db);
    std::string mode = to_string(c.eval.mode);
    e.get("mode", mode);
    try {
      c.eval.mode = modality_from_string(mode);
    } catch (const ConfigError& err) {
      throw ConfigError(std::string("eval.mode: ") + err.what());
    }
    e.get("clean", c.eval.clean);
    e.finish();
  }
  if (const json* v = r.child("sweep")) {
    ObjectReader s(*v, "sweep");
    if (const json* cats = s.child("categories")) {
      if (!cats->is_array()) throw ConfigError("sweep.categories: expected an array");
      c.sweep.categories.clear();
      for (std::size_t i = 0; i < cats->size(); ++i) {
        const std::string f = "sweep.categories[" + std::to_string(i) + "]";
        if (!(*cats)[i].is_string()) throw ConfigError(f + ": expected a string");
        try {
          c.sweep.categories.push_back(noise_category_from_string((*cats)[i].get<std::string>()));
        } catch (const ConfigError& err) {
          throw ConfigError(f + ": " + err.what());
        }
      }
    }
    s.get("snrs_db", c.sweep.snrs_db);
    s.finish();
  }
  if (const json* v = r.child("ablate")) {
    ObjectReader a(*v, "ablate");
    if (const json* ps = a.child("policies")) {
      if (!ps->is_array()) throw ConfigError("ablate.policies: expected an array");
      c.ablate.policies.clear();
      for (std::size_t i = 0; i < ps->size(); ++i) {
        c.ablate.policies.push_back(dropout_policy_from_json((*ps)[i], "ablate.policies[" + std::to_string(i) + "]"));
      }
    }
    c.ablate.category = read_category(a, "noise", c.ablate.category);
    a.get("snr_db", c.ablate.snr_db);
    a.finish();
  }
  r.finish();
  c.apply_seed(seed);
  c.validate();
  return c;
}

json parse_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

RunConfig load_run_config(const std::filesystem::path& path) {
  const json j = parse_json_file(path);
  try {
    return run_config_from_json(j);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

}  // namespace avsr
