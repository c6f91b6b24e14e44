#include "avsr/checkpoint.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "avsr/binary_io.hpp"
#include "avsr/digest.hpp"
#include "avsr/error.hpp"

namespace avsr {
namespace {

constexpr char kMagic[9] = "AVSRCKPT";

struct RawCheckpoint {
  nlohmann::json manifest;
  std::uint64_t payload_offset = 0;
};

RawCheckpoint read_header(std::istream& in, const std::string& what) {
  binio::expect_magic(in, kMagic, what);
  const auto version = binio::read<std::uint32_t>(in);
  if (version != kCheckpointFormatVersion) {
    throw IoError(what + ": checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                  std::to_string(kCheckpointFormatVersion) + ")");
  }
  binio::read<std::uint32_t>(in);
  const auto len = binio::read<std::uint64_t>(in);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw IoError(what + ": truncated manifest");
  RawCheckpoint raw;
  try {
    raw.manifest = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(what + ": corrupt manifest: " + e.what());
  }
  raw.payload_offset = 24 + len;
  return raw;
}

std::size_t read_size(const nlohmann::json& j, const char* key, const std::string& path) {
  if (!j.contains(key) || !j.at(key).is_number_unsigned()) {
    throw ConfigError(path + "." + key + ": expected a non-negative integer");
  }
  return j.at(key).get<std::size_t>();
}

}  // namespace

nlohmann::ordered_json model_config_to_json(const ModelConfig& c) {
  nlohmann::ordered_json j;
  j["d_model"] = c.d_model;
  j["n_heads"] = c.n_heads;
  j["n_audio_enc_layers"] = c.n_audio_enc_layers;
  j["n_video_enc_layers"] = c.n_video_enc_layers;
  j["n_dec_layers"] = c.n_dec_layers;
  j["ffw_mult"] = c.ffw_mult;
  j["vocab_size"] = c.vocab_size;
  j["n_languages"] = c.n_languages;
  j["max_target_len"] = c.max_target_len;
  j["audio_feat_dim"] = c.audio_feat_dim;
  j["video_feat_dim"] = c.video_feat_dim;
  j["audio_frames_per_token"] = c.audio_frames_per_token;
  return j;
}

ModelConfig model_config_from_json(const nlohmann::json& j, const std::string& path) {
  if (!j.is_object()) throw ConfigError(path + ": expected an object");
  ModelConfig c;
  c.d_model = read_size(j, "d_model", path);
  c.n_heads = read_size(j, "n_heads", path);
  c.n_audio_enc_layers = read_size(j, "n_audio_enc_layers", path);
  c.n_video_enc_layers = read_size(j, "n_video_enc_layers", path);
  c.n_dec_layers = read_size(j, "n_dec_layers", path);
  c.ffw_mult = read_size(j, "ffw_mult", path);
  c.vocab_size = read_size(j, "vocab_size", path);
  c.n_languages = read_size(j, "n_languages", path);
  c.max_target_len = read_size(j, "max_target_len", path);
  c.audio_feat_dim = read_size(j, "audio_feat_dim", path);
  c.video_feat_dim = read_size(j, "video_feat_dim", path);
  if (!j.contains("audio_frames_per_token") || !j.at("audio_frames_per_token").is_number()) {
    throw ConfigError(path + ".audio_frames_per_token: expected a number");
  }
  c.audio_frames_per_token = j.at("audio_frames_per_token").get<double>();
  c.validate();
  return c;
}

static nlohmann::ordered_json adamw_config_to_json(const AdamWConfig& c) {
  return {{"lr", c.lr}, {"beta1", c.beta1}, {"beta2", c.beta2}, {"eps", c.eps}, {"weight_decay", c.weight_decay}};
}

void save_checkpoint(const std::filesystem::path& path, const AvsrModel& model, const Rng& rng, std::uint64_t step,
                     const nlohmann::json& metadata, const AdamW* optimizer) {
  nlohmann::ordered_json m;
  m["format_version"] = kCheckpointFormatVersion;
  m["model_config"] = model_config_to_json(model.config());
  m["model_seed"] = model.seed();
  m["gated"] = model.has_gated_layers();
  m["gated_seed"] = model.gated_seed();
  nlohmann::ordered_json table = nlohmann::ordered_json::array();
  for (const auto& p : model.params().all()) {
    table.push_back({{"name", p.name()}, {"shape", p.tensor().shape()}, {"trainable", p.trainable()}});
  }
  m["parameters"] = table;
  m["rng"] = {{"seed", rng.seed()}, {"counter", rng.counter()}};
  m["step"] = step;
  m["metadata"] = metadata;
  std::vector<std::string> moment_names;
  if (optimizer != nullptr) {
    for (const auto& [name, mom] : optimizer->moments()) moment_names.push_back(name);
    std::sort(moment_names.begin(), moment_names.end());
    m["optimizer"] = {{"config", adamw_config_to_json(optimizer->config())},
                      {"steps_taken", optimizer->steps_taken()},
                      {"moments", moment_names}};
  }
  const std::string text = m.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    binio::write_magic(out, kMagic);
    binio::write<std::uint32_t>(out, kCheckpointFormatVersion);
    binio::write<std::uint32_t>(out, 0);
    binio::write<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& p : model.params().all()) binio::write_array<double>(out, p.tensor().values());
    for (const auto& name : moment_names) {
      const auto& mom = optimizer->moments().at(name);
      binio::write<std::uint64_t>(out, mom.m.size());
      binio::write_array<double>(out, mom.m);
      binio::write_array<double>(out, mom.v);
    }
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

nlohmann::json read_checkpoint_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint not found: " + path.string());
  return read_header(in, path.string()).manifest;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint not found: " + path.string());
  const std::string what = path.string();
  const auto raw = read_header(in, what);
  const auto& m = raw.manifest;
  try {
    const ModelConfig cfg = model_config_from_json(m.at("model_config"), "model_config");
    AvsrModel model(cfg, m.at("model_seed").get<std::uint64_t>());
    if (m.at("gated").get<bool>()) model.add_gated_layers(m.at("gated_seed").get<std::uint64_t>());
    const auto& table = m.at("parameters");
    auto& params = model.params().all();
    if (table.size() != params.size()) {
      throw IoError(what + ": parameter table has " + std::to_string(table.size()) + " entries, model expects " +
                    std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& entry = table[i];
      auto& p = params[i];
      if (entry.at("name").get<std::string>() != p.name()) {
        throw IoError(what + ": parameter " + std::to_string(i) + " is '" + entry.at("name").get<std::string>() +
                      "', expected '" + p.name() + "'");
      }
      if (entry.at("shape").get<Shape>() != p.tensor().shape()) {
        throw IoError(what + ": shape mismatch for " + p.name());
      }
      const auto values = binio::read_array<double>(in, p.tensor().size());
      std::copy(values.begin(), values.end(), p.tensor().mutable_values().begin());
      p.set_trainable(entry.at("trainable").get<bool>());
    }
    std::optional<AdamW> optimizer;
    if (m.contains("optimizer")) {
      const auto& o = m.at("optimizer");
      const auto& oc = o.at("config");
      AdamWConfig cfg_o{oc.at("lr").get<double>(), oc.at("beta1").get<double>(), oc.at("beta2").get<double>(),
                        oc.at("eps").get<double>(), oc.at("weight_decay").get<double>()};
      std::unordered_map<std::string, AdamW::Moments> moments;
      for (const auto& name : o.at("moments")) {
        const auto n = binio::read<std::uint64_t>(in);
        AdamW::Moments mom;
        mom.m = binio::read_array<double>(in, n);
        mom.v = binio::read_array<double>(in, n);
        moments.emplace(name.get<std::string>(), std::move(mom));
      }
      optimizer.emplace(cfg_o);
      optimizer->restore(o.at("steps_taken").get<std::int64_t>(), std::move(moments));
    }
    if (in.peek() != std::char_traits<char>::eof()) throw IoError(what + ": trailing bytes after payload");
    Rng rng(m.at("rng").at("seed").get<std::uint64_t>(), m.at("rng").at("counter").get<std::uint64_t>());
    return Checkpoint{std::move(model), rng, m.at("step").get<std::uint64_t>(),
                      m.value("metadata", nlohmann::json::object()), std::move(optimizer)};
  } catch (const nlohmann::json::exception& e) {
    throw IoError(what + ": malformed manifest: " + e.what());
  } catch (const ConfigError& e) {
    throw IoError(what + ": " + e.what());
  }
}

std::string parameter_digest(const AvsrModel& model, const std::set<std::string>& names) {
  Sha256 h;
  for (const auto& p : model.params().all()) {
    if (!names.count(p.name())) continue;
    h.update(std::string_view(p.name()));
    h.update(p.tensor().values());
  }
  return h.hex();
}

}  // namespace avsr
