#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "avsr/eval.hpp"
#include "avsr/fusion_dropout.hpp"
#include "avsr/model.hpp"
#include "avsr/noise.hpp"
#include "avsr/synth_data.hpp"
#include "avsr/train.hpp"

namespace avsr {

struct SweepConfig {
  std::vector<NoiseCategory> categories{kNoiseCategories.begin(), kNoiseCategories.end()};
  std::vector<double> snrs_db = {-10.0, -5.0, 0.0, 5.0, 10.0};
};

struct AblateConfig {
  std::vector<DropoutPolicy> policies = {{0.5, 0.0, 0.5}, {1.0, 0.0, 0.0}, {0.5, 0.5, 0.0}};
  NoiseCategory category = NoiseCategory::babble;
  double snr_db = 0.0;
};

/// Everything one reproduction needs. Component seeds are derived from `seed`.
struct RunConfig {
  std::uint64_t seed = 20240917;
  std::filesystem::path out_dir = "runs/default";
  CorpusConfig corpus{};
  /// Architecture sizes; vocabulary and feature sizes come from the corpus.
  ModelConfig model{};
  StageConfig stage1{};
  StageConfig stage2{};
  std::size_t noise_bank_streams = 64;
  /// Greedy decoding cap in content tokens; 0 means corpus max_tokens + 5.
  std::size_t max_decode_len = 0;
  EvalCondition eval{};
  SweepConfig sweep{};
  AblateConfig ablate{};

  RunConfig();
  /// Re-derives every component seed from `seed`.
  void apply_seed(std::uint64_t root);
  std::uint64_t derived_seed(std::string_view component) const;
  ModelConfig resolved_model() const;
  std::size_t decode_len() const;
  void validate() const;
};

nlohmann::ordered_json to_json(const CorpusConfig& c);
CorpusConfig corpus_config_from_json(const nlohmann::json& j, const std::string& path);

nlohmann::ordered_json to_json(const StageConfig& c);
StageConfig stage_config_from_json(const nlohmann::json& j, const std::string& path, int stage);

nlohmann::ordered_json to_json(const DropoutPolicy& p);
DropoutPolicy dropout_policy_from_json(const nlohmann::json& j, const std::string& path);

/// Resolved configuration (derived seeds are not stored; they follow from `seed`).
nlohmann::ordered_json to_json(const RunConfig& c);
/// Strict parse: unknown keys and type mismatches throw ConfigError naming the field path.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

/// Parses JSON text, turning syntax errors into ConfigError.
nlohmann::json parse_json_file(const std::filesystem::path& path);

}  // namespace avsr
