#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "avsr/model.hpp"
#include "avsr/optim.hpp"
#include "avsr/rng.hpp"

namespace avsr {

// Checkpoint file layout (all integers little-endian):
//   8 bytes   magic "AVSRCKPT"
//   u32       format version
//   u32       reserved (0)
//   u64       manifest length in bytes
//   manifest  UTF-8 JSON: format_version, model_config, seeds, parameter
//             table (name, shape, trainable) in storage order, rng, step,
//             and free-form metadata
//   payload   every parameter's values as f64, in manifest order, then (when
//             the manifest has an "optimizer" entry) the first and second
//             moments of each listed parameter
inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

struct Checkpoint {
  AvsrModel model;
  Rng rng;
  std::uint64_t step = 0;
  nlohmann::json metadata;
  std::optional<AdamW> optimizer;
};

void save_checkpoint(const std::filesystem::path& path, const AvsrModel& model, const Rng& rng, std::uint64_t step,
                     const nlohmann::json& metadata = nlohmann::json::object(), const AdamW* optimizer = nullptr);

Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Manifest only, without materialising the model.
nlohmann::json read_checkpoint_manifest(const std::filesystem::path& path);

/// SHA-256 over the concatenated values of the named parameters, in store order.
std::string parameter_digest(const AvsrModel& model, const std::set<std::string>& names);

nlohmann::ordered_json model_config_to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j, const std::string& path);

}  // namespace avsr
