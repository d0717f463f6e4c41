#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "cloudrm/model.hpp"

namespace cloudrm {

inline constexpr int kCheckpointFormatVersion = 1;

void to_json(nlohmann::json& j, const ModelConfig& cfg);
void from_json(const nlohmann::json& j, ModelConfig& cfg);

/// Serialized checkpoint: one line of manifest JSON (config, vocabulary,
/// special-token ids, format version, ordered tensor directory), then the
/// tensors as little-endian float32 in directory order.
std::string serialize_checkpoint(const ModelState& state);
ModelState deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const ModelState& state);
/// Throws IoFailure, or InputError for unknown versions and malformed payloads.
ModelState load_checkpoint(const std::filesystem::path& path);

/// SHA-256 of the serialized checkpoint.
std::string checkpoint_hash(const ModelState& state);

}  // namespace cloudrm
