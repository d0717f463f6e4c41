#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cloudrm/corpus.hpp"

namespace cloudrm {

// JSONL schema, one record per line:
//   prompt, chosen, rejected            required strings
//   critique_chosen, critique_rejected  strings, all-or-none with critique_source
//   critique_source                     "oracle" | "self"
//   judge_rationale_code                optional, FINAL_ANSWER | FEWER_ERRORS | SHORTER
//   difficulty                          optional integer 0..4
//   category                            optional string
// External pairwise files ({prompt, chosen, rejected, category}) load as PreferencePair.

nlohmann::ordered_json to_json_record(const PreferencePair& pair);
nlohmann::ordered_json to_json_record(const CritiquedPair& pair);

std::string to_jsonl(std::span<const CritiquedPair> records);
std::string to_jsonl(std::span<const PreferencePair> records);

void save_dataset(const std::filesystem::path& path, std::span<const CritiquedPair> records);
void save_dataset(const std::filesystem::path& path, std::span<const PreferencePair> records);

/// Accepts critiqued and plain pairwise records. Throws SchemaViolation or IoFailure.
std::vector<PreferencePair> load_preferences(const std::filesystem::path& path);
/// Requires the critique fields. Throws SchemaViolation or IoFailure.
std::vector<CritiquedPair> load_critiqued(const std::filesystem::path& path);

std::vector<CritiquedPair> parse_critiqued_jsonl(const std::string& text);
std::vector<PreferencePair> parse_preferences_jsonl(const std::string& text);

}  // namespace cloudrm
