#include "cloudrm/dataset_io.hpp"

#include <fstream>
#include <iterator>
#include <sstream>

#include "cloudrm/errors.hpp"

namespace cloudrm {

using nlohmann::json;
using nlohmann::ordered_json;

ordered_json to_json_record(const PreferencePair& pair) {
  ordered_json j;
  j["prompt"] = pair.prompt;
  j["chosen"] = pair.chosen;
  j["rejected"] = pair.rejected;
  if (pair.rationale) j["judge_rationale_code"] = to_string(*pair.rationale);
  j["difficulty"] = pair.difficulty;
  j["category"] = pair.category;
  return j;
}

ordered_json to_json_record(const CritiquedPair& record) {
  const auto& pair = record.pair;
  ordered_json j;
  j["prompt"] = pair.prompt;
  j["chosen"] = pair.chosen;
  j["rejected"] = pair.rejected;
  j["critique_chosen"] = record.critique_chosen;
  j["critique_rejected"] = record.critique_rejected;
  j["critique_source"] = to_string(record.source);
  if (pair.rationale) j["judge_rationale_code"] = to_string(*pair.rationale);
  j["difficulty"] = pair.difficulty;
  j["category"] = pair.category;
  return j;
}

namespace {

template <typename Record>
std::string jsonl(std::span<const Record> records) {
  std::string out;
  for (const auto& r : records) {
    out += to_json_record(r).dump();
    out.push_back('\n');
  }
  return out;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoFailure("cannot write " + path.string());
  out << text;
  if (!out) throw IoFailure("write failed for " + path.string());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoFailure("cannot open " + path.string());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

std::string required_string(const json& j, std::size_t line, const char* field) {
  if (!j.contains(field)) throw SchemaViolation(line, field, "missing");
  if (!j[field].is_string()) throw SchemaViolation(line, field, "must be a string");
  return j[field].get<std::string>();
}

PreferencePair parse_pair(const json& j, std::size_t line) {
  PreferencePair p;
  p.prompt = required_string(j, line, "prompt");
  p.chosen = required_string(j, line, "chosen");
  p.rejected = required_string(j, line, "rejected");
  if (j.contains("judge_rationale_code") && !j["judge_rationale_code"].is_null()) {
    if (!j["judge_rationale_code"].is_string()) throw SchemaViolation(line, "judge_rationale_code", "must be a string");
    p.rationale = rationale_from_string(j["judge_rationale_code"].get<std::string>());
    if (!p.rationale) throw SchemaViolation(line, "judge_rationale_code", "unknown code");
  }
  if (j.contains("difficulty")) {
    if (!j["difficulty"].is_number_integer()) throw SchemaViolation(line, "difficulty", "must be an integer");
    p.difficulty = j["difficulty"].get<int>();
    if (p.difficulty < 0 || p.difficulty > 4) throw SchemaViolation(line, "difficulty", "must lie in 0..4");
  }
  if (j.contains("category")) {
    if (!j["category"].is_string()) throw SchemaViolation(line, "category", "must be a string");
    p.category = j["category"].get<std::string>();
  } else {
    p.category = difficulty_category(p.difficulty);
  }
  return p;
}

constexpr const char* kCritiqueFields[] = {"critique_chosen", "critique_rejected", "critique_source"};

bool has_any_critique_field(const json& j) {
  for (const char* f : kCritiqueFields)
    if (j.contains(f)) return true;
  return false;
}

CritiquedPair parse_critiqued(const json& j, std::size_t line) {
  CritiquedPair r;
  r.pair = parse_pair(j, line);
  r.critique_chosen = required_string(j, line, "critique_chosen");
  r.critique_rejected = required_string(j, line, "critique_rejected");
  const auto source = required_string(j, line, "critique_source");
  if (source == "oracle") {
    r.source = CritiqueSource::kOracle;
  } else if (source == "self") {
    r.source = CritiqueSource::kSelf;
  } else {
    throw SchemaViolation(line, "critique_source", "must be 'oracle' or 'self'");
  }
  if (r.critique_chosen.empty()) throw SchemaViolation(line, "critique_chosen", "must be non-empty");
  if (r.critique_rejected.empty()) throw SchemaViolation(line, "critique_rejected", "must be non-empty");
  return r;
}

template <typename F>
void for_each_line(const std::string& text, F&& f) {
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception&) {
      throw SchemaViolation(number, "<record>", "not valid JSON");
    }
    if (!j.is_object()) throw SchemaViolation(number, "<record>", "must be a JSON object");
    f(j, number);
  }
}

}  // namespace

std::string to_jsonl(std::span<const CritiquedPair> records) { return jsonl(records); }
std::string to_jsonl(std::span<const PreferencePair> records) { return jsonl(records); }

void save_dataset(const std::filesystem::path& path, std::span<const CritiquedPair> records) {
  write_file(path, to_jsonl(records));
}

void save_dataset(const std::filesystem::path& path, std::span<const PreferencePair> records) {
  write_file(path, to_jsonl(records));
}

std::vector<CritiquedPair> parse_critiqued_jsonl(const std::string& text) {
  std::vector<CritiquedPair> out;
  for_each_line(text, [&](const json& j, std::size_t line) { out.push_back(parse_critiqued(j, line)); });
  return out;
}

std::vector<PreferencePair> parse_preferences_jsonl(const std::string& text) {
  std::vector<PreferencePair> out;
  for_each_line(text, [&](const json& j, std::size_t line) {
    if (has_any_critique_field(j)) {
      out.push_back(parse_critiqued(j, line).pair);
    } else {
      out.push_back(parse_pair(j, line));
    }
  });
  return out;
}

std::vector<PreferencePair> load_preferences(const std::filesystem::path& path) {
  return parse_preferences_jsonl(read_file(path));
}

std::vector<CritiquedPair> load_critiqued(const std::filesystem::path& path) {
  return parse_critiqued_jsonl(read_file(path));
}

}  // namespace cloudrm
