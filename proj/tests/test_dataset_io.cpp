#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cloudrm/corpus.hpp"
#include "cloudrm/dataset_io.hpp"
#include "cloudrm/errors.hpp"
#include "cloudrm/hashing.hpp"

using namespace cloudrm;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "cloudrm_test_dataset_io";
  fs::create_directories(dir);
  return dir / name;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string record_line(const std::string& drop) {
  CorpusConfig cfg;
  cfg.n_pairs = 1;
  auto j = to_json_record(build_pair(cfg, 0));
  j.erase(drop);
  return j.dump();
}

}  // namespace

TEST_CASE("save and load round trip 1000 records byte for byte") {
  CorpusConfig cfg;
  cfg.n_pairs = 1000;
  cfg.seed = 4;
  const auto data = build_dataset(cfg);
  const auto a = scratch("a.jsonl");
  const auto b = scratch("b.jsonl");
  save_dataset(a, data);
  const auto loaded = load_critiqued(a);
  CHECK(loaded == data);
  save_dataset(b, loaded);
  CHECK(slurp(a) == slurp(b));

  CorpusConfig again = cfg;
  const auto c = scratch("c.jsonl");
  save_dataset(c, build_dataset(again));
  CHECK(sha256_file(c) == sha256_file(a));

  const auto prefs = load_preferences(a);
  REQUIRE(prefs.size() == data.size());
  CHECK(prefs[10] == data[10].pair);
}

TEST_CASE("schema violations name the line and field") {
  const std::string good = record_line("");
  try {
    parse_critiqued_jsonl(good + "\n" + record_line("critique_rejected") + "\n");
    FAIL("expected SchemaViolation");
  } catch (const SchemaViolation& e) {
    CHECK(e.line() == 2);
    CHECK(e.field() == "critique_rejected");
    CHECK(std::string(e.what()).find("critique_rejected") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_critiqued_jsonl(record_line("prompt")), SchemaViolation);
  CHECK_THROWS_AS(parse_critiqued_jsonl("{not json"), SchemaViolation);
  CHECK_THROWS_AS(parse_critiqued_jsonl("[1, 2]"), SchemaViolation);
  CHECK_THROWS_AS(parse_preferences_jsonl(R"({"prompt": "p", "chosen": "a", "rejected": 3})"), SchemaViolation);
  CHECK_THROWS_AS(parse_preferences_jsonl(R"({"prompt": "p", "chosen": "a", "rejected": "b", "judge_rationale_code": "LOUDER"})"),
                  SchemaViolation);
  CHECK_THROWS_AS(parse_preferences_jsonl(R"({"prompt": "p", "chosen": "a", "rejected": "b", "critique_chosen": "x"})"),
                  SchemaViolation);
  CHECK_THROWS_AS(load_critiqued(scratch("does_not_exist.jsonl")), IoFailure);
}

TEST_CASE("external pairwise records load with their categories") {
  const auto prefs = load_preferences(fs::path(CLOUDRM_TEST_DATA) / "external_pairs.jsonl");
  REQUIRE(prefs.size() == 3);
  CHECK(prefs[0].prompt == "What is 12*3?");
  CHECK(prefs[0].chosen == "12*3=36. ANSWER: 36");
  CHECK(prefs[0].rejected == "12*3=38. ANSWER: 38");
  CHECK(prefs[0].category == "reasoning");
  CHECK(prefs[1].category == "safety");
  CHECK(prefs[2].category == "chat-hard");
  CHECK_FALSE(prefs[2].rationale.has_value());
  CHECK_THROWS_AS(load_critiqued(fs::path(CLOUDRM_TEST_DATA) / "external_pairs.jsonl"), SchemaViolation);
}
