#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <limits>

#include <json.hpp>

#include "cloudrm/checkpoint.hpp"
#include "cloudrm/errors.hpp"

using namespace cloudrm;
using nlohmann::json;

namespace {

ModelState model() {
  ModelConfig c;
  c.d_model = 16;
  c.n_layers = 2;
  c.n_heads = 4;
  c.d_ff = 32;
  c.max_seq_len = 64;
  c.critique_max_tokens = 16;
  return init_model<float>(c, 21);
}

std::pair<json, std::string> split(const std::string& bytes) {
  const auto eol = bytes.find('\n');
  return {json::parse(bytes.substr(0, eol)), bytes.substr(eol + 1)};
}

std::string join(const json& manifest, const std::string& payload) { return manifest.dump() + "\n" + payload; }

}  // namespace

TEST_CASE("serialization round-trips every parameter bitwise") {
  const auto s = model();
  const auto back = deserialize_checkpoint(serialize_checkpoint(s));
  CHECK(back.config == s.config);
  CHECK(back.version == s.version);
  const auto a = tensors(s.params);
  const auto b = tensors(back.params);
  REQUIRE(a.size() == b.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    CHECK(a[k].name == b[k].name);
    CHECK(*a[k].value == *b[k].value);
  }
  CHECK(serialize_checkpoint(back) == serialize_checkpoint(s));
}

TEST_CASE("manifest describes vocabulary, specials and an ordered tensor directory") {
  const auto s = model();
  const auto [manifest, payload] = split(serialize_checkpoint(s));
  CHECK(manifest["format"] == "cloudrm-checkpoint");
  CHECK(manifest["format_version"] == kCheckpointFormatVersion);
  CHECK(manifest["vocab"].size() == static_cast<std::size_t>(Vocab::standard().size()));
  CHECK(manifest["special_tokens"]["<REW>"] == kRew);
  CHECK(manifest["config"]["d_model"] == 16);

  const auto refs = tensors(s.params);
  const auto& dir = manifest["tensors"];
  REQUIRE(dir.size() == refs.size());
  std::size_t offset = 0;
  for (std::size_t k = 0; k < refs.size(); ++k) {
    CHECK(dir[k]["name"] == refs[k].name);
    CHECK(dir[k]["offset"] == offset);
    offset += dir[k]["bytes"].get<std::size_t>();
  }
  CHECK(manifest["payload_bytes"] == offset);
  CHECK(payload.size() == offset);

  // First payload float is token_embedding(0, 0), little-endian.
  const float expected = s.params.token_embedding(0, 0);
  unsigned char raw[4];
  std::memcpy(raw, payload.data(), 4);
  std::uint32_t bits = raw[0] | (raw[1] << 8) | (raw[2] << 16) | (std::uint32_t(raw[3]) << 24);
  float got;
  std::memcpy(&got, &bits, 4);
  CHECK(got == expected);
}

TEST_CASE("readers reject unknown versions and malformed payloads") {
  const auto s = model();
  const auto [manifest, payload] = split(serialize_checkpoint(s));

  auto bumped = manifest;
  bumped["format_version"] = kCheckpointFormatVersion + 1;
  CHECK_THROWS_AS(deserialize_checkpoint(join(bumped, payload)), InputError);

  auto foreign = manifest;
  foreign["format"] = "something-else";
  CHECK_THROWS_AS(deserialize_checkpoint(join(foreign, payload)), InputError);

  auto vocab = manifest;
  vocab["vocab"][10] = "?";
  CHECK_THROWS_AS(deserialize_checkpoint(join(vocab, payload)), InputError);

  auto shape = manifest;
  shape["tensors"][0]["shape"] = {1, 1};
  CHECK_THROWS_AS(deserialize_checkpoint(join(shape, payload)), InputError);

  CHECK_THROWS_AS(deserialize_checkpoint(join(manifest, payload.substr(0, payload.size() - 4))), InputError);
  CHECK_THROWS_AS(deserialize_checkpoint("not json\n"), InputError);
  CHECK_THROWS_AS(deserialize_checkpoint(""), InputError);

  auto bad = s;
  bad.params.lm_bias(0, 3) = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(deserialize_checkpoint(serialize_checkpoint(bad)), InputError);
}

TEST_CASE("files round-trip and hash deterministically") {
  const auto s = model();
  const auto dir = std::filesystem::temp_directory_path() / "cloudrm_ckpt_test";
  std::filesystem::create_directories(dir);
  save_checkpoint(dir / "a.bin", s);
  const auto back = load_checkpoint(dir / "a.bin");
  CHECK(checkpoint_hash(back) == checkpoint_hash(s));
  CHECK(checkpoint_hash(s).size() == 64);
  CHECK(checkpoint_hash(model()) == checkpoint_hash(s));
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.bin"), IoFailure);
  std::filesystem::remove_all(dir);
}
