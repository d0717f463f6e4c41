#include "cloudrm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "cloudrm/hashing.hpp"

namespace cloudrm {

using nlohmann::json;

void to_json(json& j, const ModelConfig& cfg) {
  j = json{{"vocab_size", cfg.vocab_size},
           {"d_model", cfg.d_model},
           {"n_layers", cfg.n_layers},
           {"n_heads", cfg.n_heads},
           {"d_ff", cfg.d_ff},
           {"max_seq_len", cfg.max_seq_len},
           {"critique_max_tokens", cfg.critique_max_tokens},
           {"parameter_precision", cfg.parameter_precision}};
}

void from_json(const json& j, ModelConfig& cfg) {
  ModelConfig d;
  cfg.vocab_size = j.value("vocab_size", d.vocab_size);
  cfg.d_model = j.value("d_model", d.d_model);
  cfg.n_layers = j.value("n_layers", d.n_layers);
  cfg.n_heads = j.value("n_heads", d.n_heads);
  cfg.d_ff = j.value("d_ff", d.d_ff);
  cfg.max_seq_len = j.value("max_seq_len", d.max_seq_len);
  cfg.critique_max_tokens = j.value("critique_max_tokens", d.critique_max_tokens);
  cfg.parameter_precision = j.value("parameter_precision", d.parameter_precision);
}

namespace {

void put_f32(std::string& out, float v) {
  auto bits = std::bit_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

float get_f32(const std::string& in, std::size_t at) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return std::bit_cast<float>(bits);
}

json manifest_for(const ModelState& state) {
  const auto& vocab = Vocab::standard();
  json specials = json::object();
  for (int i = 0; i < kNumSpecial; ++i) specials[std::string(Vocab::kSpecialNames[i])] = i;
  json dir = json::array();
  std::size_t offset = 0;
  for (const auto& t : tensors(state.params)) {
    const auto bytes = static_cast<std::size_t>(t.value->size()) * 4;
    dir.push_back({{"name", t.name},
                   {"group", to_string(t.group)},
                   {"shape", {t.value->rows(), t.value->cols()}},
                   {"offset", offset},
                   {"bytes", bytes}});
    offset += bytes;
  }
  return json{{"format", "cloudrm-checkpoint"},
              {"format_version", kCheckpointFormatVersion},
              {"model_version", state.version},
              {"config", state.config},
              {"vocab", vocab.symbols()},
              {"special_tokens", specials},
              {"tensors", dir},
              {"payload_bytes", offset}};
}

}  // namespace

std::string serialize_checkpoint(const ModelState& state) {
  std::string out = manifest_for(state).dump();
  out.push_back('\n');
  for (const auto& t : tensors(state.params))
    for (Eigen::Index i = 0; i < t.value->size(); ++i) put_f32(out, t.value->data()[i]);
  return out;
}

ModelState deserialize_checkpoint(const std::string& bytes) {
  const auto eol = bytes.find('\n');
  if (eol == std::string::npos) throw InputError("checkpoint has no manifest line");
  json manifest;
  try {
    manifest = json::parse(bytes.substr(0, eol));
  } catch (const json::exception& e) {
    throw InputError(std::string("checkpoint manifest is not JSON: ") + e.what());
  }
  if (manifest.value("format", "") != "cloudrm-checkpoint") throw InputError("not a cloudrm checkpoint");
  const int version = manifest.value("format_version", -1);
  if (version != kCheckpointFormatVersion)
    throw InputError("unsupported checkpoint format version " + std::to_string(version));
  if (manifest.at("vocab").get<std::vector<std::string>>() != Vocab::standard().symbols())
    throw InputError("checkpoint vocabulary does not match this build");

  ModelState state;
  state.config = manifest.at("config").get<ModelConfig>();
  state.config.validate();
  state.version = manifest.value("model_version", std::string(kModelVersion));
  state.params = Parameters<float>::zeros(state.config);

  const std::size_t base = eol + 1;
  const auto payload = manifest.at("payload_bytes").get<std::size_t>();
  if (bytes.size() != base + payload) throw InputError("checkpoint payload size mismatch");
  const auto& dir = manifest.at("tensors");
  auto refs = tensors(state.params);
  if (dir.size() != refs.size()) throw InputError("checkpoint tensor directory does not match config");
  for (std::size_t k = 0; k < refs.size(); ++k) {
    const auto& entry = dir[k];
    auto& m = *refs[k].value;
    if (entry.at("name").get<std::string>() != refs[k].name ||
        entry.at("shape") != json::array({m.rows(), m.cols()}))
      throw InputError("checkpoint tensor " + refs[k].name + " has unexpected name or shape");
    const auto offset = entry.at("offset").get<std::size_t>();
    if (offset + static_cast<std::size_t>(m.size()) * 4 > payload) throw InputError("tensor runs past payload");
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = get_f32(bytes, base + offset + 4 * i);
  }
  if (!all_finite(state.params)) throw InputError("checkpoint holds non-finite parameters");
  return state;
}

void save_checkpoint(const std::filesystem::path& path, const ModelState& state) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoFailure("cannot write " + path.string());
  const auto bytes = serialize_checkpoint(state);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoFailure("write failed for " + path.string());
}

ModelState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoFailure("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

std::string checkpoint_hash(const ModelState& state) { return sha256_hex(serialize_checkpoint(state)); }

}  // namespace cloudrm
