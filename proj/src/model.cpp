#include "cloudrm/model.hpp"

namespace cloudrm {

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw InputError("invalid model config: " + what); };
  if (vocab_size <= kNumSpecial) fail("vocab_size too small");
  if (d_model <= 0 || n_layers < 0 || n_heads <= 0 || d_ff <= 0) fail("non-positive dimension");
  if (d_model % n_heads != 0) fail("d_model must be divisible by n_heads");
  if (max_seq_len < 8) fail("max_seq_len too small");
  if (critique_max_tokens < 1) fail("critique_max_tokens must be positive");
  if (parameter_precision != 32 && parameter_precision != 64) fail("parameter_precision must be 32 or 64");
}

const char* to_string(ParamGroup group) {
  switch (group) {
    case ParamGroup::kTrunk:
      return "trunk";
    case ParamGroup::kLmHead:
      return "lm_head";
    case ParamGroup::kRewardHead:
      return "reward_head";
  }
  return "unknown";
}

}  // namespace cloudrm
