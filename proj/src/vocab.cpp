#include "cloudrm/vocab.hpp"

#include "cloudrm/errors.hpp"

namespace cloudrm {

Vocab::Vocab() {
  char_to_id_.fill(-1);
  for (auto name : kSpecialNames) symbols_.emplace_back(name);
  auto add = [this](char c) {
    char_to_id_[static_cast<unsigned char>(c)] = static_cast<int>(symbols_.size());
    symbols_.emplace_back(1, c);
  };
  add('\n');
  for (int c = 0x20; c <= 0x7e; ++c) add(static_cast<char>(c));
}

const Vocab& Vocab::standard() {
  static const Vocab vocab;
  return vocab;
}

std::optional<int> Vocab::id_of(char c) const noexcept {
  const int id = char_to_id_[static_cast<unsigned char>(c)];
  if (id < 0) return std::nullopt;
  return id;
}

char Vocab::char_of(int id) const {
  if (!is_char_token(id)) throw ShapeMismatch("token " + std::to_string(id) + " is not a character token");
  return symbols_[static_cast<std::size_t>(id)][0];
}

std::vector<int> Vocab::encode_text(std::string_view text) const {
  std::vector<int> ids;
  ids.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    const auto id = id_of(text[i]);
    if (!id) throw UnsupportedSymbol(i);
    ids.push_back(*id);
  }
  return ids;
}

std::string Vocab::decode_text(std::span<const int> ids) const {
  std::string text;
  text.reserve(ids.size());
  for (int id : ids) text.push_back(char_of(id));
  return text;
}

bool SegmentedSequence::valid() const noexcept {
  const std::size_t n = tokens.size();
  if (prompt.begin > prompt.end || response.begin > response.end || critique.begin > critique.end) return false;
  if (prompt.end > response.begin || response.end > critique.begin || critique.end > n) return false;
  if (reward_pos) {
    if (*reward_pos >= n || tokens[*reward_pos] != kRew) return false;
    for (std::size_t i = *reward_pos + 1; i < n; ++i)
      if (tokens[i] != kPad) return false;
  }
  return true;
}

SegmentedSequence encode(const Vocab& vocab, std::size_t max_seq_len, std::string_view prompt,
                         std::string_view response, std::optional<std::string_view> critique) {
  const std::size_t needed =
      prompt.size() + response.size() + 4 + (critique ? critique->size() + 1 : 0);
  // Validate symbols before length so error positions refer to the offending text.
  auto p = vocab.encode_text(prompt);
  std::vector<int> r;
  try {
    r = vocab.encode_text(response);
  } catch (const UnsupportedSymbol& e) {
    throw UnsupportedSymbol(prompt.size() + e.position());
  }
  std::vector<int> c;
  if (critique) {
    try {
      c = vocab.encode_text(*critique);
    } catch (const UnsupportedSymbol& e) {
      throw UnsupportedSymbol(prompt.size() + response.size() + e.position());
    }
  }
  if (needed > max_seq_len) throw SequenceTooLong(needed, max_seq_len);

  SegmentedSequence seq;
  seq.tokens.reserve(needed);
  seq.tokens.push_back(kBos);
  seq.tokens.push_back(kSepPrompt);
  seq.prompt.begin = seq.tokens.size();
  seq.tokens.insert(seq.tokens.end(), p.begin(), p.end());
  seq.prompt.end = seq.tokens.size();
  seq.tokens.push_back(kSepResponse);
  seq.response.begin = seq.tokens.size();
  seq.tokens.insert(seq.tokens.end(), r.begin(), r.end());
  seq.response.end = seq.tokens.size();
  if (critique) {
    seq.has_critique_segment = true;
    seq.tokens.push_back(kSepCritique);
    seq.critique.begin = seq.tokens.size();
    seq.tokens.insert(seq.tokens.end(), c.begin(), c.end());
    seq.critique.end = seq.tokens.size();
  } else {
    seq.critique = {seq.tokens.size(), seq.tokens.size()};
  }
  seq.reward_pos = seq.tokens.size();
  seq.tokens.push_back(kRew);
  return seq;
}

DecodedTriple decode(const Vocab& vocab, const SegmentedSequence& seq) {
  auto slice = [&](Span s) {
    return vocab.decode_text(std::span<const int>(seq.tokens).subspan(s.begin, s.size()));
  };
  DecodedTriple out{slice(seq.prompt), slice(seq.response), std::nullopt};
  if (seq.has_critique_segment) out.critique = slice(seq.critique);
  return out;
}

}  // namespace cloudrm
