#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cloudrm {

/// Fixed ids of the structural tokens; character tokens follow them.
enum SpecialToken : int {
  kPad = 0,
  kBos = 1,
  kEos = 2,
  kSepPrompt = 3,
  kSepResponse = 4,
  kSepCritique = 5,
  kRew = 6,
  kNumSpecial = 7,
};

/// Character-level vocabulary: the special tokens, then '\n' and printable ASCII.
class Vocab {
 public:
  Vocab();

  static const Vocab& standard();

  int size() const noexcept { return static_cast<int>(symbols_.size()); }
  const std::vector<std::string>& symbols() const noexcept { return symbols_; }

  std::optional<int> id_of(char c) const noexcept;
  bool is_char_token(int id) const noexcept { return id >= kNumSpecial && id < size(); }
  char char_of(int id) const;

  /// Encodes plain text; throws UnsupportedSymbol with the offending index.
  std::vector<int> encode_text(std::string_view text) const;
  /// Decodes character tokens; throws ShapeMismatch on special ids.
  std::string decode_text(std::span<const int> ids) const;

  static constexpr std::array<std::string_view, kNumSpecial> kSpecialNames = {
      "<PAD>", "<BOS>", "<EOS>", "<SEP_PROMPT>", "<SEP_RESPONSE>", "<SEP_CRITIQUE>", "<REW>"};

 private:
  std::vector<std::string> symbols_;
  std::array<int, 256> char_to_id_{};
};

/// Half-open token index range.
struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const noexcept { return end - begin; }
  bool empty() const noexcept { return begin == end; }
  friend bool operator==(const Span&, const Span&) = default;
};

/// BOS SEP_PROMPT prompt SEP_RESPONSE response [SEP_CRITIQUE critique] REW
struct SegmentedSequence {
  std::vector<int> tokens;
  Span prompt;
  Span response;
  Span critique;
  /// True when SEP_CRITIQUE was emitted (CLoud layout), even if the critique is empty.
  bool has_critique_segment = false;
  std::optional<std::size_t> reward_pos;

  std::size_t size() const noexcept { return tokens.size(); }
  /// Checks the span ordering and reward-position invariants.
  bool valid() const noexcept;
};

/// Builds the segmented layout. Throws UnsupportedSymbol or SequenceTooLong.
SegmentedSequence encode(const Vocab& vocab, std::size_t max_seq_len, std::string_view prompt,
                         std::string_view response, std::optional<std::string_view> critique = std::nullopt);

struct DecodedTriple {
  std::string prompt;
  std::string response;
  std::optional<std::string> critique;
  friend bool operator==(const DecodedTriple&, const DecodedTriple&) = default;
};

DecodedTriple decode(const Vocab& vocab, const SegmentedSequence& seq);

}  // namespace cloudrm
