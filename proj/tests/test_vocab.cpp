#include <doctest.h>

#include "cloudrm/corpus.hpp"
#include "cloudrm/errors.hpp"
#include "cloudrm/vocab.hpp"

using namespace cloudrm;

TEST_CASE("special tokens occupy fixed leading ids") {
  const auto& v = Vocab::standard();
  CHECK(v.size() == 7 + 1 + 95);
  CHECK(v.symbols()[kPad] == "<PAD>");
  CHECK(v.symbols()[kRew] == "<REW>");
  CHECK(v.id_of('\n') == 7);
  CHECK(v.id_of(' ') == 8);
  CHECK(v.id_of('~') == v.size() - 1);
  CHECK_FALSE(v.id_of('\t').has_value());
  for (int id = 0; id < kNumSpecial; ++id) CHECK_FALSE(v.is_char_token(id));
}

TEST_CASE("layout puts every segment in order and reads the reward last") {
  const auto& v = Vocab::standard();
  const auto s = encode(v, 64, "1+2", "1+2=3. ANSWER: 3", std::string_view("Step 1 ok."));
  REQUIRE(s.valid());
  CHECK(s.tokens[0] == kBos);
  CHECK(s.tokens[1] == kSepPrompt);
  CHECK(s.tokens[s.prompt.end] == kSepResponse);
  CHECK(s.tokens[s.response.end] == kSepCritique);
  CHECK(s.has_critique_segment);
  CHECK(s.reward_pos == s.size() - 1);
  CHECK(s.tokens.back() == kRew);
  CHECK(s.size() == 2 + 3 + 1 + 16 + 1 + 10 + 1);

  const auto classic = encode(v, 64, "1+2", "1+2=3. ANSWER: 3");
  CHECK_FALSE(classic.has_critique_segment);
  CHECK(classic.critique.empty());
  CHECK(classic.size() == s.size() - 11);

  const auto empty = encode(v, 64, "1+2", "x", std::string_view(""));
  CHECK(empty.has_critique_segment);
  CHECK(empty.critique.empty());
  CHECK(empty.valid());
}

TEST_CASE("encode and decode round-trip corpus triples") {
  CorpusConfig cfg;
  cfg.n_pairs = 500;
  cfg.seed = 11;
  const auto data = build_dataset(cfg);
  const auto& v = Vocab::standard();
  std::size_t checked = 0;
  for (const auto& r : data) {
    const auto a = encode(v, 384, r.pair.prompt, r.pair.chosen, std::string_view(r.critique_chosen));
    const auto b = encode(v, 384, r.pair.prompt, r.pair.rejected);
    CHECK(decode(v, a) == DecodedTriple{r.pair.prompt, r.pair.chosen, r.critique_chosen});
    CHECK(decode(v, b) == DecodedTriple{r.pair.prompt, r.pair.rejected, std::nullopt});
    checked += 2;
  }
  CHECK(checked == 1000);
}

TEST_CASE("unsupported symbols report their position across segments") {
  const auto& v = Vocab::standard();
  try {
    encode(v, 64, "12", "ab\tc");
    FAIL("expected UnsupportedSymbol");
  } catch (const UnsupportedSymbol& e) {
    CHECK(e.position() == 2 + 2);
  }
  CHECK_THROWS_AS(encode(v, 64, "caf\xc3\xa9", "x"), UnsupportedSymbol);
}

TEST_CASE("sequences longer than the context are rejected") {
  const auto& v = Vocab::standard();
  try {
    encode(v, 10, "1+2", "1+2=3");
    FAIL("expected SequenceTooLong");
  } catch (const SequenceTooLong& e) {
    CHECK(e.needed() == 2 + 3 + 1 + 5 + 1);
    CHECK(e.max() == 10);
  }
  CHECK_NOTHROW(encode(v, 12, "1+2", "1+2=3"));
}
