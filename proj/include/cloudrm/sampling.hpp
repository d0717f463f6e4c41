#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cloudrm/model.hpp"

namespace cloudrm {

/// Tokens that may be emitted inside a critique: characters and EOS.
/// Structural tokens (BOS, separators, REW, PAD) are masked out.
inline bool critique_token_allowed(int id) { return id == kEos || id >= kNumSpecial; }

/// Index of the largest allowed logit, lowest index on ties.
template <typename Scalar>
int argmax_allowed(const RowVector<Scalar>& logits) {
  int best = -1;
  for (int i = 0; i < logits.size(); ++i) {
    if (!critique_token_allowed(i)) continue;
    if (best < 0 || logits(i) > logits(best)) best = i;
  }
  return best;
}

/// Probabilities of softmax(logits / temperature) restricted to allowed tokens, in double.
template <typename Scalar>
std::vector<double> allowed_probabilities(const RowVector<Scalar>& logits, double temperature) {
  std::vector<double> probs(static_cast<std::size_t>(logits.size()), 0.0);
  double mx = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < logits.size(); ++i)
    if (critique_token_allowed(i)) mx = std::max(mx, static_cast<double>(logits(i)) / temperature);
  double sum = 0.0;
  for (int i = 0; i < logits.size(); ++i) {
    if (!critique_token_allowed(i)) continue;
    probs[static_cast<std::size_t>(i)] = std::exp(static_cast<double>(logits(i)) / temperature - mx);
    sum += probs[static_cast<std::size_t>(i)];
  }
  for (auto& v : probs) v /= sum;
  return probs;
}

/// Inverse-CDF draw with a single uniform per token.
template <typename Scalar>
int sample_allowed(const RowVector<Scalar>& logits, double temperature, Rng& rng) {
  const auto probs = allowed_probabilities(logits, temperature);
  const double u = rng.uniform();
  double cum = 0.0;
  int last = -1;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    cum += probs[i];
    last = static_cast<int>(i);
    if (u < cum) return last;
  }
  return last;
}

namespace detail {

/// Runs the prompt/response prefix through a decoder and generates critique
/// tokens with `choose(logits)` until EOS or the critique cap.
template <typename Scalar, typename Choose>
std::string generate_critique(const BasicModelState<Scalar>& state, std::string_view prompt,
                              std::string_view response, Choose&& choose) {
  const auto& cfg = state.config;
  const auto& vocab = Vocab::standard();
  auto seq = encode(vocab, static_cast<std::size_t>(cfg.max_seq_len), prompt, response, std::string_view{});
  // Prefix ends at SEP_CRITIQUE; the trailing REW is dropped.
  seq.tokens.pop_back();
  const std::size_t needed = seq.tokens.size() + static_cast<std::size_t>(cfg.critique_max_tokens) + 1;
  if (needed > static_cast<std::size_t>(cfg.max_seq_len)) throw SequenceTooLong(needed, cfg.max_seq_len);

  IncrementalDecoder<Scalar> decoder(state);
  RowVector<Scalar> logits;
  for (int tok : seq.tokens) logits = decoder.step(tok);
  std::vector<int> out;
  while (out.size() < static_cast<std::size_t>(cfg.critique_max_tokens)) {
    const int next = choose(logits);
    if (next == kEos) break;
    out.push_back(next);
    if (out.size() == static_cast<std::size_t>(cfg.critique_max_tokens)) break;
    logits = decoder.step(next);
  }
  return vocab.decode_text(out);
}

}  // namespace detail

/// Autoregressive critique sampled from softmax(logits / temperature).
/// Reproducible given (state, inputs, temperature, seed).
template <typename Scalar>
std::string sample_critique(const BasicModelState<Scalar>& state, std::string_view prompt, std::string_view response,
                            double temperature, std::uint64_t seed) {
  if (!(temperature > 0.0)) throw InputError("sampling temperature must be positive");
  Rng rng(seed);
  return detail::generate_critique(state, prompt, response,
                                   [&](const RowVector<Scalar>& l) { return sample_allowed(l, temperature, rng); });
}

/// Argmax decoding; the zero-temperature limit of sample_critique.
template <typename Scalar>
std::string greedy_critique(const BasicModelState<Scalar>& state, std::string_view prompt, std::string_view response) {
  return detail::generate_critique(state, prompt, response,
                                   [](const RowVector<Scalar>& l) { return argmax_allowed(l); });
}

}  // namespace cloudrm
