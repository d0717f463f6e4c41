#include "cloudrm/scoring.hpp"

#include <algorithm>

#include "cloudrm/hashing.hpp"
#include "cloudrm/sampling.hpp"

namespace cloudrm {

double reward_for_critique(const ModelState& state, std::string_view prompt, std::string_view response,
                           std::string_view critique) {
  const auto seq = encode(Vocab::standard(), static_cast<std::size_t>(state.config.max_seq_len), prompt, response,
                          critique);
  return static_cast<double>(reward_read(state, forward(state, seq), seq));
}

RewardEstimate score_cloud(const ModelState& state, std::string_view prompt, std::string_view response,
                           const DecodeMode& decode) {
  RewardEstimate est;
  std::string critique;
  if (const auto* s = std::get_if<SampledDecode>(&decode)) {
    critique = sample_critique(state, prompt, response, s->temperature, s->seed);
    est.mode = EstimateMode::kSampled;
    est.temperature = s->temperature;
  } else {
    critique = greedy_critique(state, prompt, response);
    est.mode = EstimateMode::kGreedy;
  }
  est.value = reward_for_critique(state, prompt, response, critique);
  est.per_critique.push_back({std::move(critique), est.value});
  return est;
}

RewardEstimate aggregate_self_consistent(std::vector<CritiqueReward> samples, double temperature) {
  if (samples.empty()) throw InputError("self-consistent scoring needs n >= 1");
  RewardEstimate est;
  est.mode = EstimateMode::kSelfConsistent;
  est.n = static_cast<int>(samples.size());
  est.temperature = temperature;
  // Order-independent sum.
  std::vector<double> rewards;
  rewards.reserve(samples.size());
  for (const auto& s : samples) rewards.push_back(s.reward);
  std::sort(rewards.begin(), rewards.end());
  double sum = 0.0;
  for (double r : rewards) sum += r;
  est.value = sum / static_cast<double>(rewards.size());
  est.per_critique = std::move(samples);
  return est;
}

RewardEstimate score_self_consistent(const ModelState& state, std::string_view prompt, std::string_view response,
                                     int n, double temperature, std::uint64_t seed) {
  if (n < 1) throw InputError("self-consistent scoring needs n >= 1");
  std::vector<CritiqueReward> samples;
  samples.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    auto one = score_cloud(state, prompt, response,
                           SampledDecode{temperature, derive_seed(seed, static_cast<std::uint64_t>(i))});
    samples.push_back(std::move(one.per_critique.front()));
  }
  return aggregate_self_consistent(std::move(samples), temperature);
}

double score_classic(const ModelState& state, std::string_view prompt, std::string_view response) {
  const auto seq =
      encode(Vocab::standard(), static_cast<std::size_t>(state.config.max_seq_len), prompt, response, std::nullopt);
  return static_cast<double>(reward_read(state, forward(state, seq), seq));
}

std::uint64_t response_seed(std::uint64_t master, std::string_view prompt, std::string_view response) {
  std::string key;
  key.reserve(prompt.size() + response.size() + 1);
  key.append(prompt);
  key.push_back('\x1f');
  key.append(response);
  return derive_seed(master, content_key(key));
}

RewardEstimate score_with(const ModelState& state, std::string_view prompt, std::string_view response,
                          const ScorerSpec& scorer) {
  if (std::holds_alternative<ClassicScorer>(scorer)) {
    RewardEstimate est;
    est.mode = EstimateMode::kClassic;
    est.value = score_classic(state, prompt, response);
    return est;
  }
  if (std::holds_alternative<CloudGreedyScorer>(scorer)) return score_cloud(state, prompt, response, GreedyDecode{});
  const auto& sc = std::get<CloudSelfConsistentScorer>(scorer);
  return score_self_consistent(state, prompt, response, sc.n, sc.temperature,
                               response_seed(sc.seed, prompt, response));
}

std::size_t select_best(std::span<const double> rewards) {
  if (rewards.empty()) throw EmptyResponseSet();
  std::size_t best = 0;
  for (std::size_t i = 1; i < rewards.size(); ++i)
    if (rewards[i] > rewards[best]) best = i;
  return best;
}

BonResult best_of_n(const ModelState& state, std::string_view prompt, std::span<const std::string> responses,
                    const ScorerSpec& scorer) {
  if (responses.empty()) throw EmptyResponseSet();
  BonResult result;
  result.n = responses.size();
  std::vector<double> values;
  for (const auto& r : responses) {
    result.rewards.push_back(score_with(state, prompt, r, scorer));
    values.push_back(result.rewards.back().value);
  }
  result.selected_index = select_best(values);
  return result;
}

}  // namespace cloudrm
