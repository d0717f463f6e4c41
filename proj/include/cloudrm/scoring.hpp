#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "cloudrm/model.hpp"

namespace cloudrm {

struct GreedyDecode {};
struct SampledDecode {
  double temperature = 1.0;
  std::uint64_t seed = 0;
};
using DecodeMode = std::variant<GreedyDecode, SampledDecode>;

enum class EstimateMode { kClassic, kGreedy, kSampled, kSelfConsistent };

struct CritiqueReward {
  std::string critique;
  double reward = 0.0;
};

struct RewardEstimate {
  double value = 0.0;
  EstimateMode mode = EstimateMode::kGreedy;
  int n = 1;
  double temperature = 0.0;
  std::vector<CritiqueReward> per_critique;
};

inline constexpr double kSelfConsistencyTemperature = 0.5;

/// reward_read on encode(prompt, response, critique).
double reward_for_critique(const ModelState& state, std::string_view prompt, std::string_view response,
                           std::string_view critique);

/// Generates one critique (greedy or sampled), then reads the reward conditioned on it.
RewardEstimate score_cloud(const ModelState& state, std::string_view prompt, std::string_view response,
                           const DecodeMode& decode = GreedyDecode{});

/// Mean reward over n critiques sampled at `temperature`; sample i uses derive_seed(seed, i).
RewardEstimate score_self_consistent(const ModelState& state, std::string_view prompt, std::string_view response,
                                     int n, double temperature, std::uint64_t seed);

/// Folds (critique, reward) samples into a self-consistent estimate.
RewardEstimate aggregate_self_consistent(std::vector<CritiqueReward> samples, double temperature);

/// reward_read on the classic layout (no critique segment).
double score_classic(const ModelState& state, std::string_view prompt, std::string_view response);

struct ClassicScorer {};
struct CloudGreedyScorer {};
struct CloudSelfConsistentScorer {
  int n = 16;
  double temperature = kSelfConsistencyTemperature;
  std::uint64_t seed = 0;
};
using ScorerSpec = std::variant<ClassicScorer, CloudGreedyScorer, CloudSelfConsistentScorer>;

/// Master seed re-keyed on the scored content, so critique draws for a
/// response do not depend on which other responses are scored alongside it.
std::uint64_t response_seed(std::uint64_t master, std::string_view prompt, std::string_view response);

/// Scores one response under a scorer spec (self-consistent seeds are per response).
RewardEstimate score_with(const ModelState& state, std::string_view prompt, std::string_view response,
                          const ScorerSpec& scorer);

struct BonResult {
  std::size_t selected_index = 0;
  std::vector<RewardEstimate> rewards;
  std::size_t n = 0;
};

/// Index of the maximum, lowest index on ties. Throws EmptyResponseSet.
std::size_t select_best(std::span<const double> rewards);

BonResult best_of_n(const ModelState& state, std::string_view prompt, std::span<const std::string> responses,
                    const ScorerSpec& scorer);

}  // namespace cloudrm
