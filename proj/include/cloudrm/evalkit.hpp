#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "cloudrm/corpus.hpp"
#include "cloudrm/scoring.hpp"

namespace cloudrm {

struct EvalExample {
  std::string prompt;
  std::string chosen;
  std::string rejected;
  std::string category;
  int difficulty = 0;
};

std::vector<EvalExample> to_eval_examples(std::span<const PreferencePair> pairs);
/// Sorted distinct category labels.
std::vector<std::string> category_labels(std::span<const EvalExample> examples);

using ResponseScorer = std::function<double(std::string_view prompt, std::string_view response)>;

ResponseScorer make_response_scorer(const ModelState& state, const ScorerSpec& scorer);

struct AccuracyReport {
  std::map<std::string, double> per_category;
  std::map<std::string, std::size_t> counts;
  double average = 0.0;  // unweighted mean over categories
  std::size_t examples = 0;
  std::size_t correct = 0;
  friend bool operator==(const AccuracyReport&, const AccuracyReport&) = default;
};

/// Correct iff score(chosen) > score(rejected) strictly; ties count as wrong.
/// Throws UnknownCategory for labels outside `declared`, EmptyBatch for no examples.
AccuracyReport pairwise_accuracy(std::span<const EvalExample> examples, const ResponseScorer& scorer,
                                 std::span<const std::string> declared);
AccuracyReport pairwise_accuracy(std::span<const EvalExample> examples, const ResponseScorer& scorer);

enum class ReasoningBin { k1to2, k3to4, k5to6, k7plus };

std::string to_string(ReasoningBin bin);
inline constexpr ReasoningBin kAllBins[] = {ReasoningBin::k1to2, ReasoningBin::k3to4, ReasoningBin::k5to6,
                                            ReasoningBin::k7plus};

/// Count of '.', '!' or '?' followed by whitespace or end of text.
std::size_t count_sentences(std::string_view text);
/// Bin of round-half-up(mean of chosen and rejected sentence counts).
ReasoningBin reasoning_bin(const EvalExample& example);

struct BinAccuracy {
  std::map<std::string, double> accuracy;
  std::map<std::string, std::size_t> counts;
  friend bool operator==(const BinAccuracy&, const BinAccuracy&) = default;
};

BinAccuracy binned_accuracy(std::span<const EvalExample> examples, const ResponseScorer& scorer);

/// Seeded response generator over the corpus task: draw j for problem i under
/// response seed s is gen_response(derive_seed(derive_seed(seed, s, i), j), problem, error_rate).
struct ResponsePolicy {
  double error_rate = 0.25;
  std::uint64_t seed = 0;
};

GeneratedResponse policy_response(const ResponsePolicy& policy, const Problem& problem, std::size_t problem_index,
                                  int response_seed, int draw);

inline constexpr int kMaxBonN = 64;

using BonScorer = std::function<double(const Problem&, const GeneratedResponse&)>;

/// The planted perfect reward model: the oracle judge's own ordering key.
BonScorer oracle_bon_scorer();
BonScorer model_bon_scorer(const ModelState& state, const ScorerSpec& scorer);

struct BonPoint {
  int n = 0;
  double mean = 0.0;
  double stderr_ = 0.0;  // sample sd over response seeds / sqrt(seeds)
  std::vector<double> per_seed;
  friend bool operator==(const BonPoint&, const BonPoint&) = default;
};

/// For each response seed and N, the scorer's pick among the first N candidate
/// draws is judged against the reference draw (win 1, tie 0.5, loss 0).
std::vector<BonPoint> bon_winrate(std::span<const Problem> prompts, const ResponsePolicy& reference,
                                  const ResponsePolicy& candidate, const BonScorer& scorer,
                                  std::span<const int> n_grid, int response_seeds);

/// Sample mean and standard error (sample sd / sqrt(count)) of per-seed values.
std::pair<double, double> mean_and_stderr(std::span<const double> values);

struct ScSweep {
  std::vector<int> n_grid;
  std::vector<double> accuracy;
  std::vector<double> stderr_;  // binomial sqrt(p(1-p)/examples)
  std::optional<double> greedy_accuracy;
  std::vector<double> delta_vs_n1;
  std::vector<double> delta_vs_greedy;
  std::map<std::string, std::vector<double>> bin_accuracy;  // per reasoning bin, indexed like n_grid
  std::map<std::string, std::size_t> bin_counts;
  double temperature = kSelfConsistencyTemperature;
  std::uint64_t seed = 0;
  friend bool operator==(const ScSweep&, const ScSweep&) = default;
};

/// Per-response critique samples are drawn once for max(n_grid); the n = k
/// point averages the first k, so smaller n nest inside larger ones.
ScSweep sc_sweep(const ModelState& state, std::span<const EvalExample> examples, std::span<const int> n_grid,
                 double temperature, std::uint64_t seed, bool with_greedy = true);

inline constexpr const char* kReportSchema = "cloudrm-eval-report/1";

struct EvalReport {
  std::string mode;
  std::string scorer;
  std::optional<AccuracyReport> pairwise;
  std::optional<std::vector<BonPoint>> bon_curve;
  std::optional<ScSweep> sc_curve;
  std::optional<BinAccuracy> bins;
  nlohmann::json metadata = nlohmann::json::object();
  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

nlohmann::json report_to_json(const EvalReport& report);
/// Throws InputError on unknown schema versions.
EvalReport report_from_json(const nlohmann::json& j);

/// Writes report.json, report.txt and (when present) bon.tsv / sc.tsv into `dir`.
void emit_report(const EvalReport& report, const std::filesystem::path& dir);

}  // namespace cloudrm
