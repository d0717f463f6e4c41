#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace cloudrm {

/// One binary operation of a problem, in evaluation (post-order) order.
/// lhs_step / rhs_step name the step producing that operand, or -1 for a literal.
struct PlanStep {
  std::int64_t lhs = 0;
  char op = '+';
  std::int64_t rhs = 0;
  std::int64_t value = 0;
  int lhs_step = -1;
  int rhs_step = -1;
  std::string text;  // e.g. "8*2"
};

/// Fully parenthesized integer arithmetic expression with its step plan.
struct Problem {
  std::string prompt;
  std::int64_t ground_truth = 0;
  std::vector<PlanStep> step_plan;
  int difficulty = 0;
};

inline constexpr std::int64_t kMaxMagnitude = 999;
inline constexpr std::int64_t kMaxLeaf = 20;

std::int64_t apply_op(char op, std::int64_t lhs, std::int64_t rhs);

/// Operation count for a difficulty level: {1: 2, 2: 3-4, 3: 5-6, 4: 7-8}.
std::pair<int, int> operation_range(int difficulty);

/// Deterministic given (seed, difficulty). Every value, intermediate ones
/// included, has magnitude <= kMaxMagnitude.
Problem gen_problem(std::uint64_t seed, int difficulty);

/// Rebuilds the step plan from a prompt. Throws ParseFailure.
Problem parse_problem(std::string_view prompt, int difficulty = 0);

struct ResponseStep {
  std::int64_t lhs = 0;
  char op = '+';
  std::int64_t rhs = 0;
  std::int64_t claimed = 0;
};

/// "12+7=19. 19*3=57. ANSWER: 57"
struct GeneratedResponse {
  std::string text;
  std::vector<ResponseStep> steps;
  std::vector<std::size_t> error_positions;
  std::int64_t final_answer = 0;
};

/// Each step is corrupted with probability error_rate by a +-(1..10) offset;
/// later steps consume the corrupted value.
GeneratedResponse gen_response(std::uint64_t seed, const Problem& problem, double error_rate);

/// Parses response text; error_positions become the locally wrong steps.
/// Throws ParseFailure.
GeneratedResponse parse_response(std::string_view text);

std::string render_response(const std::vector<ResponseStep>& steps);

enum class Preference { kFirst, kSecond, kTie };
enum class RationaleCode { kFinalAnswer, kFewerErrors, kShorter };

const char* to_string(RationaleCode code);
std::optional<RationaleCode> rationale_from_string(std::string_view s);

struct Judgment {
  Preference preferred = Preference::kTie;
  std::optional<RationaleCode> rationale;
};

/// Lexicographic: correct final answer, then fewer errors, then fewer steps.
Judgment oracle_judge(const Problem& problem, const GeneratedResponse& a, const GeneratedResponse& b);
/// Parses both texts first. Throws ParseFailure.
Judgment oracle_judge(const Problem& problem, std::string_view a, std::string_view b);

/// Scalar form of the judge's ordering: larger is strictly preferred.
double oracle_key(const Problem& problem, const GeneratedResponse& response);

/// "Step 1 ok. Step 2 wrong: 54. Verdict: bad." Wrong steps carry the
/// correct value from the step plan.
std::string oracle_critique(const Problem& problem, const GeneratedResponse& response);
std::string oracle_critique(const Problem& problem, std::string_view response);

inline constexpr std::string_view kWrongMarker = "wrong";

std::size_t count_wrong_markers(std::string_view critique);
/// Number of "Step k wrong: V" claims whose V is the true value of step k.
std::size_t count_privileged_markers(const Problem& problem, std::string_view critique);

enum class CritiqueSource { kOracle, kSelf };

const char* to_string(CritiqueSource source);

struct PreferencePair {
  std::string prompt;
  std::string chosen;
  std::string rejected;
  std::optional<RationaleCode> rationale;
  int difficulty = 0;
  std::string category;
  friend bool operator==(const PreferencePair&, const PreferencePair&) = default;
};

struct CritiquedPair {
  PreferencePair pair;
  std::string critique_chosen;
  std::string critique_rejected;
  CritiqueSource source = CritiqueSource::kOracle;
  friend bool operator==(const CritiquedPair&, const CritiquedPair&) = default;
};

/// Category label derived from difficulty ("steps-2", "steps-3-4", ...).
std::string difficulty_category(int difficulty);

struct CorpusConfig {
  std::size_t n_pairs = 2000;
  std::uint64_t seed = 1;
  std::vector<double> difficulty_mix = {1.0, 1.0, 1.0, 1.0};  // weights for difficulties 1..4
  double error_rate = 0.25;
};

inline constexpr int kMaxTieRetries = 50;

/// Pair i is a pure function of (seed, i): two responses are drawn, judged,
/// redrawn on ties (ExhaustedResampling after kMaxTieRetries) and critiqued by the oracle.
CritiquedPair build_pair(const CorpusConfig& cfg, std::size_t index);
std::vector<CritiquedPair> build_dataset(const CorpusConfig& cfg);

}  // namespace cloudrm
