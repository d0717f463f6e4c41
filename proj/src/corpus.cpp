#include "cloudrm/corpus.hpp"

#include <cctype>
#include <charconv>
#include <cstdlib>
#include <numeric>

#include "cloudrm/errors.hpp"
#include "cloudrm/rng.hpp"

namespace cloudrm {

std::int64_t apply_op(char op, std::int64_t lhs, std::int64_t rhs) {
  switch (op) {
    case '+':
      return lhs + rhs;
    case '-':
      return lhs - rhs;
    case '*':
      return lhs * rhs;
  }
  throw ParseFailure(std::string("unknown operator '") + op + "'");
}

std::pair<int, int> operation_range(int difficulty) {
  switch (difficulty) {
    case 1:
      return {2, 2};
    case 2:
      return {3, 4};
    case 3:
      return {5, 6};
    case 4:
      return {7, 8};
  }
  throw InputError("difficulty must be in 1..4, got " + std::to_string(difficulty));
}

namespace {

struct Node {
  std::int64_t value = 0;
  char op = 0;  // 0 for leaves
  int left = -1;
  int right = -1;
};

int grow(std::vector<Node>& nodes, int ops, Rng& rng) {
  if (ops == 0) {
    nodes.push_back({rng.uniform_int(1, kMaxLeaf)});
    return static_cast<int>(nodes.size()) - 1;
  }
  const int left_ops = static_cast<int>(rng.uniform_int(0, ops - 1));
  const int l = grow(nodes, left_ops, rng);
  const int r = grow(nodes, ops - 1 - left_ops, rng);
  const std::int64_t a = nodes[static_cast<std::size_t>(l)].value;
  const std::int64_t b = nodes[static_cast<std::size_t>(r)].value;
  static constexpr char kOps[] = {'+', '-', '*'};
  char op = kOps[rng.uniform_int(0, 2)];
  if (std::abs(apply_op(op, a, b)) > kMaxMagnitude) op = (op == '*') ? (rng.bernoulli(0.5) ? '+' : '-') : op;
  if (std::abs(apply_op(op, a, b)) > kMaxMagnitude) op = (op == '+') ? '-' : '+';
  nodes.push_back({apply_op(op, a, b), op, l, r});
  return static_cast<int>(nodes.size()) - 1;
}

std::string render(const std::vector<Node>& nodes, int i, bool top) {
  const auto& n = nodes[static_cast<std::size_t>(i)];
  if (n.op == 0) return std::to_string(n.value);
  std::string s = render(nodes, n.left, false) + n.op + render(nodes, n.right, false);
  return top ? s : "(" + s + ")";
}

std::string step_text(std::int64_t lhs, char op, std::int64_t rhs) {
  return std::to_string(lhs) + op + std::to_string(rhs);
}

/// Recursive-descent reader for the fully parenthesized prompt grammar:
/// expr := operand op operand, operand := number | '(' expr ')'.
class PromptParser {
 public:
  explicit PromptParser(std::string_view text) : text_(text) {}

  Problem parse(int difficulty) {
    Problem p;
    p.prompt = std::string(text_);
    p.difficulty = difficulty;
    const auto root = expr(p);
    if (pos_ != text_.size()) fail("trailing characters");
    if (root.step < 0) fail("prompt has no operation");
    p.ground_truth = root.value;
    return p;
  }

 private:
  struct Operand {
    std::int64_t value;
    int step;
  };

  [[noreturn]] void fail(const std::string& what) const {
    throw ParseFailure("prompt parse error at " + std::to_string(pos_) + ": " + what);
  }

  Operand operand(Problem& p) {
    if (pos_ < text_.size() && text_[pos_] == '(') {
      ++pos_;
      auto inner = expr(p);
      if (pos_ >= text_.size() || text_[pos_] != ')') fail("expected ')'");
      ++pos_;
      return inner;
    }
    const auto start = pos_;
    while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    if (start == pos_) fail("expected number");
    std::int64_t v = 0;
    std::from_chars(text_.data() + start, text_.data() + pos_, v);
    return {v, -1};
  }

  Operand expr(Problem& p) {
    auto lhs = operand(p);
    if (pos_ >= text_.size() || text_[pos_] == ')') return lhs;
    const char op = text_[pos_];
    if (op != '+' && op != '-' && op != '*') fail("expected operator");
    ++pos_;
    auto rhs = operand(p);
    PlanStep s{lhs.value, op, rhs.value, apply_op(op, lhs.value, rhs.value), lhs.step, rhs.step,
               step_text(lhs.value, op, rhs.value)};
    p.step_plan.push_back(s);
    return {s.value, static_cast<int>(p.step_plan.size()) - 1};
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

void collect_plan(const std::vector<Node>& nodes, int i, Problem& p, std::vector<int>& step_of) {
  const auto& n = nodes[static_cast<std::size_t>(i)];
  if (n.op == 0) return;
  collect_plan(nodes, n.left, p, step_of);
  collect_plan(nodes, n.right, p, step_of);
  const auto& l = nodes[static_cast<std::size_t>(n.left)];
  const auto& r = nodes[static_cast<std::size_t>(n.right)];
  p.step_plan.push_back({l.value, n.op, r.value, n.value, step_of[static_cast<std::size_t>(n.left)],
                         step_of[static_cast<std::size_t>(n.right)], step_text(l.value, n.op, r.value)});
  step_of[static_cast<std::size_t>(i)] = static_cast<int>(p.step_plan.size()) - 1;
}

}  // namespace

Problem gen_problem(std::uint64_t seed, int difficulty) {
  const auto [lo, hi] = operation_range(difficulty);
  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(difficulty)));
  const int ops = static_cast<int>(rng.uniform_int(lo, hi));
  std::vector<Node> nodes;
  const int root = grow(nodes, ops, rng);
  Problem p;
  p.prompt = render(nodes, root, true);
  p.difficulty = difficulty;
  p.ground_truth = nodes[static_cast<std::size_t>(root)].value;
  std::vector<int> step_of(nodes.size(), -1);
  collect_plan(nodes, root, p, step_of);
  return p;
}

Problem parse_problem(std::string_view prompt, int difficulty) { return PromptParser(prompt).parse(difficulty); }

std::string render_response(const std::vector<ResponseStep>& steps) {
  std::string text;
  for (const auto& s : steps) {
    text += step_text(s.lhs, s.op, s.rhs) + "=" + std::to_string(s.claimed) + ". ";
  }
  text += "ANSWER: " + std::to_string(steps.empty() ? 0 : steps.back().claimed);
  return text;
}

GeneratedResponse gen_response(std::uint64_t seed, const Problem& problem, double error_rate) {
  if (!(error_rate >= 0.0 && error_rate <= 1.0)) throw InputError("error_rate must lie in [0, 1]");
  Rng rng(seed);
  GeneratedResponse r;
  for (std::size_t i = 0; i < problem.step_plan.size(); ++i) {
    const auto& ps = problem.step_plan[i];
    ResponseStep s;
    s.op = ps.op;
    s.lhs = ps.lhs_step >= 0 ? r.steps[static_cast<std::size_t>(ps.lhs_step)].claimed : ps.lhs;
    s.rhs = ps.rhs_step >= 0 ? r.steps[static_cast<std::size_t>(ps.rhs_step)].claimed : ps.rhs;
    s.claimed = apply_op(s.op, s.lhs, s.rhs);
    if (rng.bernoulli(error_rate)) {
      const std::int64_t magnitude = rng.uniform_int(1, 10);
      s.claimed += rng.bernoulli(0.5) ? magnitude : -magnitude;
      r.error_positions.push_back(i);
    }
    r.steps.push_back(s);
  }
  r.final_answer = r.steps.empty() ? 0 : r.steps.back().claimed;
  r.text = render_response(r.steps);
  return r;
}

namespace {

class ResponseParser {
 public:
  explicit ResponseParser(std::string_view text) : text_(text) {}

  GeneratedResponse parse() {
    GeneratedResponse r;
    r.text = std::string(text_);
    static constexpr std::string_view kAnswer = "ANSWER: ";
    while (text_.substr(pos_, kAnswer.size()) != kAnswer) {
      ResponseStep s;
      s.lhs = number();
      if (pos_ >= text_.size()) fail("truncated step");
      s.op = text_[pos_++];
      if (s.op != '+' && s.op != '-' && s.op != '*') fail("expected operator");
      s.rhs = number();
      expect('=');
      s.claimed = number();
      expect('.');
      expect(' ');
      if (s.claimed != apply_op(s.op, s.lhs, s.rhs)) r.error_positions.push_back(r.steps.size());
      r.steps.push_back(s);
    }
    pos_ += kAnswer.size();
    r.final_answer = number();
    if (pos_ != text_.size()) fail("trailing characters after answer");
    return r;
  }

 private:
  [[noreturn]] void fail(const std::string& what) const {
    throw ParseFailure("response parse error at " + std::to_string(pos_) + ": " + what);
  }

  void expect(char c) {
    if (pos_ >= text_.size() || text_[pos_] != c) fail(std::string("expected '") + c + "'");
    ++pos_;
  }

  std::int64_t number() {
    const auto start = pos_;
    if (pos_ < text_.size() && text_[pos_] == '-') ++pos_;
    const auto digits = pos_;
    while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    if (digits == pos_ || pos_ - digits > 12) fail("expected number");
    std::int64_t v = 0;
    std::from_chars(text_.data() + start, text_.data() + pos_, v);
    return v;
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

}  // namespace

GeneratedResponse parse_response(std::string_view text) { return ResponseParser(text).parse(); }

const char* to_string(RationaleCode code) {
  switch (code) {
    case RationaleCode::kFinalAnswer:
      return "FINAL_ANSWER";
    case RationaleCode::kFewerErrors:
      return "FEWER_ERRORS";
    case RationaleCode::kShorter:
      return "SHORTER";
  }
  return "";
}

std::optional<RationaleCode> rationale_from_string(std::string_view s) {
  if (s == "FINAL_ANSWER") return RationaleCode::kFinalAnswer;
  if (s == "FEWER_ERRORS") return RationaleCode::kFewerErrors;
  if (s == "SHORTER") return RationaleCode::kShorter;
  return std::nullopt;
}

const char* to_string(CritiqueSource source) { return source == CritiqueSource::kOracle ? "oracle" : "self"; }

Judgment oracle_judge(const Problem& problem, const GeneratedResponse& a, const GeneratedResponse& b) {
  const bool ca = a.final_answer == problem.ground_truth;
  const bool cb = b.final_answer == problem.ground_truth;
  if (ca != cb) return {ca ? Preference::kFirst : Preference::kSecond, RationaleCode::kFinalAnswer};
  if (a.error_positions.size() != b.error_positions.size())
    return {a.error_positions.size() < b.error_positions.size() ? Preference::kFirst : Preference::kSecond,
            RationaleCode::kFewerErrors};
  if (a.steps.size() != b.steps.size())
    return {a.steps.size() < b.steps.size() ? Preference::kFirst : Preference::kSecond, RationaleCode::kShorter};
  return {Preference::kTie, std::nullopt};
}

Judgment oracle_judge(const Problem& problem, std::string_view a, std::string_view b) {
  return oracle_judge(problem, parse_response(a), parse_response(b));
}

double oracle_key(const Problem& problem, const GeneratedResponse& response) {
  const double correct = response.final_answer == problem.ground_truth ? 1.0 : 0.0;
  return correct * 1e6 - static_cast<double>(response.error_positions.size()) * 1e3 -
         static_cast<double>(response.steps.size());
}

std::string oracle_critique(const Problem& problem, const GeneratedResponse& response) {
  std::string out;
  for (std::size_t i = 0; i < response.steps.size(); ++i) {
    if (!out.empty()) out += ' ';
    out += "Step " + std::to_string(i + 1);
    if (i < problem.step_plan.size() && response.steps[i].claimed == problem.step_plan[i].value) {
      out += " ok.";
    } else if (i < problem.step_plan.size()) {
      out += " wrong: " + std::to_string(problem.step_plan[i].value) + ".";
    } else {
      out += " wrong.";
    }
  }
  if (!out.empty()) out += ' ';
  out += response.final_answer == problem.ground_truth ? "Verdict: good." : "Verdict: bad.";
  return out;
}

std::string oracle_critique(const Problem& problem, std::string_view response) {
  return oracle_critique(problem, parse_response(response));
}

std::size_t count_wrong_markers(std::string_view critique) {
  std::size_t n = 0;
  for (auto pos = critique.find(kWrongMarker); pos != std::string_view::npos;
       pos = critique.find(kWrongMarker, pos + kWrongMarker.size()))
    ++n;
  return n;
}

std::size_t count_privileged_markers(const Problem& problem, std::string_view critique) {
  std::size_t n = 0;
  static constexpr std::string_view kStep = "Step ";
  for (auto pos = critique.find(kStep); pos != std::string_view::npos; pos = critique.find(kStep, pos + 1)) {
    std::size_t at = pos + kStep.size();
    int k = 0;
    auto [p1, e1] = std::from_chars(critique.data() + at, critique.data() + critique.size(), k);
    if (e1 != std::errc{}) continue;
    at = static_cast<std::size_t>(p1 - critique.data());
    static constexpr std::string_view kClaim = " wrong: ";
    if (critique.substr(at, kClaim.size()) != kClaim) continue;
    at += kClaim.size();
    std::int64_t v = 0;
    auto [p2, e2] = std::from_chars(critique.data() + at, critique.data() + critique.size(), v);
    if (e2 != std::errc{}) continue;
    if (k >= 1 && static_cast<std::size_t>(k) <= problem.step_plan.size() &&
        problem.step_plan[static_cast<std::size_t>(k - 1)].value == v)
      ++n;
  }
  return n;
}

std::string difficulty_category(int difficulty) {
  switch (difficulty) {
    case 1:
      return "steps-2";
    case 2:
      return "steps-3-4";
    case 3:
      return "steps-5-6";
    case 4:
      return "steps-7-8";
  }
  return "uncategorized";
}

CritiquedPair build_pair(const CorpusConfig& cfg, std::size_t index) {
  if (cfg.difficulty_mix.size() != 4) throw InputError("difficulty_mix needs 4 weights");
  const double total = std::accumulate(cfg.difficulty_mix.begin(), cfg.difficulty_mix.end(), 0.0);
  if (!(total > 0.0)) throw InputError("difficulty_mix weights must sum to a positive value");

  Rng rng(derive_seed(cfg.seed, index, 0));
  double u = rng.uniform() * total;
  int difficulty = 4;
  for (int d = 0; d < 4; ++d) {
    if (u < cfg.difficulty_mix[static_cast<std::size_t>(d)]) {
      difficulty = d + 1;
      break;
    }
    u -= cfg.difficulty_mix[static_cast<std::size_t>(d)];
  }
  const Problem problem = gen_problem(derive_seed(cfg.seed, index, 1), difficulty);
  for (int attempt = 0; attempt < kMaxTieRetries; ++attempt) {
    const auto a = gen_response(derive_seed(cfg.seed, index, 2 + 2 * static_cast<std::uint64_t>(attempt)), problem,
                                cfg.error_rate);
    const auto b = gen_response(derive_seed(cfg.seed, index, 3 + 2 * static_cast<std::uint64_t>(attempt)), problem,
                                cfg.error_rate);
    const auto j = oracle_judge(problem, a, b);
    if (j.preferred == Preference::kTie) continue;
    const auto& chosen = j.preferred == Preference::kFirst ? a : b;
    const auto& rejected = j.preferred == Preference::kFirst ? b : a;
    CritiquedPair out;
    out.pair = {problem.prompt, chosen.text, rejected.text, j.rationale, difficulty, difficulty_category(difficulty)};
    out.critique_chosen = oracle_critique(problem, chosen);
    out.critique_rejected = oracle_critique(problem, rejected);
    out.source = CritiqueSource::kOracle;
    return out;
  }
  throw ExhaustedResampling(problem.prompt);
}

std::vector<CritiquedPair> build_dataset(const CorpusConfig& cfg) {
  if (cfg.n_pairs < 1) throw InputError("n_pairs must be at least 1");
  std::vector<CritiquedPair> out;
  out.reserve(cfg.n_pairs);
  for (std::size_t i = 0; i < cfg.n_pairs; ++i) out.push_back(build_pair(cfg, i));
  return out;
}

}  // namespace cloudrm
