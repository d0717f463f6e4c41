#include "cloudrm/evalkit.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "cloudrm/errors.hpp"
#include "cloudrm/rng.hpp"

namespace cloudrm {

using nlohmann::json;

std::vector<EvalExample> to_eval_examples(std::span<const PreferencePair> pairs) {
  std::vector<EvalExample> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back({p.prompt, p.chosen, p.rejected, p.category, p.difficulty});
  return out;
}

std::vector<std::string> category_labels(std::span<const EvalExample> examples) {
  std::set<std::string> labels;
  for (const auto& e : examples) labels.insert(e.category);
  return {labels.begin(), labels.end()};
}

ResponseScorer make_response_scorer(const ModelState& state, const ScorerSpec& scorer) {
  return [&state, scorer](std::string_view prompt, std::string_view response) {
    return score_with(state, prompt, response, scorer).value;
  };
}

AccuracyReport pairwise_accuracy(std::span<const EvalExample> examples, const ResponseScorer& scorer,
                                 std::span<const std::string> declared) {
  if (examples.empty()) throw EmptyBatch();
  const std::set<std::string> allowed(declared.begin(), declared.end());
  std::map<std::string, std::size_t> hits;
  AccuracyReport report;
  for (const auto& e : examples) {
    if (!allowed.count(e.category)) throw UnknownCategory(e.category);
    const bool correct = scorer(e.prompt, e.chosen) > scorer(e.prompt, e.rejected);
    ++report.counts[e.category];
    hits[e.category] += correct ? 1 : 0;
    report.correct += correct ? 1 : 0;
  }
  report.examples = examples.size();
  double sum = 0.0;
  for (const auto& [label, n] : report.counts) {
    report.per_category[label] = static_cast<double>(hits[label]) / static_cast<double>(n);
    sum += report.per_category[label];
  }
  report.average = sum / static_cast<double>(report.per_category.size());
  return report;
}

AccuracyReport pairwise_accuracy(std::span<const EvalExample> examples, const ResponseScorer& scorer) {
  const auto labels = category_labels(examples);
  return pairwise_accuracy(examples, scorer, labels);
}

std::string to_string(ReasoningBin bin) {
  switch (bin) {
    case ReasoningBin::k1to2:
      return "1-2";
    case ReasoningBin::k3to4:
      return "3-4";
    case ReasoningBin::k5to6:
      return "5-6";
    case ReasoningBin::k7plus:
      return "7+";
  }
  return "";
}

std::size_t count_sentences(std::string_view text) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (c != '.' && c != '!' && c != '?') continue;
    if (i + 1 == text.size() || std::isspace(static_cast<unsigned char>(text[i + 1]))) ++n;
  }
  return n;
}

ReasoningBin reasoning_bin(const EvalExample& example) {
  const std::size_t total = count_sentences(example.chosen) + count_sentences(example.rejected);
  // round-half-up of total / 2
  const std::size_t key = (total + 1) / 2;
  if (key <= 2) return ReasoningBin::k1to2;
  if (key <= 4) return ReasoningBin::k3to4;
  if (key <= 6) return ReasoningBin::k5to6;
  return ReasoningBin::k7plus;
}

BinAccuracy binned_accuracy(std::span<const EvalExample> examples, const ResponseScorer& scorer) {
  BinAccuracy out;
  std::map<std::string, std::size_t> hits;
  for (const auto& e : examples) {
    const auto label = to_string(reasoning_bin(e));
    ++out.counts[label];
    if (scorer(e.prompt, e.chosen) > scorer(e.prompt, e.rejected)) ++hits[label];
  }
  for (const auto& [label, n] : out.counts)
    out.accuracy[label] = static_cast<double>(hits[label]) / static_cast<double>(n);
  return out;
}

GeneratedResponse policy_response(const ResponsePolicy& policy, const Problem& problem, std::size_t problem_index,
                                  int response_seed, int draw) {
  const auto stream = derive_seed(policy.seed, static_cast<std::uint64_t>(response_seed), problem_index);
  return gen_response(derive_seed(stream, static_cast<std::uint64_t>(draw)), problem, policy.error_rate);
}

BonScorer oracle_bon_scorer() {
  return [](const Problem& p, const GeneratedResponse& r) { return oracle_key(p, r); };
}

BonScorer model_bon_scorer(const ModelState& state, const ScorerSpec& scorer) {
  return [&state, scorer](const Problem& p, const GeneratedResponse& r) {
    return score_with(state, p.prompt, r.text, scorer).value;
  };
}

std::pair<double, double> mean_and_stderr(std::span<const double> values) {
  if (values.empty()) return {0.0, 0.0};
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  if (values.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
  return {mean, sd / std::sqrt(static_cast<double>(values.size()))};
}

std::vector<BonPoint> bon_winrate(std::span<const Problem> prompts, const ResponsePolicy& reference,
                                  const ResponsePolicy& candidate, const BonScorer& scorer,
                                  std::span<const int> n_grid, int response_seeds) {
  if (prompts.empty()) throw EmptyBatch();
  if (n_grid.empty() || response_seeds < 1) throw InputError("bon_winrate needs an N grid and >= 1 seed");
  const int max_n = *std::max_element(n_grid.begin(), n_grid.end());
  if (*std::min_element(n_grid.begin(), n_grid.end()) < 1 || max_n > kMaxBonN)
    throw InputError("BoN N must lie in 1.." + std::to_string(kMaxBonN));

  std::vector<BonPoint> curve(n_grid.size());
  for (std::size_t k = 0; k < n_grid.size(); ++k) curve[k].n = n_grid[k];
  for (int s = 0; s < response_seeds; ++s) {
    std::vector<double> score_sum(n_grid.size(), 0.0);
    for (std::size_t i = 0; i < prompts.size(); ++i) {
      const auto& problem = prompts[i];
      const auto ref = policy_response(reference, problem, i, s, 0);
      std::vector<GeneratedResponse> cands;
      std::vector<double> rewards;
      for (int j = 0; j < max_n; ++j) {
        cands.push_back(policy_response(candidate, problem, i, s, j));
        rewards.push_back(scorer(problem, cands.back()));
      }
      for (std::size_t k = 0; k < n_grid.size(); ++k) {
        const auto pick = select_best(std::span<const double>(rewards).first(static_cast<std::size_t>(n_grid[k])));
        const auto j = oracle_judge(problem, cands[pick], ref);
        score_sum[k] += j.preferred == Preference::kFirst ? 1.0 : j.preferred == Preference::kTie ? 0.5 : 0.0;
      }
    }
    for (std::size_t k = 0; k < n_grid.size(); ++k)
      curve[k].per_seed.push_back(score_sum[k] / static_cast<double>(prompts.size()));
  }
  for (auto& point : curve) std::tie(point.mean, point.stderr_) = mean_and_stderr(point.per_seed);
  return curve;
}

ScSweep sc_sweep(const ModelState& state, std::span<const EvalExample> examples, std::span<const int> n_grid,
                 double temperature, std::uint64_t seed, bool with_greedy) {
  if (examples.empty()) throw EmptyBatch();
  if (n_grid.empty() || *std::min_element(n_grid.begin(), n_grid.end()) < 1)
    throw InputError("sc_sweep needs n >= 1");
  const int max_n = *std::max_element(n_grid.begin(), n_grid.end());

  ScSweep out;
  out.n_grid.assign(n_grid.begin(), n_grid.end());
  out.temperature = temperature;
  out.seed = seed;
  std::vector<std::size_t> hits(n_grid.size(), 0);
  std::map<std::string, std::vector<std::size_t>> bin_hits;
  std::size_t greedy_hits = 0;

  auto prefix_means = [&](const std::string& prompt, const std::string& response) {
    const auto est = score_self_consistent(state, prompt, response, max_n, temperature,
                                           response_seed(seed, prompt, response));
    std::vector<double> means;
    for (std::size_t k = 1; k <= est.per_critique.size(); ++k)
      means.push_back(
          aggregate_self_consistent({est.per_critique.begin(), est.per_critique.begin() + static_cast<long>(k)},
                                    temperature)
              .value);
    return means;
  };

  for (const auto& e : examples) {
    const auto chosen = prefix_means(e.prompt, e.chosen);
    const auto rejected = prefix_means(e.prompt, e.rejected);
    const auto label = to_string(reasoning_bin(e));
    ++out.bin_counts[label];
    auto& bh = bin_hits[label];
    bh.resize(n_grid.size(), 0);
    for (std::size_t k = 0; k < n_grid.size(); ++k) {
      const auto idx = static_cast<std::size_t>(n_grid[k]) - 1;
      if (chosen[idx] > rejected[idx]) {
        ++hits[k];
        ++bh[k];
      }
    }
    if (with_greedy) {
      const double gc = score_cloud(state, e.prompt, e.chosen, GreedyDecode{}).value;
      const double gr = score_cloud(state, e.prompt, e.rejected, GreedyDecode{}).value;
      if (gc > gr) ++greedy_hits;
    }
  }
  const double total = static_cast<double>(examples.size());
  for (std::size_t k = 0; k < n_grid.size(); ++k) {
    const double p = static_cast<double>(hits[k]) / total;
    out.accuracy.push_back(p);
    out.stderr_.push_back(std::sqrt(p * (1.0 - p) / total));
  }
  const auto n1 = std::find(n_grid.begin(), n_grid.end(), 1);
  if (n1 != n_grid.end()) {
    const double base = out.accuracy[static_cast<std::size_t>(n1 - n_grid.begin())];
    for (double a : out.accuracy) out.delta_vs_n1.push_back(a - base);
  }
  if (with_greedy) {
    out.greedy_accuracy = static_cast<double>(greedy_hits) / total;
    for (double a : out.accuracy) out.delta_vs_greedy.push_back(a - *out.greedy_accuracy);
  }
  for (const auto& [label, bh] : bin_hits) {
    auto& acc = out.bin_accuracy[label];
    for (std::size_t k = 0; k < n_grid.size(); ++k)
      acc.push_back(static_cast<double>(bh[k]) / static_cast<double>(out.bin_counts[label]));
  }
  return out;
}

namespace {

json accuracy_json(const AccuracyReport& a) {
  return json{{"per_category_accuracy", a.per_category},
              {"counts", a.counts},
              {"average_accuracy", a.average},
              {"examples", a.examples},
              {"correct", a.correct}};
}

AccuracyReport accuracy_from(const json& j) {
  AccuracyReport a;
  a.per_category = j.at("per_category_accuracy").get<std::map<std::string, double>>();
  a.counts = j.at("counts").get<std::map<std::string, std::size_t>>();
  a.average = j.at("average_accuracy").get<double>();
  a.examples = j.at("examples").get<std::size_t>();
  a.correct = j.at("correct").get<std::size_t>();
  return a;
}

json sc_json(const ScSweep& s) {
  json j{{"n_grid", s.n_grid},
         {"accuracy", s.accuracy},
         {"stderr", s.stderr_},
         {"delta_vs_n1", s.delta_vs_n1},
         {"delta_vs_greedy", s.delta_vs_greedy},
         {"bin_curves", s.bin_accuracy},
         {"bin_counts", s.bin_counts},
         {"temperature", s.temperature},
         {"seed", s.seed}};
  if (s.greedy_accuracy) j["greedy_accuracy"] = *s.greedy_accuracy;
  return j;
}

ScSweep sc_from(const json& j) {
  ScSweep s;
  s.n_grid = j.at("n_grid").get<std::vector<int>>();
  s.accuracy = j.at("accuracy").get<std::vector<double>>();
  s.stderr_ = j.at("stderr").get<std::vector<double>>();
  s.delta_vs_n1 = j.at("delta_vs_n1").get<std::vector<double>>();
  s.delta_vs_greedy = j.at("delta_vs_greedy").get<std::vector<double>>();
  s.bin_accuracy = j.at("bin_curves").get<std::map<std::string, std::vector<double>>>();
  s.bin_counts = j.at("bin_counts").get<std::map<std::string, std::size_t>>();
  s.temperature = j.at("temperature").get<double>();
  s.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("greedy_accuracy")) s.greedy_accuracy = j.at("greedy_accuracy").get<double>();
  return s;
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoFailure("cannot write " + path.string());
  out << text;
  if (!out) throw IoFailure("write failed for " + path.string());
}

std::string hash_header(const EvalReport& r) {
  std::string out;
  for (const char* key : {"dataset_hash", "checkpoint_hash"})
    if (r.metadata.contains(key)) out += std::string("# ") + key + " " + r.metadata[key].get<std::string>() + "\n";
  return out;
}

}  // namespace

json report_to_json(const EvalReport& r) {
  json j{{"schema", kReportSchema}, {"mode", r.mode}, {"scorer", r.scorer}, {"metadata", r.metadata}};
  if (r.pairwise) j["pairwise"] = accuracy_json(*r.pairwise);
  if (r.bon_curve) {
    json curve = json::array();
    for (const auto& p : *r.bon_curve)
      curve.push_back({{"n", p.n}, {"mean", p.mean}, {"stderr", p.stderr_}, {"per_seed", p.per_seed}});
    j["bon_curve"] = curve;
  }
  if (r.sc_curve) j["sc_curve"] = sc_json(*r.sc_curve);
  if (r.bins) j["bins"] = json{{"accuracy", r.bins->accuracy}, {"counts", r.bins->counts}};
  return j;
}

EvalReport report_from_json(const json& j) {
  if (j.value("schema", "") != kReportSchema) throw InputError("unknown report schema");
  EvalReport r;
  r.mode = j.at("mode").get<std::string>();
  r.scorer = j.at("scorer").get<std::string>();
  r.metadata = j.at("metadata");
  if (j.contains("pairwise")) r.pairwise = accuracy_from(j["pairwise"]);
  if (j.contains("bon_curve")) {
    std::vector<BonPoint> curve;
    for (const auto& p : j["bon_curve"])
      curve.push_back({p.at("n").get<int>(), p.at("mean").get<double>(), p.at("stderr").get<double>(),
                       p.at("per_seed").get<std::vector<double>>()});
    r.bon_curve = std::move(curve);
  }
  if (j.contains("sc_curve")) r.sc_curve = sc_from(j["sc_curve"]);
  if (j.contains("bins"))
    r.bins = BinAccuracy{j["bins"].at("accuracy").get<std::map<std::string, double>>(),
                         j["bins"].at("counts").get<std::map<std::string, std::size_t>>()};
  return r;
}

void emit_report(const EvalReport& r, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoFailure("cannot create " + dir.string() + ": " + ec.message());
  write_text(dir / "report.json", report_to_json(r).dump(2) + "\n");

  std::ostringstream txt;
  txt << "# mode " << r.mode << "\n# scorer " << r.scorer << "\n" << hash_header(r);
  if (r.pairwise) {
    txt << "\ncategory\taccuracy\tcount\n";
    for (const auto& [label, acc] : r.pairwise->per_category)
      txt << label << "\t" << fmt(acc) << "\t" << r.pairwise->counts.at(label) << "\n";
    txt << "average\t" << fmt(r.pairwise->average) << "\t" << r.pairwise->examples << "\n";
  }
  if (r.bins) {
    txt << "\nreasoning_bin\taccuracy\tcount\n";
    for (const auto& [label, acc] : r.bins->accuracy)
      txt << label << "\t" << fmt(acc) << "\t" << r.bins->counts.at(label) << "\n";
  }
  if (r.bon_curve) {
    std::ostringstream tsv;
    tsv << hash_header(r) << "N\tmean\tstderr\n";
    for (const auto& p : *r.bon_curve) tsv << p.n << "\t" << fmt(p.mean, 6) << "\t" << fmt(p.stderr_, 6) << "\n";
    write_text(dir / "bon.tsv", tsv.str());
    txt << "\nBoN win rate\n" << tsv.str().substr(hash_header(r).size());
  }
  if (r.sc_curve) {
    const auto& s = *r.sc_curve;
    std::ostringstream tsv;
    tsv << hash_header(r) << "n\tmean\tstderr\n";
    for (std::size_t k = 0; k < s.n_grid.size(); ++k)
      tsv << s.n_grid[k] << "\t" << fmt(s.accuracy[k], 6) << "\t" << fmt(s.stderr_[k], 6) << "\n";
    write_text(dir / "sc.tsv", tsv.str());
    txt << "\nself-consistency accuracy (temperature " << fmt(s.temperature, 2) << ")\n"
        << tsv.str().substr(hash_header(r).size());
    if (s.greedy_accuracy) txt << "greedy\t" << fmt(*s.greedy_accuracy, 6) << "\n";
    txt << "\nreasoning_bin";
    for (int n : s.n_grid) txt << "\tn=" << n;
    txt << "\tcount\n";
    for (const auto& [label, acc] : s.bin_accuracy) {
      txt << label;
      for (double a : acc) txt << "\t" << fmt(a);
      txt << "\t" << s.bin_counts.at(label) << "\n";
    }
  }
  write_text(dir / "report.txt", txt.str());
}

}  // namespace cloudrm
