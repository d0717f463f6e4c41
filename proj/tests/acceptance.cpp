// Acceptance gate: runs every criterion and prints one PASS/FAIL line each.
//
//   acceptance [--only 1,2,...] [--expect-fail 5,...] [--work DIR]
//
// Exit status is 0 when the set of failing criteria equals --expect-fail
// exactly, so a criterion recorded as unattainable still prints FAIL and an
// unexpected pass or failure breaks the run.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cloudrm/checkpoint.hpp"
#include "cloudrm/cli.hpp"
#include "cloudrm/corpus.hpp"
#include "cloudrm/dataset_io.hpp"
#include "cloudrm/errors.hpp"
#include "cloudrm/evalkit.hpp"
#include "cloudrm/hashing.hpp"
#include "cloudrm/objectives.hpp"
#include "cloudrm/pipeline.hpp"
#include "cloudrm/scoring.hpp"
#include "oracles.hpp"

using namespace cloudrm;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

class Checks {
 public:
  void expect(bool ok, const std::string& what) {
    if (!ok && first_failure_.empty()) first_failure_ = what;
    all_ &= ok;
  }
  Outcome outcome(const std::string& summary) const {
    return {all_, first_failure_.empty() ? summary : summary + "; first failure: " + first_failure_};
  }

 private:
  bool all_ = true;
  std::string first_failure_;
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string fmt(const char* f, double a, double b) {
  char buf[160];
  std::snprintf(buf, sizeof buf, f, a, b);
  return buf;
}

double sample_sd(const std::vector<double>& v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

CorpusConfig corpus(std::size_t n, std::uint64_t seed) {
  CorpusConfig c;
  c.n_pairs = n;
  c.seed = seed;
  c.error_rate = 0.25;
  return c;
}

std::vector<PreferencePair> plain(const std::vector<CritiquedPair>& data) {
  std::vector<PreferencePair> out;
  for (const auto& r : data) out.push_back(r.pair);
  return out;
}

std::size_t parameter_count(const Parameters<float>& p) {
  std::size_t n = 0;
  for (const auto& t : tensors(p)) n += static_cast<std::size_t>(t.value->size());
  return n;
}

template <typename S>
void perturb(BasicModelState<S>& s, std::uint64_t seed, double sd) {
  Rng rng(seed);
  for (auto& t : tensors(s.params))
    for (Eigen::Index i = 0; i < t.value->size(); ++i) t.value->data()[i] += static_cast<S>(sd * rng.normal());
}

ModelConfig grad_model() {
  ModelConfig c;
  c.d_model = 16;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_ff = 32;
  c.max_seq_len = 64;
  c.critique_max_tokens = 16;
  c.parameter_precision = 64;
  return c;
}

LossBatch hand_batch(const ModelConfig& c) {
  const auto& v = Vocab::standard();
  LossBatch b;
  b.pairs.push_back({encode_for_training(v, c, "2+3", "2+3=5. ANSWER: 5", "Step 1 ok."),
                     encode_for_training(v, c, "2+3", "2+3=7. ANSWER: 7", "Step 1 wrong: 5.")});
  b.pairs.push_back({encode_for_training(v, c, "4*2", "4*2=8. ANSWER: 8", "Step 1 ok."),
                     encode_for_training(v, c, "4*2", "4*2=9. ANSWER: 9", "Step 1 wrong: 8.")});
  return b;
}

// ---------------------------------------------------------------- 1

Outcome loss_unit_values() {
  Checks c;
  const std::vector<double> r = {0.3, -1.2, 4.0, 11.0};
  c.expect(std::abs(bt_loss(r, r) - std::log(2.0)) < 1e-9, "bt_loss(r, r) = ln 2");
  std::vector<double> a = {1.0, -0.5, 3.25}, b = {0.2, 0.7, -1.0};
  const double base = bt_loss(a, b);
  for (double shift : {-40.0, -1.5, 2.0, 123.0}) {
    auto as = a, bs = b;
    for (auto& x : as) x += shift;
    for (auto& x : bs) x += shift;
    c.expect(std::abs(bt_loss(as, bs) - base) < 1e-9, "shift invariance");
  }
  ModelConfig mc;
  mc.d_model = 32;
  mc.n_heads = 4;
  mc.d_ff = 64;
  auto s = init_model<float>(mc, 1);
  s.params.lm_weight.setZero();
  s.params.lm_bias.setZero();
  LossBatch batch;
  batch.pairs = encode_critiqued(mc, build_dataset(corpus(8, 3)));
  const double sft = sft_loss(s, batch);
  c.expect(std::abs(sft - std::log(static_cast<double>(mc.vocab_size))) < 1e-6, "uniform sft_loss = ln V");
  return c.outcome(fmt("ln2 err %.1e, uniform sft err %.1e", std::abs(bt_loss(r, r) - std::log(2.0)),
                       std::abs(sft - std::log(static_cast<double>(mc.vocab_size)))));
}

// ---------------------------------------------------------------- 2

Outcome gradient_fidelity() {
  const auto mc = grad_model();
  auto s = init_model<double>(mc, 3);
  perturb(s, 5, 0.2);
  const auto rep = grad_check(s, hand_batch(mc), 1.0, 1e-5, 200, 7);
  Checks c;
  c.expect(rep.coordinates >= 200, ">= 200 coordinates");
  for (auto g : {ParamGroup::kTrunk, ParamGroup::kLmHead, ParamGroup::kRewardHead})
    c.expect(rep.per_group.count(g) && rep.per_group.at(g) > 0, "all parameter groups covered");
  c.expect(rep.max_relative_error < 1e-6, "max relative error < 1e-6");
  std::ostringstream d;
  d << rep.coordinates << " coords, max rel " << fmt("%.2e", rep.max_relative_error) << " at "
    << rep.worst_coordinate;
  return c.outcome(d.str());
}

// ---------------------------------------------------------------- 3

Outcome masking_and_aggregation() {
  Checks c;
  const auto mc = grad_model();
  auto s = init_model<double>(mc, 6);
  perturb(s, 7, 0.2);
  const auto batch = hand_batch(mc);
  const auto base = loss_and_gradient(s, batch, {false, 1.0});
  std::size_t perturbations = 0;
  for (std::size_t p = 0; p < batch.pairs.size(); ++p)
    for (int side = 0; side < 2; ++side) {
      const auto& es = side == 0 ? batch.pairs[p].chosen : batch.pairs[p].rejected;
      for (std::size_t t = 0; t < es.targets.size(); ++t) {
        if (t >= es.sft_positions.begin && t < es.sft_positions.end) continue;
        for (int v = 0; v < mc.vocab_size; ++v) {
          if (v == es.targets[t]) continue;
          auto changed = batch;
          (side == 0 ? changed.pairs[p].chosen : changed.pairs[p].rejected).targets[t] = v;
          const auto lg = loss_and_gradient(s, changed, {false, 1.0});
          c.expect(lg.loss.sft_component == base.loss.sft_component, "sft loss invariant");
          bool grads_equal = true;
          const auto ga = tensors(lg.grad);
          const auto gb = tensors(base.grad);
          for (std::size_t k = 0; k < ga.size(); ++k) grads_equal &= (*ga[k].value == *gb[k].value);
          c.expect(grads_equal, "sft gradient invariant");
          ++perturbations;
        }
      }
    }

  const auto agg = aggregate_self_consistent({{"a", 0.2}, {"b", 0.4}, {"c", 0.6}}, 0.5);
  c.expect(std::abs(agg.value - 0.4) < 1e-15, "SC mean of {0.2,0.4,0.6}");
  std::vector<CritiqueReward> samples;
  Rng rng(8);
  for (int i = 0; i < 16; ++i) samples.push_back({"c" + std::to_string(i), rng.normal()});
  const double mean = aggregate_self_consistent(samples, 0.5).value;
  double lo = samples[0].reward, hi = lo;
  for (const auto& x : samples) lo = std::min(lo, x.reward), hi = std::max(hi, x.reward);
  c.expect(mean >= lo && mean <= hi, "SC bounds");
  for (int rep = 0; rep < 50; ++rep) {
    auto perm = samples;
    for (std::size_t i = perm.size() - 1; i > 0; --i)
      std::swap(perm[i], perm[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i)))]);
    c.expect(aggregate_self_consistent(perm, 0.5).value == mean, "SC permutation invariance");
  }

  c.expect(select_best(std::vector<double>{0.1, 0.9, 0.5}) == 1, "BoN argmax");
  c.expect(select_best(std::vector<double>{-3.0}) == 0, "BoN single response");
  c.expect(select_best(std::vector<double>{0.2, 0.7, 0.7}) == 1, "BoN tie to lower index");
  std::vector<double> grow = {0.5, 0.1};
  for (double x : {0.6, 2.0, 2.5}) {
    grow.push_back(x);
    c.expect(select_best(grow) == grow.size() - 1, "BoN monotone dominance");
  }
  return c.outcome(std::to_string(perturbations) + " non-critique target perturbations, SC and BoN rules exact");
}

// ---------------------------------------------------------------- 4

int sign_of(const Judgment& j) {
  return j.preferred == Preference::kFirst ? 1 : j.preferred == Preference::kSecond ? -1 : 0;
}

Outcome oracle_soundness() {
  Checks c;
  std::size_t agree = 0;
  for (std::size_t i = 0; i < 1000; ++i) {
    const auto p = gen_problem(derive_seed(50, i), 1 + static_cast<int>(i % 4));
    const auto a = gen_response(derive_seed(51, i), p, 0.25);
    const auto b = gen_response(derive_seed(52, i), p, 0.25);
    if (oracle::evaluate(p.prompt).value == p.ground_truth &&
        sign_of(oracle_judge(p, a.text, b.text)) == oracle::recheck_preference(p.prompt, a.text, b.text))
      ++agree;
  }
  c.expect(agree == 1000, "judge matches step-recheck oracle on every pair");
  Rng rng(53);
  std::size_t props = 0;
  for (int i = 0; i < 10000; ++i) {
    const auto p = gen_problem(rng.next(), static_cast<int>(rng.uniform_int(1, 4)));
    const auto a = gen_response(rng.next(), p, 0.25);
    const auto b = gen_response(rng.next(), p, 0.25);
    const auto d = gen_response(rng.next(), p, 0.25);
    const int ab = sign_of(oracle_judge(p, a, b));
    const int ba = sign_of(oracle_judge(p, b, a));
    const int bd = sign_of(oracle_judge(p, b, d));
    const int ad = sign_of(oracle_judge(p, a, d));
    bool ok = ab == -ba;
    if (ab >= 0 && bd >= 0) ok &= ad == std::max(ab, bd);
    if (ab <= 0 && bd <= 0) ok &= ad == std::min(ab, bd);
    props += ok;
  }
  c.expect(props == 10000, "asymmetry and transitivity on every triple");
  return c.outcome(std::to_string(agree) + "/1000 recheck agreement, " + std::to_string(props) +
                   "/10000 triples consistent");
}

// ---------------------------------------------------------------- 5

struct Corpora {
  std::vector<CritiquedPair> train;
  std::vector<CritiquedPair> test;
};

const Corpora& main_corpora() {
  static const Corpora c{build_dataset(corpus(2000, 1)), build_dataset(corpus(500, 2))};
  return c;
}

Outcome classic_rm() {
  const auto& data = main_corpora();
  ModelConfig mc;  // d_model 64, 2 layers
  const auto base = init_model<float>(mc, 0);
  const std::size_t params = parameter_count(base.params);
  TrainConfig tc;
  tc.epochs = 10;
  tc.peak_lr = 1e-3;
  tc.batch_size = 32;
  tc.seed = 0;
  const auto start = std::chrono::steady_clock::now();
  const auto result = train_classic(base, plain(data.train), tc);
  const double minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() / 60.0;
  const auto examples = to_eval_examples(plain(data.test));
  const auto acc = pairwise_accuracy(examples, make_response_scorer(result.model, ClassicScorer{}));
  const auto train_acc = pairwise_accuracy(to_eval_examples(plain(data.train)),
                                           make_response_scorer(result.model, ClassicScorer{}));
  Checks c;
  c.expect(params <= 1000000, "<= 1M parameters");
  c.expect(minutes <= 20.0, "<= 20 min");
  c.expect(acc.average >= 0.80, "held-out accuracy >= 0.80");
  return c.outcome(std::to_string(params) + " params, held-out " + fmt("%.3f", acc.average) + ", train " +
                   fmt("%.3f", train_acc.average) + ", " + fmt("%.1f min", minutes));
}

// ---------------------------------------------------------------- 6 and 8

struct CloudRuns {
  ModelState sft;
  std::vector<double> on;
  std::vector<double> off;
  ModelState on_seed0;
  double minutes = 0.0;
};

ModelConfig cloud_model() { return ModelConfig{}; }

TrainConfig sft_config() {
  TrainConfig t;
  t.epochs = 4;
  t.peak_lr = 1e-3;
  t.seed = 0;
  return t;
}

TrainConfig cloud_config(std::uint64_t seed) {
  TrainConfig t;
  t.epochs = 3;
  t.peak_lr = 3e-4;
  t.lambda = 1.0;
  t.seed = seed;
  return t;
}

const CloudRuns& cloud_runs() {
  static const CloudRuns runs = [] {
    CloudRuns r;
    const auto start = std::chrono::steady_clock::now();
    const auto& data = main_corpora();
    const auto examples = to_eval_examples(plain(data.test));
    r.sft = train_sft(init_model<float>(cloud_model(), 0), data.train, sft_config()).model;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      const auto self = regen_critiques(r.sft, data.train, 1.0, seed);
      const auto on = train_cloud(r.sft, self, cloud_config(seed)).model;
      const auto off = train_cloud(r.sft, data.train, cloud_config(seed)).model;
      r.on.push_back(pairwise_accuracy(examples, make_response_scorer(on, CloudGreedyScorer{})).average);
      r.off.push_back(pairwise_accuracy(examples, make_response_scorer(off, CloudGreedyScorer{})).average);
      std::cerr << "  seed " << seed << ": on " << r.on.back() << " off " << r.off.back() << "\n";
      if (seed == 0) r.on_seed0 = on;
    }
    r.minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() / 60.0;
    return r;
  }();
  return runs;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

Outcome on_vs_off_policy() {
  const auto& r = cloud_runs();
  Checks c;
  c.expect(mean_of(r.on) >= mean_of(r.off), "acc(on) >= acc(off)");
  c.expect(r.minutes <= 120.0, "<= 2 h");
  return c.outcome(fmt("on-policy %.4f, off-policy %.4f", mean_of(r.on), mean_of(r.off)) + " over 3 seeds, " +
                   fmt("%.1f min", r.minutes));
}

Outcome sc_variance() {
  const auto& model = cloud_runs().on_seed0;
  const auto& ex = main_corpora().test.front().pair;
  std::vector<double> one, sixteen;
  for (std::uint64_t rep = 0; rep < 100; ++rep) {
    const auto seed = derive_seed(900, rep);
    const auto sc = score_self_consistent(model, ex.prompt, ex.chosen, 16, kSelfConsistencyTemperature, seed);
    one.push_back(sc.per_critique.front().reward);
    sixteen.push_back(sc.value);
  }
  const double sd1 = sample_sd(one), sd16 = sample_sd(sixteen);
  Checks c;
  c.expect(sd16 < sd1, "sd(n=16) < sd(n=1)");
  return c.outcome(fmt("sd n=1 %.4g, sd n=16 %.4g", sd1, sd16) + " over 100 repeats");
}

// ---------------------------------------------------------------- 7

Outcome bon_sanity() {
  std::vector<Problem> problems;
  for (const auto& r : main_corpora().test) problems.push_back(parse_problem(r.pair.prompt, r.pair.difficulty));
  std::vector<int> grid;
  for (int n = 2; n <= 16; ++n) grid.push_back(n);
  const auto curve = bon_winrate(problems, {0.25, derive_seed(7, 0)}, {0.25, derive_seed(7, 1)},
                                 oracle_bon_scorer(), grid, 4);
  Checks c;
  double worst_drop = 0.0;
  for (std::size_t k = 1; k < curve.size(); ++k) {
    worst_drop = std::max(worst_drop, curve[k - 1].mean - curve[k].mean);
    c.expect(curve[k].mean >= curve[k - 1].mean - 0.02, "non-decreasing within 2 points at N=" +
                                                             std::to_string(curve[k].n));
  }
  return c.outcome(fmt("win rate %.3f at N=2, %.3f at N=16", curve.front().mean, curve.back().mean) +
                   fmt(", largest drop %.4f", worst_drop));
}

// ---------------------------------------------------------------- 9

Outcome determinism_and_replay(const fs::path& work) {
  const auto dir = work / "replay";
  fs::remove_all(dir);
  fs::create_directories(dir);
  auto path = [&](const std::string& n) { return (dir / n).string(); };
  std::ostringstream sink;
  auto run = [&](std::vector<std::string> args) {
    args.insert(args.begin(), "cloudrm");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    return cli::run_cli(static_cast<int>(argv.size()), argv.data(), sink, sink);
  };
  const std::vector<std::string> model = {"--d-model", "32", "--layers", "1", "--heads", "2", "--d-ff", "64",
                                          "--epochs", "1", "--batch-size", "16"};
  auto with_model = [&](std::vector<std::string> a) {
    a.insert(a.end(), model.begin(), model.end());
    return a;
  };
  Checks c;
  c.expect(run({"build-data", "--pairs", "96", "--seed", "1", "--out", path("train.jsonl")}) == 0, "build train");
  c.expect(run({"build-data", "--pairs", "32", "--seed", "2", "--out", path("test.jsonl")}) == 0, "build test");
  c.expect(run(with_model({"train", "--stage", "classic", "--data", path("train.jsonl"), "--run-dir", path("classic")})) == 0,
           "train classic");
  c.expect(run(with_model({"train", "--stage", "sft", "--data", path("train.jsonl"), "--run-dir", path("sft")})) == 0,
           "train sft");
  const auto init = path("sft/checkpoint.bin");
  c.expect(run(with_model({"train", "--stage", "cloud-on", "--regen", "--data", path("train.jsonl"), "--init", init,
                           "--run-dir", path("on")})) == 0,
           "train cloud-on");
  c.expect(run(with_model({"train", "--stage", "cloud-off", "--data", path("train.jsonl"), "--init", init,
                           "--run-dir", path("off")})) == 0,
           "train cloud-off");
  c.expect(run({"eval", "--mode", "pairwise", "--scorer", "cloud-greedy", "--data", path("test.jsonl"), "--ckpt",
                path("on/checkpoint.bin"), "--out", path("eval_pairwise")}) == 0,
           "eval pairwise");
  c.expect(run({"eval", "--mode", "sc-sweep", "--n", "1,2,4", "--data", path("test.jsonl"), "--ckpt",
                path("off/checkpoint.bin"), "--out", path("eval_sc")}) == 0,
           "eval sc-sweep");
  c.expect(run({"eval", "--mode", "bon", "--scorer", "classic", "--n", "1..4", "--seeds", "2", "--data",
                path("test.jsonl"), "--ckpt", path("classic/checkpoint.bin"), "--out", path("eval_bon")}) == 0,
           "eval bon");

  const std::vector<std::string> manifests = {
      path("train.jsonl") + ".manifest.json", path("classic/manifest.json"), path("sft/manifest.json"),
      path("on/manifest.json"),               path("off/manifest.json"),     path("eval_pairwise/manifest.json"),
      path("eval_sc/manifest.json"),          path("eval_bon/manifest.json")};
  std::size_t identical = 0, compared = 0;
  for (const auto& m : manifests) {
    const int code = run({"replay", "--manifest", m});
    c.expect(code == 0, "replay of " + m);
    if (code != 0) continue;
    const auto original = cli::read_json_file(m);
    const auto rm = cli::read_json_file(m + ".replay.json");
    for (const auto& [role, cmp] : rm.at("metrics").at("outputs").items()) {
      ++compared;
      identical += cmp.at("identical").get<bool>();
    }
    c.expect(rm.at("metrics").at("outputs").size() == original.at("outputs").size(), "every output compared for " + m);
  }
  c.expect(compared > 0 && identical == compared, "all replayed outputs bitwise identical");
  return c.outcome(std::to_string(manifests.size()) + " manifests replayed, " + std::to_string(identical) + "/" +
                   std::to_string(compared) + " outputs identical");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::string only, expect_fail;
  std::string work = (fs::temp_directory_path() / "cloudrm_acceptance").string();
  app.add_option("--only", only, "comma-separated criteria to run (default all)");
  app.add_option("--expect-fail", expect_fail, "criteria recorded as unattainable");
  app.add_option("--work", work, "scratch directory");
  CLI11_PARSE(app, argc, argv);

  auto parse_set = [](const std::string& s) {
    std::set<int> out;
    std::stringstream ss(s);
    for (std::string item; std::getline(ss, item, ',');)
      if (!item.empty()) out.insert(std::stoi(item));
    return out;
  };
  std::set<int> selected = parse_set(only);
  if (selected.empty()) selected = {1, 2, 3, 4, 5, 6, 7, 8, 9};
  const auto expected = parse_set(expect_fail);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"loss unit values", loss_unit_values},
      {"gradient fidelity", gradient_fidelity},
      {"masking and aggregation", masking_and_aggregation},
      {"oracle soundness", oracle_soundness},
      {"desk-scale classic RM", classic_rm},
      {"on-policy >= off-policy", on_vs_off_policy},
      {"BoN planted monotonicity", bon_sanity},
      {"SC variance reduction", sc_variance},
      {"determinism and replay", [&] { return determinism_and_replay(work); }},
  };

  std::set<int> failed;
  for (int k = 1; k <= static_cast<int>(criteria.size()); ++k) {
    if (!selected.count(k)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[static_cast<std::size_t>(k - 1)].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!o.pass) failed.insert(k);
    std::cout << "criterion " << k << " " << (o.pass ? "PASS" : "FAIL") << "  "
              << criteria[static_cast<std::size_t>(k - 1)].first << ": " << o.detail << " ["
              << fmt("%.1fs", secs) << "]" << (!o.pass && expected.count(k) ? " (expected)" : "") << std::endl;
  }
  std::set<int> expected_selected;
  for (int k : expected)
    if (selected.count(k)) expected_selected.insert(k);
  return failed == expected_selected ? 0 : 1;
}
