#include "cloudrm/cli.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>

#include <CLI11.hpp>

#include "cloudrm/checkpoint.hpp"
#include "cloudrm/corpus.hpp"
#include "cloudrm/dataset_io.hpp"
#include "cloudrm/errors.hpp"
#include "cloudrm/evalkit.hpp"
#include "cloudrm/hashing.hpp"
#include "cloudrm/pipeline.hpp"

namespace cloudrm::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kCommands[] = {"build-data", "train", "eval", "sweep", "regen", "replay"};

json file_entry(const fs::path& path) { return json{{"path", path.string()}, {"sha256", sha256_file(path)}}; }

void write_json_file(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoFailure("cannot write " + path.string());
  out << j.dump(2) << "\n";
  if (!out) throw IoFailure("write failed for " + path.string());
}

std::string require_string(const json& cfg, const std::string& key) {
  if (!cfg.contains(key) || !cfg[key].is_string() || cfg[key].get<std::string>().empty())
    throw UsageError("missing required option --" + key);
  return cfg[key].get<std::string>();
}

fs::path require_existing(const json& cfg, const std::string& key, const std::string& stage) {
  const fs::path p = require_string(cfg, key);
  if (!fs::exists(p)) throw MissingInput(stage, p.string());
  return p;
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

ModelConfig model_config_from(const json& cfg) {
  ModelConfig mc = cfg.at("model").get<ModelConfig>();
  mc.validate();
  return mc;
}

TrainConfig train_config_from(const json& cfg) {
  TrainConfig tc = cfg.at("train").get<TrainConfig>();
  tc.validate();
  return tc;
}

ScorerSpec scorer_from(const json& cfg) {
  const auto name = cfg.at("scorer").get<std::string>();
  if (name == "classic") return ClassicScorer{};
  if (name == "cloud-greedy") return CloudGreedyScorer{};
  if (name == "cloud-sc")
    return CloudSelfConsistentScorer{cfg.at("sc_n").get<int>(), cfg.at("temperature").get<double>(),
                                     cfg.at("seed").get<std::uint64_t>()};
  throw UsageError("unknown scorer '" + name + "' (classic | cloud-greedy | cloud-sc)");
}

struct Clock {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
};

json base_manifest(const std::string& command, const json& cfg) {
  return json{{"tool", "cloudrm"},
              {"command", command},
              {"config", cfg},
              {"inputs", json::object()},
              {"outputs", json::object()},
              {"metrics", json::object()}};
}

ProgressCallback epoch_logger(std::ostream& log) {
  return [&log](const TrainProgress& p) {
    if (p.step == p.total_steps || p.step % 100 == 0)
      log << "step " << p.step << "/" << p.total_steps << " epoch " << p.epoch << " loss " << p.loss << "\n";
  };
}

// ---------------------------------------------------------------- build-data

json cmd_build_data(const json& cfg, std::ostream& log) {
  const fs::path out = require_string(cfg, "out");
  CorpusConfig cc;
  cc.n_pairs = cfg.at("pairs").get<std::size_t>();
  cc.seed = cfg.at("seed").get<std::uint64_t>();
  cc.error_rate = cfg.at("error_rate").get<double>();
  cc.difficulty_mix = cfg.at("difficulty_mix").get<std::vector<double>>();
  if (cc.n_pairs < 1) throw InputError("--pairs must be at least 1");
  if (!(cc.error_rate >= 0.0 && cc.error_rate <= 1.0)) throw InputError("--error-rate must lie in [0, 1]");
  if (cc.difficulty_mix.size() != 4) throw InputError("--difficulty-mix needs four weights");
  const auto records = build_dataset(cc);
  ensure_parent(out);
  save_dataset(out, std::span<const CritiquedPair>(records));
  log << "wrote " << records.size() << " pairs to " << out.string() << "\n";

  json m = base_manifest("build-data", cfg);
  m["seed"] = cc.seed;
  m["outputs"]["dataset"] = file_entry(out);
  std::map<std::string, std::size_t> per_category;
  std::size_t chosen_correct = 0;
  for (const auto& r : records) {
    ++per_category[r.pair.category];
    if (r.pair.rationale == RationaleCode::kFinalAnswer) ++chosen_correct;
  }
  m["metrics"] = {{"pairs", records.size()}, {"per_category", per_category}, {"final_answer_decided", chosen_correct}};
  return m;
}

// ---------------------------------------------------------------- regen

json cmd_regen(const json& cfg, std::ostream& log) {
  const auto ckpt = require_existing(cfg, "ckpt", "regen");
  const auto data = require_existing(cfg, "data", "regen");
  const fs::path out = require_string(cfg, "out");
  const auto state = load_checkpoint(ckpt);
  const auto records = load_critiqued(data);
  const auto self = regen_critiques(state, records, cfg.at("temperature").get<double>(),
                                    cfg.at("seed").get<std::uint64_t>());
  ensure_parent(out);
  save_dataset(out, std::span<const CritiquedPair>(self));
  log << "regenerated " << self.size() << " critique pairs into " << out.string() << "\n";
  json m = base_manifest("regen", cfg);
  m["seed"] = cfg.at("seed");
  m["inputs"] = {{"ckpt", file_entry(ckpt)}, {"data", file_entry(data)}};
  m["outputs"]["dataset"] = file_entry(out);
  m["metrics"] = {{"pairs", self.size()}};
  return m;
}

// ---------------------------------------------------------------- train

json cmd_train(const json& cfg, std::ostream& log) {
  const auto stage = cfg.at("stage").get<std::string>();
  static const std::vector<std::string> kStages = {"sft", "cloud-on", "cloud-off", "classic"};
  if (std::find(kStages.begin(), kStages.end(), stage) == kStages.end())
    throw UsageError("unknown stage '" + stage + "' (sft | cloud-on | cloud-off | classic)");
  const fs::path run_dir = require_string(cfg, "run_dir");
  const auto data_path = require_existing(cfg, "data", stage);
  const auto tc = train_config_from(cfg);
  const bool needs_init = stage == "cloud-on" || stage == "cloud-off";
  const std::string init_path = cfg.value("init", "");
  if (needs_init && init_path.empty()) throw MissingInput(stage, "--init (critique-finetuned checkpoint)");
  if (!init_path.empty() && !fs::exists(init_path)) throw MissingInput(stage, init_path);

  json m = base_manifest("train", cfg);
  m["seed"] = tc.seed;
  m["inputs"]["data"] = file_entry(data_path);
  ModelState init;
  if (!init_path.empty()) {
    init = load_checkpoint(init_path);
    m["inputs"]["init"] = file_entry(init_path);
  } else {
    init = init_model<float>(model_config_from(cfg), cfg.at("init_seed").get<std::uint64_t>());
  }
  fs::create_directories(run_dir);

  TrainResult result;
  const auto progress = epoch_logger(log);
  if (stage == "classic") {
    result = train_classic(init, load_preferences(data_path), tc, progress);
  } else {
    auto records = load_critiqued(data_path);
    if (stage == "sft") {
      result = train_sft(init, records, tc, progress);
    } else if (stage == "cloud-off") {
      for (const auto& r : records)
        if (r.source != CritiqueSource::kOracle) throw InputError("cloud-off trains on oracle critiques");
      result = train_cloud(init, records, tc, progress);
    } else {
      if (cfg.at("regen").get<bool>()) {
        for (const auto& r : records)
          if (r.source != CritiqueSource::kOracle) throw InputError("--regen expects an oracle-critique dataset");
        records = regen_critiques(init, records, cfg.at("regen_temperature").get<double>(),
                                  cfg.at("regen_seed").get<std::uint64_t>());
        const auto self_path = run_dir / "train_self.jsonl";
        save_dataset(self_path, std::span<const CritiquedPair>(records));
        m["outputs"]["self_critiques"] = file_entry(self_path);
      } else {
        for (const auto& r : records)
          if (r.source != CritiqueSource::kSelf)
            throw MissingInput(stage, "self-critique dataset (pass --regen to build it from oracle data)");
      }
      result = train_cloud(init, records, tc, progress);
    }
  }
  const auto ckpt = run_dir / "checkpoint.bin";
  save_checkpoint(ckpt, result.model);
  m["outputs"]["checkpoint"] = file_entry(ckpt);
  m["metrics"] = {{"steps", result.steps},
                  {"final_epoch_loss", result.final_epoch_loss},
                  {"final_step_loss", result.loss_log.empty() ? 0.0 : result.loss_log.back()},
                  {"config_hash", config_hash(tc)}};
  return m;
}

// ---------------------------------------------------------------- eval

std::vector<Problem> problems_from(std::span<const PreferencePair> pairs) {
  std::vector<Problem> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(parse_problem(p.prompt, p.difficulty));
  return out;
}

json cmd_eval(const json& cfg, std::ostream& log) {
  const auto mode = cfg.at("mode").get<std::string>();
  if (mode != "pairwise" && mode != "bon" && mode != "sc-sweep" && mode != "bins")
    throw UsageError("unknown eval mode '" + mode + "' (pairwise | bon | sc-sweep | bins)");
  const fs::path out = require_string(cfg, "out");
  const auto data_path = require_existing(cfg, "data", "eval");
  const bool planted = mode == "bon" && cfg.at("planted").get<bool>();

  json m = base_manifest("eval", cfg);
  m["seed"] = cfg.at("seed");
  m["inputs"]["data"] = file_entry(data_path);
  EvalReport report;
  report.mode = mode;
  report.scorer = planted ? "oracle-key" : cfg.at("scorer").get<std::string>();
  report.metadata["dataset_hash"] = m["inputs"]["data"]["sha256"];

  ModelState state;
  if (!planted) {
    const auto ckpt = require_existing(cfg, "ckpt", "eval");
    state = load_checkpoint(ckpt);
    m["inputs"]["ckpt"] = file_entry(ckpt);
    report.metadata["checkpoint_hash"] = m["inputs"]["ckpt"]["sha256"];
  }
  const auto pairs = load_preferences(data_path);
  const auto examples = to_eval_examples(pairs);

  if (mode == "pairwise" || mode == "bins") {
    const auto scorer = make_response_scorer(state, scorer_from(cfg));
    if (mode == "pairwise") {
      report.pairwise = pairwise_accuracy(examples, scorer);
      m["metrics"]["average_accuracy"] = report.pairwise->average;
      m["metrics"]["per_category_accuracy"] = report.pairwise->per_category;
    } else {
      report.bins = binned_accuracy(examples, scorer);
      m["metrics"]["bin_accuracy"] = report.bins->accuracy;
    }
  } else if (mode == "bon") {
    auto grid = cfg.at("n_grid").get<std::vector<int>>();
    const int seeds = cfg.at("seeds").get<int>();
    const auto problems = problems_from(pairs);
    const std::uint64_t policy_seed = cfg.at("policy_seed").get<std::uint64_t>();
    const ResponsePolicy reference{cfg.at("reference_error_rate").get<double>(), derive_seed(policy_seed, 0)};
    const ResponsePolicy candidate{cfg.at("candidate_error_rate").get<double>(), derive_seed(policy_seed, 1)};
    const auto scorer = planted ? oracle_bon_scorer() : model_bon_scorer(state, scorer_from(cfg));
    report.bon_curve = bon_winrate(problems, reference, candidate, scorer, grid, seeds);
    report.metadata["response_seeds"] = seeds;
    json curve = json::array();
    for (const auto& p : *report.bon_curve) curve.push_back({{"n", p.n}, {"mean", p.mean}, {"stderr", p.stderr_}});
    m["metrics"]["bon_curve"] = curve;
  } else {
    const auto grid = cfg.at("n_grid").get<std::vector<int>>();
    report.sc_curve =
        sc_sweep(state, examples, grid, cfg.at("temperature").get<double>(), cfg.at("seed").get<std::uint64_t>());
    m["metrics"]["sc_accuracy"] = report.sc_curve->accuracy;
    if (report.sc_curve->greedy_accuracy) m["metrics"]["greedy_accuracy"] = *report.sc_curve->greedy_accuracy;
  }
  emit_report(report, out);
  for (const char* name : {"report.json", "report.txt", "bon.tsv", "sc.tsv"})
    if (fs::exists(out / name)) m["outputs"][name] = file_entry(out / name);
  log << "wrote " << mode << " report to " << out.string() << "\n";
  return m;
}

// ---------------------------------------------------------------- sweep

std::string lambda_tag(double lambda) {
  std::ostringstream os;
  os << lambda;
  return os.str();
}

json cmd_sweep(const json& cfg, std::ostream& log) {
  const fs::path out = require_string(cfg, "out");
  const auto data = require_existing(cfg, "data", "sweep");
  const auto test = require_existing(cfg, "test", "sweep");
  const auto init = require_existing(cfg, "init", "sweep");
  const auto lambdas = cfg.at("lambdas").get<std::vector<double>>();
  const auto policies = cfg.at("policies").get<std::vector<std::string>>();
  const auto seeds = cfg.at("seeds").get<std::vector<std::uint64_t>>();
  for (const auto& p : policies)
    if (p != "on" && p != "off") throw UsageError("policies must be 'on' or 'off'");
  train_config_from(cfg);

  json m = base_manifest("sweep", cfg);
  m["inputs"] = {{"data", file_entry(data)}, {"test", file_entry(test)}, {"init", file_entry(init)}};
  fs::create_directories(out);

  json runs = json::array();
  for (double lambda : lambdas) {
    for (const auto& policy : policies) {
      for (auto seed : seeds) {
        const auto name = "lambda-" + lambda_tag(lambda) + "_" + policy + "_seed-" + std::to_string(seed);
        const auto run_dir = out / "runs" / name;
        json train_cfg = default_config("train");
        train_cfg["stage"] = policy == "on" ? "cloud-on" : "cloud-off";
        train_cfg["data"] = data.string();
        train_cfg["init"] = init.string();
        train_cfg["run_dir"] = run_dir.string();
        train_cfg["train"] = cfg.at("train");
        train_cfg["train"]["lambda"] = lambda;
        train_cfg["train"]["seed"] = seed;
        train_cfg["regen"] = policy == "on";
        train_cfg["regen_temperature"] = cfg.at("regen_temperature");
        train_cfg["regen_seed"] = seed;

        json eval_cfg = default_config("eval");
        eval_cfg["mode"] = "pairwise";
        eval_cfg["ckpt"] = (run_dir / "checkpoint.bin").string();
        eval_cfg["data"] = test.string();
        eval_cfg["scorer"] = cfg.at("scorer");
        eval_cfg["out"] = (run_dir / "reports").string();

        const auto train_manifest = manifest_path("train", train_cfg);
        const auto eval_manifest = manifest_path("eval", eval_cfg);
        const bool done = fs::exists(train_manifest) && fs::exists(eval_manifest) &&
                          verify_manifest(read_json_file(train_manifest)) &&
                          verify_manifest(read_json_file(eval_manifest)) &&
                          read_json_file(train_manifest).at("config") == train_cfg &&
                          read_json_file(eval_manifest).at("config") == eval_cfg;
        if (done) {
          log << "skipping verified run " << name << "\n";
        } else {
          log << "running " << name << "\n";
          execute("train", train_cfg, log);
          execute("eval", eval_cfg, log);
        }
        runs.push_back({{"name", name}, {"train_manifest", train_manifest.string()},
                        {"eval_manifest", eval_manifest.string()}});
      }
    }
  }

  // The summary is recomputed from the per-run manifests, never from in-memory state.
  json rows = json::array();
  for (const auto& r : runs) {
    const auto tm = read_json_file(r.at("train_manifest").get<std::string>());
    const auto em = read_json_file(r.at("eval_manifest").get<std::string>());
    rows.push_back({{"name", r.at("name")},
                    {"stage", tm.at("config").at("stage")},
                    {"lambda", tm.at("config").at("train").at("lambda")},
                    {"seed", tm.at("config").at("train").at("seed")},
                    {"average_accuracy", em.at("metrics").at("average_accuracy")},
                    {"checkpoint_sha256", tm.at("outputs").at("checkpoint").at("sha256")}});
  }
  std::stable_sort(rows.begin(), rows.end(), [](const json& a, const json& b) {
    return a.at("average_accuracy").get<double>() > b.at("average_accuracy").get<double>();
  });
  std::ostringstream tsv;
  tsv << "rank\tname\tstage\tlambda\tseed\taverage_accuracy\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    tsv << i + 1 << "\t" << r["name"].get<std::string>() << "\t" << r["stage"].get<std::string>() << "\t"
        << r["lambda"].get<double>() << "\t" << r["seed"].get<std::uint64_t>() << "\t"
        << r["average_accuracy"].get<double>() << "\n";
  }
  {
    std::ofstream f(out / "summary.tsv", std::ios::binary);
    f << tsv.str();
    if (!f) throw IoFailure("cannot write summary.tsv");
  }
  write_json_file(out / "summary.json", rows);
  log << tsv.str();
  m["runs"] = runs;
  m["outputs"] = {{"summary.tsv", file_entry(out / "summary.tsv")}, {"summary.json", file_entry(out / "summary.json")}};
  m["metrics"] = {{"runs", rows.size()}};
  return m;
}

// ---------------------------------------------------------------- replay

json cmd_replay(const json& cfg, std::ostream& log) {
  const auto path = require_existing(cfg, "manifest", "replay");
  const auto original = read_json_file(path);
  const auto command = original.at("command").get<std::string>();
  if (command == "replay") throw InputError("cannot replay a replay manifest");
  for (const auto& [role, entry] : original.at("inputs").items()) {
    const auto p = entry.at("path").get<std::string>();
    if (!fs::exists(p)) throw MissingInput("replay", p);
    if (sha256_file(p) != entry.at("sha256").get<std::string>())
      throw InputError("input '" + role + "' changed since the manifest was written: " + p);
  }
  json replay_cfg = original.at("config");
  const auto key = output_key(command);
  std::string target = cfg.value("out", "");
  if (target.empty()) target = replay_cfg.at(key).get<std::string>() + ".replay";
  replay_cfg[key] = target;
  const auto rerun = execute(command, replay_cfg, log);

  json m = base_manifest("replay", cfg);
  m["inputs"]["manifest"] = file_entry(path);
  bool identical = true;
  json compared = json::object();
  for (const auto& [role, entry] : original.at("outputs").items()) {
    const auto a = entry.at("sha256").get<std::string>();
    const auto b = rerun.manifest.at("outputs").contains(role)
                       ? rerun.manifest["outputs"][role].at("sha256").get<std::string>()
                       : std::string("missing");
    compared[role] = {{"original", a}, {"replayed", b}, {"identical", a == b}};
    identical = identical && a == b;
    log << (a == b ? "identical " : "DIFFERS   ") << role << "\n";
  }
  m["metrics"] = {{"identical", identical}, {"outputs", compared}};
  m["outputs"] = rerun.manifest.at("outputs");
  if (!identical) {
    throw Error("replay of " + path.string() + " produced different outputs");
  }
  return m;
}

// ---------------------------------------------------------------- flags

/// Command-line options overlay the resolved config only when given explicitly.
class FlagTable {
 public:
  explicit FlagTable(CLI::App* app) : app_(app) {}

  template <typename T>
  void add(const std::string& flag, const std::string& pointer, const std::string& help) {
    auto value = std::make_shared<T>();
    auto* opt = app_->add_option(flag, *value, help);
    setters_.push_back([opt, value, pointer](json& j) {
      if (opt->count() > 0) j[json::json_pointer(pointer)] = *value;
    });
  }

  void add_flag(const std::string& flag, const std::string& pointer, const std::string& help) {
    auto value = std::make_shared<bool>(false);
    auto* opt = app_->add_flag(flag, *value, help);
    setters_.push_back([opt, value, pointer](json& j) {
      if (opt->count() > 0) j[json::json_pointer(pointer)] = *value;
    });
  }

  template <typename Convert>
  void add_converted(const std::string& flag, const std::string& pointer, const std::string& help, Convert convert) {
    auto value = std::make_shared<std::string>();
    auto* opt = app_->add_option(flag, *value, help);
    setters_.push_back([opt, value, pointer, convert](json& j) {
      if (opt->count() > 0) j[json::json_pointer(pointer)] = convert(*value);
    });
  }

  void apply(json& j) const {
    for (const auto& s : setters_) s(j);
  }

 private:
  CLI::App* app_;
  std::vector<std::function<void(json&)>> setters_;
};

void add_train_flags(FlagTable& t) {
  t.add<double>("--lr", "/train/peak_lr", "peak learning rate");
  t.add<int>("--epochs", "/train/epochs", "training epochs");
  t.add<int>("--batch-size", "/train/batch_size", "pairs per minibatch");
  t.add<double>("--lambda", "/train/lambda", "weight of the critique SFT term");
  t.add<std::uint64_t>("--seed", "/train/seed", "training seed");
  t.add<double>("--weight-decay", "/train/weight_decay", "decoupled weight decay");
  t.add<double>("--grad-clip", "/train/grad_clip_norm", "global gradient-norm clip (<= 0 disables)");
  t.add<double>("--warmup", "/train/warmup_fraction", "fraction of steps spent in linear warmup");
}

void add_model_flags(FlagTable& t) {
  t.add<int>("--d-model", "/model/d_model", "model width");
  t.add<int>("--layers", "/model/n_layers", "transformer blocks");
  t.add<int>("--heads", "/model/n_heads", "attention heads");
  t.add<int>("--d-ff", "/model/d_ff", "feed-forward width");
  t.add<int>("--max-seq-len", "/model/max_seq_len", "maximum sequence length");
  t.add<int>("--critique-max-tokens", "/model/critique_max_tokens", "critique generation cap");
  t.add<std::uint64_t>("--init-seed", "/init_seed", "seed for fresh parameter initialization");
}

json merged(const std::string& command, const std::string& config_file, const FlagTable& flags) {
  json cfg = default_config(command);
  if (!config_file.empty()) {
    const auto file = read_json_file(config_file);
    if (!file.is_object()) throw InputError("config file must hold a JSON object");
    cfg.merge_patch(file);
  }
  flags.apply(cfg);
  return cfg;
}

}  // namespace

json default_config(const std::string& command) {
  if (command == "build-data")
    return json{{"pairs", 2000}, {"seed", 1}, {"error_rate", 0.25}, {"difficulty_mix", {1.0, 1.0, 1.0, 1.0}},
                {"out", ""}};
  if (command == "train")
    return json{{"stage", "sft"},     {"data", ""},       {"init", ""},
                {"run_dir", ""},      {"init_seed", 0},   {"model", ModelConfig{}},
                {"train", TrainConfig{}}, {"regen", false}, {"regen_temperature", 1.0},
                {"regen_seed", 0}};
  if (command == "eval")
    return json{{"mode", "pairwise"},
                {"ckpt", ""},
                {"data", ""},
                {"scorer", "cloud-greedy"},
                {"sc_n", 16},
                {"temperature", kSelfConsistencyTemperature},
                {"seed", 0},
                {"n_grid", json::array()},
                {"seeds", 4},
                {"planted", false},
                {"reference_error_rate", 0.25},
                {"candidate_error_rate", 0.25},
                {"policy_seed", 0},
                {"out", ""}};
  if (command == "sweep")
    return json{{"data", ""},
                {"test", ""},
                {"init", ""},
                {"lambdas", {0.75, 1.0, 1.25}},
                {"policies", {"on", "off"}},
                {"seeds", {0, 1}},
                {"train", TrainConfig{}},
                {"regen_temperature", 1.0},
                {"scorer", "cloud-greedy"},
                {"out", ""}};
  if (command == "regen") return json{{"ckpt", ""}, {"data", ""}, {"temperature", 1.0}, {"seed", 0}, {"out", ""}};
  if (command == "replay") return json{{"manifest", ""}, {"out", ""}};
  throw UsageError("unknown command '" + command + "'");
}

std::string output_key(const std::string& command) {
  if (command == "train") return "run_dir";
  if (command == "replay") return "out";
  default_config(command);
  return "out";
}

fs::path manifest_path(const std::string& command, const json& cfg) {
  if (command == "build-data" || command == "regen")
    return fs::path(cfg.at("out").get<std::string>() + ".manifest.json");
  if (command == "train") return fs::path(cfg.at("run_dir").get<std::string>()) / "manifest.json";
  if (command == "replay") {
    const std::string out = cfg.value("out", "");
    if (!out.empty()) return fs::path(out + ".replay-manifest.json");
    return fs::path(cfg.at("manifest").get<std::string>() + ".replay.json");
  }
  return fs::path(cfg.at("out").get<std::string>()) / "manifest.json";
}

CommandResult execute(const std::string& command, const json& config, std::ostream& log) {
  const Clock clock;
  log << "resolved config (" << command << "): " << config.dump() << "\n";
  json m;
  if (command == "build-data") {
    m = cmd_build_data(config, log);
  } else if (command == "train") {
    m = cmd_train(config, log);
  } else if (command == "eval") {
    m = cmd_eval(config, log);
  } else if (command == "sweep") {
    m = cmd_sweep(config, log);
  } else if (command == "regen") {
    m = cmd_regen(config, log);
  } else if (command == "replay") {
    m = cmd_replay(config, log);
  } else {
    throw UsageError("unknown command '" + command + "'");
  }
  m["wall_time_seconds"] = clock.seconds();
  CommandResult result{m, manifest_path(command, config)};
  write_json_file(result.manifest_path, m);
  return result;
}

bool verify_manifest(const json& manifest) {
  if (!manifest.contains("outputs")) return false;
  for (const auto& [role, entry] : manifest.at("outputs").items()) {
    const fs::path p = entry.at("path").get<std::string>();
    if (!fs::exists(p) || sha256_file(p) != entry.at("sha256").get<std::string>()) return false;
  }
  return true;
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoFailure("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw InputError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

std::vector<int> parse_int_grid(const std::string& text) {
  auto to_int = [&](std::string_view s) {
    int v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || s.empty())
      throw UsageError("bad integer grid '" + text + "'");
    return v;
  };
  std::vector<int> out;
  if (const auto dots = text.find(".."); dots != std::string::npos) {
    const int lo = to_int(std::string_view(text).substr(0, dots));
    const int hi = to_int(std::string_view(text).substr(dots + 2));
    if (lo > hi) throw UsageError("empty range '" + text + "'");
    for (int v = lo; v <= hi; ++v) out.push_back(v);
    return out;
  }
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) out.push_back(to_int(item));
  if (out.empty()) throw UsageError("empty grid");
  return out;
}

std::vector<double> parse_double_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size()) throw UsageError("bad number '" + item + "' in '" + text + "'");
    out.push_back(v);
  }
  if (out.empty()) throw UsageError("empty list");
  return out;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Critique-out-loud reward models on a synthetic arithmetic corpus"};
  app.name("cloudrm");
  app.require_subcommand(1);
  std::string config_file;
  app.add_option("--config", config_file, "JSON config file (flags override it, it overrides defaults)");

  std::map<std::string, std::unique_ptr<FlagTable>> tables;
  auto sub = [&](const std::string& name, const std::string& help) {
    auto* s = app.add_subcommand(name, help);
    s->add_option("--config", config_file, "JSON config file (flags override it, it overrides defaults)");
    tables[name] = std::make_unique<FlagTable>(s);
    return tables[name].get();
  };

  auto* build = sub("build-data", "generate a critiqued preference corpus");
  build->add<std::size_t>("--pairs", "/pairs", "number of preference pairs");
  build->add<std::uint64_t>("--seed", "/seed", "corpus seed");
  build->add<double>("--error-rate", "/error_rate", "per-step corruption probability");
  build->add_converted("--difficulty-mix", "/difficulty_mix", "four comma-separated weights", parse_double_list);
  build->add<std::string>("--out", "/out", "output JSONL path");

  auto* train = sub("train", "train one stage");
  train->add<std::string>("--stage", "/stage", "sft | cloud-on | cloud-off | classic");
  train->add<std::string>("--data", "/data", "training JSONL");
  train->add<std::string>("--init", "/init", "checkpoint to start from");
  train->add<std::string>("--run-dir", "/run_dir", "output run directory");
  train->add_flag("--regen", "/regen", "cloud-on: regenerate self-critiques from --init first");
  train->add<double>("--regen-temp", "/regen_temperature", "self-critique sampling temperature");
  train->add<std::uint64_t>("--regen-seed", "/regen_seed", "self-critique sampling seed");
  add_train_flags(*train);
  add_model_flags(*train);

  auto* eval = sub("eval", "evaluate a checkpoint");
  eval->add<std::string>("--mode", "/mode", "pairwise | bon | sc-sweep | bins");
  eval->add<std::string>("--ckpt", "/ckpt", "checkpoint path");
  eval->add<std::string>("--data", "/data", "evaluation JSONL");
  eval->add<std::string>("--scorer", "/scorer", "classic | cloud-greedy | cloud-sc");
  eval->add<int>("--sc-n", "/sc_n", "critiques per response for cloud-sc");
  eval->add<double>("--temp", "/temperature", "critique sampling temperature");
  eval->add<std::uint64_t>("--seed", "/seed", "scoring seed");
  eval->add_converted("--n", "/n_grid", "N grid, e.g. 2..16 or 1,2,4,8,16", parse_int_grid);
  eval->add<int>("--seeds", "/seeds", "response seeds for BoN");
  eval->add_flag("--planted", "/planted", "BoN with the oracle key as the reward model");
  eval->add<double>("--reference-error-rate", "/reference_error_rate", "BoN reference policy error rate");
  eval->add<double>("--candidate-error-rate", "/candidate_error_rate", "BoN candidate policy error rate");
  eval->add<std::uint64_t>("--policy-seed", "/policy_seed", "BoN response policy seed");
  eval->add<std::string>("--out", "/out", "report directory");

  auto* sweep = sub("sweep", "lambda x policy x seed grid of CLoud runs");
  sweep->add<std::string>("--data", "/data", "oracle-critique training JSONL");
  sweep->add<std::string>("--test", "/test", "held-out JSONL");
  sweep->add<std::string>("--init", "/init", "critique-finetuned checkpoint");
  sweep->add_converted("--lambdas", "/lambdas", "comma-separated lambda values", parse_double_list);
  sweep->add_converted("--seeds", "/seeds", "training seeds, e.g. 0,1", [](const std::string& s) {
    const auto v = parse_int_grid(s);
    return std::vector<std::uint64_t>(v.begin(), v.end());
  });
  sweep->add<double>("--regen-temp", "/regen_temperature", "self-critique sampling temperature");
  sweep->add<std::string>("--scorer", "/scorer", "held-out scorer");
  sweep->add<std::string>("--out", "/out", "sweep directory");
  add_train_flags(*sweep);

  auto* regen = sub("regen", "replace critiques with the model's own samples");
  regen->add<std::string>("--ckpt", "/ckpt", "checkpoint path");
  regen->add<std::string>("--data", "/data", "oracle-critique JSONL");
  regen->add<double>("--temp", "/temperature", "sampling temperature");
  regen->add<std::uint64_t>("--seed", "/seed", "sampling seed");
  regen->add<std::string>("--out", "/out", "output JSONL path");

  auto* replay = sub("replay", "rerun a command from its manifest and compare output hashes");
  replay->add<std::string>("--manifest", "/manifest", "manifest.json to replay");
  replay->add<std::string>("--out", "/out", "output location for the rerun");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    for (const char* name : kCommands) {
      auto* s = app.get_subcommand(name);
      if (!s->parsed()) continue;
      if (s->get_subcommands().size() > 0 || s->remaining_size() > 0) throw UsageError("unexpected arguments");
      const auto cfg = merged(name, config_file, *tables.at(name));
      const auto result = execute(name, cfg, err);
      out << result.manifest_path.string() << "\n";
      return kExitOk;
    }
    throw UsageError("no command given");
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const InputError& e) {
    err << "input error: " << e.what() << "\n";
    return kExitInput;
  } catch (const json::exception& e) {
    err << "input error: " << e.what() << "\n";
    return kExitInput;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace cloudrm::cli
