#include <doctest.h>

#include <cmath>
#include <cstring>
#include <limits>

#include "cloudrm/checkpoint.hpp"
#include "cloudrm/errors.hpp"
#include "cloudrm/pipeline.hpp"

using namespace cloudrm;

namespace {

ModelConfig small_model() {
  ModelConfig c;
  c.d_model = 16;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_ff = 32;
  c.max_seq_len = 128;
  c.critique_max_tokens = 56;
  return c;
}

std::vector<CritiquedPair> small_corpus(std::size_t n, std::uint64_t seed) {
  CorpusConfig cfg;
  cfg.n_pairs = n;
  cfg.seed = seed;
  cfg.difficulty_mix = {1.0, 0.0, 0.0, 0.0};
  return build_dataset(cfg);
}

TrainConfig quick(int epochs = 1) {
  TrainConfig t;
  t.peak_lr = 3e-3;
  t.epochs = epochs;
  t.batch_size = 8;
  t.seed = 5;
  return t;
}

double critique_nll(const ModelState& s, const std::vector<CritiquedPair>& data) {
  LossBatch b;
  b.pairs = encode_critiqued(s.config, data);
  return sft_loss(s, b);
}

bool same(const Eigen::MatrixXf& a, const Eigen::MatrixXf& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && std::memcmp(a.data(), b.data(), sizeof(float) * a.size()) == 0;
}

template <typename Pred>
bool groups_identical(const ModelState& a, const ModelState& b, Pred pred) {
  auto ta = tensors(a.params);
  auto tb = tensors(b.params);
  for (std::size_t k = 0; k < ta.size(); ++k)
    if (pred(ta[k].group) && !same(*ta[k].value, *tb[k].value)) return false;
  return true;
}

}  // namespace

TEST_CASE("learning-rate schedule endpoints and cosine midpoint") {
  TrainConfig cfg;
  const double total = 2000.0;
  CHECK(lr_at(0.0, total, cfg) == 0.0);
  CHECK(std::abs(lr_at(0.05 * total, total, cfg) - 1.0) < 1e-9);
  CHECK(std::abs(lr_at(total, total, cfg) - 0.01) < 1e-9);
  const double warm = 0.05 * total;
  CHECK(std::abs(lr_at(warm + (total - warm) / 2.0, total, cfg) - (1.0 + 0.01) / 2.0) < 1e-9);
  CHECK(std::abs(lr_at(warm / 2.0, total, cfg) - 0.5) < 1e-9);
  for (double s = 1.0; s <= total; s += 1.0) {
    const double m = lr_at(s, total, cfg);
    REQUIRE(m > 0.0);
    REQUIRE(m <= 1.0);
  }
}

TEST_CASE("AdamW update on a single parameter") {
  AdamSettings s{0.1, 0.9, 0.95, 1e-10, 0.0, 1, 1.0};
  std::vector<float> p = {1.0f}, g = {0.5f}, m = {0.0f}, v = {0.0f};
  adamw_update(p, g, m, v, s);
  // m = 0.05, v = 0.0125; bias-corrected mhat = 0.5, vhat = 0.25, step = 0.5 / 0.5 = 1.
  CHECK(m[0] == doctest::Approx(0.05));
  CHECK(v[0] == doctest::Approx(0.0125));
  CHECK(p[0] == doctest::Approx(0.9).epsilon(1e-7));

  s.t = 2;
  g[0] = -0.25f;
  const double m2 = 0.9 * 0.05 + 0.1 * -0.25;
  const double v2 = 0.95 * 0.0125 + 0.05 * 0.0625;
  const double expected = 0.9 - 0.1 * (m2 / (1 - 0.81)) / (std::sqrt(v2 / (1 - 0.9025)) + 1e-10);
  adamw_update(p, g, m, v, s);
  CHECK(p[0] == doctest::Approx(expected).epsilon(1e-6));
}

TEST_CASE("decoupled weight decay and zero-gradient no-op") {
  std::vector<float> p = {0.75f, -2.5f, 3.0f}, g(3, 0.0f), m(3, 0.0f), v(3, 0.0f);
  const auto before = p;
  adamw_update(p, g, m, v, AdamSettings{0.01, 0.9, 0.95, 1e-10, 0.0, 1, 1.0});
  CHECK(p == before);
  adamw_update(p, g, m, v, AdamSettings{0.01, 0.9, 0.95, 1e-10, 0.1, 2, 1.0});
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double x = before[i];
    CHECK(p[i] == static_cast<float>(x - 0.01 * 0.1 * x));
  }
}

TEST_CASE("optimizer step respects frozen groups and rejects non-finite gradients") {
  const auto model = init_model<float>(small_model(), 1);
  TrainConfig cfg = quick();
  cfg.weight_decay = 0.1;
  const auto ts = make_train_state(model, cfg, 10);
  auto grad = Parameters<float>::zeros(model.config);
  for (auto& t : tensors(grad)) t.value->setConstant(0.01f);
  const auto next = optimizer_step(ts, grad, cfg, TrainableGroups{true, true, false});
  CHECK(next.step == 1);
  CHECK(ts.step == 0);
  CHECK(groups_identical(next.model, model, [](ParamGroup g) { return g == ParamGroup::kRewardHead; }));
  CHECK_FALSE(groups_identical(next.model, model, [](ParamGroup g) { return g == ParamGroup::kTrunk; }));
  grad.lm_bias(0, 3) = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(optimizer_step(ts, grad, cfg), NonFiniteGradient);
}

TEST_CASE("critique SFT learns, leaves the reward head alone and replays") {
  const auto train = small_corpus(96, 2);
  const auto held = small_corpus(32, 3);
  const auto base = init_model<float>(small_model(), 7);
  const auto r1 = train_sft(base, train, quick(2));
  const auto r2 = train_sft(base, train, quick(2));
  CHECK(checkpoint_hash(r1.model) == checkpoint_hash(r2.model));
  CHECK(critique_nll(r1.model, held) < critique_nll(base, held));
  CHECK(groups_identical(r1.model, base, [](ParamGroup g) { return g == ParamGroup::kRewardHead; }));
  CHECK(r1.steps == 2 * 12);
  CHECK(r1.loss_log.size() == static_cast<std::size_t>(r1.steps));

  TrainConfig other = quick(2);
  other.seed = 6;
  CHECK(checkpoint_hash(train_sft(base, train, other).model) != checkpoint_hash(r1.model));
}

TEST_CASE("regenerated critiques replace only the critiques") {
  const auto data = small_corpus(12, 4);
  const auto model = init_model<float>(small_model(), 8);
  const auto self = regen_critiques(model, data, 1.0, 11);
  REQUIRE(self.size() == data.size());
  CHECK(self == regen_critiques(model, data, 1.0, 11));
  std::size_t oracle_markers = 0, self_markers = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    CHECK(self[i].pair == data[i].pair);
    CHECK(self[i].source == CritiqueSource::kSelf);
    const auto problem = parse_problem(data[i].pair.prompt);
    oracle_markers += count_privileged_markers(problem, data[i].critique_rejected);
    self_markers += count_privileged_markers(problem, self[i].critique_rejected);
  }
  CHECK(self_markers < oracle_markers);
}

TEST_CASE("CLoud stage differs between on- and off-policy only in data") {
  const auto oracle = small_corpus(24, 5);
  const auto base = init_model<float>(small_model(), 9);
  const auto self = regen_critiques(base, oracle, 1.0, 12);
  const auto cfg = quick();
  const auto on = train_cloud(base, self, cfg);
  const auto off = train_cloud(base, oracle, cfg);
  CHECK(config_hash(cfg) == config_hash(quick()));
  CHECK(checkpoint_hash(on.model) != checkpoint_hash(off.model));
  CHECK(checkpoint_hash(on.model) == checkpoint_hash(train_cloud(base, self, cfg).model));

  TrainConfig no_sft = cfg;
  no_sft.lambda = 0.0;
  CHECK(std::isfinite(train_cloud(base, oracle, no_sft).final_epoch_loss));
}

TEST_CASE("classic training leaves the LM head untouched") {
  const auto data = small_corpus(24, 6);
  std::vector<PreferencePair> prefs;
  for (const auto& r : data) prefs.push_back(r.pair);
  const auto base = init_model<float>(small_model(), 10);
  const auto out = train_classic(base, prefs, quick());
  CHECK(groups_identical(out.model, base, [](ParamGroup g) { return g == ParamGroup::kLmHead; }));
  CHECK_FALSE(groups_identical(out.model, base, [](ParamGroup g) { return g == ParamGroup::kRewardHead; }));
  CHECK_THROWS_AS(train_classic(base, std::vector<PreferencePair>{}, quick()), EmptyBatch);
}

TEST_CASE("training config validation and hashing") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  nlohmann::json j = cfg;
  CHECK(j.get<TrainConfig>() == cfg);
  TrainConfig bad = cfg;
  bad.adam_beta2 = 1.0;
  CHECK_THROWS_AS(bad.validate(), InputError);
  bad = cfg;
  bad.warmup_fraction = 0.0;
  CHECK_THROWS_AS(bad.validate(), InputError);
  bad = cfg;
  bad.adam_epsilon = 0.0;
  CHECK_THROWS_AS(bad.validate(), InputError);
  TrainConfig changed = cfg;
  changed.lambda = 0.5;
  CHECK(config_hash(changed) != config_hash(cfg));
  CHECK(config_hash(cfg).size() == 64);
}
