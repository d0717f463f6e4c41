#include "cloudrm/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "cloudrm/hashing.hpp"
#include "cloudrm/sampling.hpp"

namespace cloudrm {

using nlohmann::json;

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw InputError("invalid train config: " + what); };
  if (!(peak_lr > 0.0)) fail("peak_lr must be positive");
  if (epochs < 1) fail("epochs must be >= 1");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (!(lambda >= 0.0)) fail("lambda must be non-negative");
  if (!(warmup_fraction > 0.0 && warmup_fraction < 1.0)) fail("warmup_fraction must lie in (0, 1)");
  if (!(final_lr_fraction > 0.0 && final_lr_fraction < 1.0)) fail("final_lr_fraction must lie in (0, 1)");
  if (!(adam_beta1 > 0.0 && adam_beta1 < 1.0) || !(adam_beta2 > 0.0 && adam_beta2 < 1.0))
    fail("betas must lie in (0, 1)");
  if (!(adam_epsilon > 0.0)) fail("adam_epsilon must be positive");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be non-negative");
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"peak_lr", c.peak_lr},
           {"epochs", c.epochs},
           {"batch_size", c.batch_size},
           {"lambda", c.lambda},
           {"seed", c.seed},
           {"warmup_fraction", c.warmup_fraction},
           {"final_lr_fraction", c.final_lr_fraction},
           {"adam_beta1", c.adam_beta1},
           {"adam_beta2", c.adam_beta2},
           {"adam_epsilon", c.adam_epsilon},
           {"weight_decay", c.weight_decay},
           {"grad_clip_norm", c.grad_clip_norm}};
}

void from_json(const json& j, TrainConfig& c) {
  const TrainConfig d;
  c.peak_lr = j.value("peak_lr", d.peak_lr);
  c.epochs = j.value("epochs", d.epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.lambda = j.value("lambda", d.lambda);
  c.seed = j.value("seed", d.seed);
  c.warmup_fraction = j.value("warmup_fraction", d.warmup_fraction);
  c.final_lr_fraction = j.value("final_lr_fraction", d.final_lr_fraction);
  c.adam_beta1 = j.value("adam_beta1", d.adam_beta1);
  c.adam_beta2 = j.value("adam_beta2", d.adam_beta2);
  c.adam_epsilon = j.value("adam_epsilon", d.adam_epsilon);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.grad_clip_norm = j.value("grad_clip_norm", d.grad_clip_norm);
}

std::string config_hash(const TrainConfig& cfg) { return sha256_hex(json(cfg).dump()); }

double lr_at(double step, double total_steps, const TrainConfig& cfg) {
  const double warmup = cfg.warmup_fraction * total_steps;
  if (step < warmup) return step / warmup;
  const double span = total_steps - warmup;
  const double progress = span > 0.0 ? std::clamp((step - warmup) / span, 0.0, 1.0) : 1.0;
  const double f = cfg.final_lr_fraction;
  return f + (1.0 - f) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

bool TrainableGroups::contains(ParamGroup g) const {
  switch (g) {
    case ParamGroup::kTrunk:
      return trunk;
    case ParamGroup::kLmHead:
      return lm_head;
    case ParamGroup::kRewardHead:
      return reward_head;
  }
  return false;
}

void adamw_update(std::span<float> param, std::span<const float> grad, std::span<float> m, std::span<float> v,
                  const AdamSettings& s) {
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.t));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.t));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = static_cast<double>(grad[i]) * s.grad_scale;
    const double mi = s.beta1 * m[i] + (1.0 - s.beta1) * g;
    const double vi = s.beta2 * v[i] + (1.0 - s.beta2) * g * g;
    m[i] = static_cast<float>(mi);
    v[i] = static_cast<float>(vi);
    const double p = param[i];
    const double update = (mi / c1) / (std::sqrt(vi / c2) + s.epsilon);
    param[i] = static_cast<float>(p - s.lr * (update + s.weight_decay * p));
  }
}

TrainState make_train_state(ModelState model, const TrainConfig& cfg, long total_steps) {
  TrainState ts;
  ts.total_steps = std::max(1L, total_steps);
  ts.m = Parameters<float>::zeros(model.config);
  ts.v = Parameters<float>::zeros(model.config);
  ts.model = std::move(model);
  ts.seed = cfg.seed;
  return ts;
}

TrainState optimizer_step(const TrainState& ts, const Parameters<float>& grad, const TrainConfig& cfg,
                          TrainableGroups groups) {
  if (!all_finite(grad)) throw NonFiniteGradient("optimizer received a non-finite gradient");
  TrainState next = ts;
  auto p = tensors(next.model.params);
  auto m = tensors(next.m);
  auto v = tensors(next.v);
  const auto g = tensors(grad);
  if (g.size() != p.size()) throw ShapeMismatch("gradient does not match parameters");

  double sq = 0.0;
  for (std::size_t k = 0; k < g.size(); ++k) {
    if (!groups.contains(g[k].group)) continue;
    if (g[k].value->rows() != p[k].value->rows() || g[k].value->cols() != p[k].value->cols())
      throw ShapeMismatch("gradient tensor " + g[k].name + " has the wrong shape");
    sq += g[k].value->template cast<double>().squaredNorm();
  }
  const double norm = std::sqrt(sq);
  const double scale = (cfg.grad_clip_norm > 0.0 && norm > cfg.grad_clip_norm) ? cfg.grad_clip_norm / norm : 1.0;

  const AdamSettings s{cfg.peak_lr * lr_at(static_cast<double>(ts.step + 1), static_cast<double>(ts.total_steps), cfg),
                       cfg.adam_beta1,
                       cfg.adam_beta2,
                       cfg.adam_epsilon,
                       cfg.weight_decay,
                       ts.step + 1,
                       scale};
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (!groups.contains(p[k].group)) continue;
    auto n = static_cast<std::size_t>(p[k].value->size());
    adamw_update({p[k].value->data(), n}, {g[k].value->data(), n}, {m[k].value->data(), n}, {v[k].value->data(), n},
                 s);
  }
  ++next.step;
  return next;
}

TrainResult run_training(const ModelState& init, const std::vector<EncodedPair>& data, const TrainConfig& cfg,
                         ObjectiveTerms objective, TrainableGroups groups, const ProgressCallback& progress) {
  cfg.validate();
  if (data.empty()) throw EmptyBatch();
  const auto n = data.size();
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  const long per_epoch = static_cast<long>((n + batch - 1) / batch);
  TrainState ts = make_train_state(init, cfg, per_epoch * cfg.epochs);

  TrainResult result;
  std::vector<std::size_t> order(n);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = n; i-- > 1;) {
      std::swap(order[i], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i)))]);
    }
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += batch) {
      LossBatch lb;
      for (std::size_t i = start; i < std::min(n, start + batch); ++i) lb.pairs.push_back(data[order[i]]);
      const auto lg = loss_and_gradient(ts.model, lb, objective, true);
      ts = optimizer_step(ts, lg.grad, cfg, groups);
      ts.loss_log.push_back(lg.loss.total);
      epoch_loss += lg.loss.total * static_cast<double>(lb.pairs.size());
      if (progress) progress({ts.step, ts.total_steps, epoch, lg.loss.total});
    }
    result.final_epoch_loss = epoch_loss / static_cast<double>(n);
  }
  if (!all_finite(ts.model.params)) throw NonFiniteGradient("training produced non-finite parameters");
  result.model = std::move(ts.model);
  result.loss_log = std::move(ts.loss_log);
  result.steps = ts.step;
  return result;
}

std::vector<EncodedPair> encode_critiqued(const ModelConfig& cfg, std::span<const CritiquedPair> data) {
  const auto& vocab = Vocab::standard();
  std::vector<EncodedPair> out;
  out.reserve(data.size());
  for (const auto& r : data) {
    out.push_back({encode_for_training(vocab, cfg, r.pair.prompt, r.pair.chosen, r.critique_chosen),
                   encode_for_training(vocab, cfg, r.pair.prompt, r.pair.rejected, r.critique_rejected)});
  }
  return out;
}

std::vector<EncodedPair> encode_classic(const ModelConfig& cfg, std::span<const PreferencePair> data) {
  const auto& vocab = Vocab::standard();
  std::vector<EncodedPair> out;
  out.reserve(data.size());
  for (const auto& r : data) {
    out.push_back({encode_for_training(vocab, cfg, r.prompt, r.chosen, std::nullopt),
                   encode_for_training(vocab, cfg, r.prompt, r.rejected, std::nullopt)});
  }
  return out;
}

TrainResult train_sft(const ModelState& base, std::span<const CritiquedPair> data, const TrainConfig& cfg,
                      const ProgressCallback& progress) {
  for (const auto& r : data)
    if (r.source != CritiqueSource::kOracle) throw InputError("critique SFT expects oracle critiques");
  return run_training(base, encode_critiqued(base.config, data), cfg, {false, 1.0}, {true, true, false}, progress);
}

std::vector<CritiquedPair> regen_critiques(const ModelState& state, std::span<const CritiquedPair> data,
                                           double temperature, std::uint64_t seed) {
  // An empty sample cannot serve as an SFT target; redraw from the next child stream.
  constexpr int kMaxRedraws = 8;
  auto draw = [&](const std::string& prompt, const std::string& response, std::uint64_t key) {
    for (int attempt = 0; attempt < kMaxRedraws; ++attempt) {
      auto c = sample_critique(state, prompt, response, temperature, derive_seed(key, static_cast<std::uint64_t>(attempt)));
      if (!c.empty()) return c;
    }
    throw Error("model produced only empty critiques for prompt '" + prompt + "'");
  };
  std::vector<CritiquedPair> out;
  out.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    CritiquedPair r = data[i];
    r.critique_chosen = draw(r.pair.prompt, r.pair.chosen, derive_seed(seed, i, 0));
    r.critique_rejected = draw(r.pair.prompt, r.pair.rejected, derive_seed(seed, i, 1));
    r.source = CritiqueSource::kSelf;
    out.push_back(std::move(r));
  }
  return out;
}

TrainResult train_cloud(const ModelState& init, std::span<const CritiquedPair> data, const TrainConfig& cfg,
                        const ProgressCallback& progress) {
  return run_training(init, encode_critiqued(init.config, data), cfg, {true, cfg.lambda}, {true, true, true},
                      progress);
}

TrainResult train_classic(const ModelState& base, std::span<const PreferencePair> data, const TrainConfig& cfg,
                          const ProgressCallback& progress) {
  return run_training(base, encode_classic(base.config, data), cfg, {true, 0.0}, {true, false, true}, progress);
}

}  // namespace cloudrm
