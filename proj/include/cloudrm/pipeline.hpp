#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cloudrm/corpus.hpp"
#include "cloudrm/model.hpp"
#include "cloudrm/objectives.hpp"

namespace cloudrm {

struct TrainConfig {
  double peak_lr = 3e-4;
  int epochs = 3;
  int batch_size = 32;
  double lambda = 1.0;
  std::uint64_t seed = 0;
  double warmup_fraction = 0.05;
  double final_lr_fraction = 0.01;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.95;
  double adam_epsilon = 1e-10;
  double weight_decay = 0.01;
  double grad_clip_norm = 1.0;  // <= 0 disables clipping

  /// Throws InputError.
  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

void to_json(nlohmann::json& j, const TrainConfig& cfg);
void from_json(const nlohmann::json& j, TrainConfig& cfg);

/// SHA-256 of the canonical JSON of the config.
std::string config_hash(const TrainConfig& cfg);

/// Learning-rate multiplier: linear warmup 0 -> 1 over warmup_fraction of the
/// steps, then cosine decay 1 -> final_lr_fraction at total_steps.
double lr_at(double step, double total_steps, const TrainConfig& cfg);

/// Which parameter groups an optimizer step may touch (gradients and decay).
struct TrainableGroups {
  bool trunk = true;
  bool lm_head = true;
  bool reward_head = true;
  bool contains(ParamGroup g) const;
};

struct AdamSettings {
  double lr;
  double beta1;
  double beta2;
  double epsilon;
  double weight_decay;
  long t;           // 1-based step index for bias correction
  double grad_scale;  // global-norm clipping factor
};

/// Decoupled-weight-decay Adam on one tensor's storage:
/// p <- p - lr * (mhat / (sqrt(vhat) + eps) + weight_decay * p).
void adamw_update(std::span<float> param, std::span<const float> grad, std::span<float> m, std::span<float> v,
                  const AdamSettings& s);

struct TrainState {
  long step = 0;
  long total_steps = 1;
  ModelState model;
  Parameters<float> m;
  Parameters<float> v;
  std::uint64_t seed = 0;
  std::vector<double> loss_log;
};

TrainState make_train_state(ModelState model, const TrainConfig& cfg, long total_steps);

/// Returns the state after one AdamW update with lr = peak_lr * lr_at(step + 1).
/// Throws NonFiniteGradient.
TrainState optimizer_step(const TrainState& ts, const Parameters<float>& grad, const TrainConfig& cfg,
                          TrainableGroups groups = {});

struct TrainProgress {
  long step;
  long total_steps;
  int epoch;
  double loss;
};
using ProgressCallback = std::function<void(const TrainProgress&)>;

struct TrainResult {
  ModelState model;
  std::vector<double> loss_log;
  long steps = 0;
  double final_epoch_loss = 0.0;
};

/// Minibatch loop over a pre-encoded dataset: one seeded permutation per
/// epoch, `objective` terms, optimizer restricted to `groups`.
TrainResult run_training(const ModelState& init, const std::vector<EncodedPair>& data, const TrainConfig& cfg,
                         ObjectiveTerms objective, TrainableGroups groups, const ProgressCallback& progress = {});

/// Pairs encoded with critiques (CLoud layout) or without (classic layout).
std::vector<EncodedPair> encode_critiqued(const ModelConfig& cfg, std::span<const CritiquedPair> data);
std::vector<EncodedPair> encode_classic(const ModelConfig& cfg, std::span<const PreferencePair> data);

/// Stage 1: critique SFT of trunk + LM head on oracle critiques; reward head untouched.
TrainResult train_sft(const ModelState& base, std::span<const CritiquedPair> data, const TrainConfig& cfg,
                      const ProgressCallback& progress = {});

/// Stage 2: both critiques of record i replaced by samples keyed on derive_seed(seed, i, side).
std::vector<CritiquedPair> regen_critiques(const ModelState& state, std::span<const CritiquedPair> data,
                                           double temperature, std::uint64_t seed);

/// Stage 3: cloud_loss over all parameters. Self-critique data is the
/// on-policy path, oracle data the off-policy ablation; the code path is identical.
TrainResult train_cloud(const ModelState& init, std::span<const CritiquedPair> data, const TrainConfig& cfg,
                        const ProgressCallback& progress = {});

/// BT loss on classic-layout sequences; LM head untouched.
TrainResult train_classic(const ModelState& base, std::span<const PreferencePair> data, const TrainConfig& cfg,
                          const ProgressCallback& progress = {});

}  // namespace cloudrm
