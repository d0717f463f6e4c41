#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cloudrm/model.hpp"

namespace cloudrm {

/// A sequence prepared for teacher forcing. targets[t] is the label predicted
/// at position t; the label after the last critique token is EOS, so the LM
/// learns where critiques end. sft_positions are the positions whose labels
/// are critique tokens (or that closing EOS).
struct EncodedSequence {
  SegmentedSequence seq;
  std::vector<int> targets;
  Span sft_positions;
};

struct EncodedPair {
  EncodedSequence chosen;
  EncodedSequence rejected;
};

struct LossBatch {
  std::vector<EncodedPair> pairs;
};

EncodedSequence encode_for_training(const Vocab& vocab, const ModelConfig& cfg, std::string_view prompt,
                                    std::string_view response, std::optional<std::string_view> critique);

/// total = rm_component + lambda * sft_component.
struct LossValue {
  double total = 0.0;
  double rm_component = 0.0;
  double sft_component = 0.0;
  double lambda = 0.0;
};

/// Numerically stable log(1 + e^x).
inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Mean over pairs of -log sigmoid(r+ - r-), as softplus(-(r+ - r-)).
/// Throws EmptyBatch, ShapeMismatch or NonFiniteInput.
double bt_loss(std::span<const double> chosen, std::span<const double> rejected);

/// Which loss terms contribute. Classic training uses {true, 0} on classic-layout
/// sequences, critique SFT uses {false, 1}, CLoud uses {true, lambda}.
struct ObjectiveTerms {
  bool reward = true;
  double sft_weight = 0.0;
};

template <typename Scalar>
struct LossGradient {
  LossValue loss;
  Parameters<Scalar> grad;
  std::vector<double> chosen_rewards;
  std::vector<double> rejected_rewards;
};

namespace detail {

/// Mean NLL over the sft positions of one sequence; optionally accumulates
/// `weight`-scaled gradients into grad and dhidden.
template <typename Scalar>
double sft_sequence(const BasicModelState<Scalar>& state, const EncodedSequence& es, const Matrix<Scalar>& hidden,
                    double weight, Parameters<Scalar>* grad, Matrix<Scalar>* dhidden) {
  const auto& p = state.params;
  const auto b = static_cast<Eigen::Index>(es.sft_positions.begin);
  const auto n = static_cast<Eigen::Index>(es.sft_positions.size());
  Matrix<Scalar> rows = hidden.middleRows(b, n);
  Matrix<Scalar> logits = (rows * p.lm_weight).rowwise() + p.lm_bias.row(0);
  Matrix<double> probs = softmax_rows(logits);
  double nll = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int target = es.targets[static_cast<std::size_t>(b + i)];
    nll -= std::log(probs(i, target));
  }
  nll /= static_cast<double>(n);
  if (grad) {
    const double w = weight / static_cast<double>(n);
    for (Eigen::Index i = 0; i < n; ++i) probs(i, es.targets[static_cast<std::size_t>(b + i)]) -= 1.0;
    Matrix<Scalar> dlogits = (probs * w).template cast<Scalar>();
    grad->lm_weight.noalias() += rows.transpose() * dlogits;
    grad->lm_bias.row(0) += dlogits.colwise().sum();
    dhidden->middleRows(b, n).noalias() += dlogits * p.lm_weight.transpose();
  }
  return nll;
}

}  // namespace detail

/// Loss value and (when want_grad) parameter gradients of the weighted objective.
/// SFT normalization: per-sequence mean over critique targets, then mean over
/// all 2P sequences (chosen and rejected critiques both contribute).
template <typename Scalar>
LossGradient<Scalar> loss_and_gradient(const BasicModelState<Scalar>& state, const LossBatch& batch,
                                       ObjectiveTerms terms, bool want_grad = true) {
  const auto& pairs = batch.pairs;
  if (pairs.empty()) throw EmptyBatch();
  const bool use_sft = terms.sft_weight > 0.0 || !terms.reward;
  if (use_sft) {
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      if (pairs[i].chosen.sft_positions.empty()) throw EmptyCritiqueSpan(2 * i);
      if (pairs[i].rejected.sft_positions.empty()) throw EmptyCritiqueSpan(2 * i + 1);
    }
  }
  const double n_pairs = static_cast<double>(pairs.size());
  const double n_seqs = 2.0 * n_pairs;

  LossGradient<Scalar> out;
  if (want_grad) out.grad = Parameters<Scalar>::zeros(state.config);
  double rm_sum = 0.0;
  double sft_sum = 0.0;
  for (const auto& pair : pairs) {
    const EncodedSequence* sides[2] = {&pair.chosen, &pair.rejected};
    detail::TrunkTape<Scalar> tapes[2];
    detail::RewardTape<Scalar> rtapes[2];
    Matrix<Scalar> dh[2];
    for (int s = 0; s < 2; ++s) {
      const auto& es = *sides[s];
      tapes[s] = detail::run_trunk(state, es.seq.tokens, want_grad);
      if (want_grad) dh[s] = Matrix<Scalar>::Zero(tapes[s].hidden.rows(), tapes[s].hidden.cols());
      if (terms.reward) {
        if (!es.seq.reward_pos) throw MissingRewardPosition();
        rtapes[s] = detail::reward_head(
            state.params, Matrix<Scalar>(tapes[s].hidden.row(static_cast<Eigen::Index>(*es.seq.reward_pos))));
      }
      if (use_sft) {
        const double w = (terms.reward ? terms.sft_weight : 1.0) / n_seqs;
        sft_sum += detail::sft_sequence(state, es, tapes[s].hidden, w, want_grad ? &out.grad : nullptr,
                                        want_grad ? &dh[s] : nullptr);
      }
    }
    if (terms.reward) {
      const double rc = static_cast<double>(rtapes[0].value);
      const double rr = static_cast<double>(rtapes[1].value);
      out.chosen_rewards.push_back(rc);
      out.rejected_rewards.push_back(rr);
      const double delta = rc - rr;
      rm_sum += softplus(-delta);
      if (want_grad) {
        const double g = sigmoid(-delta) / n_pairs;
        const Scalar dvalue[2] = {static_cast<Scalar>(-g), static_cast<Scalar>(g)};
        for (int s = 0; s < 2; ++s) {
          const auto pos = static_cast<Eigen::Index>(*sides[s]->seq.reward_pos);
          dh[s].row(pos) += detail::reward_head_backward(state.params, rtapes[s], dvalue[s], out.grad);
        }
      }
    }
    if (want_grad)
      for (int s = 0; s < 2; ++s) detail::backprop_trunk(state, tapes[s], dh[s], out.grad);
  }
  out.loss.lambda = terms.reward ? terms.sft_weight : 1.0;
  out.loss.rm_component = terms.reward ? rm_sum / n_pairs : 0.0;
  out.loss.sft_component = use_sft ? sft_sum / n_seqs : 0.0;
  out.loss.total = out.loss.rm_component + out.loss.lambda * out.loss.sft_component;
  if (want_grad && !all_finite(out.grad)) throw NonFiniteGradient("loss gradient is not finite");
  return out;
}

/// Critique SFT loss. Throws EmptyCritiqueSpan.
template <typename Scalar>
double sft_loss(const BasicModelState<Scalar>& state, const LossBatch& batch) {
  return loss_and_gradient(state, batch, {false, 1.0}, false).loss.sft_component;
}

/// Critique-conditioned BT loss plus lambda-weighted critique SFT loss.
template <typename Scalar>
LossValue cloud_loss(const BasicModelState<Scalar>& state, const LossBatch& batch, double lambda) {
  if (!(lambda >= 0.0)) throw InputError("lambda must be non-negative");
  auto lv = loss_and_gradient(state, batch, {true, lambda}, false).loss;
  // lambda = 0 still reports the SFT component for logging.
  if (lambda == 0.0) {
    lv.sft_component = sft_loss(state, batch);
    lv.total = lv.rm_component;
  }
  return lv;
}

/// BT loss on classic-layout sequences (no critique term).
template <typename Scalar>
double classic_loss(const BasicModelState<Scalar>& state, const LossBatch& batch) {
  return loss_and_gradient(state, batch, {true, 0.0}, false).loss.rm_component;
}

struct GradCheckReport {
  double max_relative_error = 0.0;
  double max_absolute_error = 0.0;
  std::size_t coordinates = 0;
  std::map<ParamGroup, std::size_t> per_group;
  std::string worst_coordinate;
};

/// Relative error |a - n| / max(|a|, |n|, floor) between analytic and
/// numerical derivatives; the floor keeps exactly-zero gradients from dividing by zero.
inline constexpr double kGradCheckFloor = 1e-4;

/// Central finite differences of cloud_loss against the analytic gradient at
/// >= min_coordinates coordinates, at least two per tensor. Embedding rows are
/// drawn from tokens and positions the batch actually uses.
GradCheckReport grad_check(const BasicModelState<double>& state, const LossBatch& batch, double lambda,
                           double epsilon, std::size_t min_coordinates = 200, std::uint64_t seed = 0);

}  // namespace cloudrm
