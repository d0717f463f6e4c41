#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "cloudrm/errors.hpp"
#include "cloudrm/rng.hpp"
#include "cloudrm/vocab.hpp"

namespace cloudrm {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;
template <typename Scalar>
using ColVector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

struct ModelConfig {
  int vocab_size = Vocab::standard().size();
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 4;
  int d_ff = 256;
  int max_seq_len = 384;
  int critique_max_tokens = 192;
  int parameter_precision = 32;

  int head_dim() const { return d_model / n_heads; }
  /// Throws InputError when the shape is inconsistent.
  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

enum class ParamGroup { kTrunk, kLmHead, kRewardHead };

const char* to_string(ParamGroup group);

template <typename Scalar>
struct BlockParameters {
  Matrix<Scalar> ln1_gain, ln1_bias;
  Matrix<Scalar> wq, bq, wk, bk, wv, bv, wo, bo;
  Matrix<Scalar> ln2_gain, ln2_bias;
  Matrix<Scalar> w1, b1, w2, b2;
};

/// Trunk (embeddings, blocks, final norm), LM head and two-layer reward head.
/// Weights are stored (in, out) so a layer is `x * w + b` on row-per-position activations.
template <typename Scalar>
struct Parameters {
  Matrix<Scalar> token_embedding, position_embedding;
  std::vector<BlockParameters<Scalar>> blocks;
  Matrix<Scalar> final_gain, final_bias;
  Matrix<Scalar> lm_weight, lm_bias;
  Matrix<Scalar> reward_w1, reward_b1, reward_w2, reward_b2;

  static Parameters zeros(const ModelConfig& cfg);

  template <typename To>
  Parameters<To> cast() const;

  std::size_t count() const;
};

/// Calls f(name, group, tensor) for every tensor in checkpoint order.
template <typename P, typename F>
void visit_parameters(P& p, F&& f) {
  f(std::string("token_embedding"), ParamGroup::kTrunk, p.token_embedding);
  f(std::string("position_embedding"), ParamGroup::kTrunk, p.position_embedding);
  for (std::size_t i = 0; i < p.blocks.size(); ++i) {
    const std::string pre = "blocks." + std::to_string(i) + ".";
    auto& b = p.blocks[i];
    f(pre + "ln1_gain", ParamGroup::kTrunk, b.ln1_gain);
    f(pre + "ln1_bias", ParamGroup::kTrunk, b.ln1_bias);
    f(pre + "wq", ParamGroup::kTrunk, b.wq);
    f(pre + "bq", ParamGroup::kTrunk, b.bq);
    f(pre + "wk", ParamGroup::kTrunk, b.wk);
    f(pre + "bk", ParamGroup::kTrunk, b.bk);
    f(pre + "wv", ParamGroup::kTrunk, b.wv);
    f(pre + "bv", ParamGroup::kTrunk, b.bv);
    f(pre + "wo", ParamGroup::kTrunk, b.wo);
    f(pre + "bo", ParamGroup::kTrunk, b.bo);
    f(pre + "ln2_gain", ParamGroup::kTrunk, b.ln2_gain);
    f(pre + "ln2_bias", ParamGroup::kTrunk, b.ln2_bias);
    f(pre + "w1", ParamGroup::kTrunk, b.w1);
    f(pre + "b1", ParamGroup::kTrunk, b.b1);
    f(pre + "w2", ParamGroup::kTrunk, b.w2);
    f(pre + "b2", ParamGroup::kTrunk, b.b2);
  }
  f(std::string("final_gain"), ParamGroup::kTrunk, p.final_gain);
  f(std::string("final_bias"), ParamGroup::kTrunk, p.final_bias);
  f(std::string("lm_weight"), ParamGroup::kLmHead, p.lm_weight);
  f(std::string("lm_bias"), ParamGroup::kLmHead, p.lm_bias);
  f(std::string("reward_w1"), ParamGroup::kRewardHead, p.reward_w1);
  f(std::string("reward_b1"), ParamGroup::kRewardHead, p.reward_b1);
  f(std::string("reward_w2"), ParamGroup::kRewardHead, p.reward_w2);
  f(std::string("reward_b2"), ParamGroup::kRewardHead, p.reward_b2);
}

template <typename M>
struct TensorRef {
  std::string name;
  ParamGroup group;
  M* value;
};

template <typename Scalar>
std::vector<TensorRef<Matrix<Scalar>>> tensors(Parameters<Scalar>& p) {
  std::vector<TensorRef<Matrix<Scalar>>> out;
  visit_parameters(p, [&](const std::string& n, ParamGroup g, Matrix<Scalar>& m) { out.push_back({n, g, &m}); });
  return out;
}

template <typename Scalar>
std::vector<TensorRef<const Matrix<Scalar>>> tensors(const Parameters<Scalar>& p) {
  std::vector<TensorRef<const Matrix<Scalar>>> out;
  visit_parameters(p, [&](const std::string& n, ParamGroup g, const Matrix<Scalar>& m) { out.push_back({n, g, &m}); });
  return out;
}

template <typename Scalar>
Parameters<Scalar> Parameters<Scalar>::zeros(const ModelConfig& cfg) {
  const int d = cfg.d_model;
  auto z = [](int r, int c) { return Matrix<Scalar>::Zero(r, c); };
  Parameters p;
  p.token_embedding = z(cfg.vocab_size, d);
  p.position_embedding = z(cfg.max_seq_len, d);
  p.blocks.resize(static_cast<std::size_t>(cfg.n_layers));
  for (auto& b : p.blocks) {
    b.ln1_gain = z(1, d);
    b.ln1_bias = z(1, d);
    b.wq = z(d, d);
    b.bq = z(1, d);
    b.wk = z(d, d);
    b.bk = z(1, d);
    b.wv = z(d, d);
    b.bv = z(1, d);
    b.wo = z(d, d);
    b.bo = z(1, d);
    b.ln2_gain = z(1, d);
    b.ln2_bias = z(1, d);
    b.w1 = z(d, cfg.d_ff);
    b.b1 = z(1, cfg.d_ff);
    b.w2 = z(cfg.d_ff, d);
    b.b2 = z(1, d);
  }
  p.final_gain = z(1, d);
  p.final_bias = z(1, d);
  p.lm_weight = z(d, cfg.vocab_size);
  p.lm_bias = z(1, cfg.vocab_size);
  p.reward_w1 = z(d, d);
  p.reward_b1 = z(1, d);
  p.reward_w2 = z(d, 1);
  p.reward_b2 = z(1, 1);
  return p;
}

template <typename Scalar>
template <typename To>
Parameters<To> Parameters<Scalar>::cast() const {
  Parameters<To> out;
  out.blocks.resize(blocks.size());
  auto src = tensors(*this);
  auto dst = tensors(out);
  for (std::size_t i = 0; i < src.size(); ++i) *dst[i].value = src[i].value->template cast<To>();
  return out;
}

template <typename Scalar>
std::size_t Parameters<Scalar>::count() const {
  std::size_t n = 0;
  for (const auto& t : tensors(*this)) n += static_cast<std::size_t>(t.value->size());
  return n;
}

inline constexpr const char* kModelVersion = "cloudrm-model/1";

template <typename Scalar>
struct BasicModelState {
  ModelConfig config;
  Parameters<Scalar> params;
  std::string version = kModelVersion;

  template <typename To>
  BasicModelState<To> cast() const {
    return {config, params.template cast<To>(), version};
  }
};

using ModelState = BasicModelState<float>;

/// Seeded initialization: N(0, 0.02) weights, residual projections scaled by
/// 1/sqrt(2 * n_layers), unit norm gains, reward output weights U(-1e-3, 1e-3)
/// with zero bias so untrained rewards start near 0.
template <typename Scalar>
BasicModelState<Scalar> init_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  BasicModelState<Scalar> state{cfg, Parameters<Scalar>::zeros(cfg)};
  Rng rng(seed);
  auto normal = [&](Matrix<Scalar>& m, double std) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(std * rng.normal());
  };
  auto& p = state.params;
  const double resid = 0.02 / std::sqrt(2.0 * cfg.n_layers);
  normal(p.token_embedding, 0.02);
  normal(p.position_embedding, 0.02);
  for (auto& b : p.blocks) {
    b.ln1_gain.setOnes();
    b.ln2_gain.setOnes();
    normal(b.wq, 0.02);
    normal(b.wk, 0.02);
    normal(b.wv, 0.02);
    normal(b.wo, resid);
    normal(b.w1, 0.02);
    normal(b.w2, resid);
  }
  p.final_gain.setOnes();
  normal(p.lm_weight, 0.02);
  normal(p.reward_w1, 1.0 / std::sqrt(static_cast<double>(cfg.d_model)));
  for (Eigen::Index i = 0; i < p.reward_w2.size(); ++i)
    p.reward_w2.data()[i] = static_cast<Scalar>((2.0 * rng.uniform() - 1.0) * 1e-3);
  return state;
}

template <typename Scalar>
bool all_finite(const Parameters<Scalar>& p) {
  for (const auto& t : tensors(p))
    if (!t.value->allFinite()) return false;
  return true;
}

template <typename Scalar>
struct ForwardOutput {
  Matrix<Scalar> lm_logits;  // (T, vocab)
  Matrix<Scalar> hidden;     // (T, d_model), after the final norm
};

namespace detail {

inline constexpr double kLayerNormEps = 1e-5;

template <typename Scalar>
struct LayerNormTape {
  Matrix<Scalar> xhat;
  ColVector<Scalar> rstd;
};

template <typename Scalar>
Matrix<Scalar> layer_norm(const Matrix<Scalar>& x, const Matrix<Scalar>& gain, const Matrix<Scalar>& bias,
                          LayerNormTape<Scalar>* tape) {
  const Eigen::Index n = x.cols();
  ColVector<Scalar> mean = x.rowwise().mean();
  Matrix<Scalar> centered = x.colwise() - mean;
  ColVector<Scalar> var = centered.array().square().rowwise().sum() / static_cast<Scalar>(n);
  ColVector<Scalar> rstd = (var.array() + static_cast<Scalar>(kLayerNormEps)).rsqrt();
  Matrix<Scalar> xhat = centered.array().colwise() * rstd.array();
  Matrix<Scalar> y = (xhat.array().rowwise() * gain.row(0).array()).rowwise() + bias.row(0).array();
  if (tape) {
    tape->xhat = std::move(xhat);
    tape->rstd = std::move(rstd);
  }
  return y;
}

template <typename Scalar>
Matrix<Scalar> layer_norm_backward(const LayerNormTape<Scalar>& tape, const Matrix<Scalar>& gain,
                                   const Matrix<Scalar>& dy, Matrix<Scalar>& dgain, Matrix<Scalar>& dbias) {
  const auto n = static_cast<Scalar>(dy.cols());
  dgain.row(0) += (dy.array() * tape.xhat.array()).colwise().sum().matrix();
  dbias.row(0) += dy.colwise().sum();
  Matrix<Scalar> dxhat = dy.array().rowwise() * gain.row(0).array();
  ColVector<Scalar> mean_dxhat = dxhat.rowwise().sum() / n;
  ColVector<Scalar> mean_dxhat_xhat = (dxhat.array() * tape.xhat.array()).rowwise().sum() / n;
  Matrix<Scalar> dx = dxhat.colwise() - mean_dxhat;
  dx -= (tape.xhat.array().colwise() * mean_dxhat_xhat.array()).matrix();
  return dx.array().colwise() * tape.rstd.array();
}

template <typename Scalar>
Scalar gelu(Scalar x) {
  constexpr Scalar c = static_cast<Scalar>(0.7978845608028654);
  constexpr Scalar k = static_cast<Scalar>(0.044715);
  return static_cast<Scalar>(0.5) * x * (Scalar(1) + std::tanh(c * (x + k * x * x * x)));
}

template <typename Scalar>
Scalar gelu_grad(Scalar x) {
  constexpr Scalar c = static_cast<Scalar>(0.7978845608028654);
  constexpr Scalar k = static_cast<Scalar>(0.044715);
  const Scalar t = std::tanh(c * (x + k * x * x * x));
  return static_cast<Scalar>(0.5) * (Scalar(1) + t) +
         static_cast<Scalar>(0.5) * x * (Scalar(1) - t * t) * c * (Scalar(1) + Scalar(3) * k * x * x);
}

template <typename Scalar>
struct BlockTape {
  LayerNormTape<Scalar> ln1, ln2;
  Matrix<Scalar> a1, q, k, v, attn, a2, pre, act;
  std::vector<Matrix<Scalar>> probs;  // per head, (T, T) lower triangular
};

template <typename Scalar>
struct TrunkTape {
  std::vector<int> tokens;
  std::vector<BlockTape<Scalar>> blocks;
  LayerNormTape<Scalar> final_ln;
  Matrix<Scalar> hidden;
};

/// Row-wise causal softmax of scores in place; entries above the diagonal become 0.
template <typename Scalar>
void causal_softmax(Matrix<Scalar>& s) {
  const Eigen::Index t = s.rows();
  for (Eigen::Index i = 0; i < t; ++i) {
    auto row = s.row(i);
    const Scalar mx = row.head(i + 1).maxCoeff();
    row.head(i + 1) = (row.head(i + 1).array() - mx).exp().matrix();
    row.head(i + 1) /= row.head(i + 1).sum();
    row.tail(t - i - 1).setZero();
  }
}

template <typename Scalar>
void check_tokens(const ModelConfig& cfg, const std::vector<int>& tokens) {
  if (tokens.empty()) throw ShapeMismatch("empty token sequence");
  if (tokens.size() > static_cast<std::size_t>(cfg.max_seq_len))
    throw ShapeMismatch("sequence length " + std::to_string(tokens.size()) + " exceeds max_seq_len");
  for (int id : tokens)
    if (id < 0 || id >= cfg.vocab_size) throw ShapeMismatch("token id " + std::to_string(id) + " out of range");
}

template <typename Scalar>
TrunkTape<Scalar> run_trunk(const BasicModelState<Scalar>& state, const std::vector<int>& tokens,
                            bool keep_tape = true) {
  const auto& cfg = state.config;
  const auto& p = state.params;
  check_tokens<Scalar>(cfg, tokens);
  const auto t = static_cast<Eigen::Index>(tokens.size());
  const int dh = cfg.head_dim();
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));

  TrunkTape<Scalar> tape;
  tape.tokens = tokens;
  Matrix<Scalar> x(t, cfg.d_model);
  for (Eigen::Index i = 0; i < t; ++i)
    x.row(i) = p.token_embedding.row(tokens[static_cast<std::size_t>(i)]) + p.position_embedding.row(i);

  tape.blocks.resize(p.blocks.size());
  for (std::size_t l = 0; l < p.blocks.size(); ++l) {
    const auto& b = p.blocks[l];
    BlockTape<Scalar> bt;
    bt.a1 = layer_norm(x, b.ln1_gain, b.ln1_bias, &bt.ln1);
    bt.q = (bt.a1 * b.wq).rowwise() + b.bq.row(0);
    bt.k = (bt.a1 * b.wk).rowwise() + b.bk.row(0);
    bt.v = (bt.a1 * b.wv).rowwise() + b.bv.row(0);
    bt.attn.resize(t, cfg.d_model);
    bt.probs.resize(static_cast<std::size_t>(cfg.n_heads));
    for (int h = 0; h < cfg.n_heads; ++h) {
      Matrix<Scalar> s = bt.q.middleCols(h * dh, dh) * bt.k.middleCols(h * dh, dh).transpose() * scale;
      causal_softmax(s);
      bt.attn.middleCols(h * dh, dh).noalias() = s * bt.v.middleCols(h * dh, dh);
      bt.probs[static_cast<std::size_t>(h)] = std::move(s);
    }
    x.noalias() += bt.attn * b.wo;
    x.rowwise() += b.bo.row(0);
    bt.a2 = layer_norm(x, b.ln2_gain, b.ln2_bias, &bt.ln2);
    bt.pre = (bt.a2 * b.w1).rowwise() + b.b1.row(0);
    bt.act = bt.pre.unaryExpr([](Scalar v) { return gelu(v); });
    x.noalias() += bt.act * b.w2;
    x.rowwise() += b.b2.row(0);
    if (keep_tape) tape.blocks[l] = std::move(bt);
  }
  tape.hidden = layer_norm(x, p.final_gain, p.final_bias, &tape.final_ln);
  if (!keep_tape) tape.blocks.clear();
  return tape;
}

/// Accumulates parameter gradients of the trunk given dL/d(hidden).
template <typename Scalar>
void backprop_trunk(const BasicModelState<Scalar>& state, const TrunkTape<Scalar>& tape,
                    const Matrix<Scalar>& dhidden, Parameters<Scalar>& grad) {
  const auto& cfg = state.config;
  const auto& p = state.params;
  const int dh = cfg.head_dim();
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));

  Matrix<Scalar> dx = layer_norm_backward(tape.final_ln, p.final_gain, dhidden, grad.final_gain, grad.final_bias);
  for (std::size_t li = p.blocks.size(); li-- > 0;) {
    const auto& b = p.blocks[li];
    const auto& bt = tape.blocks[li];
    auto& g = grad.blocks[li];

    // MLP residual branch.
    g.w2.noalias() += bt.act.transpose() * dx;
    g.b2.row(0) += dx.colwise().sum();
    Matrix<Scalar> dpre = dx * b.w2.transpose();
    dpre = dpre.array() * bt.pre.unaryExpr([](Scalar v) { return gelu_grad(v); }).array();
    g.w1.noalias() += bt.a2.transpose() * dpre;
    g.b1.row(0) += dpre.colwise().sum();
    Matrix<Scalar> da2 = dpre * b.w1.transpose();
    dx += layer_norm_backward(bt.ln2, b.ln2_gain, da2, g.ln2_gain, g.ln2_bias);

    // Attention residual branch.
    g.wo.noalias() += bt.attn.transpose() * dx;
    g.bo.row(0) += dx.colwise().sum();
    Matrix<Scalar> dattn = dx * b.wo.transpose();
    Matrix<Scalar> dq(dattn.rows(), cfg.d_model), dk(dattn.rows(), cfg.d_model), dv(dattn.rows(), cfg.d_model);
    for (int h = 0; h < cfg.n_heads; ++h) {
      const auto& prob = bt.probs[static_cast<std::size_t>(h)];
      const auto dout = dattn.middleCols(h * dh, dh);
      Matrix<Scalar> dprob = dout * bt.v.middleCols(h * dh, dh).transpose();
      dv.middleCols(h * dh, dh).noalias() = prob.transpose() * dout;
      ColVector<Scalar> rowdot = (dprob.array() * prob.array()).rowwise().sum();
      Matrix<Scalar> ds = prob.array() * (dprob.colwise() - rowdot).array();
      dq.middleCols(h * dh, dh).noalias() = ds * bt.k.middleCols(h * dh, dh) * scale;
      dk.middleCols(h * dh, dh).noalias() = ds.transpose() * bt.q.middleCols(h * dh, dh) * scale;
    }
    g.wq.noalias() += bt.a1.transpose() * dq;
    g.wk.noalias() += bt.a1.transpose() * dk;
    g.wv.noalias() += bt.a1.transpose() * dv;
    g.bq.row(0) += dq.colwise().sum();
    g.bk.row(0) += dk.colwise().sum();
    g.bv.row(0) += dv.colwise().sum();
    Matrix<Scalar> da1 = dq * b.wq.transpose();
    da1.noalias() += dk * b.wk.transpose();
    da1.noalias() += dv * b.wv.transpose();
    dx += layer_norm_backward(bt.ln1, b.ln1_gain, da1, g.ln1_gain, g.ln1_bias);
  }
  for (Eigen::Index i = 0; i < dx.rows(); ++i) {
    grad.token_embedding.row(tape.tokens[static_cast<std::size_t>(i)]) += dx.row(i);
    grad.position_embedding.row(i) += dx.row(i);
  }
}

template <typename Scalar>
struct RewardTape {
  Matrix<Scalar> input;  // (1, d)
  Matrix<Scalar> act;    // (1, d)
  Scalar value{};
};

template <typename Scalar>
RewardTape<Scalar> reward_head(const Parameters<Scalar>& p, const Matrix<Scalar>& hidden_row) {
  RewardTape<Scalar> rt;
  rt.input = hidden_row;
  rt.act = ((hidden_row * p.reward_w1).rowwise() + p.reward_b1.row(0)).array().tanh();
  rt.value = (rt.act * p.reward_w2)(0, 0) + p.reward_b2(0, 0);
  return rt;
}

/// Accumulates reward-head gradients and returns dL/d(hidden row).
template <typename Scalar>
Matrix<Scalar> reward_head_backward(const Parameters<Scalar>& p, const RewardTape<Scalar>& rt, Scalar dvalue,
                                    Parameters<Scalar>& grad) {
  grad.reward_w2.noalias() += rt.act.transpose() * dvalue;
  grad.reward_b2(0, 0) += dvalue;
  Matrix<Scalar> dpre = (p.reward_w2.transpose() * dvalue).array() * (Scalar(1) - rt.act.array().square());
  grad.reward_w1.noalias() += rt.input.transpose() * dpre;
  grad.reward_b1 += dpre;
  return dpre * p.reward_w1.transpose();
}

}  // namespace detail

/// Full forward pass over a segmented sequence. Throws ShapeMismatch.
template <typename Scalar>
ForwardOutput<Scalar> forward(const BasicModelState<Scalar>& state, const SegmentedSequence& seq) {
  if (!seq.valid()) throw ShapeMismatch("segmented sequence violates its span invariants");
  auto tape = detail::run_trunk(state, seq.tokens, false);
  ForwardOutput<Scalar> out;
  out.lm_logits = (tape.hidden * state.params.lm_weight).rowwise() + state.params.lm_bias.row(0);
  out.hidden = std::move(tape.hidden);
  return out;
}

/// Reward head applied to the hidden state at the REW position.
template <typename Scalar>
Scalar reward_read(const BasicModelState<Scalar>& state, const ForwardOutput<Scalar>& out,
                   const SegmentedSequence& seq) {
  if (!seq.reward_pos) throw MissingRewardPosition();
  const auto pos = static_cast<Eigen::Index>(*seq.reward_pos);
  if (pos >= out.hidden.rows() || out.hidden.cols() != state.config.d_model)
    throw ShapeMismatch("forward output does not match sequence");
  return detail::reward_head(state.params, Matrix<Scalar>(out.hidden.row(pos))).value;
}

/// Row-wise softmax, accumulated in double.
template <typename Scalar>
Matrix<double> softmax_rows(const Matrix<Scalar>& logits, double temperature = 1.0) {
  Matrix<double> z = logits.template cast<double>() / temperature;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    z.row(i) = (z.row(i).array() - z.row(i).maxCoeff()).exp().matrix();
    z.row(i) /= z.row(i).sum();
  }
  return z;
}

/// Key/value-cached single-position decoder for autoregressive generation.
/// Matches `forward` up to floating-point reassociation.
template <typename Scalar>
class IncrementalDecoder {
 public:
  explicit IncrementalDecoder(const BasicModelState<Scalar>& state) : state_(state) {
    const auto& cfg = state.config;
    keys_.assign(state.params.blocks.size(), Matrix<Scalar>(cfg.max_seq_len, cfg.d_model));
    values_.assign(state.params.blocks.size(), Matrix<Scalar>(cfg.max_seq_len, cfg.d_model));
  }

  std::size_t position() const noexcept { return pos_; }

  /// Feeds one token and returns the LM logits at its position.
  RowVector<Scalar> step(int token) {
    const auto& cfg = state_.config;
    const auto& p = state_.params;
    if (pos_ >= static_cast<std::size_t>(cfg.max_seq_len)) throw SequenceTooLong(pos_ + 1, cfg.max_seq_len);
    if (token < 0 || token >= cfg.vocab_size) throw ShapeMismatch("token id out of range");
    const auto t = static_cast<Eigen::Index>(pos_);
    const int dh = cfg.head_dim();
    const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));

    Matrix<Scalar> x = p.token_embedding.row(token) + p.position_embedding.row(t);
    for (std::size_t l = 0; l < p.blocks.size(); ++l) {
      const auto& b = p.blocks[l];
      Matrix<Scalar> a1 = detail::layer_norm<Scalar>(x, b.ln1_gain, b.ln1_bias, nullptr);
      Matrix<Scalar> q = a1 * b.wq + b.bq;
      keys_[l].row(t) = a1 * b.wk + b.bk;
      values_[l].row(t) = a1 * b.wv + b.bv;
      Matrix<Scalar> attn(1, cfg.d_model);
      for (int h = 0; h < cfg.n_heads; ++h) {
        const auto kh = keys_[l].block(0, h * dh, t + 1, dh);
        const auto vh = values_[l].block(0, h * dh, t + 1, dh);
        RowVector<Scalar> s = (q.middleCols(h * dh, dh) * kh.transpose()) * scale;
        s = (s.array() - s.maxCoeff()).exp();
        s /= s.sum();
        attn.middleCols(h * dh, dh).noalias() = s * vh;
      }
      x.noalias() += attn * b.wo;
      x += b.bo;
      Matrix<Scalar> a2 = detail::layer_norm<Scalar>(x, b.ln2_gain, b.ln2_bias, nullptr);
      Matrix<Scalar> act = (a2 * b.w1 + b.b1).unaryExpr([](Scalar v) { return detail::gelu(v); });
      x.noalias() += act * b.w2;
      x += b.b2;
    }
    Matrix<Scalar> hidden = detail::layer_norm<Scalar>(x, p.final_gain, p.final_bias, nullptr);
    ++pos_;
    return hidden * p.lm_weight + p.lm_bias;
  }

 private:
  const BasicModelState<Scalar>& state_;
  std::vector<Matrix<Scalar>> keys_, values_;
  std::size_t pos_ = 0;
};

}  // namespace cloudrm
