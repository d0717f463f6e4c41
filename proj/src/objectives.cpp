#include "cloudrm/objectives.hpp"

#include <algorithm>
#include <set>

namespace cloudrm {

EncodedSequence encode_for_training(const Vocab& vocab, const ModelConfig& cfg, std::string_view prompt,
                                    std::string_view response, std::optional<std::string_view> critique) {
  EncodedSequence es;
  es.seq = encode(vocab, static_cast<std::size_t>(cfg.max_seq_len), prompt, response, critique);
  const auto& tok = es.seq.tokens;
  es.targets.assign(tok.size(), kPad);
  for (std::size_t t = 0; t + 1 < tok.size(); ++t) es.targets[t] = tok[t + 1];
  const Span c = es.seq.critique;
  if (es.seq.has_critique_segment && !c.empty()) {
    es.targets[c.end - 1] = kEos;
    es.sft_positions = {c.begin - 1, c.end};
  } else {
    es.sft_positions = {c.begin, c.begin};
  }
  return es;
}

double bt_loss(std::span<const double> chosen, std::span<const double> rejected) {
  if (chosen.empty() || rejected.empty()) throw EmptyBatch();
  if (chosen.size() != rejected.size()) throw ShapeMismatch("chosen and rejected reward lists differ in length");
  double sum = 0.0;
  for (std::size_t i = 0; i < chosen.size(); ++i) {
    if (!std::isfinite(chosen[i]) || !std::isfinite(rejected[i]))
      throw NonFiniteInput("non-finite reward at pair " + std::to_string(i));
    sum += softplus(-(chosen[i] - rejected[i]));
  }
  return sum / static_cast<double>(chosen.size());
}

namespace {

struct Coordinate {
  std::size_t tensor;
  Eigen::Index index;
};

}  // namespace

GradCheckReport grad_check(const BasicModelState<double>& state, const LossBatch& batch, double lambda,
                           double epsilon, std::size_t min_coordinates, std::uint64_t seed) {
  const auto analytic = loss_and_gradient(state, batch, {true, lambda}, true);
  const auto grad_refs = tensors(analytic.grad);

  std::set<int> used_tokens;
  std::size_t max_len = 0;
  for (const auto& pair : batch.pairs)
    for (const auto* es : {&pair.chosen, &pair.rejected}) {
      used_tokens.insert(es->seq.tokens.begin(), es->seq.tokens.end());
      max_len = std::max(max_len, es->seq.tokens.size());
    }
  const std::vector<int> token_rows(used_tokens.begin(), used_tokens.end());

  BasicModelState<double> probe = state;
  auto refs = tensors(probe.params);
  Rng rng(seed);
  auto pick = [&](std::size_t k) {
    const auto& m = *refs[k].value;
    const auto cols = m.cols();
    Eigen::Index row = 0;
    if (refs[k].name == "token_embedding") {
      row = token_rows[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(token_rows.size()) - 1))];
    } else if (refs[k].name == "position_embedding") {
      row = rng.uniform_int(0, static_cast<std::int64_t>(max_len) - 1);
    } else {
      row = rng.uniform_int(0, m.rows() - 1);
    }
    return Coordinate{k, row * cols + rng.uniform_int(0, cols - 1)};
  };
  std::vector<Coordinate> coords;
  for (std::size_t k = 0; k < refs.size(); ++k)
    for (int rep = 0; rep < 2; ++rep) coords.push_back(pick(k));
  while (coords.size() < min_coordinates)
    coords.push_back(pick(static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(refs.size()) - 1))));

  GradCheckReport report;
  for (const auto& c : coords) {
    double& x = refs[c.tensor].value->data()[c.index];
    const double saved = x;
    const double hi = saved + epsilon;
    const double lo = saved - epsilon;
    x = hi;
    const double up = cloud_loss(probe, batch, lambda).total;
    x = lo;
    const double down = cloud_loss(probe, batch, lambda).total;
    x = saved;
    const double numeric = (up - down) / (hi - lo);
    const double exact = grad_refs[c.tensor].value->data()[c.index];
    if (!std::isfinite(numeric) || !std::isfinite(exact)) throw NonFiniteGradient("non-finite gradient in check");
    const double abs_err = std::abs(exact - numeric);
    const double rel = abs_err / std::max({std::abs(exact), std::abs(numeric), kGradCheckFloor});
    report.max_absolute_error = std::max(report.max_absolute_error, abs_err);
    if (rel > report.max_relative_error || report.worst_coordinate.empty()) {
      report.max_relative_error = std::max(rel, report.max_relative_error);
      report.worst_coordinate = refs[c.tensor].name + "[" + std::to_string(c.index) + "]";
    }
    ++report.per_group[refs[c.tensor].group];
  }
  report.coordinates = coords.size();
  return report;
}

}  // namespace cloudrm
