#include "qrw/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "qrw/error.hpp"
#include "qrw/metrics.hpp"
#include "qrw/rewrite.hpp"

namespace qrw {
namespace {

TokenSequence strip_pad(const TokenSequence& s) {
  TokenSequence out;
  for (auto t : s) {
    if (t != kPad) out.push_back(t);
  }
  return out;
}

// Stream tags so that batching, dropout and sampling never share a stream.
constexpr std::uint64_t kBatchStream = 0xb47c;
constexpr std::uint64_t kDropoutStream = 0xd209;
constexpr std::uint64_t kSampleStream = 0x5a3b;
constexpr std::uint64_t kEvalStream = 0xe7a1;
constexpr std::size_t kEvalPairs = 256;

}  // namespace

std::string to_string(TrainTask task) {
  switch (task) {
    case TrainTask::kQueryToTitle: return "q2t";
    case TrainTask::kTitleToQuery: return "t2q";
    case TrainTask::kQueryToQuery: return "q2q";
    case TrainTask::kJoint: return "joint";
  }
  return "unknown";
}

TrainTask train_task_from_string(const std::string& s) {
  if (s == "q2t") return TrainTask::kQueryToTitle;
  if (s == "t2q") return TrainTask::kTitleToQuery;
  if (s == "q2q") return TrainTask::kQueryToQuery;
  if (s == "joint") return TrainTask::kJoint;
  throw Error("unknown training task '" + s + "'");
}

void TrainConfig::validate() const {
  if (!(lambda >= 0.0)) throw Error("train config: lambda must be >= 0");
  if (batch_size < 1) throw Error("train config: batch_size must be >= 1");
  if (warmup_steps > max_steps) throw Error("train config: warmup_steps must be <= max_steps");
  if (eval_every < 1) throw Error("train config: eval_every must be >= 1");
  if (noam_warmup < 1) throw Error("train config: noam_warmup must be >= 1");
  forward_model.validate();
  backward_model.validate();
  if (forward_model.vocab_size != backward_model.vocab_size) {
    throw Error("train config: forward and backward vocab sizes differ");
  }
  decode.validate(forward_model.vocab_size);
  if (decode.max_steps >= backward_model.max_len) {
    throw Error("train config: decode.max_steps must be below the backward model's max_len");
  }
}

template <typename T>
CyclicTerm cyclic_term_over(std::span<const TokenId> x, const ModelParameters<T>& fwd,
                            const ModelParameters<T>& bwd, std::vector<TokenSequence> titles) {
  CyclicTerm term;
  std::set<TokenSequence> seen;
  for (auto& y : titles) {
    if (y.empty() || has_control_token(y) || !seen.insert(y).second) continue;
    term.titles.push_back(std::move(y));
  }
  std::vector<double> joint;
  for (const auto& y : term.titles) {
    term.fwd_lp.push_back(static_cast<double>(sequence_log_prob(fwd, x, std::span<const TokenId>(y))));
    term.bwd_lp.push_back(static_cast<double>(sequence_log_prob(bwd, std::span<const TokenId>(y), x)));
    joint.push_back(term.fwd_lp.back() + term.bwd_lp.back());
  }
  if (joint.empty()) {
    term.value = -std::numeric_limits<double>::infinity();
    return term;
  }
  term.value = log_sum_exp(joint);
  for (double j : joint) term.weights.push_back(std::exp(j - term.value));
  return term;
}

template <typename T>
CyclicTerm cyclic_term(std::span<const TokenId> x, const ModelParameters<T>& fwd,
                       const ModelParameters<T>& bwd, const DecodeConfig& cfg) {
  std::vector<TokenSequence> titles;
  for (const auto& h : top_n_sample(fwd, x, cfg)) titles.push_back(h.content());
  return cyclic_term_over(x, fwd, bwd, std::move(titles));
}

template <typename T>
void cyclic_grads(const CyclicTerm& term, std::span<const TokenId> x,
                  const ModelParameters<T>& fwd, const ModelParameters<T>& bwd,
                  TensorSet<T>& grad_f, TensorSet<T>& grad_b, T scale) {
  for (std::size_t i = 0; i < term.titles.size(); ++i) {
    const T w = scale * static_cast<T>(term.weights[i]);
    std::span<const TokenId> y(term.titles[i]);
    accumulate_log_prob_grad(fwd, x, y, w, grad_f);
    accumulate_log_prob_grad(bwd, y, x, w, grad_b);
  }
}

namespace {

// Samples titles, scores each pair once with live graphs, then releases the
// weighted gradients. Equivalent to cyclic_term followed by cyclic_grads.
template <typename T>
CyclicTerm cyclic_term_and_grads(std::span<const TokenId> x, const ModelParameters<T>& fwd,
                                 const ModelParameters<T>& bwd, const DecodeConfig& cfg,
                                 TensorSet<T>& grad_f, TensorSet<T>& grad_b, T scale) {
  CyclicTerm term;
  std::set<TokenSequence> seen;
  for (const auto& h : top_n_sample(fwd, x, cfg)) {
    auto y = h.content();
    if (y.empty() || has_control_token(y) || !seen.insert(y).second) continue;
    term.titles.push_back(std::move(y));
  }
  if (term.titles.empty()) {
    term.value = -std::numeric_limits<double>::infinity();
    return term;
  }
  std::vector<ScoredSequence<T>> f_scores, b_scores;
  std::vector<double> joint;
  for (const auto& y : term.titles) {
    f_scores.emplace_back(fwd, x, std::span<const TokenId>(y), grad_f);
    b_scores.emplace_back(bwd, std::span<const TokenId>(y), x, grad_b);
    term.fwd_lp.push_back(static_cast<double>(f_scores.back().log_prob()));
    term.bwd_lp.push_back(static_cast<double>(b_scores.back().log_prob()));
    joint.push_back(term.fwd_lp.back() + term.bwd_lp.back());
  }
  term.value = log_sum_exp(joint);
  for (std::size_t i = 0; i < joint.size(); ++i) {
    term.weights.push_back(std::exp(joint[i] - term.value));
    const T w = scale * static_cast<T>(term.weights[i]);
    f_scores[i].backward(w);
    b_scores[i].backward(w);
  }
  return term;
}

}  // namespace

Batch reverse_batch(const Batch& batch) {
  Batch r;
  r.indices = batch.indices;
  r.source_width = batch.target_width;
  r.target_width = batch.source_width;
  r.source = batch.target;
  r.target = batch.source;
  r.source_mask = batch.target_mask;
  r.target_mask = batch.source_mask;
  return r;
}

template <typename T>
SeparateLosses separate_losses(const Batch& batch, const ModelParameters<T>& fwd,
                               const ModelParameters<T>& bwd, TensorSet<T>& grad_f,
                               TensorSet<T>& grad_b, bool train, std::uint64_t dropout_seed) {
  SeparateLosses out;
  out.forward = static_cast<double>(loss_and_grads(fwd, batch, grad_f, train, stream_seed(dropout_seed, {0})));
  out.backward = static_cast<double>(
      loss_and_grads(bwd, reverse_batch(batch), grad_b, train, stream_seed(dropout_seed, {1})));
  return out;
}

template <typename T>
JointStepResult combined_grads(const Batch& batch, const ModelParameters<T>& fwd,
                               const ModelParameters<T>& bwd, double lambda, bool with_cyclic,
                               const DecodeConfig& decode, std::uint64_t sample_seed,
                               TensorSet<T>& grad_f, TensorSet<T>& grad_b, bool train,
                               std::uint64_t dropout_seed) {
  JointStepResult result;
  result.losses = separate_losses(batch, fwd, bwd, grad_f, grad_b, train, dropout_seed);
  if (!with_cyclic || lambda == 0.0) return result;
  const T scale = -static_cast<T>(lambda) / static_cast<T>(batch.size());
  double total = 0.0;
  result.min_weight_sum = std::numeric_limits<double>::infinity();
  result.max_weight_sum = -std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < batch.size(); ++r) {
    const auto x = strip_pad(batch.source_row(r));
    DecodeConfig dc = decode;
    dc.mode = DecodeMode::kTopN;
    dc.rng_seed = stream_seed(sample_seed, {r});
    const auto term = cyclic_term_and_grads(std::span<const TokenId>(x), fwd, bwd, dc, grad_f, grad_b, scale);
    if (term.empty()) continue;
    double wsum = 0.0;
    for (double w : term.weights) wsum += w;
    result.min_weight_sum = std::min(result.min_weight_sum, wsum);
    result.max_weight_sum = std::max(result.max_weight_sum, wsum);
    total += term.value;
    ++result.cyclic_examples;
  }
  if (result.cyclic_examples) result.cyclic = total / static_cast<double>(result.cyclic_examples);
  check_finite(grad_f, "gradient");
  check_finite(grad_b, "gradient");
  return result;
}

std::optional<double> TrainReport::last(const std::string& metric) const {
  for (auto it = rows.rbegin(); it != rows.rend(); ++it) {
    if (it->metric == metric) return it->value;
  }
  return std::nullopt;
}

void TrainReport::write_tsv(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open for writing: " + path);
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.9g", r.value);
    out << r.step << '\t' << r.metric << '\t' << buf << '\n';
  }
  if (!out) throw Error("write failed: " + path);
}

TrainReport TrainReport::read_tsv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open train report: " + path);
  TrainReport report;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    ReportRow row{};
    if (!(ss >> row.step >> row.metric >> row.value)) throw ParseError(path, lineno, "malformed report row");
    report.rows.push_back(std::move(row));
  }
  return report;
}

template <typename T>
TrainState<T> initial_state(const TrainConfig& cfg) {
  cfg.validate();
  TrainState<T> s{init_params<T>(cfg.forward_model, stream_seed(cfg.seed, {1}), ModelRole::kForward),
                  init_params<T>(cfg.backward_model, stream_seed(cfg.seed, {2}), ModelRole::kBackward),
                  {}, {}, 0};
  s.forward_opt = OptimizerState<T>::for_params(s.forward.tensors());
  s.backward_opt = OptimizerState<T>::for_params(s.backward.tensors());
  return s;
}

std::vector<TokenSequence> distinct_queries(const ClickLogDataset& dataset, std::size_t limit) {
  std::vector<TokenSequence> out;
  std::set<TokenSequence> seen;
  for (const auto& p : dataset.pairs) {
    if (out.size() >= limit) break;
    if (seen.insert(p.query).second) out.push_back(p.query);
  }
  return out;
}

namespace {

ClickLogDataset head(const ClickLogDataset& d, std::size_t n) {
  ClickLogDataset out;
  out.pairs.assign(d.pairs.begin(), d.pairs.begin() + static_cast<std::ptrdiff_t>(std::min(n, d.size())));
  return out;
}

}  // namespace

template <typename T>
TrainReport joint_train(const ClickLogDataset& dataset, const TrainConfig& cfg, TrainState<T>& state,
                        const StepHook<T>& hook) {
  cfg.validate();
  if (dataset.empty()) throw Error("joint_train: empty dataset");
  if (!(state.forward.config() == cfg.forward_model) || !(state.backward.config() == cfg.backward_model)) {
    throw Error("joint_train: state does not match the configured model shapes");
  }
  BatchSampler sampler(dataset, cfg.batch_size, stream_seed(cfg.seed, {kBatchStream}));
  const auto eval_set = head(dataset, kEvalPairs);
  const auto eval_queries = distinct_queries(dataset, cfg.eval_queries);
  DecodeConfig eval_decode = cfg.decode;
  eval_decode.mode = DecodeMode::kTopN;
  eval_decode.rng_seed = stream_seed(cfg.seed, {kEvalStream});
  const bool train_mode = cfg.forward_model.dropout > 0.0 || cfg.backward_model.dropout > 0.0;

  TrainReport report;
  auto grad_f = state.forward.tensors().zeros_like();
  auto grad_b = state.backward.tensors().zeros_like();
  for (std::size_t step = state.step + 1; step <= cfg.max_steps; ++step) {
    const Batch batch = sampler.at_step(step - 1);
    const bool joint = step > cfg.warmup_steps;
    const auto res = combined_grads(batch, state.forward, state.backward, cfg.lambda, joint, cfg.decode,
                                    stream_seed(cfg.seed, {kSampleStream, step}), grad_f, grad_b,
                                    train_mode, stream_seed(cfg.seed, {kDropoutStream, step}));
    const double lr_f = noam_lr(step, cfg.forward_model.d_model, cfg.noam_warmup, cfg.adam.lr_scale);
    const double lr_b = noam_lr(step, cfg.backward_model.d_model, cfg.noam_warmup, cfg.adam.lr_scale);
    adam_step(state.forward.tensors(), grad_f, state.forward_opt, lr_f, cfg.adam);
    adam_step(state.backward.tensors(), grad_b, state.backward_opt, lr_b, cfg.adam);
    state.step = step;

    if (step % cfg.eval_every == 0 || step == cfg.max_steps) {
      report.add(step, "loss_forward", res.losses.forward);
      report.add(step, "loss_backward", res.losses.backward);
      if (res.cyclic_examples) report.add(step, "cyclic_log_prob", res.cyclic);
      report.add(step, "lr", lr_f);
      report.add(step, "perplexity_forward", perplexity(eval_set, state.forward, Direction::kForward));
      report.add(step, "perplexity_backward", perplexity(eval_set, state.backward, Direction::kBackward));
      report.add(step, "translate_back_log_prob",
                 translate_back_log_prob<T>(eval_queries, state.forward, state.backward, eval_decode));
      report.add(step, "translate_back_accuracy",
                 translate_back_accuracy<T>(eval_queries, state.forward, state.backward, eval_decode));
    }
    if (hook && !hook(state, report)) break;
  }
  return report;
}

template <typename T>
TrainReport train_single(const ClickLogDataset& pairs, const TrainConfig& cfg,
                         ModelParameters<T>& params, OptimizerState<T>& opt, std::size_t& step,
                         const std::function<bool(std::size_t, const TrainReport&)>& hook) {
  if (pairs.empty()) throw Error("train_single: empty dataset");
  if (opt.m.count() == 0) opt = OptimizerState<T>::for_params(params.tensors());
  BatchSampler sampler(pairs, cfg.batch_size, stream_seed(cfg.seed, {kBatchStream}));
  const auto eval_set = head(pairs, kEvalPairs);
  const bool train_mode = params.config().dropout > 0.0;
  TrainReport report;
  auto grads = params.tensors().zeros_like();
  for (std::size_t s = step + 1; s <= cfg.max_steps; ++s) {
    const Batch batch = sampler.at_step(s - 1);
    const double loss = static_cast<double>(
        loss_and_grads(params, batch, grads, train_mode, stream_seed(cfg.seed, {kDropoutStream, s})));
    const double lr = noam_lr(s, params.config().d_model, cfg.noam_warmup, cfg.adam.lr_scale);
    adam_step(params.tensors(), grads, opt, lr, cfg.adam);
    step = s;
    if (s % cfg.eval_every == 0 || s == cfg.max_steps) {
      report.add(s, "loss", loss);
      report.add(s, "lr", lr);
      report.add(s, "perplexity", perplexity(eval_set, params, Direction::kForward));
    }
    if (hook && !hook(s, report)) break;
  }
  return report;
}

#define QRW_INSTANTIATE_TRAIN(T)                                                                  \
  template CyclicTerm cyclic_term_over<T>(std::span<const TokenId>, const ModelParameters<T>&,    \
                                          const ModelParameters<T>&, std::vector<TokenSequence>); \
  template CyclicTerm cyclic_term<T>(std::span<const TokenId>, const ModelParameters<T>&,         \
                                     const ModelParameters<T>&, const DecodeConfig&);             \
  template void cyclic_grads<T>(const CyclicTerm&, std::span<const TokenId>,                      \
                                const ModelParameters<T>&, const ModelParameters<T>&,             \
                                TensorSet<T>&, TensorSet<T>&, T);                                 \
  template SeparateLosses separate_losses<T>(const Batch&, const ModelParameters<T>&,             \
                                             const ModelParameters<T>&, TensorSet<T>&,            \
                                             TensorSet<T>&, bool, std::uint64_t);                 \
  template JointStepResult combined_grads<T>(const Batch&, const ModelParameters<T>&,             \
                                             const ModelParameters<T>&, double, bool,             \
                                             const DecodeConfig&, std::uint64_t, TensorSet<T>&,   \
                                             TensorSet<T>&, bool, std::uint64_t);                 \
  template TrainState<T> initial_state<T>(const TrainConfig&);                                    \
  template TrainReport joint_train<T>(const ClickLogDataset&, const TrainConfig&, TrainState<T>&, \
                                      const StepHook<T>&);                                        \
  template TrainReport train_single<T>(const ClickLogDataset&, const TrainConfig&,                \
                                       ModelParameters<T>&, OptimizerState<T>&, std::size_t&,     \
                                       const std::function<bool(std::size_t, const TrainReport&)>&);

QRW_INSTANTIATE_TRAIN(float)
QRW_INSTANTIATE_TRAIN(double)

}  // namespace qrw
