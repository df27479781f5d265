#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "qrw/data.hpp"
#include "qrw/decode.hpp"
#include "qrw/model.hpp"
#include "qrw/optimizer.hpp"

namespace qrw {

// Which objective a training run optimizes.
enum class TrainTask { kQueryToTitle, kTitleToQuery, kQueryToQuery, kJoint };

std::string to_string(TrainTask task);
TrainTask train_task_from_string(const std::string& s);

struct TrainConfig {
  double lambda = 0.1;             // weight of the cyclic likelihood
  std::size_t batch_size = 32;
  std::size_t max_steps = 2000;    // T
  std::size_t warmup_steps = 1500; // G: steps before the cyclic term switches on
  DecodeConfig decode;             // k, n for sampling synthetic titles
  AdamConfig adam;
  std::size_t noam_warmup = 200;
  std::uint64_t seed = 1;
  std::size_t eval_every = 100;
  std::size_t eval_queries = 64;
  std::size_t checkpoint_every = 0;  // 0: only at the end
  ModelConfig forward_model;
  ModelConfig backward_model;

  // Throws Error on the first violated constraint.
  void validate() const;
};

// Approximate translate-back likelihood of one query over a small title set.
struct CyclicTerm {
  std::vector<TokenSequence> titles;  // distinct, non-empty
  std::vector<double> fwd_lp;         // log P(y_i | x; forward)
  std::vector<double> bwd_lp;         // log P(x | y_i; backward)
  std::vector<double> weights;        // softmax of fwd_lp + bwd_lp
  double value = 0.0;                 // log sum_i exp(fwd_lp_i + bwd_lp_i)

  bool empty() const { return titles.empty(); }
};

// Scores an explicit title set. Duplicates and empty or unscorable titles are dropped;
// an empty result has value -inf and no weights.
template <typename T>
CyclicTerm cyclic_term_over(std::span<const TokenId> x, const ModelParameters<T>& fwd,
                            const ModelParameters<T>& bwd, std::vector<TokenSequence> titles);

// Titles drawn with top_n_sample from the forward model.
template <typename T>
CyclicTerm cyclic_term(std::span<const TokenId> x, const ModelParameters<T>& fwd,
                       const ModelParameters<T>& bwd, const DecodeConfig& cfg);

// grad_f += scale * sum_i w_i d fwd_lp_i / d theta_f, and the same for the
// backward model. The title set is treated as a constant.
template <typename T>
void cyclic_grads(const CyclicTerm& term, std::span<const TokenId> x,
                  const ModelParameters<T>& fwd, const ModelParameters<T>& bwd,
                  TensorSet<T>& grad_f, TensorSet<T>& grad_b, T scale);

struct SeparateLosses {
  double forward = 0.0;   // mean NLL of titles given queries
  double backward = 0.0;  // mean NLL of queries given titles
};

// Independent teacher-forced losses; grads are overwritten.
template <typename T>
SeparateLosses separate_losses(const Batch& batch, const ModelParameters<T>& fwd,
                               const ModelParameters<T>& bwd, TensorSet<T>& grad_f,
                               TensorSet<T>& grad_b, bool train = false,
                               std::uint64_t dropout_seed = 0);

// Swaps source and target of every row.
Batch reverse_batch(const Batch& batch);

struct JointStepResult {
  SeparateLosses losses;
  double cyclic = 0.0;   // mean cyclic log-likelihood over examples with a term
  std::size_t cyclic_examples = 0;
  double min_weight_sum = 1.0;  // smallest sum of weights seen, for simplex checks
  double max_weight_sum = 1.0;
};

// Gradients of the negated combined objective
//   -(1/B) sum_b [log P(y|x) + log P(x|y) + lambda * cyclic(x)]
// for one batch. With `with_cyclic == false` only the separate part is formed.
template <typename T>
JointStepResult combined_grads(const Batch& batch, const ModelParameters<T>& fwd,
                               const ModelParameters<T>& bwd, double lambda, bool with_cyclic,
                               const DecodeConfig& decode, std::uint64_t sample_seed,
                               TensorSet<T>& grad_f, TensorSet<T>& grad_b, bool train = false,
                               std::uint64_t dropout_seed = 0);

struct ReportRow {
  std::size_t step;
  std::string metric;
  double value;
};

struct TrainReport {
  std::vector<ReportRow> rows;

  void add(std::size_t step, std::string metric, double value) {
    rows.push_back({step, std::move(metric), value});
  }
  // Last value logged for `metric`, if any.
  std::optional<double> last(const std::string& metric) const;
  void write_tsv(const std::string& path) const;
  static TrainReport read_tsv(const std::string& path);
};

// Mutable state of a two-model run; `step` counts completed steps.
template <typename T>
struct TrainState {
  ModelParameters<T> forward;
  ModelParameters<T> backward;
  OptimizerState<T> forward_opt;
  OptimizerState<T> backward_opt;
  std::size_t step = 0;
};

template <typename T>
TrainState<T> initial_state(const TrainConfig& cfg);

// Callback run after every completed step with the rows logged so far;
// returning false stops training.
template <typename T>
using StepHook = std::function<bool(const TrainState<T>&, const TrainReport&)>;

// Runs steps state.step+1 .. cfg.max_steps. Steps <= warmup_steps use the
// separate objectives only; later steps add lambda-weighted cyclic gradients.
// All randomness derives from (cfg.seed, step), so a run resumed from a
// saved state reproduces an uninterrupted one.
template <typename T>
TrainReport joint_train(const ClickLogDataset& dataset, const TrainConfig& cfg, TrainState<T>& state,
                        const StepHook<T>& hook = {});

// Single-model training on (source, target) pairs: q2t, t2q or q2q.
template <typename T>
TrainReport train_single(const ClickLogDataset& pairs, const TrainConfig& cfg,
                         ModelParameters<T>& params, OptimizerState<T>& opt, std::size_t& step,
                         const std::function<bool(std::size_t, const TrainReport&)>& hook = {});

// Distinct queries in first-appearance order, at most `limit`.
std::vector<TokenSequence> distinct_queries(const ClickLogDataset& dataset, std::size_t limit);

}  // namespace qrw
