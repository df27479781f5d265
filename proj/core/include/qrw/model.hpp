#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "qrw/data.hpp"
#include "qrw/rng.hpp"
#include "qrw/tensor.hpp"
#include "qrw/text.hpp"

namespace qrw {

enum class ModelRole { kForward, kBackward, kQueryToQuery };

std::string to_string(ModelRole role);
ModelRole role_from_string(const std::string& s);

struct ModelConfig {
  std::size_t num_layers = 1;
  std::size_t num_heads = 4;
  std::size_t d_model = 32;
  std::size_t d_ff = 64;
  double dropout = 0.0;
  std::size_t max_len = 16;
  std::size_t vocab_size = 0;

  // Throws Error describing the first violated constraint.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// Pre-norm transformer encoder-decoder with sinusoidal positions and an
// untied output projection. Tensor names:
//   src_embed, tgt_embed                         [V x d]
//   enc.<l>.{ln1,ln2}.{g,b}                      [1 x d]
//   enc.<l>.attn.{wq,wk,wv,wo}                   [d x d]
//   enc.<l>.ff.{w1 [d x f], b1 [1 x f], w2 [f x d], b2 [1 x d]}
//   dec.<l>.{ln1,ln2,ln3}.{g,b}, dec.<l>.self.*, dec.<l>.cross.*, dec.<l>.ff.*
//   enc.ln.{g,b}, dec.ln.{g,b}, out.w [d x V], out.b [1 x V]
template <typename T>
class ModelParameters {
 public:
  struct Attention {
    std::size_t wq, wk, wv, wo;
  };
  struct FeedForward {
    std::size_t w1, b1, w2, b2;
  };
  struct EncoderLayer {
    std::size_t ln1_g, ln1_b, ln2_g, ln2_b;
    Attention attn;
    FeedForward ff;
  };
  struct DecoderLayer {
    std::size_t ln1_g, ln1_b, ln2_g, ln2_b, ln3_g, ln3_b;
    Attention self_attn, cross_attn;
    FeedForward ff;
  };

  // Zero-valued parameters with the layout implied by `config`.
  ModelParameters(const ModelConfig& config, ModelRole role);

  const ModelConfig& config() const { return config_; }
  ModelRole role() const { return role_; }
  void set_role(ModelRole r) { role_ = r; }

  TensorSet<T>& tensors() { return tensors_; }
  const TensorSet<T>& tensors() const { return tensors_; }
  const Matrix<T>& positional() const { return positional_; }

  std::size_t src_embed() const { return src_embed_; }
  std::size_t tgt_embed() const { return tgt_embed_; }
  const std::vector<EncoderLayer>& encoder_layers() const { return enc_; }
  const std::vector<DecoderLayer>& decoder_layers() const { return dec_; }
  std::size_t enc_ln_g() const { return enc_ln_g_; }
  std::size_t enc_ln_b() const { return enc_ln_b_; }
  std::size_t dec_ln_g() const { return dec_ln_g_; }
  std::size_t dec_ln_b() const { return dec_ln_b_; }
  std::size_t out_w() const { return out_w_; }
  std::size_t out_b() const { return out_b_; }

  // Throws NumericError naming the first tensor holding NaN/Inf.
  void check_finite() const;

 private:
  ModelConfig config_;
  ModelRole role_;
  TensorSet<T> tensors_;
  Matrix<T> positional_;
  std::size_t src_embed_, tgt_embed_;
  std::vector<EncoderLayer> enc_;
  std::vector<DecoderLayer> dec_;
  std::size_t enc_ln_g_, enc_ln_b_, dec_ln_g_, dec_ln_b_, out_w_, out_b_;
};

// Xavier-uniform matrices, zero biases, unit layer-norm gains. Deterministic in seed.
template <typename T>
ModelParameters<T> init_params(const ModelConfig& config, std::uint64_t seed,
                               ModelRole role = ModelRole::kForward);

// Throws NumericError for the first gradient tensor holding NaN/Inf.
template <typename T>
void check_finite(const TensorSet<T>& tensors, const char* what);

template <typename T>
struct EncoderState {
  Matrix<T> context;                    // source_len x d_model
  std::vector<std::uint8_t> mask;       // 1 on non-PAD source positions
  std::vector<std::vector<Matrix<T>>> attention;  // [layer][head], when requested
};

// Encodes x (which may carry PAD positions; they are masked as keys).
// `dropout_rng == nullptr` is eval mode.
template <typename T>
EncoderState<T> encode_source(const ModelParameters<T>& params, std::span<const TokenId> x,
                              Rng* dropout_rng = nullptr, bool keep_attention = false);

// Log-distribution of the token following `prefix` (which starts with BOS).
template <typename T>
std::vector<T> decoder_step(const ModelParameters<T>& params, const EncoderState<T>& enc,
                            std::span<const TokenId> prefix);

// Teacher-forced log-distributions: row t is log P(. | BOS y_<t, x) for t = 0..|y|.
template <typename T>
Matrix<T> teacher_forced_log_probs(const ModelParameters<T>& params, std::span<const TokenId> x,
                                   std::span<const TokenId> y);

// log P(y | x) including the EOS step. Trailing PAD in y is ignored.
template <typename T>
T sequence_log_prob(const ModelParameters<T>& params, std::span<const TokenId> x,
                    std::span<const TokenId> y);

// Teacher-forced log P(y|x) with its graph kept alive, so the gradient can
// be released later with a weight that depends on other scores.
template <typename T>
class ScoredSequence {
 public:
  ScoredSequence(const ModelParameters<T>& params, std::span<const TokenId> x,
                 std::span<const TokenId> y, TensorSet<T>& grads, Rng* dropout_rng = nullptr);
  ScoredSequence(ScoredSequence&&) noexcept;
  ScoredSequence& operator=(ScoredSequence&&) noexcept;
  ~ScoredSequence();

  T log_prob() const { return log_prob_; }
  // grads += weight * d log_prob / d params. At most once.
  void backward(T weight);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  T log_prob_ = T(0);
};

// grads += weight * d log P(y|x) / d params. Returns log P(y|x).
template <typename T>
T accumulate_log_prob_grad(const ModelParameters<T>& params, std::span<const TokenId> x,
                           std::span<const TokenId> y, T weight, TensorSet<T>& grads,
                           Rng* dropout_rng = nullptr);

// Mean negative log-likelihood over the batch, summed over tokens within a
// sequence. `grads` is overwritten with the gradient of that loss. Dropout
// streams, when active, derive from (dropout_seed, row index).
template <typename T>
T loss_and_grads(const ModelParameters<T>& params, const Batch& batch, TensorSet<T>& grads,
                 bool train = false, std::uint64_t dropout_seed = 0);

// Total NLL and token count (EOS included) over a batch, eval mode.
template <typename T>
std::pair<double, std::size_t> token_nll(const ModelParameters<T>& params, const Batch& batch);

template <typename T>
struct AttentionMaps {
  // [layer][head], each rows x cols
  std::vector<std::vector<Matrix<T>>> encoder_self;
  std::vector<std::vector<Matrix<T>>> decoder_self;
  std::vector<std::vector<Matrix<T>>> decoder_cross;
};

template <typename T>
AttentionMaps<T> attention_maps(const ModelParameters<T>& params, std::span<const TokenId> x,
                                std::span<const TokenId> y);

// TSV `kind<TAB>layer<TAB>head<TAB>row<TAB>col<TAB>weight`, weight at 6 decimals.
template <typename T>
void write_attention_tsv(std::ostream& out, const AttentionMaps<T>& maps);
AttentionMaps<double> read_attention_tsv(std::istream& in);

}  // namespace qrw
