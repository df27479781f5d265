#include "qrw/model.hpp"

#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include "qrw/autodiff.hpp"
#include "qrw/error.hpp"

namespace qrw {

std::string to_string(ModelRole role) {
  switch (role) {
    case ModelRole::kForward: return "forward";
    case ModelRole::kBackward: return "backward";
    case ModelRole::kQueryToQuery: return "q2q";
  }
  return "unknown";
}

ModelRole role_from_string(const std::string& s) {
  if (s == "forward") return ModelRole::kForward;
  if (s == "backward") return ModelRole::kBackward;
  if (s == "q2q") return ModelRole::kQueryToQuery;
  throw Error("unknown model role '" + s + "'");
}

void ModelConfig::validate() const {
  if (num_layers < 1) throw Error("model config: num_layers must be >= 1");
  if (num_heads < 1) throw Error("model config: num_heads must be >= 1");
  if (d_model < 1 || d_model % num_heads != 0) {
    throw Error("model config: d_model must be a positive multiple of num_heads");
  }
  if (d_ff < 1) throw Error("model config: d_ff must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw Error("model config: dropout must be in [0, 1)");
  if (max_len < 2) throw Error("model config: max_len must be >= 2");
  if (vocab_size <= static_cast<std::size_t>(kNumSpecials)) {
    throw Error("model config: vocab_size must exceed the 4 special tokens");
  }
}

template <typename T>
ModelParameters<T>::ModelParameters(const ModelConfig& config, ModelRole role)
    : config_(config), role_(role) {
  config_.validate();
  const std::size_t d = config.d_model, f = config.d_ff, V = config.vocab_size;
  auto& t = tensors_;
  auto attention = [&](const std::string& prefix) {
    Attention a;
    a.wq = t.add(prefix + ".wq", d, d);
    a.wk = t.add(prefix + ".wk", d, d);
    a.wv = t.add(prefix + ".wv", d, d);
    a.wo = t.add(prefix + ".wo", d, d);
    return a;
  };
  auto feed_forward = [&](const std::string& prefix) {
    FeedForward ff;
    ff.w1 = t.add(prefix + ".w1", d, f);
    ff.b1 = t.add(prefix + ".b1", 1, f);
    ff.w2 = t.add(prefix + ".w2", f, d);
    ff.b2 = t.add(prefix + ".b2", 1, d);
    return ff;
  };
  src_embed_ = t.add("src_embed", V, d);
  tgt_embed_ = t.add("tgt_embed", V, d);
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    const std::string p = "enc." + std::to_string(l);
    EncoderLayer e;
    e.ln1_g = t.add(p + ".ln1.g", 1, d);
    e.ln1_b = t.add(p + ".ln1.b", 1, d);
    e.attn = attention(p + ".attn");
    e.ln2_g = t.add(p + ".ln2.g", 1, d);
    e.ln2_b = t.add(p + ".ln2.b", 1, d);
    e.ff = feed_forward(p + ".ff");
    enc_.push_back(e);
  }
  enc_ln_g_ = t.add("enc.ln.g", 1, d);
  enc_ln_b_ = t.add("enc.ln.b", 1, d);
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    const std::string p = "dec." + std::to_string(l);
    DecoderLayer e;
    e.ln1_g = t.add(p + ".ln1.g", 1, d);
    e.ln1_b = t.add(p + ".ln1.b", 1, d);
    e.self_attn = attention(p + ".self");
    e.ln2_g = t.add(p + ".ln2.g", 1, d);
    e.ln2_b = t.add(p + ".ln2.b", 1, d);
    e.cross_attn = attention(p + ".cross");
    e.ln3_g = t.add(p + ".ln3.g", 1, d);
    e.ln3_b = t.add(p + ".ln3.b", 1, d);
    e.ff = feed_forward(p + ".ff");
    dec_.push_back(e);
  }
  dec_ln_g_ = t.add("dec.ln.g", 1, d);
  dec_ln_b_ = t.add("dec.ln.b", 1, d);
  out_w_ = t.add("out.w", d, V);
  out_b_ = t.add("out.b", 1, V);

  positional_ = Matrix<T>(config.max_len, d);
  for (std::size_t pos = 0; pos < config.max_len; ++pos) {
    for (std::size_t i = 0; i < d; i += 2) {
      const double angle =
          static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d));
      positional_(pos, i) = static_cast<T>(std::sin(angle));
      if (i + 1 < d) positional_(pos, i + 1) = static_cast<T>(std::cos(angle));
    }
  }
}

template <typename T>
void check_finite(const TensorSet<T>& tensors, const char* what) {
  for (std::size_t i = 0; i < tensors.count(); ++i) {
    for (T v : tensors[i].data) {
      if (!std::isfinite(v)) throw NumericError(tensors.name(i), std::string("non-finite ") + what);
    }
  }
}

template <typename T>
void ModelParameters<T>::check_finite() const {
  qrw::check_finite(tensors_, "parameter");
}

template <typename T>
ModelParameters<T> init_params(const ModelConfig& config, std::uint64_t seed, ModelRole role) {
  ModelParameters<T> params(config, role);
  auto& t = params.tensors();
  Rng rng(stream_seed(seed, {0x1417}));
  for (std::size_t i = 0; i < t.count(); ++i) {
    const std::string& name = t.name(i);
    auto& m = t[i];
    const bool is_gain = name.size() > 2 && name.compare(name.size() - 2, 2, ".g") == 0;
    const bool is_bias = m.rows == 1;
    if (is_gain) {
      m.fill(T(1));
    } else if (is_bias) {
      m.fill(T(0));
    } else {
      const double a = std::sqrt(6.0 / static_cast<double>(m.rows + m.cols));
      for (auto& v : m.data) v = static_cast<T>((2.0 * uniform01(rng) - 1.0) * a);
    }
  }
  return params;
}

namespace {

template <typename T>
class Network {
 public:
  using Var = typename Tape<T>::Var;

  Network(const ModelParameters<T>& params, TensorSet<T>* grads, Rng* dropout_rng)
      : p_(params), grads_(grads), rng_(dropout_rng), tape_(grads != nullptr) {}

  Tape<T>& tape() { return tape_; }

  Var encoder(std::span<const TokenId> x, std::span<const std::uint8_t> mask,
              std::vector<std::vector<Matrix<T>>>* attn) {
    const auto& cfg = p_.config();
    check_ids(x, "source");
    if (x.size() > cfg.max_len) {
      throw Error("source length " + std::to_string(x.size()) + " exceeds max_len " +
                  std::to_string(cfg.max_len));
    }
    Var h = tape_.embed(ref(p_.src_embed()), x, embed_scale(), p_.positional());
    h = drop(h);
    for (const auto& layer : p_.encoder_layers()) {
      Var a = tape_.layer_norm(h, ref(layer.ln1_g), ref(layer.ln1_b));
      std::vector<Matrix<T>>* maps = nullptr;
      if (attn) maps = &attn->emplace_back();
      Var o = attend(layer.attn, a, a, mask, false, maps);
      h = tape_.add(h, drop(o));
      a = tape_.layer_norm(h, ref(layer.ln2_g), ref(layer.ln2_b));
      h = tape_.add(h, drop(feed_forward(layer.ff, a)));
    }
    return tape_.layer_norm(h, ref(p_.enc_ln_g()), ref(p_.enc_ln_b()));
  }

  // Final decoder hidden states for `input` (BOS-prefixed).
  Var decoder(std::span<const TokenId> input, Var memory, std::span<const std::uint8_t> mem_mask,
              std::vector<std::vector<Matrix<T>>>* self_maps,
              std::vector<std::vector<Matrix<T>>>* cross_maps) {
    const auto& cfg = p_.config();
    check_ids(input, "target");
    if (input.size() > cfg.max_len) {
      throw Error("decoder input length " + std::to_string(input.size()) + " exceeds max_len " +
                  std::to_string(cfg.max_len));
    }
    Var g = tape_.embed(ref(p_.tgt_embed()), input, embed_scale(), p_.positional());
    g = drop(g);
    for (const auto& layer : p_.decoder_layers()) {
      Var a = tape_.layer_norm(g, ref(layer.ln1_g), ref(layer.ln1_b));
      std::vector<Matrix<T>>* sm = self_maps ? &self_maps->emplace_back() : nullptr;
      g = tape_.add(g, drop(attend(layer.self_attn, a, a, {}, true, sm)));
      a = tape_.layer_norm(g, ref(layer.ln2_g), ref(layer.ln2_b));
      std::vector<Matrix<T>>* cm = cross_maps ? &cross_maps->emplace_back() : nullptr;
      g = tape_.add(g, drop(attend(layer.cross_attn, a, memory, mem_mask, false, cm)));
      a = tape_.layer_norm(g, ref(layer.ln3_g), ref(layer.ln3_b));
      g = tape_.add(g, drop(feed_forward(layer.ff, a)));
    }
    return tape_.layer_norm(g, ref(p_.dec_ln_g()), ref(p_.dec_ln_b()));
  }

  Var output_log_probs(Var hidden) {
    ParamRef<T> b = ref(p_.out_b());
    return tape_.log_softmax(tape_.linear(hidden, ref(p_.out_w()), &b));
  }

 private:
  ParamRef<T> ref(std::size_t i) {
    return {&p_.tensors()[i], grads_ ? &(*grads_)[i] : nullptr};
  }

  T embed_scale() const { return static_cast<T>(std::sqrt(static_cast<double>(p_.config().d_model))); }

  Var drop(Var v) { return tape_.dropout(v, static_cast<T>(p_.config().dropout), rng_); }

  Var attend(const typename ModelParameters<T>::Attention& w, Var query_src, Var kv_src,
             std::span<const std::uint8_t> mask, bool causal, std::vector<Matrix<T>>* maps) {
    Var q = tape_.linear(query_src, ref(w.wq));
    Var k = tape_.linear(kv_src, ref(w.wk));
    Var v = tape_.linear(kv_src, ref(w.wv));
    Var o = tape_.attention(q, k, v, p_.config().num_heads, mask, causal, maps);
    return tape_.linear(o, ref(w.wo));
  }

  Var feed_forward(const typename ModelParameters<T>::FeedForward& w, Var a) {
    ParamRef<T> b1 = ref(w.b1), b2 = ref(w.b2);
    Var hdn = tape_.relu(tape_.linear(a, ref(w.w1), &b1));
    return tape_.linear(hdn, ref(w.w2), &b2);
  }

  void check_ids(std::span<const TokenId> ids, const char* what) const {
    const auto V = static_cast<TokenId>(p_.config().vocab_size);
    for (auto id : ids) {
      if (id < 0 || id >= V) {
        throw Error(std::string(what) + " token id " + std::to_string(id) +
                    " outside vocabulary of size " + std::to_string(V));
      }
    }
  }

  const ModelParameters<T>& p_;
  TensorSet<T>* grads_;
  Rng* rng_;
  Tape<T> tape_;
};

std::vector<std::uint8_t> pad_mask(std::span<const TokenId> x) {
  std::vector<std::uint8_t> m(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) m[i] = x[i] != kPad;
  return m;
}

std::span<const TokenId> strip_trailing_pad(std::span<const TokenId> y) {
  std::size_t n = y.size();
  while (n > 0 && y[n - 1] == kPad) --n;
  return y.first(n);
}

// BOS y and y EOS.
std::pair<std::vector<TokenId>, std::vector<TokenId>> teacher_io(std::span<const TokenId> y) {
  std::vector<TokenId> in{kBos}, out;
  in.insert(in.end(), y.begin(), y.end());
  out.assign(y.begin(), y.end());
  out.push_back(kEos);
  return {std::move(in), std::move(out)};
}

template <typename T>
void require_nonempty_source(std::span<const TokenId> x) {
  for (auto id : x) {
    if (id != kPad) return;
  }
  throw Error("source sequence has no non-PAD token");
}

}  // namespace

template <typename T>
EncoderState<T> encode_source(const ModelParameters<T>& params, std::span<const TokenId> x,
                              Rng* dropout_rng, bool keep_attention) {
  require_nonempty_source<T>(x);
  Network<T> net(params, nullptr, dropout_rng);
  EncoderState<T> state;
  state.mask = pad_mask(x);
  auto h = net.encoder(x, state.mask, keep_attention ? &state.attention : nullptr);
  state.context = net.tape().value(h);
  return state;
}

template <typename T>
std::vector<T> decoder_step(const ModelParameters<T>& params, const EncoderState<T>& enc,
                            std::span<const TokenId> prefix) {
  if (prefix.empty() || prefix.front() != kBos) throw Error("decoder prefix must start with BOS");
  Network<T> net(params, nullptr, nullptr);
  auto& tape = net.tape();
  auto memory = tape.constant(enc.context);
  auto hidden = net.decoder(prefix, memory, enc.mask, nullptr, nullptr);
  const auto& H = tape.value(hidden);
  Matrix<T> last(1, H.cols);
  auto src = H.row(H.rows - 1);
  std::copy(src.begin(), src.end(), last.data.begin());
  auto lp = net.output_log_probs(tape.constant(std::move(last)));
  return tape.value(lp).data;
}

template <typename T>
Matrix<T> teacher_forced_log_probs(const ModelParameters<T>& params, std::span<const TokenId> x,
                                   std::span<const TokenId> y) {
  require_nonempty_source<T>(x);
  y = strip_trailing_pad(y);
  Network<T> net(params, nullptr, nullptr);
  auto mask = pad_mask(x);
  auto memory = net.encoder(x, mask, nullptr);
  auto [in, out] = teacher_io(y);
  auto lp = net.output_log_probs(net.decoder(in, memory, mask, nullptr, nullptr));
  return net.tape().value(lp);
}

template <typename T>
T sequence_log_prob(const ModelParameters<T>& params, std::span<const TokenId> x,
                    std::span<const TokenId> y) {
  y = strip_trailing_pad(y);
  const auto lp = teacher_forced_log_probs(params, x, y);
  T total = T(0);
  for (std::size_t t = 0; t <= y.size(); ++t) {
    const TokenId gold = t < y.size() ? y[t] : kEos;
    total += lp(t, static_cast<std::size_t>(gold));
  }
  return total;
}

template <typename T>
struct ScoredSequence<T>::Impl {
  Impl(const ModelParameters<T>& params, TensorSet<T>& grads, Rng* rng) : net(params, &grads, rng) {}
  Network<T> net;
  typename Tape<T>::Var total = 0;
  bool released = false;
};

template <typename T>
ScoredSequence<T>::ScoredSequence(const ModelParameters<T>& params, std::span<const TokenId> x,
                                  std::span<const TokenId> y, TensorSet<T>& grads, Rng* dropout_rng) {
  require_nonempty_source<T>(x);
  if (!grads.same_layout(params.tensors())) throw Error("gradient bundle layout mismatch");
  y = strip_trailing_pad(y);
  impl_ = std::make_unique<Impl>(params, grads, dropout_rng);
  auto& net = impl_->net;
  auto mask = pad_mask(x);
  auto memory = net.encoder(x, mask, nullptr);
  auto [in, out] = teacher_io(y);
  auto lp = net.output_log_probs(net.decoder(in, memory, mask, nullptr, nullptr));
  std::vector<T> ones(out.size(), T(1));
  impl_->total = net.tape().pick_sum(lp, out, ones);
  log_prob_ = net.tape().value(impl_->total).data[0];
}

template <typename T>
ScoredSequence<T>::ScoredSequence(ScoredSequence&&) noexcept = default;
template <typename T>
ScoredSequence<T>& ScoredSequence<T>::operator=(ScoredSequence&&) noexcept = default;
template <typename T>
ScoredSequence<T>::~ScoredSequence() = default;

template <typename T>
void ScoredSequence<T>::backward(T weight) {
  if (impl_->released) throw Error("ScoredSequence::backward called twice");
  impl_->released = true;
  if (weight != T(0)) impl_->net.tape().backward(impl_->total, weight);
}

template <typename T>
T accumulate_log_prob_grad(const ModelParameters<T>& params, std::span<const TokenId> x,
                           std::span<const TokenId> y, T weight, TensorSet<T>& grads,
                           Rng* dropout_rng) {
  ScoredSequence<T> scored(params, x, y, grads, dropout_rng);
  scored.backward(weight);
  return scored.log_prob();
}

template <typename T>
T loss_and_grads(const ModelParameters<T>& params, const Batch& batch, TensorSet<T>& grads,
                 bool train, std::uint64_t dropout_seed) {
  if (batch.size() == 0) throw Error("loss_and_grads: empty batch");
  if (!grads.same_layout(params.tensors())) grads = params.tensors().zeros_like();
  grads.zero();
  const T inv_n = T(1) / static_cast<T>(batch.size());
  T loss = T(0);
  for (std::size_t r = 0; r < batch.size(); ++r) {
    auto x = batch.source_row(r);
    auto y = batch.target_row(r);
    Rng rng(stream_seed(dropout_seed, {r}));
    const T lp = accumulate_log_prob_grad(params, std::span<const TokenId>(x),
                                          std::span<const TokenId>(y), -inv_n, grads,
                                          train ? &rng : nullptr);
    loss -= lp * inv_n;
  }
  if (!std::isfinite(loss)) throw NumericError("loss", "non-finite value");
  check_finite(grads, "gradient");
  return loss;
}

template <typename T>
std::pair<double, std::size_t> token_nll(const ModelParameters<T>& params, const Batch& batch) {
  double nll = 0.0;
  std::size_t tokens = 0;
  for (std::size_t r = 0; r < batch.size(); ++r) {
    const auto x = batch.source_row(r);
    const auto target = batch.target_row(r);
    const auto y = strip_trailing_pad(target);
    nll -= static_cast<double>(sequence_log_prob(params, std::span<const TokenId>(x), y));
    tokens += y.size() + 1;
  }
  return {nll, tokens};
}

template <typename T>
AttentionMaps<T> attention_maps(const ModelParameters<T>& params, std::span<const TokenId> x,
                                std::span<const TokenId> y) {
  require_nonempty_source<T>(x);
  y = strip_trailing_pad(y);
  Network<T> net(params, nullptr, nullptr);
  AttentionMaps<T> maps;
  auto mask = pad_mask(x);
  auto memory = net.encoder(x, mask, &maps.encoder_self);
  auto [in, out] = teacher_io(y);
  net.decoder(in, memory, mask, &maps.decoder_self, &maps.decoder_cross);
  return maps;
}

template <typename T>
void write_attention_tsv(std::ostream& out, const AttentionMaps<T>& maps) {
  auto dump = [&](const char* kind, const std::vector<std::vector<Matrix<T>>>& layers) {
    char buf[64];
    for (std::size_t l = 0; l < layers.size(); ++l) {
      for (std::size_t h = 0; h < layers[l].size(); ++h) {
        const auto& m = layers[l][h];
        for (std::size_t r = 0; r < m.rows; ++r) {
          for (std::size_t c = 0; c < m.cols; ++c) {
            std::snprintf(buf, sizeof(buf), "%.6f", static_cast<double>(m(r, c)));
            out << kind << '\t' << l << '\t' << h << '\t' << r << '\t' << c << '\t' << buf << '\n';
          }
        }
      }
    }
  };
  dump("encoder_self", maps.encoder_self);
  dump("decoder_self", maps.decoder_self);
  dump("decoder_cross", maps.decoder_cross);
}

AttentionMaps<double> read_attention_tsv(std::istream& in) {
  struct Cell {
    std::size_t layer, head, row, col;
    double w;
  };
  std::map<std::string, std::vector<Cell>> cells;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string kind;
    Cell c{};
    if (!(ss >> kind >> c.layer >> c.head >> c.row >> c.col >> c.w)) {
      throw ParseError("<attention>", lineno, "malformed attention row");
    }
    cells[kind].push_back(c);
  }
  auto build = [](const std::vector<Cell>& cs) {
    std::vector<std::vector<Matrix<double>>> layers;
    for (const auto& c : cs) {
      if (layers.size() <= c.layer) layers.resize(c.layer + 1);
      auto& heads = layers[c.layer];
      if (heads.size() <= c.head) heads.resize(c.head + 1);
      auto& m = heads[c.head];
      if (m.rows <= c.row || m.cols <= c.col) {
        Matrix<double> grown(std::max(m.rows, c.row + 1), std::max(m.cols, c.col + 1));
        for (std::size_t r = 0; r < m.rows; ++r)
          for (std::size_t k = 0; k < m.cols; ++k) grown(r, k) = m(r, k);
        m = std::move(grown);
      }
      m(c.row, c.col) = c.w;
    }
    return layers;
  };
  AttentionMaps<double> maps;
  maps.encoder_self = build(cells["encoder_self"]);
  maps.decoder_self = build(cells["decoder_self"]);
  maps.decoder_cross = build(cells["decoder_cross"]);
  return maps;
}

#define QRW_INSTANTIATE_MODEL(T)                                                                   \
  template class ModelParameters<T>;                                                               \
  template class ScoredSequence<T>;                                                               \
  template ModelParameters<T> init_params<T>(const ModelConfig&, std::uint64_t, ModelRole);        \
  template void check_finite<T>(const TensorSet<T>&, const char*);                                 \
  template EncoderState<T> encode_source<T>(const ModelParameters<T>&, std::span<const TokenId>,   \
                                            Rng*, bool);                                           \
  template std::vector<T> decoder_step<T>(const ModelParameters<T>&, const EncoderState<T>&,       \
                                          std::span<const TokenId>);                               \
  template Matrix<T> teacher_forced_log_probs<T>(const ModelParameters<T>&,                        \
                                                 std::span<const TokenId>,                         \
                                                 std::span<const TokenId>);                        \
  template T sequence_log_prob<T>(const ModelParameters<T>&, std::span<const TokenId>,             \
                                  std::span<const TokenId>);                                       \
  template T accumulate_log_prob_grad<T>(const ModelParameters<T>&, std::span<const TokenId>,      \
                                         std::span<const TokenId>, T, TensorSet<T>&, Rng*);        \
  template T loss_and_grads<T>(const ModelParameters<T>&, const Batch&, TensorSet<T>&, bool,       \
                               std::uint64_t);                                                     \
  template std::pair<double, std::size_t> token_nll<T>(const ModelParameters<T>&, const Batch&);   \
  template AttentionMaps<T> attention_maps<T>(const ModelParameters<T>&, std::span<const TokenId>, \
                                              std::span<const TokenId>);                           \
  template void write_attention_tsv<T>(std::ostream&, const AttentionMaps<T>&);

QRW_INSTANTIATE_MODEL(float)
QRW_INSTANTIATE_MODEL(double)

}  // namespace qrw
