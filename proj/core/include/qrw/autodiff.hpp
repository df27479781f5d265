#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "qrw/rng.hpp"
#include "qrw/tensor.hpp"
#include "qrw/text.hpp"

namespace qrw {

// A parameter as seen by the tape: its value and, when recording, the
// accumulator its gradient is added into.
template <typename T>
struct ParamRef {
  const Matrix<T>* value = nullptr;
  Matrix<T>* grad = nullptr;
};

// Reverse-mode tape over a fixed operator set. With `record == false` only
// values are computed; no backward closures or gradient buffers exist.
template <typename T>
class Tape {
 public:
  using Var = std::size_t;

  explicit Tape(bool record) : record_(record) {}

  bool recording() const { return record_; }
  const Matrix<T>& value(Var v) const { return nodes_[v].value; }

  Var constant(Matrix<T> m) { return push(std::move(m)); }

  // scale * table[ids[i]] + positional[i]
  Var embed(ParamRef<T> table, std::span<const TokenId> ids, T scale, const Matrix<T>& positional) {
    const std::size_t d = table.value->cols;
    Matrix<T> out(ids.size(), d);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      auto src = table.value->row(static_cast<std::size_t>(ids[i]));
      auto pos = positional.row(i);
      auto dst = out.row(i);
      for (std::size_t j = 0; j < d; ++j) dst[j] = scale * src[j] + pos[j];
    }
    Var v = push(std::move(out));
    if (record_ && table.grad) {
      std::vector<TokenId> saved(ids.begin(), ids.end());
      on_backward([this, v, table, saved = std::move(saved), scale, d] {
        const auto& g = nodes_[v].grad;
        for (std::size_t i = 0; i < saved.size(); ++i) {
          auto dst = table.grad->row(static_cast<std::size_t>(saved[i]));
          auto src = g.row(i);
          for (std::size_t j = 0; j < d; ++j) dst[j] += scale * src[j];
        }
      });
    }
    return v;
  }

  // x * W (+ b)
  Var linear(Var x, ParamRef<T> w, const ParamRef<T>* b = nullptr) {
    const auto& X = nodes_[x].value;
    const auto& W = *w.value;
    Matrix<T> out(X.rows, W.cols);
    matmul_acc(X, W, out);
    if (b) {
      const auto& B = *b->value;
      for (std::size_t r = 0; r < out.rows; ++r) {
        auto dst = out.row(r);
        for (std::size_t c = 0; c < out.cols; ++c) dst[c] += B.data[c];
      }
    }
    Var v = push(std::move(out));
    if (record_) {
      ParamRef<T> bias = b ? *b : ParamRef<T>{};
      on_backward([this, v, x, w, bias] {
        const auto& G = nodes_[v].grad;
        const auto& X = nodes_[x].value;
        // dX += G W^T
        auto& dX = nodes_[x].grad;
        const auto& W = *w.value;
        for (std::size_t r = 0; r < G.rows; ++r) {
          auto g = G.row(r);
          auto dx = dX.row(r);
          for (std::size_t i = 0; i < W.rows; ++i) {
            auto wr = W.row(i);
            T s = T(0);
            for (std::size_t c = 0; c < W.cols; ++c) s += g[c] * wr[c];
            dx[i] += s;
          }
        }
        // dW += X^T G
        if (w.grad) {
          for (std::size_t r = 0; r < G.rows; ++r) {
            auto g = G.row(r);
            auto xr = X.row(r);
            for (std::size_t i = 0; i < X.cols; ++i) {
              const T xi = xr[i];
              if (xi == T(0)) continue;
              auto dw = w.grad->row(i);
              for (std::size_t c = 0; c < G.cols; ++c) dw[c] += xi * g[c];
            }
          }
        }
        if (bias.grad) {
          for (std::size_t r = 0; r < G.rows; ++r) {
            auto g = G.row(r);
            for (std::size_t c = 0; c < G.cols; ++c) bias.grad->data[c] += g[c];
          }
        }
      });
    }
    return v;
  }

  Var add(Var a, Var b) {
    Matrix<T> out = nodes_[a].value;
    const auto& B = nodes_[b].value;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += B.data[i];
    Var v = push(std::move(out));
    if (record_) {
      on_backward([this, v, a, b] {
        const auto& G = nodes_[v].grad.data;
        auto& da = nodes_[a].grad.data;
        auto& db = nodes_[b].grad.data;
        for (std::size_t i = 0; i < G.size(); ++i) {
          da[i] += G[i];
          db[i] += G[i];
        }
      });
    }
    return v;
  }

  Var layer_norm(Var x, ParamRef<T> gain, ParamRef<T> bias) {
    const auto& X = nodes_[x].value;
    const std::size_t n = X.cols;
    Matrix<T> out(X.rows, n);
    Matrix<T> xhat(X.rows, n);
    std::vector<T> inv_sigma(X.rows);
    for (std::size_t r = 0; r < X.rows; ++r) {
      auto xr = X.row(r);
      T mean = T(0);
      for (auto v : xr) mean += v;
      mean /= static_cast<T>(n);
      T var = T(0);
      for (auto v : xr) var += (v - mean) * (v - mean);
      var /= static_cast<T>(n);
      const T inv = T(1) / std::sqrt(var + kLayerNormEps);
      inv_sigma[r] = inv;
      for (std::size_t c = 0; c < n; ++c) {
        const T h = (xr[c] - mean) * inv;
        xhat(r, c) = h;
        out(r, c) = gain.value->data[c] * h + bias.value->data[c];
      }
    }
    Var v = push(std::move(out));
    if (record_) {
      on_backward([this, v, x, gain, bias, xhat = std::move(xhat), inv_sigma = std::move(inv_sigma), n] {
        const auto& G = nodes_[v].grad;
        auto& dX = nodes_[x].grad;
        std::vector<T> dh(n);
        for (std::size_t r = 0; r < G.rows; ++r) {
          auto g = G.row(r);
          auto h = xhat.row(r);
          T mean_dh = T(0), mean_dh_h = T(0);
          for (std::size_t c = 0; c < n; ++c) {
            dh[c] = g[c] * gain.value->data[c];
            mean_dh += dh[c];
            mean_dh_h += dh[c] * h[c];
            if (gain.grad) gain.grad->data[c] += g[c] * h[c];
            if (bias.grad) bias.grad->data[c] += g[c];
          }
          mean_dh /= static_cast<T>(n);
          mean_dh_h /= static_cast<T>(n);
          auto dx = dX.row(r);
          for (std::size_t c = 0; c < n; ++c) {
            dx[c] += inv_sigma[r] * (dh[c] - mean_dh - h[c] * mean_dh_h);
          }
        }
      });
    }
    return v;
  }

  Var relu(Var x) {
    Matrix<T> out = nodes_[x].value;
    for (auto& e : out.data) e = e > T(0) ? e : T(0);
    Var v = push(std::move(out));
    if (record_) {
      on_backward([this, v, x] {
        const auto& G = nodes_[v].grad.data;
        const auto& Y = nodes_[v].value.data;
        auto& dX = nodes_[x].grad.data;
        for (std::size_t i = 0; i < G.size(); ++i) {
          if (Y[i] > T(0)) dX[i] += G[i];
        }
      });
    }
    return v;
  }

  // Inverted dropout; identity when rng is null or p == 0.
  Var dropout(Var x, T p, Rng* rng) {
    if (!rng || p <= T(0)) return x;
    const T keep_scale = T(1) / (T(1) - p);
    Matrix<T> mask(nodes_[x].value.rows, nodes_[x].value.cols);
    for (auto& m : mask.data) m = uniform01(*rng) < static_cast<double>(p) ? T(0) : keep_scale;
    Matrix<T> out = nodes_[x].value;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= mask.data[i];
    Var v = push(std::move(out));
    if (record_) {
      on_backward([this, v, x, mask = std::move(mask)] {
        const auto& G = nodes_[v].grad.data;
        auto& dX = nodes_[x].grad.data;
        for (std::size_t i = 0; i < G.size(); ++i) dX[i] += G[i] * mask.data[i];
      });
    }
    return v;
  }

  // Multi-head scaled dot-product attention over already-projected q, k, v.
  // key_mask[j] == 0 hides key j; `causal` hides keys j > i from query i.
  // When `probs_out` is given, the per-head weight matrices are appended.
  Var attention(Var q, Var k, Var vv, std::size_t heads, std::span<const std::uint8_t> key_mask,
                bool causal, std::vector<Matrix<T>>* probs_out = nullptr) {
    const auto& Q = nodes_[q].value;
    const auto& K = nodes_[k].value;
    const auto& V = nodes_[vv].value;
    const std::size_t lq = Q.rows, lk = K.rows, d = Q.cols, dh = d / heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    std::vector<Matrix<T>> probs(heads, Matrix<T>(lq, lk));
    Matrix<T> out(lq, d);
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = h * dh;
      auto& P = probs[h];
      for (std::size_t i = 0; i < lq; ++i) {
        T mx = -std::numeric_limits<T>::infinity();
        auto prow = P.row(i);
        for (std::size_t j = 0; j < lk; ++j) {
          if (!visible(key_mask, causal, i, j)) continue;
          T s = T(0);
          for (std::size_t c = 0; c < dh; ++c) s += Q(i, off + c) * K(j, off + c);
          s *= scale;
          prow[j] = s;
          mx = std::max(mx, s);
        }
        T z = T(0);
        for (std::size_t j = 0; j < lk; ++j) {
          if (!visible(key_mask, causal, i, j)) {
            prow[j] = T(0);
            continue;
          }
          prow[j] = std::exp(prow[j] - mx);
          z += prow[j];
        }
        if (z > T(0)) {
          for (std::size_t j = 0; j < lk; ++j) prow[j] /= z;
        }
        for (std::size_t j = 0; j < lk; ++j) {
          const T p = prow[j];
          if (p == T(0)) continue;
          for (std::size_t c = 0; c < dh; ++c) out(i, off + c) += p * V(j, off + c);
        }
      }
    }
    if (probs_out) probs_out->insert(probs_out->end(), probs.begin(), probs.end());
    Var v = push(std::move(out));
    if (record_) {
      on_backward([this, v, q, k, vv, heads, dh, scale, probs = std::move(probs)] {
        const auto& G = nodes_[v].grad;
        const auto& Q = nodes_[q].value;
        const auto& K = nodes_[k].value;
        const auto& V = nodes_[vv].value;
        auto& dQ = nodes_[q].grad;
        auto& dK = nodes_[k].grad;
        auto& dV = nodes_[vv].grad;
        const std::size_t lq = Q.rows, lk = K.rows;
        std::vector<T> dp(lk);
        for (std::size_t h = 0; h < heads; ++h) {
          const std::size_t off = h * dh;
          const auto& P = probs[h];
          for (std::size_t i = 0; i < lq; ++i) {
            T dot = T(0);
            for (std::size_t j = 0; j < lk; ++j) {
              const T p = P(i, j);
              if (p == T(0)) {
                dp[j] = T(0);
                continue;
              }
              T s = T(0);
              for (std::size_t c = 0; c < dh; ++c) {
                s += G(i, off + c) * V(j, off + c);
                dV(j, off + c) += p * G(i, off + c);
              }
              dp[j] = s;
              dot += p * s;
            }
            for (std::size_t j = 0; j < lk; ++j) {
              const T p = P(i, j);
              if (p == T(0)) continue;
              const T ds = p * (dp[j] - dot) * scale;
              for (std::size_t c = 0; c < dh; ++c) {
                dQ(i, off + c) += ds * K(j, off + c);
                dK(j, off + c) += ds * Q(i, off + c);
              }
            }
          }
        }
      });
    }
    return v;
  }

  Var log_softmax(Var x) {
    Matrix<T> out = nodes_[x].value;
    for (std::size_t r = 0; r < out.rows; ++r) {
      auto row = out.row(r);
      const T mx = *std::max_element(row.begin(), row.end());
      T z = T(0);
      for (auto e : row) z += std::exp(e - mx);
      const T lz = mx + std::log(z);
      for (auto& e : row) e -= lz;
    }
    Var v = push(std::move(out));
    if (record_) {
      on_backward([this, v, x] {
        const auto& G = nodes_[v].grad;
        const auto& Y = nodes_[v].value;
        auto& dX = nodes_[x].grad;
        for (std::size_t r = 0; r < G.rows; ++r) {
          auto g = G.row(r);
          T gs = T(0);
          for (auto e : g) gs += e;
          if (gs == T(0) && std::all_of(g.begin(), g.end(), [](T e) { return e == T(0); })) continue;
          auto y = Y.row(r);
          auto dx = dX.row(r);
          for (std::size_t c = 0; c < g.size(); ++c) dx[c] += g[c] - std::exp(y[c]) * gs;
        }
      });
    }
    return v;
  }

  // 1 x 1 result: sum_i weights[i] * x(i, targets[i]).
  Var pick_sum(Var x, std::span<const TokenId> targets, std::span<const T> weights) {
    const auto& X = nodes_[x].value;
    T s = T(0);
    for (std::size_t i = 0; i < targets.size(); ++i) {
      if (weights[i] != T(0)) s += weights[i] * X(i, static_cast<std::size_t>(targets[i]));
    }
    Matrix<T> out(1, 1, s);
    Var v = push(std::move(out));
    if (record_) {
      std::vector<TokenId> t(targets.begin(), targets.end());
      std::vector<T> w(weights.begin(), weights.end());
      on_backward([this, v, x, t = std::move(t), w = std::move(w)] {
        const T g = nodes_[v].grad.data[0];
        auto& dX = nodes_[x].grad;
        for (std::size_t i = 0; i < t.size(); ++i) dX(i, static_cast<std::size_t>(t[i])) += g * w[i];
      });
    }
    return v;
  }

  // Seeds d(out)/d(out) = seed and runs every recorded closure in reverse.
  void backward(Var out, T seed) {
    if (!record_) throw Error("backward on a non-recording tape");
    for (auto& n : nodes_) n.grad = Matrix<T>(n.value.rows, n.value.cols);
    nodes_[out].grad.data.assign(nodes_[out].grad.data.size(), seed);
    for (auto it = closures_.rbegin(); it != closures_.rend(); ++it) (*it)();
  }

 private:
  static constexpr T kLayerNormEps = T(1e-5);

  struct Node {
    Matrix<T> value;
    Matrix<T> grad;
  };

  static bool visible(std::span<const std::uint8_t> key_mask, bool causal, std::size_t i,
                      std::size_t j) {
    if (causal && j > i) return false;
    return key_mask.empty() || key_mask[j] != 0;
  }

  static void matmul_acc(const Matrix<T>& A, const Matrix<T>& B, Matrix<T>& C) {
    for (std::size_t r = 0; r < A.rows; ++r) {
      auto a = A.row(r);
      auto c = C.row(r);
      for (std::size_t i = 0; i < A.cols; ++i) {
        const T ai = a[i];
        if (ai == T(0)) continue;
        auto b = B.row(i);
        for (std::size_t j = 0; j < B.cols; ++j) c[j] += ai * b[j];
      }
    }
  }

  Var push(Matrix<T> m) {
    nodes_.push_back(Node{std::move(m), {}});
    return nodes_.size() - 1;
  }

  void on_backward(std::function<void()> fn) { closures_.push_back(std::move(fn)); }

  bool record_;
  std::vector<Node> nodes_;
  std::vector<std::function<void()>> closures_;
};

}  // namespace qrw
