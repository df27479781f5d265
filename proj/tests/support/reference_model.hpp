#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "qrw/model.hpp"

namespace qrw::testing {

// Direct, loop-based forward pass of the encoder-decoder written against the
// tensor names alone. Used as an oracle for the tape-based implementation.
class ReferenceModel {
 public:
  using Mat = std::vector<std::vector<double>>;

  template <typename T>
  explicit ReferenceModel(const ModelParameters<T>& p) : cfg_(p.config()) {
    for (std::size_t i = 0; i < p.tensors().count(); ++i) {
      const auto& m = p.tensors()[i];
      Mat out(m.rows, std::vector<double>(m.cols));
      for (std::size_t r = 0; r < m.rows; ++r) {
        for (std::size_t c = 0; c < m.cols; ++c) out[r][c] = static_cast<double>(m(r, c));
      }
      names_.push_back(p.tensors().name(i));
      values_.push_back(std::move(out));
    }
  }

  // log P(y | x) including the EOS step; x may contain PAD positions.
  double sequence_log_prob(const TokenSequence& x, const TokenSequence& y) const {
    const Mat memory = encode(x);
    std::vector<bool> mem_mask;
    for (auto t : x) mem_mask.push_back(t != kPad);
    TokenSequence in{kBos};
    in.insert(in.end(), y.begin(), y.end());
    const Mat h = decode(in, memory, mem_mask);
    double total = 0.0;
    for (std::size_t t = 0; t < in.size(); ++t) {
      const auto lp = log_softmax(row_times(h[t], get("out.w"), &get("out.b")[0]));
      total += lp[static_cast<std::size_t>(t < y.size() ? y[t] : kEos)];
    }
    return total;
  }

  Mat encode(const TokenSequence& x) const {
    std::vector<bool> mask;
    for (auto t : x) mask.push_back(t != kPad);
    Mat h = embed("src_embed", x);
    for (std::size_t l = 0; l < cfg_.num_layers; ++l) {
      const std::string p = "enc." + std::to_string(l);
      Mat a = layer_norm(h, p + ".ln1");
      add_into(h, attention(p + ".attn", a, a, mask, false));
      a = layer_norm(h, p + ".ln2");
      add_into(h, feed_forward(p + ".ff", a));
    }
    return layer_norm(h, "enc.ln");
  }

 private:
  const Mat& get(const std::string& name) const {
    for (std::size_t i = 0; i < names_.size(); ++i) {
      if (names_[i] == name) return values_[i];
    }
    throw Error("reference model: no tensor " + name);
  }

  Mat decode(const TokenSequence& in, const Mat& memory, const std::vector<bool>& mem_mask) const {
    Mat g = embed("tgt_embed", in);
    const std::vector<bool> all(in.size(), true);
    for (std::size_t l = 0; l < cfg_.num_layers; ++l) {
      const std::string p = "dec." + std::to_string(l);
      Mat a = layer_norm(g, p + ".ln1");
      add_into(g, attention(p + ".self", a, a, all, true));
      a = layer_norm(g, p + ".ln2");
      add_into(g, attention(p + ".cross", a, memory, mem_mask, false));
      a = layer_norm(g, p + ".ln3");
      add_into(g, feed_forward(p + ".ff", a));
    }
    return layer_norm(g, "dec.ln");
  }

  Mat embed(const std::string& table, const TokenSequence& ids) const {
    const std::size_t d = cfg_.d_model;
    const double scale = std::sqrt(static_cast<double>(d));
    Mat out(ids.size(), std::vector<double>(d));
    for (std::size_t i = 0; i < ids.size(); ++i) {
      for (std::size_t j = 0; j < d; j += 2) {
        const double angle = static_cast<double>(i) / std::pow(10000.0, static_cast<double>(j) / static_cast<double>(d));
        out[i][j] = scale * get(table)[static_cast<std::size_t>(ids[i])][j] + std::sin(angle);
        if (j + 1 < d) out[i][j + 1] = scale * get(table)[static_cast<std::size_t>(ids[i])][j + 1] + std::cos(angle);
      }
    }
    return out;
  }

  Mat layer_norm(const Mat& x, const std::string& prefix) const {
    const auto& g = get(prefix + ".g")[0];
    const auto& b = get(prefix + ".b")[0];
    Mat out = x;
    for (auto& row : out) {
      double mean = 0.0, var = 0.0;
      for (double v : row) mean += v;
      mean /= static_cast<double>(row.size());
      for (double v : row) var += (v - mean) * (v - mean);
      var /= static_cast<double>(row.size());
      for (std::size_t c = 0; c < row.size(); ++c) row[c] = g[c] * (row[c] - mean) / std::sqrt(var + 1e-5) + b[c];
    }
    return out;
  }

  static std::vector<double> row_times(const std::vector<double>& v, const Mat& w, const std::vector<double>* bias) {
    std::vector<double> out(w[0].size(), 0.0);
    for (std::size_t c = 0; c < out.size(); ++c) {
      for (std::size_t k = 0; k < v.size(); ++k) out[c] += v[k] * w[k][c];
      if (bias) out[c] += (*bias)[c];
    }
    return out;
  }

  Mat times(const Mat& x, const std::string& w, const std::string& b = "") const {
    Mat out;
    for (const auto& row : x) out.push_back(row_times(row, get(w), b.empty() ? nullptr : &get(b)[0]));
    return out;
  }

  Mat attention(const std::string& p, const Mat& qs, const Mat& kvs, const std::vector<bool>& key_mask,
                bool causal) const {
    const Mat q = times(qs, p + ".wq"), k = times(kvs, p + ".wk"), v = times(kvs, p + ".wv");
    const std::size_t heads = cfg_.num_heads, dh = cfg_.d_model / heads;
    Mat out(q.size(), std::vector<double>(cfg_.d_model, 0.0));
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < q.size(); ++i) {
        std::vector<double> s(k.size(), -std::numeric_limits<double>::infinity());
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < k.size(); ++j) {
          if (!key_mask[j] || (causal && j > i)) continue;
          double dot = 0.0;
          for (std::size_t c = 0; c < dh; ++c) dot += q[i][h * dh + c] * k[j][h * dh + c];
          s[j] = dot / std::sqrt(static_cast<double>(dh));
          mx = std::max(mx, s[j]);
        }
        double z = 0.0;
        for (auto& e : s) {
          e = std::isinf(e) ? 0.0 : std::exp(e - mx);
          z += e;
        }
        for (std::size_t j = 0; j < k.size(); ++j) {
          for (std::size_t c = 0; c < dh; ++c) out[i][h * dh + c] += s[j] / z * v[j][h * dh + c];
        }
      }
    }
    return times(out, p + ".wo");
  }

  Mat feed_forward(const std::string& p, const Mat& a) const {
    Mat h = times(a, p + ".w1", p + ".b1");
    for (auto& row : h) {
      for (auto& e : row) e = std::max(e, 0.0);
    }
    return times(h, p + ".w2", p + ".b2");
  }

  static void add_into(Mat& a, const Mat& b) {
    for (std::size_t i = 0; i < a.size(); ++i) {
      for (std::size_t j = 0; j < a[i].size(); ++j) a[i][j] += b[i][j];
    }
  }

  static std::vector<double> log_softmax(std::vector<double> v) {
    double mx = v[0];
    for (double e : v) mx = std::max(mx, e);
    double z = 0.0;
    for (double e : v) z += std::exp(e - mx);
    const double lz = mx + std::log(z);
    for (auto& e : v) e -= lz;
    return v;
  }

  ModelConfig cfg_;
  std::vector<std::string> names_;
  std::vector<Mat> values_;
};

}  // namespace qrw::testing
