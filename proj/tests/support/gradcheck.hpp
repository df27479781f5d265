#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "qrw/data.hpp"
#include "qrw/model.hpp"

namespace qrw::testing {

inline std::string tensor_class(const std::string& name) {
  if (name.find("embed") != std::string::npos) return "embedding";
  if (name.find(".attn.") != std::string::npos || name.find(".self.") != std::string::npos ||
      name.find(".cross.") != std::string::npos) {
    return "attention";
  }
  if (name.find(".ff.") != std::string::npos) return "feed_forward";
  if (name.find("ln") != std::string::npos) return "layer_norm";
  return "output";
}

struct ClassCheck {
  std::size_t coordinates = 0;
  double max_rel_error = 0.0;
};

template <typename T>
ModelParameters<double> to_double(const ModelParameters<T>& p) {
  ModelParameters<double> out(p.config(), p.role());
  for (std::size_t i = 0; i < p.tensors().count(); ++i) {
    const auto& src = p.tensors()[i].data;
    auto& dst = out.tensors()[i].data;
    for (std::size_t j = 0; j < src.size(); ++j) dst[j] = static_cast<double>(src[j]);
  }
  return out;
}

inline double batch_loss(const ModelParameters<double>& p, const Batch& batch) {
  double loss = 0.0;
  for (std::size_t r = 0; r < batch.size(); ++r) {
    const auto x = batch.source_row(r);
    const auto y = batch.target_row(r);
    loss -= sequence_log_prob(p, std::span<const TokenId>(x), std::span<const TokenId>(y));
  }
  return loss / static_cast<double>(batch.size());
}

// Compares loss_and_grads<T> with central differences of the batch loss
// evaluated in double precision. Each tensor class contributes `per_class`
// coordinates drawn without replacement; embedding coordinates come from
// rows of tokens the batch actually uses. Relative error is
// |a - b| / max(|a|, |b|, floor).
template <typename T>
std::map<std::string, ClassCheck> check_gradients(const ModelParameters<T>& params, const Batch& batch,
                                                  std::size_t per_class, std::uint64_t seed, double step,
                                                  double floor) {
  TensorSet<T> grads = params.tensors().zeros_like();
  loss_and_grads(params, batch, grads);
  auto pd = to_double(params);

  std::set<TokenId> src_rows(batch.source.begin(), batch.source.end());
  std::set<TokenId> tgt_rows(batch.target.begin(), batch.target.end());
  tgt_rows.insert(kBos);

  std::map<std::string, std::vector<std::pair<std::size_t, std::size_t>>> pool;
  const auto& t = params.tensors();
  for (std::size_t i = 0; i < t.count(); ++i) {
    const auto& name = t.name(i);
    for (std::size_t j = 0; j < t[i].size(); ++j) {
      if (name == "src_embed" && !src_rows.count(static_cast<TokenId>(j / t[i].cols))) continue;
      if (name == "tgt_embed" && !tgt_rows.count(static_cast<TokenId>(j / t[i].cols))) continue;
      pool[tensor_class(name)].emplace_back(i, j);
    }
  }

  Rng rng(seed);
  std::map<std::string, ClassCheck> out;
  for (auto& [cls, coords] : pool) {
    for (std::size_t i = coords.size(); i > 1; --i) std::swap(coords[i - 1], coords[uniform_index(rng, i)]);
    auto& res = out[cls];
    for (std::size_t c = 0; c < std::min(per_class, coords.size()); ++c) {
      const auto [ti, j] = coords[c];
      double& v = pd.tensors()[ti].data[j];
      const double saved = v;
      v = saved + step;
      const double up = batch_loss(pd, batch);
      v = saved - step;
      const double down = batch_loss(pd, batch);
      v = saved;
      const double fd = (up - down) / (2.0 * step);
      const double an = static_cast<double>(grads[ti].data[j]);
      const double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), floor});
      res.max_rel_error = std::max(res.max_rel_error, rel);
      ++res.coordinates;
    }
  }
  return out;
}

}  // namespace qrw::testing
