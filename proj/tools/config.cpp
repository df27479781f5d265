#include "config.hpp"

#include <fstream>
#include <sstream>

#include "qrw/error.hpp"

namespace qrw::cli {
namespace {

using nlohmann::json;
using nlohmann::ordered_json;

ordered_json model_json(const ModelConfig& m) {
  return {{"num_layers", m.num_layers}, {"num_heads", m.num_heads}, {"d_model", m.d_model},
          {"d_ff", m.d_ff},             {"dropout", m.dropout},     {"max_len", m.max_len}};
}

const char* type_name(const json& j) {
  if (j.is_boolean()) return "boolean";
  if (j.is_number_unsigned()) return "non-negative integer";
  if (j.is_number_integer()) return "integer";
  if (j.is_number()) return "number";
  if (j.is_string()) return "string";
  if (j.is_object()) return "object";
  if (j.is_array()) return "array";
  return "null";
}

bool compatible(const json& def, const json& val) {
  if (def.is_number_unsigned()) {
    return val.is_number_unsigned() || (val.is_number_integer() && val.get<std::int64_t>() >= 0);
  }
  if (def.is_number_integer()) return val.is_number_integer();
  if (def.is_number_float()) return val.is_number();
  if (def.is_boolean()) return val.is_boolean();
  if (def.is_string()) return val.is_string();
  return false;
}

void overlay(json& base, const json& doc, const std::string& prefix) {
  if (!doc.is_object()) {
    throw UsageError("config" + (prefix.empty() ? std::string() : " key '" + prefix + "'") +
                     ": expected an object, got " + type_name(doc));
  }
  for (const auto& [key, val] : doc.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    auto it = base.find(key);
    if (it == base.end()) throw UsageError("unknown config key '" + path + "'");
    if (it->is_object()) {
      overlay(*it, val, path);
    } else if (!compatible(*it, val)) {
      throw UsageError("config key '" + path + "': expected " + type_name(*it) + ", got " +
                       type_name(val));
    } else {
      *it = val;
    }
  }
}

template <typename V>
V get(const json& j, const char* a, const char* b = nullptr, const char* c = nullptr) {
  const json* p = &j.at(a);
  if (b) p = &p->at(b);
  if (c) p = &p->at(c);
  return p->get<V>();
}

}  // namespace

RunConfig default_config() {
  RunConfig cfg;
  // Desk-scale model; the learning-rate scale was chosen on the synthetic world.
  cfg.train.forward_model.vocab_size = 0;
  cfg.train.backward_model = cfg.train.forward_model;
  return cfg;
}

ordered_json to_json(const RunConfig& c) {
  const auto& t = c.train;
  const auto& w = c.world;
  ordered_json j;
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  j["world"] = {{"concepts", w.concepts},
                {"surfaces_per_concept", w.surfaces_per_concept},
                {"title_tokens_per_concept", w.title_tokens_per_concept},
                {"modifier_vocab", w.modifier_vocab},
                {"pairs_to_emit", w.pairs_to_emit},
                {"attribute_vocab", w.attribute_vocab},
                {"modifier_prob", w.modifier_prob},
                {"noise_fraction", w.noise_fraction},
                {"shuffle_title_tokens", w.shuffle_title_tokens},
                {"confusion_prob", w.confusion_prob}};
  j["vocab"] = {{"max_size", c.vocab_max_size}, {"min_freq", c.vocab_min_freq}};
  j["train"] = {{"lambda", t.lambda},
                {"batch_size", t.batch_size},
                {"max_steps", t.max_steps},
                {"warmup_steps", t.warmup_steps},
                {"decode", {{"k", t.decode.k}, {"n", t.decode.n}, {"max_steps", t.decode.max_steps}}},
                {"adam",
                 {{"lr_scale", t.adam.lr_scale},
                  {"beta1", t.adam.beta1},
                  {"beta2", t.adam.beta2},
                  {"epsilon", t.adam.epsilon}}},
                {"noam_warmup", t.noam_warmup},
                {"eval_every", t.eval_every},
                {"eval_queries", t.eval_queries},
                {"checkpoint_every", t.checkpoint_every},
                {"model", model_json(t.forward_model)}};
  j["q2q"] = {{"min_shared_clicks", c.min_shared_clicks}};
  j["rewrite"] = {{"max_title_len", c.rewrite.max_title_len},
                  {"max_query_len", c.rewrite.max_query_len},
                  {"exclude_identity", c.rewrite.exclude_identity},
                  {"top_out", c.rewrite.top_out}};
  j["eval"] = {{"recall_m", c.recall_m}, {"max_queries", c.eval_max_queries}};
  return j;
}

RunConfig config_from_json(const json& doc) {
  json j = to_json(default_config());
  overlay(j, doc, "");
  RunConfig c;
  c.seed = get<std::uint64_t>(j, "seed");
  c.threads = get<std::size_t>(j, "threads");
  auto& w = c.world;
  w.concepts = get<std::size_t>(j, "world", "concepts");
  w.surfaces_per_concept = get<std::size_t>(j, "world", "surfaces_per_concept");
  w.title_tokens_per_concept = get<std::size_t>(j, "world", "title_tokens_per_concept");
  w.modifier_vocab = get<std::size_t>(j, "world", "modifier_vocab");
  w.pairs_to_emit = get<std::size_t>(j, "world", "pairs_to_emit");
  w.attribute_vocab = get<std::size_t>(j, "world", "attribute_vocab");
  w.modifier_prob = get<double>(j, "world", "modifier_prob");
  w.noise_fraction = get<double>(j, "world", "noise_fraction");
  w.shuffle_title_tokens = get<bool>(j, "world", "shuffle_title_tokens");
  w.confusion_prob = get<double>(j, "world", "confusion_prob");
  c.vocab_max_size = get<std::size_t>(j, "vocab", "max_size");
  c.vocab_min_freq = get<std::size_t>(j, "vocab", "min_freq");
  auto& t = c.train;
  t.lambda = get<double>(j, "train", "lambda");
  t.batch_size = get<std::size_t>(j, "train", "batch_size");
  t.max_steps = get<std::size_t>(j, "train", "max_steps");
  t.warmup_steps = get<std::size_t>(j, "train", "warmup_steps");
  t.decode.k = get<std::size_t>(j, "train", "decode", "k");
  t.decode.n = get<std::size_t>(j, "train", "decode", "n");
  t.decode.max_steps = get<std::size_t>(j, "train", "decode", "max_steps");
  t.adam.lr_scale = get<double>(j, "train", "adam", "lr_scale");
  t.adam.beta1 = get<double>(j, "train", "adam", "beta1");
  t.adam.beta2 = get<double>(j, "train", "adam", "beta2");
  t.adam.epsilon = get<double>(j, "train", "adam", "epsilon");
  t.noam_warmup = get<std::size_t>(j, "train", "noam_warmup");
  t.eval_every = get<std::size_t>(j, "train", "eval_every");
  t.eval_queries = get<std::size_t>(j, "train", "eval_queries");
  t.checkpoint_every = get<std::size_t>(j, "train", "checkpoint_every");
  auto& m = t.forward_model;
  m.num_layers = get<std::size_t>(j, "train", "model", "num_layers");
  m.num_heads = get<std::size_t>(j, "train", "model", "num_heads");
  m.d_model = get<std::size_t>(j, "train", "model", "d_model");
  m.d_ff = get<std::size_t>(j, "train", "model", "d_ff");
  m.dropout = get<double>(j, "train", "model", "dropout");
  m.max_len = get<std::size_t>(j, "train", "model", "max_len");
  t.backward_model = m;
  t.seed = c.seed;
  c.min_shared_clicks = get<std::int64_t>(j, "q2q", "min_shared_clicks");
  c.rewrite.max_title_len = get<std::size_t>(j, "rewrite", "max_title_len");
  c.rewrite.max_query_len = get<std::size_t>(j, "rewrite", "max_query_len");
  c.rewrite.exclude_identity = get<bool>(j, "rewrite", "exclude_identity");
  c.rewrite.top_out = get<std::size_t>(j, "rewrite", "top_out");
  c.recall_m = get<std::size_t>(j, "eval", "recall_m");
  c.eval_max_queries = get<std::size_t>(j, "eval", "max_queries");
  c.world.seed = c.seed;
  c.rewrite.k = t.decode.k;
  c.rewrite.n = t.decode.n;
  c.rewrite.rng_seed = c.seed;
  if (c.threads < 1) throw UsageError("config key 'threads': must be >= 1");
  return c;
}

RunConfig load_config(const std::string& path) {
  if (path.empty()) return config_from_json(json::object());
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open config: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  json doc;
  try {
    doc = json::parse(ss.str());
  } catch (const json::parse_error& e) {
    throw UsageError("config " + path + ": " + e.what());
  }
  return config_from_json(doc);
}

}  // namespace qrw::cli
