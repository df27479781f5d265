#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include "json.hpp"
#include "qrw/data.hpp"
#include "qrw/rewrite.hpp"
#include "qrw/train.hpp"

namespace qrw::cli {

// Bad flags, unknown config keys or type mismatches; exit status 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Everything a subcommand may need. `train.forward_model` doubles as the
// shape of every model; vocab_size is filled in from the vocabulary file.
struct RunConfig {
  std::uint64_t seed = 1;
  std::size_t threads = 1;
  SynonymWorldSpec world;
  std::size_t vocab_max_size = 100000;
  std::size_t vocab_min_freq = 1;
  TrainConfig train;
  std::int64_t min_shared_clicks = 5;
  RewriteConfig rewrite;
  std::size_t recall_m = 3;
  std::size_t eval_max_queries = 0;  // 0: every distinct query
};

RunConfig default_config();
nlohmann::ordered_json to_json(const RunConfig& cfg);

// Overlays `doc` onto the defaults. Unknown keys and type mismatches raise
// UsageError naming the dotted key.
RunConfig config_from_json(const nlohmann::json& doc);

// Empty path yields the defaults.
RunConfig load_config(const std::string& path);

}  // namespace qrw::cli
