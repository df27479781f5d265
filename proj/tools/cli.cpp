#include "cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "config.hpp"
#include "json.hpp"
#include "qrw/baseline.hpp"
#include "qrw/checkpoint.hpp"
#include "qrw/data.hpp"
#include "qrw/error.hpp"
#include "qrw/index.hpp"
#include "qrw/metrics.hpp"
#include "qrw/rewrite.hpp"
#include "qrw/train.hpp"

namespace qrw::cli {
namespace {

namespace fs = std::filesystem;
using Model = ModelParameters<float>;

// Outputs are written to "<path>.tmp" and renamed only when the whole
// subcommand succeeds; on failure the temporaries are deleted.
class Outputs {
 public:
  ~Outputs() {
    if (committed_) return;
    std::error_code ec;
    for (const auto& p : paths_) fs::remove(p + ".tmp", ec);
  }

  std::string stage(const std::string& path) {
    paths_.push_back(path);
    return path + ".tmp";
  }

  void commit() {
    for (const auto& p : paths_) fs::rename(p + ".tmp", p);
    committed_ = true;
  }

 private:
  std::vector<std::string> paths_;
  bool committed_ = false;
};

std::string join(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

void require_file(const std::string& path) {
  if (!fs::is_regular_file(path)) throw Error("missing input file: " + path);
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (!fs::is_directory(dir)) throw Error("cannot create directory: " + dir);
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

// Evaluates fn(i) for i in [0, n) on up to `threads` workers. Results are
// stored by index, so the output does not depend on scheduling.
template <typename R>
std::vector<R> parallel_map(std::size_t n, std::size_t threads, const std::function<R(std::size_t)>& fn) {
  std::vector<R> out(n);
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) out[i] = fn(i);
    return out;
  }
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += threads) out[i] = fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

std::vector<std::string> read_lines(const std::string& path) {
  require_file(path);
  std::ifstream in(path, std::ios::binary);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    lines.push_back(line);
  }
  return lines;
}

Vocabulary load_vocab(const std::string& path) {
  require_file(path);
  return Vocabulary::load(path);
}

// Loads a float checkpoint and checks it against the vocabulary.
Checkpoint<float> load_model(const std::string& path, const Vocabulary& vocab) {
  require_file(path);
  const auto info = read_checkpoint_info(path);
  if (info.f64) throw Error(path + ": 64-bit checkpoints are not supported by the command-line tool");
  auto ckpt = load_checkpoint<float>(path);
  if (ckpt.vocab_hash != vocab.hash()) throw Error(path + ": checkpoint was trained with a different vocabulary");
  return ckpt;
}

void check_shape(const Model& m, const ModelConfig& expected, const std::string& path) {
  if (!(m.config() == expected)) {
    throw Error(path + ": model shape differs from the configured model");
  }
}

// --- gen-data -----------------------------------------------------------

struct GenDataOptions {
  std::string out_dir;
};

void gen_data(const RunConfig& cfg, const GenDataOptions& o, std::ostream& out) {
  ensure_dir(o.out_dir);
  const auto world = generate_synthetic(cfg.world);
  Outputs files;
  write_click_rows(files.stage(join(o.out_dir, "clicks.tsv")), world.rows);
  write_ground_truth(files.stage(join(o.out_dir, "ground_truth.tsv")), world.ground_truth);
  write_dictionary(files.stage(join(o.out_dir, "dictionary.tsv")), synonym_rows(world.ground_truth));
  std::vector<CorpusRow> corpus;
  std::set<std::string> seen;
  for (const auto& r : world.rows) {
    if (seen.insert(r.title).second) corpus.push_back({static_cast<DocId>(corpus.size()), r.title});
  }
  write_corpus(files.stage(join(o.out_dir, "corpus.tsv")), corpus);
  files.commit();
  out << "gen-data: " << world.rows.size() << " rows (" << world.dataset.size()
      << " with clicks > 1), " << world.ground_truth.size() << " concepts, " << corpus.size()
      << " documents -> " << o.out_dir << "\n";
}

// --- build-vocab --------------------------------------------------------

struct BuildVocabOptions {
  std::string clicks;
  std::string ground_truth;
  std::string out;
};

void build_vocab_cmd(const RunConfig& cfg, const BuildVocabOptions& o, std::ostream& out) {
  require_file(o.clicks);
  std::vector<std::string> corpus;
  for (const auto& r : read_click_rows(o.clicks)) {
    corpus.push_back(r.query);
    corpus.push_back(r.title);
  }
  if (!o.ground_truth.empty()) {
    require_file(o.ground_truth);
    for (const auto& [c, surfaces] : read_ground_truth(o.ground_truth)) {
      corpus.insert(corpus.end(), surfaces.begin(), surfaces.end());
    }
  }
  if (cfg.vocab_max_size < kNumSpecials) throw UsageError("config key 'vocab.max_size': must be >= 4");
  if (cfg.vocab_min_freq < 1) throw UsageError("config key 'vocab.min_freq': must be >= 1");
  const auto vocab = build_vocab(corpus, cfg.vocab_max_size, cfg.vocab_min_freq);
  Outputs files;
  vocab.save(files.stage(o.out));
  files.commit();
  out << "build-vocab: " << vocab.size() << " tokens (4 specials) -> " << o.out << "\n";
}

// --- train --------------------------------------------------------------

struct TrainOptions {
  std::string task;
  std::string data;
  std::string vocab;
  std::string out_dir;
  std::string init_from;
  bool resume = false;
};

TrainReport prior_rows(const std::string& path, std::size_t up_to) {
  TrainReport kept;
  if (!fs::is_regular_file(path)) return kept;
  for (auto& r : TrainReport::read_tsv(path).rows) {
    if (r.step <= up_to) kept.rows.push_back(std::move(r));
  }
  return kept;
}

TrainReport concat(TrainReport a, const TrainReport& b) {
  a.rows.insert(a.rows.end(), b.rows.begin(), b.rows.end());
  return a;
}

void save_report_atomic(const std::string& path, const TrainReport& report) {
  report.write_tsv(path + ".tmp");
  fs::rename(path + ".tmp", path);
}

void write_config_echo(const std::string& path, const RunConfig& cfg) {
  std::ofstream f(path + ".tmp", std::ios::binary);
  f << to_json(cfg).dump(2) << "\n";
  f.close();
  if (!f) throw Error("write failed: " + path);
  fs::rename(path + ".tmp", path);
}

void train_joint(const RunConfig& cfg, const TrainOptions& o, const Vocabulary& vocab,
                 const ClickLogDataset& data, std::ostream& out) {
  const auto fpath = join(o.out_dir, "forward.ckpt");
  const auto bpath = join(o.out_dir, "backward.ckpt");
  const auto rpath = join(o.out_dir, "report.tsv");
  const auto& tc = cfg.train;

  std::string source;
  if (o.resume && fs::is_regular_file(fpath)) source = o.out_dir;
  else if (!o.init_from.empty()) source = o.init_from;

  TrainState<float> state = initial_state<float>(tc);
  TrainReport prior;
  if (!source.empty()) {
    const auto sf = join(source, "forward.ckpt");
    const auto sb = join(source, "backward.ckpt");
    auto f = load_model(sf, vocab);
    auto b = load_model(sb, vocab);
    check_shape(f.params, tc.forward_model, sf);
    check_shape(b.params, tc.backward_model, sb);
    if (f.step != b.step) throw Error("forward and backward checkpoints are at different steps");
    if (!f.optimizer || !b.optimizer) throw Error("checkpoints in " + source + " carry no optimizer state");
    state.forward = std::move(f.params);
    state.backward = std::move(b.params);
    state.forward_opt = std::move(*f.optimizer);
    state.backward_opt = std::move(*b.optimizer);
    state.step = f.step;
    if (state.step > tc.max_steps) throw Error("checkpoint step exceeds train.max_steps");
    prior = prior_rows(join(source, "report.tsv"), state.step);
  }
  const std::size_t first = state.step + 1;

  auto save = [&](const TrainState<float>& s, const TrainReport& rows) {
    save_checkpoint(fpath, Checkpoint<float>{s.forward, vocab.hash(), s.step, s.forward_opt});
    save_checkpoint(bpath, Checkpoint<float>{s.backward, vocab.hash(), s.step, s.backward_opt});
    save_report_atomic(rpath, concat(prior, rows));
  };
  const auto report = joint_train<float>(data, tc, state, [&](const TrainState<float>& s, const TrainReport& rows) {
    if (tc.checkpoint_every && s.step % tc.checkpoint_every == 0) save(s, rows);
    return true;
  });
  save(state, report);
  write_config_echo(join(o.out_dir, "config.json"), cfg);

  out << "train joint: steps " << first << ".." << state.step;
  for (const char* m : {"loss_forward", "loss_backward", "translate_back_log_prob", "translate_back_accuracy"}) {
    if (auto v = report.last(m)) out << ", " << m << " " << fmt(*v);
  }
  out << " -> " << o.out_dir << "\n";
}

void train_single_task(const RunConfig& cfg, const TrainOptions& o, TrainTask task, const Vocabulary& vocab,
                       const ClickLogDataset& clicks, std::ostream& out) {
  ClickLogDataset data;
  ModelRole role = ModelRole::kForward;
  std::uint64_t init_key = 1;
  if (task == TrainTask::kQueryToTitle) {
    data = clicks;
  } else if (task == TrainTask::kTitleToQuery) {
    role = ModelRole::kBackward;
    init_key = 2;
    for (const auto& p : clicks.pairs) data.pairs.push_back({p.title, p.query, p.clicks});
  } else {
    role = ModelRole::kQueryToQuery;
    init_key = 3;
    for (const auto& qp : extract_query_pairs(clicks, cfg.min_shared_clicks)) {
      data.pairs.push_back({qp.source, qp.target, qp.shared_clicks});
    }
    if (data.empty()) {
      throw Error("no query pairs share at least " + std::to_string(cfg.min_shared_clicks) + " clicks");
    }
  }

  const auto mpath = join(o.out_dir, "model.ckpt");
  const auto rpath = join(o.out_dir, "report.tsv");
  const auto& tc = cfg.train;
  tc.validate();
  Model params = init_params<float>(tc.forward_model, stream_seed(cfg.seed, {init_key}), role);
  OptimizerState<float> opt = OptimizerState<float>::for_params(params.tensors());
  std::size_t step = 0;
  TrainReport prior;
  std::string source;
  if (o.resume && fs::is_regular_file(mpath)) source = o.out_dir;
  else if (!o.init_from.empty()) source = o.init_from;
  if (!source.empty()) {
    const auto sp = join(source, "model.ckpt");
    auto ckpt = load_model(sp, vocab);
    check_shape(ckpt.params, tc.forward_model, sp);
    if (ckpt.params.role() != role) throw Error(sp + ": checkpoint role is " + to_string(ckpt.params.role()));
    if (!ckpt.optimizer) throw Error(sp + ": checkpoint carries no optimizer state");
    params = std::move(ckpt.params);
    opt = std::move(*ckpt.optimizer);
    step = ckpt.step;
    prior = prior_rows(join(source, "report.tsv"), step);
  }
  const std::size_t first = step + 1;
  auto save = [&](const TrainReport& rows) {
    save_checkpoint(mpath, Checkpoint<float>{params, vocab.hash(), step, opt});
    save_report_atomic(rpath, concat(prior, rows));
  };
  const auto report = train_single<float>(data, tc, params, opt, step, [&](std::size_t s, const TrainReport& rows) {
    if (tc.checkpoint_every && s % tc.checkpoint_every == 0) save(rows);
    return true;
  });
  save(report);
  write_config_echo(join(o.out_dir, "config.json"), cfg);
  out << "train " << to_string(task) << ": " << data.size() << " pairs, steps " << first << ".." << step;
  if (auto v = report.last("loss")) out << ", loss " << fmt(*v);
  if (auto v = report.last("perplexity")) out << ", perplexity " << fmt(*v);
  out << " -> " << o.out_dir << "\n";
}

void train_cmd(RunConfig cfg, const TrainOptions& o, std::ostream& out) {
  TrainTask task;
  try {
    task = train_task_from_string(o.task);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  require_file(o.data);
  const auto vocab = load_vocab(o.vocab);
  cfg.train.forward_model.vocab_size = vocab.size();
  cfg.train.backward_model.vocab_size = vocab.size();
  if (task != TrainTask::kJoint) cfg.train.warmup_steps = std::min(cfg.train.warmup_steps, cfg.train.max_steps);
  try {
    cfg.train.validate();
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  const auto clicks = load_click_log(o.data, vocab);
  if (clicks.empty()) throw Error(o.data + ": no rows with more than one click");
  ensure_dir(o.out_dir);
  if (task == TrainTask::kJoint) train_joint(cfg, o, vocab, clicks, out);
  else train_single_task(cfg, o, task, vocab, clicks, out);
}

// --- rewrite ------------------------------------------------------------

struct Rewriter {
  std::optional<Model> forward, backward, direct;

  std::vector<RewriteCandidate> operator()(const TokenSequence& q, const RewriteConfig& rc) const {
    if (q.empty()) return {};
    if (direct) return rewrite_direct(std::span<const TokenId>(q), *direct, rc);
    return rewrite(std::span<const TokenId>(q), *forward, *backward, rc);
  }
};

Rewriter load_rewriter(const std::string& dir, const Vocabulary& vocab) {
  Rewriter r;
  const auto single = join(dir, "model.ckpt");
  if (fs::is_regular_file(join(dir, "forward.ckpt"))) {
    r.forward = load_model(join(dir, "forward.ckpt"), vocab).params;
    r.backward = load_model(join(dir, "backward.ckpt"), vocab).params;
  } else if (fs::is_regular_file(single)) {
    auto m = load_model(single, vocab).params;
    if (m.role() != ModelRole::kQueryToQuery) {
      throw Error(single + ": rewriting needs a q2q model or a forward/backward pair");
    }
    r.direct = std::move(m);
  } else {
    throw Error("no model checkpoints in " + dir);
  }
  return r;
}

struct RewriteOptions {
  std::string model_dir;
  std::string vocab;
  std::string input;
  std::vector<std::string> queries;
  std::string out;
  std::string attention_out;
};

void rewrite_cmd(const RunConfig& cfg, const RewriteOptions& o, std::ostream& out) {
  const auto vocab = load_vocab(o.vocab);
  const auto rw = load_rewriter(o.model_dir, vocab);
  std::vector<std::string> queries = o.queries;
  if (!o.input.empty()) {
    const auto lines = read_lines(o.input);
    queries.insert(queries.end(), lines.begin(), lines.end());
  }
  if (queries.empty()) throw UsageError("rewrite: no queries given (use --input or --query)");
  const auto results = parallel_map<std::vector<RewriteCandidate>>(
      queries.size(), cfg.threads, [&](std::size_t i) { return rw(encode(queries[i], vocab), cfg.rewrite); });

  Outputs files;
  std::ofstream f(files.stage(o.out), std::ios::binary);
  std::size_t total = 0;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    nlohmann::ordered_json j;
    j["original"] = decode_text(encode(queries[i], vocab), vocab);
    j["rewrites"] = nlohmann::json::array();
    for (const auto& c : results[i]) {
      j["rewrites"].push_back({{"rewrite", decode_text(c.query, vocab)}, {"log_prob", c.log_prob}});
    }
    total += results[i].size();
    f << j.dump() << "\n";
  }
  f.close();
  if (!f) throw Error("write failed: " + o.out);
  if (!o.attention_out.empty()) {
    const Model& m = rw.direct ? *rw.direct : *rw.forward;
    const auto src = encode(queries.front(), vocab);
    DecodeConfig dc;
    dc.mode = DecodeMode::kGreedy;
    dc.max_steps = cfg.rewrite.max_title_len;
    const auto tgt = greedy_decode(m, std::span<const TokenId>(src), dc).content();
    std::ofstream a(files.stage(o.attention_out), std::ios::binary);
    write_attention_tsv(a, attention_maps(m, std::span<const TokenId>(src), std::span<const TokenId>(tgt)));
    a.close();
    if (!a) throw Error("write failed: " + o.attention_out);
  }
  files.commit();
  out << "rewrite: " << queries.size() << " queries, " << total << " rewrites -> " << o.out << "\n";
}

// --- eval ---------------------------------------------------------------

struct EvalOptions {
  std::string model_dir;
  std::string baseline_dir;
  std::string vocab;
  std::string data;
  std::string ground_truth;
  std::string dictionary;
  std::string out_dir;
};

std::vector<QueryRewrites> model_rewrites(const Rewriter& rw, const std::vector<TokenSequence>& queries,
                                          const Vocabulary& vocab, const RunConfig& cfg) {
  return parallel_map<QueryRewrites>(queries.size(), cfg.threads, [&](std::size_t i) {
    QueryRewrites qr{decode_text(queries[i], vocab), {}};
    for (const auto& c : rw(queries[i], cfg.rewrite)) qr.rewrites.push_back(decode_text(c.query, vocab));
    return qr;
  });
}

void eval_cmd(const RunConfig& cfg, const EvalOptions& o, std::ostream& out) {
  const auto vocab = load_vocab(o.vocab);
  require_file(o.data);
  require_file(o.ground_truth);
  require_file(o.dictionary);
  const auto data = load_click_log(o.data, vocab);
  if (data.empty()) throw Error(o.data + ": no rows with more than one click");
  const auto truth = read_ground_truth(o.ground_truth);
  const auto dict = load_dictionary(o.dictionary);
  const auto rw = load_rewriter(o.model_dir, vocab);
  if (!rw.forward) throw Error("eval needs a forward/backward model pair in " + o.model_dir);

  const auto queries = distinct_queries(data, cfg.eval_max_queries ? cfg.eval_max_queries : data.size());
  EvalReport report;
  report.set("perplexity_forward", perplexity(data, *rw.forward, Direction::kForward));
  report.set("perplexity_backward", perplexity(data, *rw.backward, Direction::kBackward));
  DecodeConfig dc = cfg.train.decode;
  dc.mode = DecodeMode::kTopN;
  dc.rng_seed = cfg.seed;
  report.set("translate_back_log_prob", translate_back_log_prob<float>(queries, *rw.forward, *rw.backward, dc));
  report.set("translate_back_accuracy", translate_back_accuracy<float>(queries, *rw.forward, *rw.backward, dc));

  const auto model = model_rewrites(rw, queries, vocab, cfg);
  std::vector<QueryRewrites> rule;
  for (const auto& q : queries) {
    QueryRewrites qr{decode_text(q, vocab), {}};
    qr.rewrites = rewrite_rule_based(qr.query, dict);
    rule.push_back(std::move(qr));
  }
  report.set("recall_at_m", synonym_recall_at_m(model, truth, cfg.recall_m));
  report.set("rule_recall_at_m", synonym_recall_at_m(rule, truth, cfg.recall_m));
  if (!o.baseline_dir.empty()) {
    const auto base = load_rewriter(o.baseline_dir, vocab);
    report.set("baseline_recall_at_m", synonym_recall_at_m(model_rewrites(base, queries, vocab, cfg), truth, cfg.recall_m));
  }
  const auto m = score_rewrites<float>(model, "model", vocab, *rw.forward, report);
  const auto r = score_rewrites<float>(rule, "rule", vocab, *rw.forward, report);
  report.set("model_f1", m[0]);
  report.set("model_edit_distance", m[1]);
  report.set("model_cosine", m[2]);
  report.set("rule_f1", r[0]);
  report.set("rule_edit_distance", r[1]);
  report.set("rule_cosine", r[2]);

  ensure_dir(o.out_dir);
  Outputs files;
  report.write_tsv(files.stage(join(o.out_dir, "eval.tsv")));
  report.write_pairs_jsonl(files.stage(join(o.out_dir, "pairs.jsonl")));
  files.commit();
  out << "eval: " << queries.size() << " queries";
  for (const char* k : {"translate_back_log_prob", "recall_at_m", "model_f1", "rule_f1"}) {
    out << ", " << k << " " << fmt(*report.get(k));
  }
  out << " -> " << o.out_dir << "\n";
}

// --- index / retrieve ---------------------------------------------------

struct IndexOptions {
  std::string corpus;
  std::string vocab;
  std::string out;
};

void index_cmd(const IndexOptions& o, std::ostream& out) {
  const auto vocab = load_vocab(o.vocab);
  require_file(o.corpus);
  const auto docs = encode_corpus(read_corpus(o.corpus), vocab);
  const auto index = build_index(docs);
  Outputs files;
  std::ofstream f(files.stage(o.out), std::ios::binary);
  std::size_t postings = 0;
  for (const auto& [tok, list] : index.all()) {
    f << vocab.token(tok) << '\t';
    for (std::size_t i = 0; i < list.size(); ++i) f << (i ? "," : "") << list[i];
    f << '\n';
    postings += list.size();
  }
  f.close();
  if (!f) throw Error("write failed: " + o.out);
  files.commit();
  out << "index: " << docs.size() << " documents, " << index.all().size() << " tokens, " << postings
      << " postings -> " << o.out << "\n";
}

struct RetrieveOptions {
  std::string corpus;
  std::string vocab;
  std::string rewrites;
  std::string out;
  bool merged = false;
  bool separate = false;
};

void retrieve_cmd(const RetrieveOptions& o, std::ostream& out) {
  if (o.merged == o.separate) throw UsageError("retrieve: pass exactly one of --merged or --separate");
  const auto vocab = load_vocab(o.vocab);
  require_file(o.corpus);
  const auto index = build_index(encode_corpus(read_corpus(o.corpus), vocab));
  Outputs files;
  std::ofstream f(files.stage(o.out), std::ios::binary);
  std::size_t groups = 0, merged_nodes = 0, separate_nodes = 0, hits = 0;
  std::size_t lineno = 0;
  for (const auto& line : read_lines(o.rewrites)) {
    ++lineno;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(o.rewrites, lineno, e.what());
    }
    if (!j.contains("original") || !j["original"].is_string()) {
      throw ParseError(o.rewrites, lineno, "missing string field 'original'");
    }
    const std::string original = j["original"];
    std::vector<TokenSequence> group;
    if (auto q = encode(original, vocab); !q.empty()) group.push_back(std::move(q));
    if (j.contains("rewrites")) {
      for (const auto& r : j["rewrites"]) {
        if (!r.contains("rewrite") || !r["rewrite"].is_string()) {
          throw ParseError(o.rewrites, lineno, "rewrite entry without a string 'rewrite'");
        }
        if (auto q = encode(r["rewrite"].get<std::string>(), vocab); !q.empty()) group.push_back(std::move(q));
      }
    }
    if (group.empty()) continue;
    ++groups;
    std::vector<DocId> docs;
    for (const auto& q : group) separate_nodes += node_count(parse_query(q));
    const auto tree = merge_trees(group);
    merged_nodes += node_count(tree);
    if (o.merged) {
      docs = evaluate(tree, index);
    } else {
      for (const auto& q : group) {
        const auto d = evaluate(parse_query(q), index);
        std::vector<DocId> u;
        std::set_union(docs.begin(), docs.end(), d.begin(), d.end(), std::back_inserter(u));
        docs = std::move(u);
      }
    }
    for (auto d : docs) f << original << '\t' << d << '\n';
    hits += docs.size();
  }
  f.close();
  if (!f) throw Error("write failed: " + o.out);
  files.commit();
  out << "retrieve (" << (o.merged ? "merged" : "separate") << "): " << groups << " query groups, " << hits
      << " documents, tree nodes merged " << merged_nodes << " vs separate " << separate_nodes << " -> "
      << o.out << "\n";
}

// --- inspect-attention --------------------------------------------------

struct AttentionOptions {
  std::string model;
  std::string vocab;
  std::string source;
  std::string target;
  std::string out;
};

void inspect_attention_cmd(const RunConfig& cfg, const AttentionOptions& o, std::ostream& out) {
  const auto vocab = load_vocab(o.vocab);
  const auto m = load_model(o.model, vocab).params;
  const auto src = encode(o.source, vocab);
  if (src.empty()) throw UsageError("inspect-attention: empty --source");
  TokenSequence tgt;
  if (!o.target.empty()) {
    tgt = encode(o.target, vocab);
  } else {
    DecodeConfig dc;
    dc.mode = DecodeMode::kGreedy;
    dc.max_steps = cfg.rewrite.max_title_len;
    tgt = greedy_decode(m, std::span<const TokenId>(src), dc).content();
  }
  const auto maps = attention_maps(m, std::span<const TokenId>(src), std::span<const TokenId>(tgt));
  Outputs files;
  std::ofstream f(files.stage(o.out), std::ios::binary);
  write_attention_tsv(f, maps);
  f.close();
  if (!f) throw Error("write failed: " + o.out);
  files.commit();
  out << "inspect-attention: " << decode_text(src, vocab) << " -> " << decode_text(tgt, vocab) << ", "
      << maps.encoder_self.size() << " encoder and " << maps.decoder_self.size() << " decoder layers -> "
      << o.out << "\n";
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Query rewriting with cyclic-consistent translation models", "qrw"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  app.add_option("--config", config_path, "JSON run configuration");
  app.add_option("--seed", seed, "Global random seed");
  app.add_option("--threads", threads, "Worker threads for per-query work")->check(CLI::PositiveNumber);

  GenDataOptions gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate the synthetic click log and its ground truth");
  gen_cmd->add_option("--out-dir", gen.out_dir, "Output directory")->required();

  BuildVocabOptions bv;
  auto* bv_cmd = app.add_subcommand("build-vocab", "Build a vocabulary from a click log");
  bv_cmd->add_option("--clicks", bv.clicks, "Click log TSV")->required();
  bv_cmd->add_option("--ground-truth", bv.ground_truth, "Ground-truth TSV whose surfaces are added");
  bv_cmd->add_option("--out", bv.out, "Vocabulary file")->required();

  TrainOptions tr;
  std::optional<double> lambda;
  std::optional<std::size_t> steps, warmup, k, n, top_out;
  auto* tr_cmd = app.add_subcommand("train", "Train q2t, t2q, q2q or joint models");
  tr_cmd->add_option("--task", tr.task, "q2t | t2q | q2q | joint")->required();
  tr_cmd->add_option("--data", tr.data, "Click log TSV")->required();
  tr_cmd->add_option("--vocab", tr.vocab, "Vocabulary file")->required();
  tr_cmd->add_option("--out-dir", tr.out_dir, "Checkpoint and report directory")->required();
  tr_cmd->add_option("--init-from", tr.init_from, "Start from the checkpoints in this directory");
  tr_cmd->add_flag("--resume", tr.resume, "Continue from checkpoints already in --out-dir");
  tr_cmd->add_option("--lambda", lambda, "Weight of the cyclic term");
  tr_cmd->add_option("--steps", steps, "Total training steps T");
  tr_cmd->add_option("--warmup", warmup, "Separate-training steps G");
  tr_cmd->add_option("--k", k, "Sampled titles per query");
  tr_cmd->add_option("--n", n, "Top-n truncation when sampling");

  RewriteOptions rw;
  auto* rw_cmd = app.add_subcommand("rewrite", "Rewrite queries with trained models");
  rw_cmd->add_option("--model-dir", rw.model_dir, "Directory with forward/backward or q2q checkpoints")->required();
  rw_cmd->add_option("--vocab", rw.vocab, "Vocabulary file")->required();
  rw_cmd->add_option("--input", rw.input, "Queries, one per line");
  rw_cmd->add_option("--query", rw.queries, "A query to rewrite (repeatable)");
  rw_cmd->add_option("--out", rw.out, "JSON-lines output")->required();
  rw_cmd->add_option("--attention-out", rw.attention_out, "Attention TSV for the first query");
  rw_cmd->add_option("--k", k, "Titles and queries sampled per hop");
  rw_cmd->add_option("--n", n, "Top-n truncation when sampling");
  rw_cmd->add_option("--top-out", top_out, "Rewrites returned per query");

  EvalOptions ev;
  auto* ev_cmd = app.add_subcommand("eval", "Offline metrics for a trained model pair");
  ev_cmd->add_option("--model-dir", ev.model_dir, "Directory with forward/backward checkpoints")->required();
  ev_cmd->add_option("--baseline-dir", ev.baseline_dir, "Second model directory for a recall comparison");
  ev_cmd->add_option("--vocab", ev.vocab, "Vocabulary file")->required();
  ev_cmd->add_option("--data", ev.data, "Click log TSV")->required();
  ev_cmd->add_option("--ground-truth", ev.ground_truth, "Ground-truth TSV")->required();
  ev_cmd->add_option("--dictionary", ev.dictionary, "Synonym dictionary TSV")->required();
  ev_cmd->add_option("--out-dir", ev.out_dir, "Report directory")->required();

  IndexOptions ix;
  auto* ix_cmd = app.add_subcommand("index", "Build an inverted index over a corpus");
  ix_cmd->add_option("--corpus", ix.corpus, "Corpus TSV doc_id<TAB>title")->required();
  ix_cmd->add_option("--vocab", ix.vocab, "Vocabulary file")->required();
  ix_cmd->add_option("--out", ix.out, "Postings TSV")->required();

  RetrieveOptions rt;
  auto* rt_cmd = app.add_subcommand("retrieve", "Retrieve documents for queries and their rewrites");
  rt_cmd->add_option("--corpus", rt.corpus, "Corpus TSV")->required();
  rt_cmd->add_option("--vocab", rt.vocab, "Vocabulary file")->required();
  rt_cmd->add_option("--rewrites", rt.rewrites, "JSON-lines from the rewrite subcommand")->required();
  rt_cmd->add_option("--out", rt.out, "Output TSV query<TAB>doc_id")->required();
  rt_cmd->add_flag("--merged", rt.merged, "Evaluate one merged syntax tree per query group");
  rt_cmd->add_flag("--separate", rt.separate, "Evaluate every query separately and take the union");

  AttentionOptions at;
  auto* at_cmd = app.add_subcommand("inspect-attention", "Dump attention weights of one model");
  at_cmd->add_option("--model", at.model, "Checkpoint file")->required();
  at_cmd->add_option("--vocab", at.vocab, "Vocabulary file")->required();
  at_cmd->add_option("--source", at.source, "Source text")->required();
  at_cmd->add_option("--target", at.target, "Target text (greedy decode when omitted)");
  at_cmd->add_option("--out", at.out, "Attention TSV")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "qrw: " << e.what() << "\n";
    return 2;
  }

  try {
    RunConfig cfg = load_config(config_path);
    if (seed) {
      cfg.seed = *seed;
      cfg.train.seed = *seed;
      cfg.world.seed = *seed;
      cfg.rewrite.rng_seed = *seed;
    }
    if (threads) cfg.threads = *threads;
    if (lambda) cfg.train.lambda = *lambda;
    if (steps) cfg.train.max_steps = *steps;
    if (warmup) cfg.train.warmup_steps = *warmup;
    if (k) cfg.train.decode.k = cfg.rewrite.k = *k;
    if (n) cfg.train.decode.n = cfg.rewrite.n = *n;
    if (top_out) cfg.rewrite.top_out = *top_out;

    if (gen_cmd->parsed()) gen_data(cfg, gen, out);
    else if (bv_cmd->parsed()) build_vocab_cmd(cfg, bv, out);
    else if (tr_cmd->parsed()) train_cmd(cfg, tr, out);
    else if (rw_cmd->parsed()) rewrite_cmd(cfg, rw, out);
    else if (ev_cmd->parsed()) eval_cmd(cfg, ev, out);
    else if (ix_cmd->parsed()) index_cmd(ix, out);
    else if (rt_cmd->parsed()) retrieve_cmd(rt, out);
    else if (at_cmd->parsed()) inspect_attention_cmd(cfg, at, out);
    return 0;
  } catch (const UsageError& e) {
    err << "qrw: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "qrw: " << e.what() << "\n";
    return 1;
  }
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, out, err);
}

}  // namespace qrw::cli
