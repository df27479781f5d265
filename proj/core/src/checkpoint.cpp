#include "qrw/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "json.hpp"
#include "qrw/error.hpp"

namespace qrw {
namespace {

constexpr char kMagic[4] = {'Q', 'R', 'W', '1'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw Error("checkpoint truncated");
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

template <typename T>
void put_tensor(std::string& out, const std::string& name, const Matrix<T>& m, bool f64) {
  put_u32(out, static_cast<std::uint32_t>(name.size()));
  out += name;
  put_u32(out, static_cast<std::uint32_t>(m.rows));
  put_u32(out, static_cast<std::uint32_t>(m.cols));
  for (T v : m.data) {
    if (f64) {
      double d = static_cast<double>(v);
      std::uint64_t bits;
      std::memcpy(&bits, &d, sizeof bits);
      put_u64(out, bits);
    } else {
      float f = static_cast<float>(v);
      std::uint32_t bits;
      std::memcpy(&bits, &f, sizeof bits);
      put_u32(out, bits);
    }
  }
}

template <typename T>
void get_tensor(Reader& in, const std::string& expected, Matrix<T>& m, bool f64) {
  const std::string name = in.str(in.u32());
  if (name != expected) throw Error("checkpoint: expected tensor '" + expected + "', found '" + name + "'");
  const std::uint32_t rows = in.u32(), cols = in.u32();
  if (rows != m.rows || cols != m.cols) {
    throw Error("checkpoint: shape mismatch for tensor '" + name + "'");
  }
  for (auto& v : m.data) {
    if (f64) {
      std::uint64_t bits = in.u64();
      double d;
      std::memcpy(&d, &bits, sizeof d);
      v = static_cast<T>(d);
    } else {
      std::uint32_t bits = in.u32();
      float f;
      std::memcpy(&f, &bits, sizeof f);
      v = static_cast<T>(f);
    }
  }
}

nlohmann::json config_json(const ModelConfig& c) {
  return {{"num_layers", c.num_layers}, {"num_heads", c.num_heads}, {"d_model", c.d_model},
          {"d_ff", c.d_ff},             {"dropout", c.dropout},     {"max_len", c.max_len},
          {"vocab_size", c.vocab_size}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.num_layers = j.at("num_layers").get<std::size_t>();
  c.num_heads = j.at("num_heads").get<std::size_t>();
  c.d_model = j.at("d_model").get<std::size_t>();
  c.d_ff = j.at("d_ff").get<std::size_t>();
  c.dropout = j.at("dropout").get<double>();
  c.max_len = j.at("max_len").get<std::size_t>();
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  return c;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

struct Header {
  nlohmann::json meta;
  std::uint32_t tensor_count = 0;
};

Header read_header(Reader& in) {
  if (in.str(4) != std::string(kMagic, 4)) throw Error("checkpoint: bad magic (expected QRW1)");
  Header h;
  try {
    h.meta = nlohmann::json::parse(in.str(in.u32()));
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("checkpoint: bad metadata: ") + e.what());
  }
  h.tensor_count = in.u32();
  return h;
}

CheckpointInfo info_from_meta(const nlohmann::json& meta) {
  try {
    CheckpointInfo info;
    info.config = config_from_json(meta.at("config"));
    info.role = role_from_string(meta.at("role").get<std::string>());
    info.vocab_hash = std::stoull(meta.at("vocab_hash").get<std::string>(), nullptr, 16);
    info.step = meta.at("step").get<std::uint64_t>();
    info.f64 = meta.at("dtype").get<std::string>() == "f64";
    return info;
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("checkpoint: bad metadata: ") + e.what());
  }
}

}  // namespace

template <typename T>
std::string serialize_checkpoint(const Checkpoint<T>& ckpt) {
  constexpr bool f64 = sizeof(T) == 8;
  const auto& t = ckpt.params.tensors();
  nlohmann::json meta = {
      {"config", config_json(ckpt.params.config())},
      {"role", to_string(ckpt.params.role())},
      {"vocab_hash", hex64(ckpt.vocab_hash)},
      {"step", ckpt.step},
      {"dtype", f64 ? "f64" : "f32"},
      {"optimizer_step", ckpt.optimizer ? nlohmann::json(ckpt.optimizer->t) : nlohmann::json(nullptr)},
  };
  const std::string meta_bytes = meta.dump();
  std::string out(kMagic, 4);
  put_u32(out, static_cast<std::uint32_t>(meta_bytes.size()));
  out += meta_bytes;
  const std::size_t n = t.count() * (ckpt.optimizer ? 3 : 1);
  put_u32(out, static_cast<std::uint32_t>(n));
  for (std::size_t i = 0; i < t.count(); ++i) put_tensor(out, t.name(i), t[i], f64);
  if (ckpt.optimizer) {
    for (std::size_t i = 0; i < t.count(); ++i) put_tensor(out, "adam.m." + t.name(i), ckpt.optimizer->m[i], f64);
    for (std::size_t i = 0; i < t.count(); ++i) put_tensor(out, "adam.v." + t.name(i), ckpt.optimizer->v[i], f64);
  }
  return out;
}

template <typename T>
Checkpoint<T> deserialize_checkpoint(const std::string& bytes) {
  Reader in(bytes);
  Header h = read_header(in);
  CheckpointInfo info = info_from_meta(h.meta);
  Checkpoint<T> ckpt{ModelParameters<T>(info.config, info.role), info.vocab_hash, info.step, std::nullopt};
  auto& t = ckpt.params.tensors();
  const bool with_opt = !h.meta.at("optimizer_step").is_null();
  if (h.tensor_count != t.count() * (with_opt ? 3 : 1)) throw Error("checkpoint: unexpected tensor count");
  for (std::size_t i = 0; i < t.count(); ++i) get_tensor(in, t.name(i), t[i], info.f64);
  if (with_opt) {
    auto opt = OptimizerState<T>::for_params(t);
    opt.t = h.meta.at("optimizer_step").get<std::uint64_t>();
    for (std::size_t i = 0; i < t.count(); ++i) get_tensor(in, "adam.m." + t.name(i), opt.m[i], info.f64);
    for (std::size_t i = 0; i < t.count(); ++i) get_tensor(in, "adam.v." + t.name(i), opt.v[i], info.f64);
    ckpt.optimizer = std::move(opt);
  }
  if (!in.done()) throw Error("checkpoint: trailing bytes");
  return ckpt;
}

template <typename T>
void save_checkpoint(const std::string& path, const Checkpoint<T>& ckpt) {
  const std::string bytes = serialize_checkpoint(ckpt);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("cannot open for writing: " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed: " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw Error("cannot rename " + tmp + " to " + path);
}

namespace {
std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint: " + path);
  return std::string(std::istreambuf_iterator<char>(in), {});
}
}  // namespace

template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path) {
  try {
    return deserialize_checkpoint<T>(slurp(path));
  } catch (const Error& e) {
    throw Error(path + ": " + e.what());
  }
}

CheckpointInfo read_checkpoint_info(const std::string& path) {
  const std::string bytes = slurp(path);
  Reader in(bytes);
  return info_from_meta(read_header(in).meta);
}

template std::string serialize_checkpoint<float>(const Checkpoint<float>&);
template std::string serialize_checkpoint<double>(const Checkpoint<double>&);
template Checkpoint<float> deserialize_checkpoint<float>(const std::string&);
template Checkpoint<double> deserialize_checkpoint<double>(const std::string&);
template void save_checkpoint<float>(const std::string&, const Checkpoint<float>&);
template void save_checkpoint<double>(const std::string&, const Checkpoint<double>&);
template Checkpoint<float> load_checkpoint<float>(const std::string&);
template Checkpoint<double> load_checkpoint<double>(const std::string&);

}  // namespace qrw
