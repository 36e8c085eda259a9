#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lcmt/data_io.hpp"
#include "lcmt/error.hpp"
#include "lcmt/hash.hpp"
#include "lcmt/model.hpp"

namespace lcmt {

// Checkpoint container:
//   "LCMT" | u32 version | u64 meta_len | meta JSON | u32 n_records |
//   records, each: u32 name_len | name | u8 dtype | u64 rows | u64 cols |
//                  payload (little-endian) | u32 crc32(payload)
// Loading is all-or-nothing; any CRC/length problem throws before anything
// is returned.
constexpr uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  ModelConfig config;
  std::vector<std::string> src_vocab, tgt_vocab;
  uint64_t step = 0;
  uint64_t seed = 0;
  std::string dtype;  // "f32" or "f64"
};

namespace detail {

template <typename T>
void write_le(std::ostream& out, T v) {
  unsigned char buf[sizeof(T)];
  using U = std::conditional_t<sizeof(T) == 8, uint64_t, std::conditional_t<sizeof(T) == 4, uint32_t, uint8_t>>;
  U u;
  std::memcpy(&u, &v, sizeof(T));
  for (size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>((u >> (8 * i)) & 0xFF);
  out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
  unsigned char buf[sizeof(T)];
  in.read(reinterpret_cast<char*>(buf), sizeof(T));
  if (!in) throw FormatError("checkpoint truncated");
  using U = std::conditional_t<sizeof(T) == 8, uint64_t, std::conditional_t<sizeof(T) == 4, uint32_t, uint8_t>>;
  U u = 0;
  for (size_t i = 0; i < sizeof(T); ++i) u |= static_cast<U>(buf[i]) << (8 * i);
  T v;
  std::memcpy(&v, &u, sizeof(T));
  return v;
}

template <typename Real>
constexpr uint8_t dtype_tag() {
  return sizeof(Real) == 4 ? 0 : 1;
}

template <typename Real>
const char* dtype_name() {
  return sizeof(Real) == 4 ? "f32" : "f64";
}

inline Json config_to_json(const ModelConfig& c) {
  Json j;
  j["vocab_size_src"] = c.vocab_size_src;
  j["vocab_size_tgt"] = c.vocab_size_tgt;
  j["d_model"] = c.d_model;
  j["n_blocks"] = c.n_blocks;
  j["n_heads"] = c.n_heads;
  j["ffn_width"] = c.ffn_width;
  if (c.memory_block_index)
    j["memory_block_index"] = *c.memory_block_index;
  else
    j["memory_block_index"] = nullptr;
  j["memory_heads"] = c.memory_heads;
  j["lambda_att"] = c.lambda_att;
  j["max_len"] = c.max_len;
  return j;
}

inline ModelConfig config_from_json(const Json& j) {
  ModelConfig c;
  c.vocab_size_src = j.at("vocab_size_src").get<int>();
  c.vocab_size_tgt = j.at("vocab_size_tgt").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.n_blocks = j.at("n_blocks").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.ffn_width = j.at("ffn_width").get<int>();
  if (j.contains("memory_block_index") && !j.at("memory_block_index").is_null())
    c.memory_block_index = j.at("memory_block_index").get<int>();
  else
    c.memory_block_index.reset();
  c.memory_heads = j.at("memory_heads").get<int>();
  c.lambda_att = j.at("lambda_att").get<double>();
  c.max_len = j.at("max_len").get<int>();
  return c;
}

}  // namespace detail

template <typename Real>
void save_checkpoint(ModelParams<Real>& params, const CheckpointMeta& meta_in,
                     const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path);

  CheckpointMeta meta = meta_in;
  meta.config = params.config;
  meta.dtype = detail::dtype_name<Real>();

  Json mj;
  mj["format_version"] = kCheckpointVersion;
  mj["dtype"] = meta.dtype;
  mj["config"] = detail::config_to_json(meta.config);
  mj["src_vocab"] = meta.src_vocab;
  mj["tgt_vocab"] = meta.tgt_vocab;
  mj["src_vocab_hash"] = fnv1a_tokens(meta.src_vocab);
  mj["tgt_vocab_hash"] = fnv1a_tokens(meta.tgt_vocab);
  mj["step"] = meta.step;
  mj["seed"] = meta.seed;
  const std::string meta_bytes = mj.dump();

  out.write("LCMT", 4);
  detail::write_le<uint32_t>(out, kCheckpointVersion);
  detail::write_le<uint64_t>(out, meta_bytes.size());
  out.write(meta_bytes.data(), static_cast<std::streamsize>(meta_bytes.size()));

  auto named = params.named_parameters();
  detail::write_le<uint32_t>(out, static_cast<uint32_t>(named.size()));
  std::vector<unsigned char> payload;
  for (auto& [name, t] : named) {
    detail::write_le<uint32_t>(out, static_cast<uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_le<uint8_t>(out, detail::dtype_tag<Real>());
    detail::write_le<uint64_t>(out, static_cast<uint64_t>(t->rows()));
    detail::write_le<uint64_t>(out, static_cast<uint64_t>(t->cols()));
    payload.resize(t->size() * sizeof(Real));
    unsigned char* dst = payload.data();
    for (size_t i = 0; i < t->size(); ++i) {
      using U = std::conditional_t<sizeof(Real) == 4, uint32_t, uint64_t>;
      U u;
      std::memcpy(&u, t->data() + i, sizeof(Real));
      for (size_t b = 0; b < sizeof(Real); ++b) dst[i * sizeof(Real) + b] =
          static_cast<unsigned char>((u >> (8 * b)) & 0xFF);
    }
    out.write(reinterpret_cast<const char*>(payload.data()),
              static_cast<std::streamsize>(payload.size()));
    detail::write_le<uint32_t>(out, crc32(payload.data(), payload.size()));
  }
  if (!out) throw IoError("failed writing checkpoint: " + path);
}

template <typename Real>
std::pair<ModelParams<Real>, CheckpointMeta> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);

  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "LCMT", 4) != 0)
    throw FormatError("not a checkpoint file (bad magic): " + path);
  const uint32_t version = detail::read_le<uint32_t>(in);
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version) +
                      " (this build reads version " + std::to_string(kCheckpointVersion) + ")");
  const uint64_t meta_len = detail::read_le<uint64_t>(in);
  std::string meta_bytes(meta_len, '\0');
  in.read(meta_bytes.data(), static_cast<std::streamsize>(meta_len));
  if (!in) throw FormatError("checkpoint truncated in metadata");

  Json mj;
  try {
    mj = Json::parse(meta_bytes);
  } catch (const Json::exception& e) {
    throw FormatError(std::string("checkpoint metadata is not valid JSON: ") + e.what());
  }
  CheckpointMeta meta;
  meta.config = detail::config_from_json(mj.at("config"));
  meta.src_vocab = mj.at("src_vocab").get<std::vector<std::string>>();
  meta.tgt_vocab = mj.at("tgt_vocab").get<std::vector<std::string>>();
  meta.step = mj.at("step").get<uint64_t>();
  meta.seed = mj.at("seed").get<uint64_t>();
  meta.dtype = mj.at("dtype").get<std::string>();
  if (meta.dtype != detail::dtype_name<Real>())
    throw FormatError("checkpoint dtype " + meta.dtype + " does not match this precision (" +
                      detail::dtype_name<Real>() + ")");

  ModelParams<Real> params(meta.config, /*seed=*/0);
  auto named = params.named_parameters();
  std::map<std::string, Tensor<Real>*> by_name;
  for (auto& [name, t] : named) by_name[name] = t;

  const uint32_t n_records = detail::read_le<uint32_t>(in);
  std::vector<std::string> seen;
  std::vector<unsigned char> payload;
  for (uint32_t r = 0; r < n_records; ++r) {
    const uint32_t name_len = detail::read_le<uint32_t>(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (!in) throw FormatError("checkpoint truncated in record name");
    const uint8_t tag = detail::read_le<uint8_t>(in);
    if (tag != detail::dtype_tag<Real>())
      throw FormatError("tensor '" + name + "' has mismatched dtype tag");
    const uint64_t rows = detail::read_le<uint64_t>(in);
    const uint64_t cols = detail::read_le<uint64_t>(in);
    auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError("checkpoint has unexpected tensor '" + name + "'");
    Tensor<Real>* t = it->second;
    if (static_cast<uint64_t>(t->rows()) != rows || static_cast<uint64_t>(t->cols()) != cols)
      throw FormatError("tensor '" + name + "' has shape " + std::to_string(rows) + "x" +
                        std::to_string(cols) + ", expected " + std::to_string(t->rows()) + "x" +
                        std::to_string(t->cols()));
    payload.resize(t->size() * sizeof(Real));
    in.read(reinterpret_cast<char*>(payload.data()),
            static_cast<std::streamsize>(payload.size()));
    if (!in) throw FormatError("checkpoint truncated in tensor '" + name + "'");
    const uint32_t crc_stored = detail::read_le<uint32_t>(in);
    const uint32_t crc_actual = crc32(payload.data(), payload.size());
    if (crc_stored != crc_actual)
      throw FormatError("CRC mismatch in tensor '" + name + "' (corrupt checkpoint)");
    for (size_t i = 0; i < t->size(); ++i) {
      using U = std::conditional_t<sizeof(Real) == 4, uint32_t, uint64_t>;
      U u = 0;
      for (size_t b = 0; b < sizeof(Real); ++b)
        u |= static_cast<U>(payload[i * sizeof(Real) + b]) << (8 * b);
      std::memcpy(t->data() + i, &u, sizeof(Real));
    }
    seen.push_back(name);
  }

  // Schema check: every expected tensor must arrive exactly once.
  std::vector<std::string> expected = params_tensor_names(meta.config);
  std::set<std::string> seen_set(seen.begin(), seen.end());
  if (seen_set.size() != seen.size()) throw FormatError("duplicate tensor records in checkpoint");
  std::string missing;
  for (const auto& n : expected)
    if (!seen_set.count(n)) missing += missing.empty() ? n : ", " + n;
  if (!missing.empty()) throw FormatError("checkpoint missing tensors: " + missing);

  return {std::move(params), std::move(meta)};
}

// Reads only the header and returns the stored dtype ("f32"/"f64"), so a
// caller can dispatch to the right precision before a full load.
inline std::string peek_checkpoint_dtype(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "LCMT", 4) != 0)
    throw FormatError("not a checkpoint file (bad magic): " + path);
  const uint32_t version = detail::read_le<uint32_t>(in);
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const uint64_t meta_len = detail::read_le<uint64_t>(in);
  std::string meta_bytes(meta_len, '\0');
  in.read(meta_bytes.data(), static_cast<std::streamsize>(meta_len));
  if (!in) throw FormatError("checkpoint truncated in metadata");
  try {
    return Json::parse(meta_bytes).at("dtype").get<std::string>();
  } catch (const Json::exception& e) {
    throw FormatError(std::string("checkpoint metadata is not valid JSON: ") + e.what());
  }
}

// Mode/schema compatibility for decoding: the requested mode must match the
// checkpoint's architecture; the error spells out the offending tensors.
inline void require_mode_compatible(const ModelConfig& cfg, const std::string& mode) {
  if (mode == "lcnmt" && !cfg.has_memory()) {
    ModelConfig want = cfg;
    want.memory_block_index = 1;
    std::string names;
    for (const auto& n : params_tensor_names(want))
      if (n.rfind("mem.", 0) == 0) names += names.empty() ? n : ", " + n;
    throw ConfigError("mode 'lcnmt' needs a memory-trained checkpoint; missing tensors: " + names);
  }
  if ((mode == "base" || mode == "dba") && cfg.has_memory()) {
    std::string names;
    ModelConfig with = cfg;
    for (const auto& n : params_tensor_names(with))
      if (n.rfind("mem.", 0) == 0) names += names.empty() ? n : ", " + n;
    throw ConfigError("mode '" + mode + "' expects a plain checkpoint; extra memory tensors: " +
                      names);
  }
}

}  // namespace lcmt
