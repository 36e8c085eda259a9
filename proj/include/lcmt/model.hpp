#pragma once

#include <cmath>
#include <optional>
#include <type_traits>
#include <string>
#include <utility>
#include <vector>

#include "lcmt/error.hpp"
#include "lcmt/memory.hpp"
#include "lcmt/rng.hpp"
#include "lcmt/tensor.hpp"

namespace lcmt {

// ---------------------------------------------------------------------------
// Configuration for the miniature encoder-decoder. memory_block_index selects
// the encoder block (1-based) that carries the memory-attention sublayer;
// leave it empty for a plain transformer.
// ---------------------------------------------------------------------------
struct ModelConfig {
  int vocab_size_src = 0;
  int vocab_size_tgt = 0;
  int d_model = 64;
  int n_blocks = 6;
  int n_heads = 4;
  int ffn_width = 128;
  std::optional<int> memory_block_index = 2;
  int memory_heads = 1;  // 1 = single-head memory attention (reference path)
  double lambda_att = 1.0;
  int max_len = 64;

  bool has_memory() const { return memory_block_index.has_value(); }

  void validate() const {
    if (vocab_size_src < 3 || vocab_size_tgt < 3)
      throw ConfigError("vocab sizes must cover at least <pad>/<bos>/<eos>");
    if (d_model <= 0 || d_model % 2 != 0)
      throw ConfigError("d_model must be positive and even");
    if (n_heads <= 0 || d_model % n_heads != 0)
      throw ConfigError("d_model must be divisible by n_heads");
    if (memory_heads <= 0 || d_model % memory_heads != 0)
      throw ConfigError("d_model must be divisible by memory_heads");
    if (n_blocks <= 0) throw ConfigError("n_blocks must be positive");
    if (ffn_width <= 0) throw ConfigError("ffn_width must be positive");
    if (max_len <= 0) throw ConfigError("max_len must be positive");
    if (lambda_att < 0) throw ConfigError("lambda_att must be nonnegative");
    if (memory_block_index && (*memory_block_index < 1 || *memory_block_index > n_blocks))
      throw ConfigError("memory_block_index must be in [1, n_blocks]");
  }
};

template <typename Real>
struct LayerNormWeights {
  Tensor<Real> gain, bias;
};

template <typename Real>
struct AttentionWeights {
  Tensor<Real> wq, wk, wv, wo;
};

template <typename Real>
struct FfnWeights {
  Tensor<Real> w1, b1, w2, b2;
};

template <typename Real>
struct EncoderBlockParams {
  LayerNormWeights<Real> ln1;
  AttentionWeights<Real> att;
  LayerNormWeights<Real> ln2;
  FfnWeights<Real> ffn;
};

template <typename Real>
struct DecoderBlockParams {
  LayerNormWeights<Real> ln1;
  AttentionWeights<Real> self_att;
  LayerNormWeights<Real> ln_cross;
  AttentionWeights<Real> cross_att;
  LayerNormWeights<Real> ln2;
  FfnWeights<Real> ffn;
};

// Memory sublayer weights: a pre-norm, a query projection, and the learned
// none slot. Keys/values are used raw as built from the embedding tables.
template <typename Real>
struct MemoryLayerParams {
  LayerNormWeights<Real> ln;
  Tensor<Real> wq;
  Tensor<Real> k_none, v_none;
};

template <typename Real>
struct ModelParams {
  ModelConfig config;
  Tensor<Real> src_emb, tgt_emb;
  std::vector<EncoderBlockParams<Real>> enc;
  std::optional<MemoryLayerParams<Real>> mem;
  LayerNormWeights<Real> enc_ln;
  std::vector<DecoderBlockParams<Real>> dec;
  LayerNormWeights<Real> dec_ln;
  Tensor<Real> out_w, out_b;

  ModelParams() = default;

  // Seeded deterministic init: embeddings (and the none slot) N(0, 1/sqrt(d)),
  // projections Xavier, layer norm gain 1 / bias 0, biases 0. Tensor
  // construction order is fixed, so one seed yields bitwise-identical
  // parameters on every run.
  ModelParams(const ModelConfig& cfg, uint64_t seed) : config(cfg) {
    config.validate();
    Rng rng(seed);
    const long d = cfg.d_model;
    const double emb_std = 1.0 / std::sqrt(static_cast<double>(d));
    auto randn = [&](long r, long c) {
      const double xavier = std::sqrt(2.0 / static_cast<double>(r + c));
      return Tensor<Real>::randn(r, c, rng, xavier, true);
    };
    auto randn_emb = [&](long r, long c) { return Tensor<Real>::randn(r, c, rng, emb_std, true); };
    auto grad_full = [&](long c, Real v) {
      Tensor<Real> t(1, c, true);
      std::fill(t.data(), t.data() + t.size(), v);
      return t;
    };
    auto ln = [&]() { return LayerNormWeights<Real>{grad_full(d, Real(1)), grad_full(d, Real(0))}; };

    src_emb = randn_emb(cfg.vocab_size_src, d);
    tgt_emb = randn_emb(cfg.vocab_size_tgt, d);
    enc.resize(static_cast<size_t>(cfg.n_blocks));
    for (auto& blk : enc) {
      blk.ln1 = ln();
      blk.att = {randn(d, d), randn(d, d), randn(d, d), randn(d, d)};
      blk.ln2 = ln();
      blk.ffn = {randn(d, cfg.ffn_width), grad_full(cfg.ffn_width, Real(0)),
                 randn(cfg.ffn_width, d), grad_full(d, Real(0))};
    }
    if (cfg.has_memory()) {
      mem = MemoryLayerParams<Real>{ln(), randn(d, d), randn_emb(1, d), randn_emb(1, d)};
    }
    enc_ln = ln();
    dec.resize(static_cast<size_t>(cfg.n_blocks));
    for (auto& blk : dec) {
      blk.ln1 = ln();
      blk.self_att = {randn(d, d), randn(d, d), randn(d, d), randn(d, d)};
      blk.ln_cross = ln();
      blk.cross_att = {randn(d, d), randn(d, d), randn(d, d), randn(d, d)};
      blk.ln2 = ln();
      blk.ffn = {randn(d, cfg.ffn_width), grad_full(cfg.ffn_width, Real(0)),
                 randn(cfg.ffn_width, d), grad_full(d, Real(0))};
    }
    dec_ln = ln();
    out_w = randn(d, cfg.vocab_size_tgt);
    out_b = grad_full(cfg.vocab_size_tgt, Real(0));
  }

  // All learnable tensors in a fixed, documented order. This order defines
  // the optimizer slot layout and the checkpoint record sequence.
  NamedParams<Real> named_parameters() {
    NamedParams<Real> out;
    auto put = [&](const std::string& name, Tensor<Real>& t) { out.emplace_back(name, &t); };
    put("src_emb", src_emb);
    put("tgt_emb", tgt_emb);
    for (size_t b = 0; b < enc.size(); ++b) {
      const std::string p = "enc." + std::to_string(b) + ".";
      put(p + "ln1.gain", enc[b].ln1.gain);
      put(p + "ln1.bias", enc[b].ln1.bias);
      put(p + "att.wq", enc[b].att.wq);
      put(p + "att.wk", enc[b].att.wk);
      put(p + "att.wv", enc[b].att.wv);
      put(p + "att.wo", enc[b].att.wo);
      put(p + "ln2.gain", enc[b].ln2.gain);
      put(p + "ln2.bias", enc[b].ln2.bias);
      put(p + "ffn.w1", enc[b].ffn.w1);
      put(p + "ffn.b1", enc[b].ffn.b1);
      put(p + "ffn.w2", enc[b].ffn.w2);
      put(p + "ffn.b2", enc[b].ffn.b2);
    }
    if (mem) {
      put("mem.ln.gain", mem->ln.gain);
      put("mem.ln.bias", mem->ln.bias);
      put("mem.wq", mem->wq);
      put("mem.k_none", mem->k_none);
      put("mem.v_none", mem->v_none);
    }
    put("enc_ln.gain", enc_ln.gain);
    put("enc_ln.bias", enc_ln.bias);
    for (size_t b = 0; b < dec.size(); ++b) {
      const std::string p = "dec." + std::to_string(b) + ".";
      put(p + "ln1.gain", dec[b].ln1.gain);
      put(p + "ln1.bias", dec[b].ln1.bias);
      put(p + "self.wq", dec[b].self_att.wq);
      put(p + "self.wk", dec[b].self_att.wk);
      put(p + "self.wv", dec[b].self_att.wv);
      put(p + "self.wo", dec[b].self_att.wo);
      put(p + "ln_cross.gain", dec[b].ln_cross.gain);
      put(p + "ln_cross.bias", dec[b].ln_cross.bias);
      put(p + "cross.wq", dec[b].cross_att.wq);
      put(p + "cross.wk", dec[b].cross_att.wk);
      put(p + "cross.wv", dec[b].cross_att.wv);
      put(p + "cross.wo", dec[b].cross_att.wo);
      put(p + "ln2.gain", dec[b].ln2.gain);
      put(p + "ln2.bias", dec[b].ln2.bias);
      put(p + "ffn.w1", dec[b].ffn.w1);
      put(p + "ffn.b1", dec[b].ffn.b1);
      put(p + "ffn.w2", dec[b].ffn.w2);
      put(p + "ffn.b2", dec[b].ffn.b2);
    }
    put("dec_ln.gain", dec_ln.gain);
    put("dec_ln.bias", dec_ln.bias);
    put("out.w", out_w);
    put("out.b", out_b);
    return out;
  }

};

// Expected checkpoint tensor names for a config; used for schema diffs in
// error messages.
inline std::vector<std::string> params_tensor_names(const ModelConfig& cfg) {
  std::vector<std::string> names{"src_emb", "tgt_emb"};
  for (int b = 0; b < cfg.n_blocks; ++b) {
    const std::string p = "enc." + std::to_string(b) + ".";
    for (const char* s : {"ln1.gain", "ln1.bias", "att.wq", "att.wk", "att.wv", "att.wo",
                          "ln2.gain", "ln2.bias", "ffn.w1", "ffn.b1", "ffn.w2", "ffn.b2"})
      names.push_back(p + s);
  }
  if (cfg.has_memory())
    for (const char* s : {"mem.ln.gain", "mem.ln.bias", "mem.wq", "mem.k_none", "mem.v_none"})
      names.push_back(s);
  names.push_back("enc_ln.gain");
  names.push_back("enc_ln.bias");
  for (int b = 0; b < cfg.n_blocks; ++b) {
    const std::string p = "dec." + std::to_string(b) + ".";
    for (const char* s : {"ln1.gain", "ln1.bias", "self.wq", "self.wk", "self.wv", "self.wo",
                          "ln_cross.gain", "ln_cross.bias", "cross.wq", "cross.wk", "cross.wv",
                          "cross.wo", "ln2.gain", "ln2.bias", "ffn.w1", "ffn.b1", "ffn.w2",
                          "ffn.b2"})
      names.push_back(p + s);
  }
  names.push_back("dec_ln.gain");
  names.push_back("dec_ln.bias");
  names.push_back("out.w");
  names.push_back("out.b");
  return names;
}

template <typename Real>
struct EncoderOutput {
  Tensor<Real> hidden;        // m x d_model
  Tensor<Real> memory_probs;  // m x l, only when encoded with memory
  bool has_memory_probs() const { return memory_probs.defined(); }
};

namespace detail {

// Fixed sinusoidal positions, rows 0..n-1.
template <typename Real>
Tensor<Real> sinusoid_positions(long n, long d) {
  Tensor<Real> pe(n, d);
  for (long pos = 0; pos < n; ++pos) {
    for (long i = 0; i < d / 2; ++i) {
      const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(d));
      pe.at(pos, 2 * i) = static_cast<Real>(std::sin(static_cast<double>(pos) * freq));
      pe.at(pos, 2 * i + 1) = static_cast<Real>(std::cos(static_cast<double>(pos) * freq));
    }
  }
  return pe;
}

template <typename Real>
Tensor<Real> causal_mask(long n) {
  Tensor<Real> mask(n, n);
  for (long i = 0; i < n; ++i)
    for (long j = i + 1; j < n; ++j) mask.at(i, j) = Real(1);
  return mask;
}

// Multi-head scaled dot-product attention. q_in supplies queries; kv_in
// supplies keys and values (equal to q_in for self-attention). The mask,
// when given, marks forbidden (query, key) cells.
template <typename Real>
Tensor<Real> mha(Tape<Real>* tape, const AttentionWeights<Real>& w, const Tensor<Real>& q_in,
                 const Tensor<Real>& kv_in, int heads,
                 std::type_identity_t<const Tensor<Real>*> mask) {
  const long d = w.wq.cols();
  const long dh = d / heads;
  const Real inv_sqrt_dh = Real(1) / std::sqrt(static_cast<Real>(dh));
  Tensor<Real> q = matmul(tape, q_in, w.wq);
  Tensor<Real> k = matmul(tape, kv_in, w.wk);
  Tensor<Real> v = matmul(tape, kv_in, w.wv);
  std::vector<Tensor<Real>> parts;
  parts.reserve(static_cast<size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Tensor<Real> qh = slice_cols(tape, q, h * dh, (h + 1) * dh);
    Tensor<Real> kh = slice_cols(tape, k, h * dh, (h + 1) * dh);
    Tensor<Real> vh = slice_cols(tape, v, h * dh, (h + 1) * dh);
    Tensor<Real> scores = scale(tape, matmul_nt(tape, qh, kh), inv_sqrt_dh);
    if (mask) scores = masked_fill(tape, scores, *mask, Real(-1e9));
    parts.push_back(matmul(tape, softmax_rows(tape, scores), vh));
  }
  return matmul(tape, concat_cols(tape, parts), w.wo);
}

template <typename Real>
Tensor<Real> ffn_forward(Tape<Real>* tape, const FfnWeights<Real>& w, const Tensor<Real>& x) {
  Tensor<Real> h = relu(tape, add_rowvec(tape, matmul(tape, x, w.w1), w.b1));
  return add_rowvec(tape, matmul(tape, h, w.w2), w.b2);
}

template <typename Real>
Tensor<Real> norm(Tape<Real>* tape, const LayerNormWeights<Real>& w, const Tensor<Real>& x) {
  return layer_norm(tape, x, w.gain, w.bias);
}

inline void check_tokens(const std::vector<int>& toks, int vocab, int max_len, const char* what) {
  if (static_cast<int>(toks.size()) > max_len)
    throw DimError(std::string(what) + ": sequence length " + std::to_string(toks.size()) +
                   " exceeds max_len " + std::to_string(max_len));
  for (int t : toks)
    if (t < 0 || t >= vocab)
      throw IndexError(std::string(what) + ": token index " + std::to_string(t) +
                       " outside vocab of size " + std::to_string(vocab));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Encoder. Blocks are pre-norm residual:
//   x += self_attention(ln1(x))
//   x += memory_attention(ln_mem(x) Wq, memory)     [only the chosen block]
//   x += ffn(ln2(x))
// followed by a final layer norm. With the memory's value pathway zeroed the
// memory term contributes exact zeros, so the augmented encoder reproduces
// the plain one bitwise -- a property the tests pin down.
// ---------------------------------------------------------------------------
template <typename Real>
EncoderOutput<Real> encode_impl(Tape<Real>* tape, const ModelParams<Real>& params,
                                const std::vector<int>& source_tokens,
                                const ConstraintMemory<Real>* memory) {
  const ModelConfig& cfg = params.config;
  detail::check_tokens(source_tokens, cfg.vocab_size_src, cfg.max_len, "encode");
  if (source_tokens.empty()) throw DimError("encode: empty source");
  const long m = static_cast<long>(source_tokens.size());
  const Real sqrt_d = std::sqrt(static_cast<Real>(cfg.d_model));

  Tensor<Real> x = add(tape, scale(tape, embedding(tape, params.src_emb, source_tokens), sqrt_d),
                       detail::sinusoid_positions<Real>(m, cfg.d_model));
  EncoderOutput<Real> out;
  for (int b = 0; b < cfg.n_blocks; ++b) {
    const auto& blk = params.enc[static_cast<size_t>(b)];
    Tensor<Real> normed = detail::norm(tape, blk.ln1, x);
    x = add(tape, x, detail::mha(tape, blk.att, normed, normed, cfg.n_heads, nullptr));
    if (memory && cfg.has_memory() && *cfg.memory_block_index == b + 1) {
      if (!params.mem) throw ConfigError("encode: config has memory block but params lack it");
      Tensor<Real> queries =
          matmul(tape, detail::norm(tape, params.mem->ln, x), params.mem->wq);
      auto [ctx, probs] =
          memory_attention_multihead(tape, queries, *memory, cfg.memory_heads);
      x = add(tape, x, ctx);
      out.memory_probs = probs;
    }
    x = add(tape, x, detail::ffn_forward(tape, blk.ffn, detail::norm(tape, blk.ln2, x)));
  }
  out.hidden = detail::norm(tape, params.enc_ln, x);
  return out;
}

template <typename Real>
EncoderOutput<Real> encode(Tape<Real>* tape, const ModelParams<Real>& params,
                           const std::vector<int>& source_tokens) {
  return encode_impl<Real>(tape, params, source_tokens, nullptr);
}

template <typename Real>
EncoderOutput<Real> encode_with_memory(Tape<Real>* tape, const ModelParams<Real>& params,
                                       const std::vector<int>& source_tokens,
                                       const ConstraintMemory<Real>& memory) {
  if (memory.slots() < 1) throw ConstraintError("encode_with_memory: memory needs >= 1 slot");
  if (!params.config.has_memory())
    throw ConfigError("encode_with_memory: model was built without a memory sublayer");
  return encode_impl<Real>(tape, params, source_tokens, &memory);
}

// ---------------------------------------------------------------------------
// Decoder over a full teacher-forced input (one logit row per input token).
// Causal self-attention keeps row i independent of inputs at positions > i.
// ---------------------------------------------------------------------------
template <typename Real>
Tensor<Real> decoder_forward(Tape<Real>* tape, const ModelParams<Real>& params,
                             const EncoderOutput<Real>& enc,
                             const std::vector<int>& input_tokens) {
  const ModelConfig& cfg = params.config;
  detail::check_tokens(input_tokens, cfg.vocab_size_tgt, cfg.max_len, "decode");
  if (input_tokens.empty()) throw DimError("decode: empty input");
  const long n = static_cast<long>(input_tokens.size());
  const Real sqrt_d = std::sqrt(static_cast<Real>(cfg.d_model));
  Tensor<Real> mask = detail::causal_mask<Real>(n);

  Tensor<Real> x = add(tape, scale(tape, embedding(tape, params.tgt_emb, input_tokens), sqrt_d),
                       detail::sinusoid_positions<Real>(n, cfg.d_model));
  for (int b = 0; b < cfg.n_blocks; ++b) {
    const auto& blk = params.dec[static_cast<size_t>(b)];
    Tensor<Real> normed = detail::norm(tape, blk.ln1, x);
    x = add(tape, x, detail::mha(tape, blk.self_att, normed, normed, cfg.n_heads, &mask));
    x = add(tape, x, detail::mha(tape, blk.cross_att, detail::norm(tape, blk.ln_cross, x),
                                 enc.hidden, cfg.n_heads, nullptr));
    x = add(tape, x, detail::ffn_forward(tape, blk.ffn, detail::norm(tape, blk.ln2, x)));
  }
  x = detail::norm(tape, params.dec_ln, x);
  return add_rowvec(tape, matmul(tape, x, params.out_w), params.out_b);
}

// One decoding step: logits for the token following the given prefix.
// The prefix must start with <bos>.
template <typename Real>
std::vector<double> decode_step(const ModelParams<Real>& params, const EncoderOutput<Real>& enc,
                                const std::vector<int>& prefix, int bos_id) {
  if (prefix.empty() || prefix.front() != bos_id)
    throw IndexError("decode_step: prefix must begin with <bos>");
  Tensor<Real> logits = decoder_forward<Real>(nullptr, params, enc, prefix);
  const long last = logits.rows() - 1;
  std::vector<double> row(static_cast<size_t>(logits.cols()));
  for (long j = 0; j < logits.cols(); ++j) row[static_cast<size_t>(j)] = logits.at(last, j);
  return row;
}

// log P(target | encoder output) summed over target positions; the target
// must end with <eos>. Equals -(token count) * cross_entropy on the same
// teacher-forced batch.
template <typename Real>
double sequence_logprob(const ModelParams<Real>& params, const EncoderOutput<Real>& enc,
                        const std::vector<int>& target_tokens, int bos_id, int eos_id) {
  if (target_tokens.empty() || target_tokens.back() != eos_id)
    throw IndexError("sequence_logprob: target must end with <eos>");
  std::vector<int> input;
  input.reserve(target_tokens.size());
  input.push_back(bos_id);
  input.insert(input.end(), target_tokens.begin(), target_tokens.end() - 1);
  Tensor<Real> logits = decoder_forward<Real>(nullptr, params, enc, input);
  double total = 0;
  for (long i = 0; i < logits.rows(); ++i) {
    double mx = logits.at(i, 0);
    for (long j = 1; j < logits.cols(); ++j) mx = std::max(mx, static_cast<double>(logits.at(i, j)));
    double sum = 0;
    for (long j = 0; j < logits.cols(); ++j)
      sum += std::exp(static_cast<double>(logits.at(i, j)) - mx);
    total += static_cast<double>(logits.at(i, target_tokens[static_cast<size_t>(i)])) - mx -
             std::log(sum);
  }
  return total;
}

}  // namespace lcmt
