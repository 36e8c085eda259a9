#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "lcmt/error.hpp"
#include "lcmt/span.hpp"
#include "lcmt/tensor.hpp"

namespace lcmt {

// One lexical constraint as the model consumes it: vocab indices for both
// phrases plus where the source phrase sits in its batch sentence.
struct ConstraintPair {
  std::vector<int> src_ids;
  std::vector<int> tgt_ids;
  int origin = 0;   // sentence index within the batch
  Span src_span{};  // source phrase position inside that sentence
};

// The external memory for one batch (or one inference sentence): slot i is
// row i of keys/values; the last row is always the learned none slot.
template <typename Real>
struct ConstraintMemory {
  Tensor<Real> keys;    // l x d
  Tensor<Real> values;  // l x d
  std::vector<int> slot_origins;  // per slot; -1 for the none slot

  long slots() const { return keys.rows(); }
  long none_slot() const { return keys.rows() - 1; }
  long width() const { return keys.cols(); }
};

// Per-token supervision targets for the memory attention: slot[j] is the
// 0-based memory row token j should attend to (none slot = l-1).
struct AttentionLabels {
  std::vector<int> slot;
};

// ---------------------------------------------------------------------------
// Key/value construction: each slot is the mean of the raw embedding rows of
// its phrase, source side for keys, target side for values; the learned
// (k_none, v_none) pair is appended as the final slot. Runs on the tape, so
// gradients flow back into both embedding tables and the none-slot vectors.
// ---------------------------------------------------------------------------
template <typename Real>
ConstraintMemory<Real> build_memory(Tape<Real>* tape, const std::vector<ConstraintPair>& pairs,
                                    const Tensor<Real>& src_emb, const Tensor<Real>& tgt_emb,
                                    const Tensor<Real>& k_none, const Tensor<Real>& v_none) {
  if (k_none.rows() != 1 || v_none.rows() != 1 || k_none.cols() != src_emb.cols() ||
      v_none.cols() != tgt_emb.cols())
    throw DimError("build_memory: none-slot vectors must be 1 x d");
  std::vector<Tensor<Real>> key_rows, value_rows;
  key_rows.reserve(pairs.size() + 1);
  value_rows.reserve(pairs.size() + 1);
  ConstraintMemory<Real> mem;
  for (const auto& p : pairs) {
    if (p.src_ids.empty() || p.tgt_ids.empty())
      throw ConstraintError("build_memory: empty constraint phrase");
    key_rows.push_back(mean_rows(tape, embedding(tape, src_emb, p.src_ids)));
    value_rows.push_back(mean_rows(tape, embedding(tape, tgt_emb, p.tgt_ids)));
    mem.slot_origins.push_back(p.origin);
  }
  key_rows.push_back(k_none);
  value_rows.push_back(v_none);
  mem.slot_origins.push_back(-1);
  mem.keys = concat_rows(tape, key_rows);
  mem.values = concat_rows(tape, value_rows);
  return mem;
}

// ---------------------------------------------------------------------------
// Scaled dot-product attention from token queries into the memory:
//   probs row j = softmax(q_j . K / sqrt(d)),  context row j = probs_j . V
// ---------------------------------------------------------------------------
template <typename Real>
std::pair<Tensor<Real>, Tensor<Real>> memory_attention(Tape<Real>* tape,
                                                       const Tensor<Real>& queries,
                                                       const ConstraintMemory<Real>& memory) {
  if (queries.cols() != memory.width())
    throw DimError("memory_attention: query width != memory width");
  const Real inv_sqrt_d = Real(1) / std::sqrt(static_cast<Real>(memory.width()));
  Tensor<Real> scores = scale(tape, matmul_nt(tape, queries, memory.keys), inv_sqrt_d);
  Tensor<Real> probs = softmax_rows(tape, scores);
  Tensor<Real> context = matmul(tape, probs, memory.values);
  return {context, probs};
}

// Multi-head variant: d is split into `heads` groups across queries, keys and
// values; the returned probs are the head average (that is what the attention
// loss supervises in multi-head mode).
template <typename Real>
std::pair<Tensor<Real>, Tensor<Real>> memory_attention_multihead(
    Tape<Real>* tape, const Tensor<Real>& queries, const ConstraintMemory<Real>& memory,
    int heads) {
  if (heads <= 1) return memory_attention(tape, queries, memory);
  if (memory.width() % heads != 0)
    throw DimError("memory_attention: width not divisible by head count");
  const long dh = memory.width() / heads;
  const Real inv_sqrt_dh = Real(1) / std::sqrt(static_cast<Real>(dh));
  std::vector<Tensor<Real>> ctx_parts;
  Tensor<Real> probs_sum;
  for (int h = 0; h < heads; ++h) {
    Tensor<Real> qh = slice_cols(tape, queries, h * dh, (h + 1) * dh);
    Tensor<Real> kh = slice_cols(tape, memory.keys, h * dh, (h + 1) * dh);
    Tensor<Real> vh = slice_cols(tape, memory.values, h * dh, (h + 1) * dh);
    Tensor<Real> probs = softmax_rows(tape, scale(tape, matmul_nt(tape, qh, kh), inv_sqrt_dh));
    ctx_parts.push_back(matmul(tape, probs, vh));
    probs_sum = h == 0 ? probs : add(tape, probs_sum, probs);
  }
  return {concat_cols(tape, ctx_parts),
          scale(tape, probs_sum, Real(1) / static_cast<Real>(heads))};
}

// ---------------------------------------------------------------------------
// Attention labels: token j of a batch gets the slot of the unique constraint
// covering it in its own sentence, otherwise the none slot. Token order is
// sentence order, positions within each sentence ascending. Overlapping
// constraints within one sentence are rejected (labels would be ambiguous).
// ---------------------------------------------------------------------------
inline AttentionLabels make_attention_labels(const std::vector<int>& sentence_lengths,
                                             const std::vector<ConstraintPair>& pairs_in_slot_order,
                                             long total_slots) {
  if (total_slots != static_cast<long>(pairs_in_slot_order.size()) + 1)
    throw ConstraintError("make_attention_labels: slot count != pairs + none slot");
  std::vector<int> offsets(sentence_lengths.size() + 1, 0);
  for (size_t s = 0; s < sentence_lengths.size(); ++s)
    offsets[s + 1] = offsets[s] + sentence_lengths[s];
  const int none = static_cast<int>(total_slots) - 1;

  AttentionLabels labels;
  labels.slot.assign(static_cast<size_t>(offsets.back()), none);
  for (size_t p = 0; p < pairs_in_slot_order.size(); ++p) {
    const auto& pair = pairs_in_slot_order[p];
    if (pair.origin < 0 || pair.origin >= static_cast<int>(sentence_lengths.size()))
      throw ConstraintError("make_attention_labels: constraint origin outside batch");
    const int len = sentence_lengths[static_cast<size_t>(pair.origin)];
    if (pair.src_span.begin < 0 || pair.src_span.end > len || pair.src_span.len() <= 0)
      throw ConstraintError("make_attention_labels: constraint span outside its sentence");
    for (int j = pair.src_span.begin; j < pair.src_span.end; ++j) {
      int& slot = labels.slot[static_cast<size_t>(offsets[static_cast<size_t>(pair.origin)] + j)];
      if (slot != none)
        throw ConstraintError("make_attention_labels: overlapping constraints in one sentence");
      slot = static_cast<int>(p);
    }
  }
  return labels;
}

// ---------------------------------------------------------------------------
// Attention loss: mean over tokens of -log p[token, label]. Probabilities are
// clamped at eps so a collapsed slot can never produce NaN. All tokens count,
// including none-labeled ones -- they are supervised toward the none slot.
// ---------------------------------------------------------------------------
template <typename Real>
Tensor<Real> attention_loss(Tape<Real>* tape, const Tensor<Real>& probs,
                            const AttentionLabels& labels, Real eps = Real(1e-9)) {
  const long n = probs.rows(), l = probs.cols();
  if (static_cast<long>(labels.slot.size()) != n)
    throw DimError("attention_loss: one label per probability row required");
  for (int s : labels.slot)
    if (s < 0 || s >= l) throw IndexError("attention_loss: label slot out of range");

  Real loss = 0;
  for (long j = 0; j < n; ++j) {
    Real p = probs.at(j, labels.slot[static_cast<size_t>(j)]);
    loss -= std::log(std::max(p, eps));
  }
  loss /= static_cast<Real>(n);
  Tensor<Real> out(1, 1, detail::wants_grad(tape, {&probs}));
  out.data()[0] = loss;
  detail::check_finite(out, "attention_loss");
  if (out.requires_grad()) {
    tape->note_intermediate(out);
    auto slots = labels.slot;
    tape->record([probs, out, slots, n, l, eps]() {
      const Real d = out.grad()[0] / static_cast<Real>(n);
      Real* gp = probs.grad();
      for (long j = 0; j < n; ++j) {
        const Real p = probs.at(j, slots[static_cast<size_t>(j)]);
        if (p >= eps) gp[j * l + slots[static_cast<size_t>(j)]] -= d / p;
      }
    });
  }
  return out;
}

}  // namespace lcmt
