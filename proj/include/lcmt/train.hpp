#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "lcmt/data_io.hpp"
#include "lcmt/model.hpp"
#include "lcmt/rng.hpp"

namespace lcmt {

struct TrainHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int warmup_steps = 100;
  double clip_norm = 1.0;
  double p_drop = 0.0;  // per-sentence probability of dropping all constraints
};

// Adam with linear learning-rate warmup. Slot layout follows the model's
// named_parameters() order.
template <typename Real>
class AdamOptimizer {
 public:
  AdamOptimizer(const NamedParams<Real>& params, TrainHyper hyper) : hyper_(hyper) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (const auto& [name, t] : params) {
      m_.emplace_back(t->size(), Real(0));
      v_.emplace_back(t->size(), Real(0));
    }
  }

  long step_count() const { return step_; }

  double current_lr() const {
    const double warm =
        hyper_.warmup_steps > 0
            ? std::min(1.0, static_cast<double>(step_ + 1) / hyper_.warmup_steps)
            : 1.0;
    return hyper_.lr * warm;
  }

  // One update from the gradients currently in the parameter buffers.
  double step(const NamedParams<Real>& params) {
    const double lr = current_lr();
    ++step_;
    const double b1 = hyper_.beta1, b2 = hyper_.beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(step_));
    for (size_t pi = 0; pi < params.size(); ++pi) {
      Tensor<Real>* t = params[pi].second;
      if (!t->requires_grad()) continue;
      Real* w = t->data();
      const Real* g = t->grad();
      Real* m = m_[pi].data();
      Real* v = v_[pi].data();
      for (size_t i = 0, n = t->size(); i < n; ++i) {
        const double gi = static_cast<double>(g[i]);
        const double mi = b1 * static_cast<double>(m[i]) + (1.0 - b1) * gi;
        const double vi = b2 * static_cast<double>(v[i]) + (1.0 - b2) * gi * gi;
        m[i] = static_cast<Real>(mi);
        v[i] = static_cast<Real>(vi);
        w[i] -= static_cast<Real>(lr * (mi / bc1) / (std::sqrt(vi / bc2) + hyper_.adam_eps));
      }
    }
    return lr;
  }

 private:
  TrainHyper hyper_;
  long step_ = 0;
  std::vector<std::vector<Real>> m_, v_;
};

// One teacher-forced example, already vocab-encoded. tgt_ids ends with <eos>;
// constraints carry vocab ids with origin filled in by the batch assembler.
struct EncodedExample {
  std::vector<int> src_ids;
  std::vector<int> tgt_ids;
  std::vector<ConstraintPair> constraints;
};

struct StepResult {
  double main_loss = 0;
  double att_loss = 0;
  double total_loss = 0;
  double grad_norm = 0;
  double lr = 0;
};

// ---------------------------------------------------------------------------
// One training step over a batch. With a memory-carrying config, all
// sentences' constraints are encoded into one shared memory (plus the none
// slot); each token is supervised to attend to its own constraint's slot or
// to the none slot. Loss = main + lambda_att * attention loss; when
// lambda_att is zero the attention term is excluded from the graph entirely,
// so updates reduce bitwise to a plain main-loss step.
// ---------------------------------------------------------------------------
template <typename Real>
StepResult train_step(ModelParams<Real>& params, const std::vector<EncodedExample>& batch,
                      AdamOptimizer<Real>& opt, const TrainHyper& hyper, Rng& dropout_rng) {
  if (batch.empty()) throw TrainError("train_step: empty batch");
  const ModelConfig& cfg = params.config;
  const bool use_memory = cfg.has_memory();

  std::vector<ConstraintPair> pairs;
  if (use_memory) {
    for (size_t s = 0; s < batch.size(); ++s) {
      if (batch[s].constraints.empty()) continue;
      if (hyper.p_drop > 0.0 && dropout_rng.next_double() < hyper.p_drop) continue;
      for (ConstraintPair p : batch[s].constraints) {
        p.origin = static_cast<int>(s);
        pairs.push_back(std::move(p));
      }
    }
  }

  Tape<Real> tape;
  ConstraintMemory<Real> memory;
  if (use_memory) {
    // The memory shares the model's embedding convention (rows scaled by
    // sqrt(d)), so constraint values land at residual-stream magnitude.
    const Real sqrt_d = std::sqrt(static_cast<Real>(cfg.d_model));
    memory = build_memory(&tape, pairs, scale(&tape, params.src_emb, sqrt_d),
                          scale(&tape, params.tgt_emb, sqrt_d),
                          scale(&tape, params.mem->k_none, sqrt_d),
                          scale(&tape, params.mem->v_none, sqrt_d));
  }

  Tensor<Real> loss_sum;
  std::vector<Tensor<Real>> probs_rows;
  std::vector<int> src_lengths;
  long total_tgt_tokens = 0;
  for (const auto& ex : batch) {
    EncoderOutput<Real> enc = use_memory
                                  ? encode_with_memory(&tape, params, ex.src_ids, memory)
                                  : encode(&tape, params, ex.src_ids);
    if (use_memory) {
      probs_rows.push_back(enc.memory_probs);
      src_lengths.push_back(static_cast<int>(ex.src_ids.size()));
    }
    if (ex.tgt_ids.empty()) throw TrainError("train_step: empty target");
    std::vector<int> input;
    input.reserve(ex.tgt_ids.size());
    input.push_back(Vocab::kBos);
    input.insert(input.end(), ex.tgt_ids.begin(), ex.tgt_ids.end() - 1);
    Tensor<Real> logits = decoder_forward(&tape, params, enc, input);
    Tensor<Real> ce = cross_entropy(&tape, logits, ex.tgt_ids);
    Tensor<Real> weighted = scale(&tape, ce, static_cast<Real>(ex.tgt_ids.size()));
    loss_sum = loss_sum.defined() ? add(&tape, loss_sum, weighted) : weighted;
    total_tgt_tokens += static_cast<long>(ex.tgt_ids.size());
  }
  Tensor<Real> main_loss = scale(&tape, loss_sum, Real(1) / static_cast<Real>(total_tgt_tokens));

  StepResult res;
  Tensor<Real> total = main_loss;
  res.main_loss = main_loss.item();
  if (use_memory) {
    Tensor<Real> all_probs = concat_rows(&tape, probs_rows);
    AttentionLabels labels = make_attention_labels(src_lengths, pairs, memory.slots());
    Tensor<Real> att = attention_loss(&tape, all_probs, labels);
    res.att_loss = att.item();
    if (cfg.lambda_att > 0.0)
      total = add(&tape, main_loss, scale(&tape, att, static_cast<Real>(cfg.lambda_att)));
  }
  res.total_loss = total.item();
  if (!std::isfinite(res.total_loss))
    throw TrainError("train_step: non-finite loss (main=" + std::to_string(res.main_loss) +
                     ", att=" + std::to_string(res.att_loss) + ")");

  auto named = params.named_parameters();
  zero_grad(named);
  tape.backward(total);
  if (hyper.clip_norm > 0) clip_grad_norm(named, hyper.clip_norm);
  res.grad_norm = grad_global_norm(named);
  res.lr = opt.step(named);
  return res;
}

// ---------------------------------------------------------------------------
// Vocab-encoding of corpus records into training examples. Constraint spans
// are taken from the record when present; token-only constraints get a
// sentinel span and are rejected for training (labels need positions).
// ---------------------------------------------------------------------------
inline std::vector<ConstraintPair> encode_constraints(const CorpusRecord& rec, const Vocab& src_vocab,
                                                      const Vocab& tgt_vocab, bool require_span) {
  std::vector<ConstraintPair> out;
  for (const auto& c : rec.constraints) {
    ConstraintPair p;
    p.src_ids = src_vocab.encode(c.src_tokens);
    p.tgt_ids = tgt_vocab.encode(c.tgt_tokens);
    if (c.src_span) {
      p.src_span = *c.src_span;
    } else if (require_span) {
      throw ConstraintError("constraint without source span cannot supervise attention labels");
    } else {
      p.src_span = Span{0, 0};
    }
    out.push_back(std::move(p));
  }
  return out;
}

inline EncodedExample encode_example(const CorpusRecord& rec, const Vocab& src_vocab,
                                     const Vocab& tgt_vocab, bool with_constraints) {
  EncodedExample ex;
  ex.src_ids = src_vocab.encode(rec.src);
  ex.tgt_ids = tgt_vocab.encode(rec.tgt);
  ex.tgt_ids.push_back(Vocab::kEos);
  if (with_constraints) ex.constraints = encode_constraints(rec, src_vocab, tgt_vocab, true);
  return ex;
}

struct LossLogRow {
  long step = 0;
  double main_loss = 0;
  double att_loss = 0;
  double total_loss = 0;
  double lr = 0;
};

// Deterministic epoch-shuffled mini-batch training driver.
template <typename Real>
std::vector<LossLogRow> run_training(ModelParams<Real>& params,
                                     const std::vector<EncodedExample>& examples, long steps,
                                     long batch_size, const TrainHyper& hyper, uint64_t seed,
                                     AdamOptimizer<Real>* opt_inout = nullptr) {
  if (examples.empty()) throw TrainError("run_training: no examples");
  auto named = params.named_parameters();
  AdamOptimizer<Real> local_opt(named, hyper);
  AdamOptimizer<Real>& opt = opt_inout ? *opt_inout : local_opt;
  Rng dropout_rng(mix_seed(seed, 0xd207));

  std::vector<LossLogRow> log;
  log.reserve(static_cast<size_t>(steps));
  std::vector<size_t> order;
  size_t cursor = 0;
  uint64_t epoch = 0;
  for (long step = 0; step < steps; ++step) {
    std::vector<EncodedExample> batch;
    batch.reserve(static_cast<size_t>(batch_size));
    for (long b = 0; b < batch_size; ++b) {
      if (cursor >= order.size()) {
        Rng shuffle_rng(mix_seed(seed, 0x5450 + epoch));
        order = shuffle_rng.permutation(examples.size());
        cursor = 0;
        ++epoch;
      }
      batch.push_back(examples[order[cursor++]]);
    }
    StepResult r = train_step(params, batch, opt, hyper, dropout_rng);
    log.push_back({step + 1, r.main_loss, r.att_loss, r.total_loss, r.lr});
  }
  return log;
}

}  // namespace lcmt
