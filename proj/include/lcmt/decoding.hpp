#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "lcmt/checkpoint.hpp"
#include "lcmt/data_io.hpp"
#include "lcmt/extraction.hpp"
#include "lcmt/model.hpp"

namespace lcmt {

// Next-token log-probability source. Beam search only ever sees this
// interface, so tests can drive it with hand-built distributions and the
// forward-call instrumentation is exact: one call per live hypothesis per
// step, regardless of constraint count.
struct StepScorer {
  std::function<std::vector<double>(const std::vector<int>&)> logprobs;
  long forward_calls = 0;

  std::vector<double> operator()(const std::vector<int>& prefix) {
    ++forward_calls;
    return logprobs(prefix);
  }
};

template <typename Real>
StepScorer model_scorer(const ModelParams<Real>& params, const EncoderOutput<Real>& enc,
                        int bos_id = Vocab::kBos) {
  StepScorer s;
  s.logprobs = [&params, &enc, bos_id](const std::vector<int>& prefix) {
    std::vector<int> input;
    input.reserve(prefix.size() + 1);
    input.push_back(bos_id);
    input.insert(input.end(), prefix.begin(), prefix.end());
    std::vector<double> row = decode_step(params, enc, input, bos_id);
    double mx = row[0];
    for (double v : row) mx = std::max(mx, v);
    double sum = 0;
    for (double v : row) sum += std::exp(v - mx);
    const double lse = mx + std::log(sum);
    for (double& v : row) v -= lse;
    return row;
  };
  return s;
}

struct Hypothesis {
  std::vector<int> tokens;  // generated tokens; includes <eos> when finished
  double score = 0;         // sum of log-probs
  bool finished = false;
  bool truncated = false;  // hit max_len without <eos>
  // DBA bookkeeping
  std::vector<int> progress;  // per-constraint matched-token count
  std::vector<char> complete;
  int satisfied_tokens = 0;

  double normalized(double alpha) const {
    const double len = static_cast<double>(std::max<size_t>(1, tokens.size()));
    return score / std::pow(len, alpha);
  }

  bool satisfies_all() const {
    for (char c : complete)
      if (!c) return false;
    return true;
  }

  int satisfied_constraints() const {
    int n = 0;
    for (char c : complete) n += c ? 1 : 0;
    return n;
  }
};

struct DecodeResult {
  std::vector<Hypothesis> hypotheses;  // best first
  bool constraints_unmet = false;      // top hypothesis misses some constraint
};

namespace detail {

struct Candidate {
  int parent = 0;
  int token = 0;
  double score = 0;
};

// Deterministic candidate order: score desc, then lower token, then earlier
// parent. This is the tie-break rule used everywhere.
inline bool candidate_before(const Candidate& a, const Candidate& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.token != b.token) return a.token < b.token;
  return a.parent < b.parent;
}

inline bool final_rank_before(const Hypothesis& a, const Hypothesis& b, double alpha) {
  const double na = a.normalized(alpha), nb = b.normalized(alpha);
  if (na != nb) return na > nb;
  return a.tokens < b.tokens;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Standard beam search with length-normalized final ranking
// (score / len^alpha). Hypotheses still alive at max_len are force-finished
// and flagged truncated. k = 1 reduces to the greedy argmax chain bitwise.
// ---------------------------------------------------------------------------
inline DecodeResult beam_search(StepScorer& scorer, int vocab_size, int k, int max_len,
                                double alpha = 0.6, int eos_id = Vocab::kEos) {
  if (k < 1) throw ConfigError("beam_search: beam size must be >= 1");
  if (max_len < 1) throw ConfigError("beam_search: max_len must be >= 1");
  std::vector<Hypothesis> live{Hypothesis{}};
  std::vector<Hypothesis> done;

  for (int step = 0; step < max_len && !live.empty(); ++step) {
    std::vector<detail::Candidate> cands;
    cands.reserve(live.size() * static_cast<size_t>(vocab_size));
    for (size_t pi = 0; pi < live.size(); ++pi) {
      std::vector<double> lp = scorer(live[pi].tokens);
      if (static_cast<int>(lp.size()) != vocab_size)
        throw DimError("beam_search: scorer row width != vocab size");
      for (int t = 0; t < vocab_size; ++t)
        cands.push_back({static_cast<int>(pi), t, live[pi].score + lp[static_cast<size_t>(t)]});
    }
    std::sort(cands.begin(), cands.end(), detail::candidate_before);
    std::vector<Hypothesis> next;
    for (size_t ci = 0; ci < cands.size() && ci < static_cast<size_t>(k); ++ci) {
      const auto& c = cands[ci];
      Hypothesis h = live[static_cast<size_t>(c.parent)];
      h.tokens.push_back(c.token);
      h.score = c.score;
      if (c.token == eos_id) {
        h.finished = true;
        done.push_back(std::move(h));
      } else {
        next.push_back(std::move(h));
      }
    }
    live = std::move(next);
  }
  for (auto& h : live) {
    h.truncated = true;
    done.push_back(std::move(h));
  }
  std::sort(done.begin(), done.end(),
            [alpha](const Hypothesis& a, const Hypothesis& b) {
              return detail::final_rank_before(a, b, alpha);
            });
  return {std::move(done), false};
}

inline std::vector<int> greedy_decode(StepScorer& scorer, int max_len, int eos_id = Vocab::kEos) {
  std::vector<int> tokens;
  for (int step = 0; step < max_len; ++step) {
    std::vector<double> lp = scorer(tokens);
    int best = 0;
    for (int t = 1; t < static_cast<int>(lp.size()); ++t)
      if (lp[static_cast<size_t>(t)] > lp[static_cast<size_t>(best)]) best = t;
    tokens.push_back(best);
    if (best == eos_id) break;
  }
  return tokens;
}

// ---------------------------------------------------------------------------
// Lexically-constrained beam search with dynamic beam allocation. Constraints
// are target-side token sequences. Per step each live hypothesis contributes
// its top-k model extensions plus the forced next token of every unmet
// constraint; candidates are placed into C+1 banks by satisfied-token count
// (C = total constraint tokens), each bank gets floor(k / (C+1)) slots, and
// leftover slots go to the most-progressed nonempty banks. A partial match
// that mismatches is un-counted (progress resets, possibly to a restarted
// match on the constraint's first token).
//
// Model work per step stays one forward per live hypothesis -- independent
// of C -- which is the whole point of the scheme.
// ---------------------------------------------------------------------------
inline DecodeResult dba_decode(StepScorer& scorer, int vocab_size, int k, int max_len,
                               const std::vector<std::vector<int>>& constraints,
                               double alpha = 0.6, int eos_id = Vocab::kEos) {
  if (k < 1) throw ConfigError("dba_decode: beam size must be >= 1");
  for (const auto& c : constraints)
    if (c.empty()) throw ConstraintError("dba_decode: empty constraint");
  int total_tokens = 0;
  for (const auto& c : constraints) total_tokens += static_cast<int>(c.size());
  const int n_banks = total_tokens + 1;

  auto advance = [&](Hypothesis& h, int token) {
    for (size_t ci = 0; ci < constraints.size(); ++ci) {
      if (h.complete[ci]) continue;
      const auto& c = constraints[ci];
      int p = h.progress[ci];
      if (token == c[static_cast<size_t>(p)]) {
        ++p;
      } else if (p > 0 && token == c[0]) {
        p = 1;
      } else {
        p = 0;
      }
      if (p == static_cast<int>(c.size())) {
        h.complete[ci] = 1;
        h.progress[ci] = p;
      } else {
        h.progress[ci] = p;
      }
    }
    h.satisfied_tokens = 0;
    for (size_t ci = 0; ci < constraints.size(); ++ci)
      h.satisfied_tokens +=
          h.complete[ci] ? static_cast<int>(constraints[ci].size()) : h.progress[ci];
  };

  Hypothesis root;
  root.progress.assign(constraints.size(), 0);
  root.complete.assign(constraints.size(), 0);
  std::vector<Hypothesis> live{root};
  std::vector<Hypothesis> done;

  for (int step = 0; step < max_len && !live.empty(); ++step) {
    std::vector<detail::Candidate> cands;
    std::vector<std::vector<char>> seen(live.size(),
                                        std::vector<char>(static_cast<size_t>(vocab_size), 0));
    for (size_t pi = 0; pi < live.size(); ++pi) {
      std::vector<double> lp = scorer(live[pi].tokens);
      if (static_cast<int>(lp.size()) != vocab_size)
        throw DimError("dba_decode: scorer row width != vocab size");
      // top-k model extensions
      std::vector<int> order(static_cast<size_t>(vocab_size));
      for (int t = 0; t < vocab_size; ++t) order[static_cast<size_t>(t)] = t;
      std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (lp[static_cast<size_t>(a)] != lp[static_cast<size_t>(b)])
          return lp[static_cast<size_t>(a)] > lp[static_cast<size_t>(b)];
        return a < b;
      });
      const int take = std::min(k, vocab_size);
      for (int i = 0; i < take; ++i) {
        const int t = order[static_cast<size_t>(i)];
        if (!seen[pi][static_cast<size_t>(t)]) {
          seen[pi][static_cast<size_t>(t)] = 1;
          cands.push_back({static_cast<int>(pi), t, live[pi].score + lp[static_cast<size_t>(t)]});
        }
      }
      // forced next token of every unmet constraint
      for (size_t ci = 0; ci < constraints.size(); ++ci) {
        if (live[pi].complete[ci]) continue;
        const int t = constraints[ci][static_cast<size_t>(live[pi].progress[ci])];
        if (!seen[pi][static_cast<size_t>(t)]) {
          seen[pi][static_cast<size_t>(t)] = 1;
          cands.push_back({static_cast<int>(pi), t, live[pi].score + lp[static_cast<size_t>(t)]});
        }
      }
    }
    std::sort(cands.begin(), cands.end(), detail::candidate_before);

    // Materialize states and bucket into banks (already score-ordered).
    std::vector<Hypothesis> staged;
    staged.reserve(cands.size());
    std::vector<std::vector<size_t>> banks(static_cast<size_t>(n_banks));
    for (const auto& c : cands) {
      Hypothesis h = live[static_cast<size_t>(c.parent)];
      h.tokens.push_back(c.token);
      h.score = c.score;
      advance(h, c.token);
      banks[static_cast<size_t>(h.satisfied_tokens)].push_back(staged.size());
      staged.push_back(std::move(h));
    }

    const int quota = k / n_banks;
    std::vector<size_t> taken_per_bank(static_cast<size_t>(n_banks), 0);
    std::vector<size_t> selected;
    for (int b = 0; b < n_banks; ++b) {
      const auto& bank = banks[static_cast<size_t>(b)];
      const size_t take = std::min<size_t>(static_cast<size_t>(quota), bank.size());
      for (size_t i = 0; i < take; ++i) selected.push_back(bank[i]);
      taken_per_bank[static_cast<size_t>(b)] = take;
    }
    long leftover = k - static_cast<long>(selected.size());
    for (int b = n_banks - 1; b >= 0 && leftover > 0; --b) {
      const auto& bank = banks[static_cast<size_t>(b)];
      size_t& t = taken_per_bank[static_cast<size_t>(b)];
      while (leftover > 0 && t < bank.size()) {
        selected.push_back(bank[t++]);
        --leftover;
      }
    }
    std::sort(selected.begin(), selected.end());  // keep global score order

    std::vector<Hypothesis> next;
    for (size_t idx : selected) {
      Hypothesis& h = staged[idx];
      if (!h.tokens.empty() && h.tokens.back() == eos_id) {
        h.finished = true;
        done.push_back(std::move(h));
      } else {
        next.push_back(std::move(h));
      }
    }
    live = std::move(next);
  }
  for (auto& h : live) {
    h.truncated = true;
    done.push_back(std::move(h));
  }
  std::sort(done.begin(), done.end(), [alpha](const Hypothesis& a, const Hypothesis& b) {
    const bool sa = a.satisfies_all(), sb = b.satisfies_all();
    if (sa != sb) return sa;
    return detail::final_rank_before(a, b, alpha);
  });
  DecodeResult out{std::move(done), false};
  out.constraints_unmet =
      !constraints.empty() && (out.hypotheses.empty() || !out.hypotheses.front().satisfies_all());
  return out;
}

// ---------------------------------------------------------------------------
// Corpus decoding
// ---------------------------------------------------------------------------

struct DecodeOptions {
  std::string mode = "base";  // base | dba | lcnmt
  int beam = 12;
  double ratio = 1.0;  // constraint sampling ratio
  uint64_t seed = 0;
  double alpha = 0.6;
  int max_len = 0;  // 0: use model max_len
  int threads = 1;
};

struct SentenceResult {
  long id = 0;
  std::string mode;
  std::vector<std::string> tokens;
  std::string detok_text;
  double score = 0;
  std::vector<std::vector<std::string>> constraints_given;
  int constraints_satisfied = 0;
  long forward_calls = 0;
};

// Per-sentence inference memory, built under the model's embedding
// convention (rows scaled by sqrt(d), matching training).
template <typename Real>
ConstraintMemory<Real> inference_memory(const ModelParams<Real>& params,
                                        const std::vector<ConstraintPair>& pairs) {
  if (!params.mem) throw ConfigError("inference_memory: model has no memory sublayer");
  const Real sqrt_d = std::sqrt(static_cast<Real>(params.config.d_model));
  return build_memory<Real>(nullptr, pairs, scale<Real>(nullptr, params.src_emb, sqrt_d),
                            scale<Real>(nullptr, params.tgt_emb, sqrt_d),
                            scale<Real>(nullptr, params.mem->k_none, sqrt_d),
                            scale<Real>(nullptr, params.mem->v_none, sqrt_d));
}

inline bool contains_contiguous(const std::vector<int>& hay, const std::vector<int>& needle) {
  if (needle.empty() || needle.size() > hay.size()) return false;
  for (size_t i = 0; i + needle.size() <= hay.size(); ++i) {
    bool hit = true;
    for (size_t j = 0; j < needle.size(); ++j)
      if (hay[i + j] != needle[j]) {
        hit = false;
        break;
      }
    if (hit) return true;
  }
  return false;
}

template <typename Real>
SentenceResult decode_sentence(const ModelParams<Real>& params, const Vocab& src_vocab,
                               const Vocab& tgt_vocab, const CorpusRecord& rec,
                               const DecodeOptions& opt) {
  SentenceResult res;
  res.id = rec.id;
  res.mode = opt.mode;
  const int max_len = opt.max_len > 0 ? opt.max_len : params.config.max_len;

  auto sampled = sample_constraints(rec.constraints, opt.ratio,
                                    mix_seed(opt.seed, static_cast<uint64_t>(rec.id)));
  std::vector<std::vector<int>> tgt_phrases;
  for (const auto& c : sampled) {
    res.constraints_given.push_back(c.tgt_tokens);
    tgt_phrases.push_back(tgt_vocab.encode(c.tgt_tokens));
  }

  const std::vector<int> src_ids = src_vocab.encode(rec.src);
  DecodeResult dec;
  StepScorer scorer;
  EncoderOutput<Real> enc;
  if (opt.mode == "base") {
    enc = encode<Real>(nullptr, params, src_ids);
    scorer = model_scorer(params, enc);
    dec = beam_search(scorer, params.config.vocab_size_tgt, opt.beam, max_len, opt.alpha);
  } else if (opt.mode == "dba") {
    enc = encode<Real>(nullptr, params, src_ids);
    scorer = model_scorer(params, enc);
    dec = dba_decode(scorer, params.config.vocab_size_tgt, opt.beam, max_len, tgt_phrases,
                     opt.alpha);
  } else if (opt.mode == "lcnmt") {
    std::vector<ConstraintPair> pairs;
    for (const auto& c : sampled) {
      ConstraintPair p;
      p.src_ids = src_vocab.encode(c.src_tokens);
      p.tgt_ids = tgt_vocab.encode(c.tgt_tokens);
      p.origin = 0;
      if (c.src_span) p.src_span = *c.src_span;
      pairs.push_back(std::move(p));
    }
    ConstraintMemory<Real> memory = inference_memory(params, pairs);
    enc = encode_with_memory<Real>(nullptr, params, src_ids, memory);
    scorer = model_scorer(params, enc);
    dec = beam_search(scorer, params.config.vocab_size_tgt, opt.beam, max_len, opt.alpha);
  } else {
    throw ConfigError("decode: unknown mode '" + opt.mode + "'");
  }

  if (dec.hypotheses.empty()) throw TrainError("decode: no hypotheses produced");
  const Hypothesis& top = dec.hypotheses.front();
  std::vector<int> content = top.tokens;
  if (!content.empty() && content.back() == Vocab::kEos) content.pop_back();
  res.tokens = tgt_vocab.decode(content);
  res.score = top.normalized(opt.alpha);
  res.forward_calls = scorer.forward_calls;
  for (const auto& phrase : tgt_phrases)
    if (contains_contiguous(content, phrase)) ++res.constraints_satisfied;
  std::string joined;
  for (size_t i = 0; i < res.tokens.size(); ++i) {
    if (i) joined += ' ';
    joined += res.tokens[i];
  }
  res.detok_text = std::move(joined);
  return res;
}

template <typename Real>
std::vector<SentenceResult> decode_corpus(const ModelParams<Real>& params, const Vocab& src_vocab,
                                          const Vocab& tgt_vocab, const Corpus& corpus,
                                          const DecodeOptions& opt) {
  require_mode_compatible(params.config, opt.mode);
  std::vector<SentenceResult> results(corpus.size());
  const int threads = std::max(1, opt.threads);
  if (threads == 1 || corpus.size() < 2) {
    for (size_t i = 0; i < corpus.size(); ++i)
      results[i] = decode_sentence(params, src_vocab, tgt_vocab, corpus[i], opt);
    return results;
  }
  std::vector<std::thread> pool;
  std::atomic<size_t> cursor{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  for (int w = 0; w < threads; ++w) {
    pool.emplace_back([&]() {
      for (;;) {
        const size_t i = cursor.fetch_add(1);
        if (i >= corpus.size()) return;
        try {
          results[i] = decode_sentence(params, src_vocab, tgt_vocab, corpus[i], opt);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
  return results;
}

// Results JSONL row.
inline Json result_to_json(const SentenceResult& r) {
  Json j;
  j["id"] = r.id;
  j["mode"] = r.mode;
  j["tokens"] = r.tokens;
  j["detok_text"] = r.detok_text;
  j["score"] = r.score;
  j["constraints_given"] = r.constraints_given;
  j["constraints_satisfied"] = r.constraints_satisfied;
  j["forward_calls"] = r.forward_calls;
  return j;
}

inline SentenceResult result_from_json(const Json& j) {
  SentenceResult r;
  r.id = j.at("id").get<long>();
  r.mode = j.at("mode").get<std::string>();
  r.tokens = j.at("tokens").get<std::vector<std::string>>();
  r.detok_text = j.at("detok_text").get<std::string>();
  r.score = j.at("score").get<double>();
  r.constraints_given = j.at("constraints_given").get<std::vector<std::vector<std::string>>>();
  r.constraints_satisfied = j.at("constraints_satisfied").get<int>();
  r.forward_calls = j.at("forward_calls").get<long>();
  return r;
}

inline void write_results(const std::vector<SentenceResult>& results, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open results file for writing: " + path);
  for (const auto& r : results) out << result_to_json(r).dump() << '\n';
}

inline std::vector<SentenceResult> read_results(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open results file: " + path);
  std::vector<SentenceResult> results;
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    try {
      results.push_back(result_from_json(Json::parse(line)));
    } catch (const Json::exception& e) {
      throw IoError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return results;
}

}  // namespace lcmt
