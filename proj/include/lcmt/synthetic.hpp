#pragma once

#include <algorithm>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "lcmt/data_io.hpp"
#include "lcmt/error.hpp"
#include "lcmt/rng.hpp"

namespace lcmt {

// ---------------------------------------------------------------------------
// Synthetic homograph task. Every source token has exactly one target
// translation, except the homograph tokens, which have two equally likely
// translations chosen independently per sentence. The choice is uniform and
// carried only by the attached gold constraint, so no model can beat 50%
// per-homograph accuracy without the constraint -- which is exactly what
// makes the constraint memory's causal effect measurable.
//
// Every record ships gold identity alignment, parse spans (homograph
// unigrams plus random consistent bigrams) and gold constraints resolving
// each homograph occurrence, plus a "homographs" metadata field for
// accuracy scoring.
// ---------------------------------------------------------------------------

struct HomographSpec {
  uint64_t seed = 0;
  long n_train = 1000;
  long n_dev = 100;
  long n_test = 200;
  int src_vocab_size = 60;  // including the 4 reserved slots
  int tgt_vocab_size = 64;
  int homograph_count = 4;
  int len_min = 4;
  int len_max = 8;
  double bigram_span_prob = 0.3;
};

// The underlying deterministic "language": tables shared by all splits.
struct HomographTask {
  std::vector<std::string> src_tokens;              // content tokens
  std::vector<std::string> primary;                 // per source content token
  std::unordered_map<int, std::string> alternate;   // homograph index -> 2nd choice
  std::vector<int> homographs;                      // indices into src_tokens
};

inline HomographTask make_homograph_task(const HomographSpec& spec) {
  const int n_src = spec.src_vocab_size - 4;
  const int n_tgt = spec.tgt_vocab_size - 4;
  if (spec.homograph_count < 0) throw ConfigError("homograph_count must be >= 0");
  if (n_src < 1 || n_tgt < 1) throw ConfigError("vocab sizes too small");
  if (n_tgt < n_src + spec.homograph_count)
    throw ConfigError("target vocab too small for requested homographs: need " +
                      std::to_string(n_src + spec.homograph_count + 4) + ", have " +
                      std::to_string(spec.tgt_vocab_size));
  if (spec.len_min < 1 || spec.len_min > spec.len_max)
    throw ConfigError("bad sentence length range");
  if (spec.len_max > n_src)
    throw ConfigError("len_max exceeds content vocab (tokens are sampled without replacement)");

  HomographTask task;
  for (int i = 0; i < n_src; ++i) task.src_tokens.push_back("s" + std::to_string(i));
  std::vector<std::string> tgt_pool;
  for (int i = 0; i < n_tgt; ++i) tgt_pool.push_back("t" + std::to_string(i));

  Rng rng(mix_seed(spec.seed, 0x700a5));
  auto tgt_perm = rng.permutation(tgt_pool.size());
  size_t next_tgt = 0;
  task.primary.resize(static_cast<size_t>(n_src));
  for (int i = 0; i < n_src; ++i) task.primary[static_cast<size_t>(i)] = tgt_pool[tgt_perm[next_tgt++]];

  auto src_perm = rng.permutation(static_cast<size_t>(n_src));
  for (int h = 0; h < spec.homograph_count; ++h) {
    const int idx = static_cast<int>(src_perm[static_cast<size_t>(h)]);
    task.homographs.push_back(idx);
    task.alternate[idx] = tgt_pool[tgt_perm[next_tgt++]];
  }
  std::sort(task.homographs.begin(), task.homographs.end());
  return task;
}

namespace detail {

inline Corpus generate_split(const HomographSpec& spec, const HomographTask& task, long count,
                             uint64_t split_stream) {
  Rng rng(mix_seed(spec.seed, split_stream));
  std::unordered_set<int> homo_set(task.homographs.begin(), task.homographs.end());
  Corpus corpus;
  corpus.reserve(static_cast<size_t>(count));
  for (long s = 0; s < count; ++s) {
    CorpusRecord rec;
    rec.id = s;
    const int len =
        spec.len_min + static_cast<int>(rng.next_below(
                           static_cast<uint64_t>(spec.len_max - spec.len_min + 1)));
    auto perm = rng.permutation(task.src_tokens.size());
    Json homo_meta = Json::array();
    AlignmentLinks links;
    for (int i = 0; i < len; ++i) {
      const int tok = static_cast<int>(perm[static_cast<size_t>(i)]);
      rec.src.push_back(task.src_tokens[static_cast<size_t>(tok)]);
      links.emplace_back(i, i);
      std::string translation = task.primary[static_cast<size_t>(tok)];
      if (homo_set.count(tok)) {
        const bool use_alt = rng.next_below(2) == 1;
        const std::string gold = use_alt ? task.alternate.at(tok) : translation;
        const std::string other = use_alt ? translation : task.alternate.at(tok);
        translation = gold;
        rec.src_spans.push_back(Span{i, i + 1});
        rec.tgt_spans.push_back(Span{i, i + 1});
        RecordConstraint rc;
        rc.src_span = Span{i, i + 1};
        rc.tgt_span = Span{i, i + 1};
        rc.src_tokens = {task.src_tokens[static_cast<size_t>(tok)]};
        rc.tgt_tokens = {gold};
        rec.constraints.push_back(std::move(rc));
        homo_meta.push_back({{"pos", i},
                             {"src", task.src_tokens[static_cast<size_t>(tok)]},
                             {"gold", gold},
                             {"alt", other}});
      }
      rec.tgt.push_back(translation);
    }
    rec.alignment = std::move(links);
    for (int i = 0; i + 1 < len; ++i) {
      if (rng.next_double() < spec.bigram_span_prob) {
        rec.src_spans.push_back(Span{i, i + 2});
        rec.tgt_spans.push_back(Span{i, i + 2});
      }
    }
    std::sort(rec.src_spans.begin(), rec.src_spans.end());
    std::sort(rec.tgt_spans.begin(), rec.tgt_spans.end());
    if (!homo_meta.empty()) rec.extra["homographs"] = homo_meta;
    corpus.push_back(std::move(rec));
  }
  return corpus;
}

}  // namespace detail

struct SyntheticSplits {
  Corpus train, dev, test;
};

inline SyntheticSplits generate_homograph_corpus(const HomographSpec& spec) {
  HomographTask task = make_homograph_task(spec);
  SyntheticSplits out;
  out.train = detail::generate_split(spec, task, spec.n_train, 0x74);
  out.dev = detail::generate_split(spec, task, spec.n_dev, 0xd4);
  out.test = detail::generate_split(spec, task, spec.n_test, 0x7e);
  return out;
}

// Fraction of annotated homograph occurrences whose gold translation appears
// at the aligned hypothesis position. hypotheses[i] must correspond to
// corpus[i].
inline double homograph_accuracy(const std::vector<std::vector<std::string>>& hypotheses,
                                 const Corpus& corpus) {
  if (hypotheses.size() != corpus.size())
    throw ConfigError("homograph_accuracy: hypothesis/corpus size mismatch");
  long total = 0, hits = 0;
  for (size_t i = 0; i < corpus.size(); ++i) {
    const auto& rec = corpus[i];
    if (!rec.extra.contains("homographs")) continue;
    for (const auto& h : rec.extra.at("homographs")) {
      ++total;
      const int pos = h.at("pos").get<int>();
      const std::string gold = h.at("gold").get<std::string>();
      if (pos < static_cast<int>(hypotheses[i].size()) &&
          hypotheses[i][static_cast<size_t>(pos)] == gold)
        ++hits;
    }
  }
  return total == 0 ? 1.0 : static_cast<double>(hits) / static_cast<double>(total);
}

}  // namespace lcmt
