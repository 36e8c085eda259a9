#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "lcmt/data_io.hpp"
#include "lcmt/error.hpp"

namespace lcmt {

struct EvalError : Error {
  using Error::Error;
};

struct BleuReport {
  double bleu = 0;  // percentage, 0..100
  double precisions[4] = {0, 0, 0, 0};
  double brevity_penalty = 1.0;
  long hyp_len = 0;
  long ref_len = 0;
};

// ---------------------------------------------------------------------------
// Corpus-level token BLEU-4 with a single reference per hypothesis. Clipped
// n-gram matches are summed over the corpus before the geometric mean.
// Smoothing rule (mirrored exactly by the test oracle): for n >= 2 with zero
// raw matches, precision becomes (matches+1)/(total+1); order-1 precision is
// never smoothed, so zero unigram overlap gives BLEU 0. Brevity penalty is
// exp(1 - ref/hyp) when hyp < ref.
// ---------------------------------------------------------------------------
inline BleuReport bleu_corpus(const std::vector<std::vector<std::string>>& hypotheses,
                              const std::vector<std::vector<std::string>>& references) {
  if (hypotheses.empty()) throw EvalError("bleu: empty hypothesis list");
  if (hypotheses.size() != references.size())
    throw EvalError("bleu: hypothesis/reference count mismatch");

  BleuReport rep;
  long matched[4] = {0, 0, 0, 0};
  long total[4] = {0, 0, 0, 0};
  for (size_t s = 0; s < hypotheses.size(); ++s) {
    const auto& hyp = hypotheses[s];
    const auto& ref = references[s];
    rep.hyp_len += static_cast<long>(hyp.size());
    rep.ref_len += static_cast<long>(ref.size());
    for (int n = 1; n <= 4; ++n) {
      std::map<std::vector<std::string>, long> ref_ngrams;
      for (size_t i = 0; i + n <= ref.size(); ++i)
        ++ref_ngrams[{ref.begin() + i, ref.begin() + i + n}];
      std::map<std::vector<std::string>, long> hyp_ngrams;
      for (size_t i = 0; i + n <= hyp.size(); ++i)
        ++hyp_ngrams[{hyp.begin() + i, hyp.begin() + i + n}];
      for (const auto& [gram, count] : hyp_ngrams) {
        auto it = ref_ngrams.find(gram);
        if (it != ref_ngrams.end()) matched[n - 1] += std::min(count, it->second);
        total[n - 1] += count;
      }
    }
  }

  double log_sum = 0;
  bool zero = false;
  for (int n = 0; n < 4; ++n) {
    double p;
    if (total[n] == 0) {
      p = n == 0 ? 0.0 : 1.0;  // vacuous higher order on an ultra-short corpus
    } else if (matched[n] == 0 && n >= 1) {
      p = 1.0 / static_cast<double>(total[n] + 1);
    } else {
      p = static_cast<double>(matched[n]) / static_cast<double>(total[n]);
    }
    rep.precisions[n] = p;
    if (p <= 0.0)
      zero = true;
    else
      log_sum += std::log(p);
  }
  rep.brevity_penalty =
      rep.hyp_len < rep.ref_len && rep.hyp_len > 0
          ? std::exp(1.0 - static_cast<double>(rep.ref_len) / static_cast<double>(rep.hyp_len))
          : (rep.hyp_len == 0 ? 0.0 : 1.0);
  rep.bleu = zero || rep.hyp_len == 0
                 ? 0.0
                 : 100.0 * rep.brevity_penalty * std::exp(log_sum / 4.0);
  return rep;
}

// Fraction of constraints appearing as a contiguous token run in their
// sentence's hypothesis. An empty constraint set counts as fully satisfied.
inline double constraint_satisfaction_rate(
    const std::vector<std::vector<std::string>>& hypotheses,
    const std::vector<std::vector<std::vector<std::string>>>& constraints_per_sentence) {
  if (hypotheses.size() != constraints_per_sentence.size())
    throw EvalError("csr: hypothesis/constraint count mismatch");
  long given = 0, satisfied = 0;
  for (size_t s = 0; s < hypotheses.size(); ++s) {
    const auto& hyp = hypotheses[s];
    for (const auto& phrase : constraints_per_sentence[s]) {
      ++given;
      if (phrase.empty() || phrase.size() > hyp.size()) continue;
      for (size_t i = 0; i + phrase.size() <= hyp.size(); ++i) {
        bool hit = true;
        for (size_t j = 0; j < phrase.size(); ++j)
          if (hyp[i + j] != phrase[j]) {
            hit = false;
            break;
          }
        if (hit) {
          ++satisfied;
          break;
        }
      }
    }
  }
  return given == 0 ? 1.0 : static_cast<double>(satisfied) / static_cast<double>(given);
}

struct CorpusStats {
  long n_sentences = 0;
  long n_phrases = 0;
  long n_words_in_phrases = 0;
  long n_subwords_in_phrases = 0;
  double avg_constraints_per_sentence = 0;  // sub-words / ALL sentences
};

using SubwordFn = std::function<std::vector<std::string>(const std::string&)>;

// Target-side phrase statistics. subword_fn optionally segments a word into
// sub-word units; by default every word counts as one sub-word. The average
// divides by all sentences, phrase-less ones included.
inline CorpusStats corpus_stats(const Corpus& corpus, const SubwordFn& subword_fn = {}) {
  CorpusStats st;
  st.n_sentences = static_cast<long>(corpus.size());
  for (const auto& rec : corpus) {
    st.n_phrases += static_cast<long>(rec.constraints.size());
    for (const auto& c : rec.constraints) {
      st.n_words_in_phrases += static_cast<long>(c.tgt_tokens.size());
      if (subword_fn) {
        for (const auto& w : c.tgt_tokens)
          st.n_subwords_in_phrases += static_cast<long>(subword_fn(w).size());
      } else {
        st.n_subwords_in_phrases += static_cast<long>(c.tgt_tokens.size());
      }
    }
  }
  st.avg_constraints_per_sentence =
      st.n_sentences == 0 ? 0.0
                          : static_cast<double>(st.n_subwords_in_phrases) /
                                static_cast<double>(st.n_sentences);
  return st;
}

// Plain-text table with left-aligned, padded columns. rows[0] is the header.
inline std::string format_table(const std::vector<std::vector<std::string>>& rows) {
  std::vector<size_t> widths;
  for (const auto& row : rows) {
    if (row.size() > widths.size()) widths.resize(row.size(), 0);
    for (size_t c = 0; c < row.size(); ++c) widths[c] = std::max(widths[c], row[c].size());
  }
  std::ostringstream out;
  for (const auto& row : rows) {
    for (size_t c = 0; c < row.size(); ++c) {
      out << row[c];
      if (c + 1 < row.size()) out << std::string(widths[c] - row[c].size() + 2, ' ');
    }
    out << '\n';
  }
  return out.str();
}

inline std::string format_fixed(double v, int digits) {
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(digits);
  out << v;
  return out.str();
}

}  // namespace lcmt
