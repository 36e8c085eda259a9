#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "lcmt/data_io.hpp"
#include "lcmt/error.hpp"
#include "lcmt/rng.hpp"

namespace lcmt {

struct PhrasePairCandidate {
  Span src;
  Span tgt;
  bool operator==(const PhrasePairCandidate& o) const { return src == o.src && tgt == o.tgt; }
  bool operator<(const PhrasePairCandidate& o) const {
    return src == o.src ? tgt < o.tgt : src < o.src;
  }
};

// A phrase pair materialized from one sentence, ready to become a constraint.
struct ExtractedConstraint {
  Span src_span;
  Span tgt_span;
  std::vector<std::string> src_tokens;
  std::vector<std::string> tgt_tokens;
};

// ---------------------------------------------------------------------------
// Alignment-consistent phrase pairs under strict consistency:
//   (1) at least one link inside the rectangle,
//   (2) no link crosses the rectangle boundary on either side,
//   (3) every token of both spans is covered by a link,
//   (4) both span lengths <= max_phrase_len.
// No unaligned-word boundary extension. For a fixed source span the target
// span is then unique (the tight link hull), which is what the enumeration
// below exploits; tests hold it against a brute-force rectangle scan.
// ---------------------------------------------------------------------------
inline std::vector<PhrasePairCandidate> extract_consistent_phrases(const AlignmentLinks& links,
                                                                   int src_len, int tgt_len,
                                                                   int max_phrase_len) {
  std::vector<PhrasePairCandidate> out;
  if (src_len <= 0 || tgt_len <= 0 || max_phrase_len <= 0) return out;
  for (auto [i, j] : links)
    if (i < 0 || i >= src_len || j < 0 || j >= tgt_len)
      throw IndexError("alignment link out of bounds");

  std::vector<char> src_covered(static_cast<size_t>(src_len), 0);
  std::vector<char> tgt_covered(static_cast<size_t>(tgt_len), 0);
  for (auto [i, j] : links) {
    src_covered[static_cast<size_t>(i)] = 1;
    tgt_covered[static_cast<size_t>(j)] = 1;
  }

  for (int a = 0; a < src_len; ++a) {
    for (int b = a + 1; b <= std::min(src_len, a + max_phrase_len); ++b) {
      int lo = tgt_len, hi = -1;
      for (auto [i, j] : links) {
        if (i >= a && i < b) {
          lo = std::min(lo, j);
          hi = std::max(hi, j);
        }
      }
      if (hi < 0) continue;  // no link inside
      const int c = lo, d = hi + 1;
      if (d - c > max_phrase_len) continue;

      bool ok = true;
      for (int i = a; i < b && ok; ++i) ok = src_covered[static_cast<size_t>(i)];
      for (int j = c; j < d && ok; ++j) ok = tgt_covered[static_cast<size_t>(j)];
      for (auto [i, j] : links) {
        if (!ok) break;
        const bool in_src = i >= a && i < b;
        const bool in_tgt = j >= c && j < d;
        if (in_src != in_tgt) ok = false;
      }
      if (ok) out.push_back({Span{a, b}, Span{c, d}});
    }
  }
  return out;
}

// Keep a candidate iff both of its spans appear among the parse spans.
inline std::vector<PhrasePairCandidate> filter_by_parse_spans(
    const std::vector<PhrasePairCandidate>& candidates, const std::set<Span>& src_spans,
    const std::set<Span>& tgt_spans) {
  std::vector<PhrasePairCandidate> out;
  for (const auto& c : candidates)
    if (src_spans.count(c.src) && tgt_spans.count(c.tgt)) out.push_back(c);
  return out;
}

// ---------------------------------------------------------------------------
// Full per-sentence pipeline: consistent pairs -> parse filter -> length
// floor -> overlap resolution -> materialized token sequences. A record
// without alignment or parse spans degrades to an empty list.
//
// Overlap resolution is greedy: longer source span first, then leftmost;
// a pair is dropped if it overlaps an already-kept pair on either side.
// ---------------------------------------------------------------------------
inline std::vector<ExtractedConstraint> extract_constraints(const CorpusRecord& rec,
                                                            int max_phrase_len = 4,
                                                            int min_phrase_len = 1) {
  std::vector<ExtractedConstraint> out;
  if (!rec.alignment || rec.src_spans.empty() || rec.tgt_spans.empty()) return out;

  auto cands = extract_consistent_phrases(*rec.alignment, static_cast<int>(rec.src.size()),
                                          static_cast<int>(rec.tgt.size()), max_phrase_len);
  std::set<Span> src_set(rec.src_spans.begin(), rec.src_spans.end());
  std::set<Span> tgt_set(rec.tgt_spans.begin(), rec.tgt_spans.end());
  auto filtered = filter_by_parse_spans(cands, src_set, tgt_set);

  filtered.erase(std::remove_if(filtered.begin(), filtered.end(),
                                [&](const PhrasePairCandidate& c) {
                                  return c.src.len() < min_phrase_len;
                                }),
                 filtered.end());

  std::sort(filtered.begin(), filtered.end(), [](const auto& x, const auto& y) {
    if (x.src.len() != y.src.len()) return x.src.len() > y.src.len();
    if (!(x.src == y.src)) return x.src < y.src;
    return x.tgt < y.tgt;
  });

  std::vector<PhrasePairCandidate> kept;
  for (const auto& c : filtered) {
    bool clash = false;
    for (const auto& k : kept)
      if (c.src.overlaps(k.src) || c.tgt.overlaps(k.tgt)) {
        clash = true;
        break;
      }
    if (!clash) kept.push_back(c);
  }
  std::sort(kept.begin(), kept.end());

  for (const auto& c : kept) {
    ExtractedConstraint e;
    e.src_span = c.src;
    e.tgt_span = c.tgt;
    e.src_tokens = {rec.src.begin() + c.src.begin, rec.src.begin() + c.src.end};
    e.tgt_tokens = {rec.tgt.begin() + c.tgt.begin, rec.tgt.begin() + c.tgt.end};
    out.push_back(std::move(e));
  }
  return out;
}

// Uniform sample without replacement of round(ratio * n) items, deterministic
// for a fixed seed. Survivors keep their original relative order.
template <typename T>
std::vector<T> sample_constraints(const std::vector<T>& items, double ratio, uint64_t seed) {
  if (ratio < 0.0 || ratio > 1.0) throw ConfigError("constraint ratio must be in [0,1]");
  const size_t n = items.size();
  const size_t k = static_cast<size_t>(std::llround(ratio * static_cast<double>(n)));
  if (k == 0) return {};
  if (k >= n) return items;
  Rng rng(seed);
  auto perm = rng.permutation(n);
  std::vector<size_t> chosen(perm.begin(), perm.begin() + static_cast<long>(k));
  std::sort(chosen.begin(), chosen.end());
  std::vector<T> out;
  out.reserve(k);
  for (size_t idx : chosen) out.push_back(items[idx]);
  return out;
}

}  // namespace lcmt
