#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "lcmt/error.hpp"
#include "lcmt/hash.hpp"
#include "lcmt/span.hpp"

namespace lcmt {

using Json = nlohmann::json;

using AlignmentLinks = std::vector<std::pair<int, int>>;

// One constraint attached to a corpus record: span form, token form, or both.
struct RecordConstraint {
  std::optional<Span> src_span;
  std::optional<Span> tgt_span;
  std::vector<std::string> src_tokens;
  std::vector<std::string> tgt_tokens;
};

struct CorpusRecord {
  long id = 0;
  std::vector<std::string> src;
  std::vector<std::string> tgt;
  std::optional<AlignmentLinks> alignment;
  std::vector<Span> src_spans;
  std::vector<Span> tgt_spans;
  std::vector<RecordConstraint> constraints;
  Json extra = Json::object();  // unknown fields, preserved round trip
};

using Corpus = std::vector<CorpusRecord>;

// ---------------------------------------------------------------------------
// Alignment serialization: Pharaoh "i-j i-j ..." strings or [[i,j],...] arrays.
// ---------------------------------------------------------------------------

inline AlignmentLinks parse_alignment_string(const std::string& s) {
  AlignmentLinks links;
  std::istringstream iss(s);
  std::string tok;
  while (iss >> tok) {
    auto dash = tok.find('-');
    if (dash == std::string::npos || dash == 0 || dash + 1 == tok.size())
      throw IoError("bad alignment link '" + tok + "' (want i-j)");
    try {
      links.emplace_back(std::stoi(tok.substr(0, dash)), std::stoi(tok.substr(dash + 1)));
    } catch (const std::exception&) {
      throw IoError("bad alignment link '" + tok + "' (want i-j)");
    }
  }
  return links;
}

inline std::string alignment_to_string(const AlignmentLinks& links) {
  std::string out;
  for (size_t i = 0; i < links.size(); ++i) {
    if (i) out += ' ';
    out += std::to_string(links[i].first) + "-" + std::to_string(links[i].second);
  }
  return out;
}

namespace detail {

inline std::vector<std::string> parse_token_array(const Json& j, const char* field) {
  if (!j.is_array()) throw IoError(std::string(field) + " must be an array of strings");
  std::vector<std::string> out;
  out.reserve(j.size());
  for (const auto& t : j) {
    if (!t.is_string()) throw IoError(std::string(field) + " must contain only strings");
    out.push_back(t.get<std::string>());
  }
  return out;
}

inline Span parse_span(const Json& j, int len, const char* field) {
  if (!j.is_array() || j.size() != 2)
    throw IoError(std::string(field) + " span must be a [begin,end) pair");
  Span s{j[0].get<int>(), j[1].get<int>()};
  if (s.begin < 0 || s.begin >= s.end || s.end > len)
    throw IoError(std::string(field) + " span [" + std::to_string(s.begin) + "," +
                  std::to_string(s.end) + ") out of bounds for length " + std::to_string(len));
  return s;
}

inline std::vector<std::string> slice_tokens(const std::vector<std::string>& toks, Span s) {
  return {toks.begin() + s.begin, toks.begin() + s.end};
}

}  // namespace detail

inline CorpusRecord record_from_json(const Json& j, long fallback_id) {
  if (!j.is_object()) throw IoError("record must be a JSON object");
  CorpusRecord rec;
  rec.id = j.contains("id") ? j.at("id").get<long>() : fallback_id;
  rec.src = detail::parse_token_array(j.at("src"), "src");
  rec.tgt = detail::parse_token_array(j.at("tgt"), "tgt");
  const int m = static_cast<int>(rec.src.size());
  const int n = static_cast<int>(rec.tgt.size());

  if (j.contains("alignment") && !j.at("alignment").is_null()) {
    const Json& a = j.at("alignment");
    AlignmentLinks links;
    if (a.is_string()) {
      links = parse_alignment_string(a.get<std::string>());
    } else if (a.is_array()) {
      for (const auto& pair : a) {
        if (!pair.is_array() || pair.size() != 2) throw IoError("alignment entry must be [i,j]");
        links.emplace_back(pair[0].get<int>(), pair[1].get<int>());
      }
    } else {
      throw IoError("alignment must be a Pharaoh string or an array of [i,j] pairs");
    }
    for (auto [i, jdx] : links)
      if (i < 0 || i >= m || jdx < 0 || jdx >= n)
        throw IoError("alignment link " + std::to_string(i) + "-" + std::to_string(jdx) +
                      " out of bounds");
    rec.alignment = std::move(links);
  }

  if (j.contains("src_spans"))
    for (const auto& s : j.at("src_spans")) rec.src_spans.push_back(detail::parse_span(s, m, "src_spans"));
  if (j.contains("tgt_spans"))
    for (const auto& s : j.at("tgt_spans")) rec.tgt_spans.push_back(detail::parse_span(s, n, "tgt_spans"));

  if (j.contains("constraints")) {
    for (const auto& c : j.at("constraints")) {
      RecordConstraint rc;
      if (c.contains("src_span")) rc.src_span = detail::parse_span(c.at("src_span"), m, "constraint src_span");
      if (c.contains("tgt_span")) rc.tgt_span = detail::parse_span(c.at("tgt_span"), n, "constraint tgt_span");
      if (c.contains("src_tokens")) rc.src_tokens = detail::parse_token_array(c.at("src_tokens"), "src_tokens");
      if (c.contains("tgt_tokens")) rc.tgt_tokens = detail::parse_token_array(c.at("tgt_tokens"), "tgt_tokens");
      if (rc.src_tokens.empty() && rc.src_span) rc.src_tokens = detail::slice_tokens(rec.src, *rc.src_span);
      if (rc.tgt_tokens.empty() && rc.tgt_span) rc.tgt_tokens = detail::slice_tokens(rec.tgt, *rc.tgt_span);
      if (rc.src_tokens.empty() || rc.tgt_tokens.empty())
        throw IoError("constraint needs src/tgt tokens or spans");
      rec.constraints.push_back(std::move(rc));
    }
  }

  static const std::set<std::string> known = {"id",       "src",      "tgt",        "alignment",
                                              "src_spans", "tgt_spans", "constraints"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key())) rec.extra[it.key()] = it.value();
  return rec;
}

inline Json record_to_json(const CorpusRecord& rec) {
  Json j = rec.extra;
  j["id"] = rec.id;
  j["src"] = rec.src;
  j["tgt"] = rec.tgt;
  if (rec.alignment) j["alignment"] = alignment_to_string(*rec.alignment);
  if (!rec.src_spans.empty()) {
    Json arr = Json::array();
    for (const auto& s : rec.src_spans) arr.push_back({s.begin, s.end});
    j["src_spans"] = arr;
  }
  if (!rec.tgt_spans.empty()) {
    Json arr = Json::array();
    for (const auto& s : rec.tgt_spans) arr.push_back({s.begin, s.end});
    j["tgt_spans"] = arr;
  }
  if (!rec.constraints.empty()) {
    Json arr = Json::array();
    for (const auto& c : rec.constraints) {
      Json cj = Json::object();
      if (c.src_span) cj["src_span"] = {c.src_span->begin, c.src_span->end};
      if (c.tgt_span) cj["tgt_span"] = {c.tgt_span->begin, c.tgt_span->end};
      cj["src_tokens"] = c.src_tokens;
      cj["tgt_tokens"] = c.tgt_tokens;
      arr.push_back(cj);
    }
    j["constraints"] = arr;
  }
  return j;
}

inline Corpus read_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open corpus file: " + path);
  Corpus corpus;
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    try {
      corpus.push_back(record_from_json(Json::parse(line), static_cast<long>(corpus.size())));
    } catch (const Json::exception& e) {
      throw IoError(path + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const Error& e) {
      throw IoError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return corpus;
}

inline void write_corpus(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path, std::ios::binary);  // binary: stable newlines
  if (!out) throw IoError("cannot open output file: " + path);
  for (const auto& rec : corpus) out << record_to_json(rec).dump() << '\n';
  if (!out) throw IoError("failed writing corpus: " + path);
}

// ---------------------------------------------------------------------------
// Vocab: token <-> index bijection with fixed reserved slots.
// ---------------------------------------------------------------------------
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;

  Vocab() {
    for (const char* t : {"<pad>", "<bos>", "<eos>", "<unk>"}) add(t);
  }

  // Deterministic vocabulary: reserved tokens then sorted unique corpus tokens.
  static Vocab build(const std::vector<const std::vector<std::string>*>& sentences) {
    std::set<std::string> uniq;
    for (const auto* s : sentences) uniq.insert(s->begin(), s->end());
    Vocab v;
    for (const auto& t : uniq)
      if (!v.index_.count(t)) v.add(t);
    return v;
  }

  static Vocab from_tokens(const std::vector<std::string>& tokens) {
    if (tokens.size() < 4 || tokens[0] != "<pad>" || tokens[1] != "<bos>" ||
        tokens[2] != "<eos>" || tokens[3] != "<unk>")
      throw FormatError("vocab token list missing reserved prefix");
    Vocab v;
    for (size_t i = 4; i < tokens.size(); ++i) {
      if (v.index_.count(tokens[i])) throw FormatError("duplicate vocab token: " + tokens[i]);
      v.add(tokens[i]);
    }
    return v;
  }

  int id(const std::string& tok) const {
    auto it = index_.find(tok);
    return it == index_.end() ? kUnk : it->second;
  }

  const std::string& token(int id) const {
    if (id < 0 || id >= static_cast<int>(tokens_.size()))
      throw IndexError("vocab id out of range: " + std::to_string(id));
    return tokens_[static_cast<size_t>(id)];
  }

  int size() const { return static_cast<int>(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  uint64_t hash() const { return fnv1a_tokens(tokens_); }

  std::vector<int> encode(const std::vector<std::string>& toks) const {
    std::vector<int> ids;
    ids.reserve(toks.size());
    for (const auto& t : toks) ids.push_back(id(t));
    return ids;
  }

  std::vector<std::string> decode(const std::vector<int>& ids) const {
    std::vector<std::string> toks;
    toks.reserve(ids.size());
    for (int i : ids) toks.push_back(token(i));
    return toks;
  }

 private:
  void add(const std::string& t) {
    index_[t] = static_cast<int>(tokens_.size());
    tokens_.push_back(t);
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace lcmt
