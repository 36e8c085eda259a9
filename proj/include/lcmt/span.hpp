#pragma once

namespace lcmt {

// Half-open token interval [begin, end).
struct Span {
  int begin = 0;
  int end = 0;

  int len() const { return end - begin; }
  bool contains(int i) const { return i >= begin && i < end; }
  bool overlaps(const Span& o) const { return begin < o.end && o.begin < end; }
  bool operator==(const Span& o) const { return begin == o.begin && end == o.end; }
  bool operator<(const Span& o) const {
    return begin != o.begin ? begin < o.begin : end < o.end;
  }
};

}  // namespace lcmt
