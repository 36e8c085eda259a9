#pragma once

#include <array>
#include <cstdint>
#include <cstddef>
#include <string>
#include <vector>

namespace lcmt {

// CRC32 (IEEE 802.3, reflected, poly 0xEDB88320). Used as the per-record
// trailer in checkpoint files and for artifact manifests.
inline uint32_t crc32(const void* data, size_t len, uint32_t crc = 0) {
  static const std::array<uint32_t, 256> table = [] {
    std::array<uint32_t, 256> t{};
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1u) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  const auto* p = static_cast<const unsigned char*>(data);
  crc = ~crc;
  for (size_t i = 0; i < len; ++i) crc = table[(crc ^ p[i]) & 0xFFu] ^ (crc >> 8);
  return ~crc;
}

// FNV-1a, for cheap content fingerprints (vocab hashes in checkpoints).
inline uint64_t fnv1a(const void* data, size_t len, uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t fnv1a(const std::string& s, uint64_t h = 0xcbf29ce484222325ull) {
  return fnv1a(s.data(), s.size(), h);
}

inline uint64_t fnv1a_tokens(const std::vector<std::string>& toks) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& t : toks) {
    h = fnv1a(t, h);
    h = fnv1a("\x1f", 1, h);
  }
  return h;
}

}  // namespace lcmt
