#pragma once

// Code-point level checks for highlight spans, written independently of the
// byte-level matcher in the library.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace oracle {

inline std::vector<std::uint32_t> decode(const std::string& s) {
  std::vector<std::uint32_t> out;
  for (std::size_t i = 0; i < s.size();) {
    const auto c = static_cast<unsigned char>(s[i]);
    int len = c < 0x80 ? 1 : (c >> 5) == 6 ? 2 : (c >> 4) == 14 ? 3 : 4;
    std::uint32_t cp = len == 1 ? c : len == 2 ? (c & 0x1F) : len == 3 ? (c & 0x0F) : (c & 0x07);
    for (int k = 1; k < len; ++k) cp = (cp << 6) | (static_cast<unsigned char>(s[i + k]) & 0x3F);
    out.push_back(cp);
    i += static_cast<std::size_t>(len);
  }
  return out;
}

inline std::uint32_t fold(std::uint32_t c) { return (c >= 'A' && c <= 'Z') ? c + 32 : c; }

inline bool word(std::uint32_t c) {
  return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c >= 0x80;
}

inline bool equal_at(const std::vector<std::uint32_t>& text, std::size_t start, const std::vector<std::uint32_t>& p) {
  if (start + p.size() > text.size()) return false;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (fold(text[start + i]) != fold(p[i])) return false;
  return true;
}

inline bool bounded(const std::vector<std::uint32_t>& text, std::size_t start, std::size_t end,
                    const std::vector<std::uint32_t>& p) {
  const bool left = start == 0 || !word(text[start - 1]) || !word(p.front());
  const bool right = end == text.size() || !word(text[end]) || !word(p.back());
  return left && right;
}

// Every token-bounded case-insensitive occurrence, as code-point offsets.
inline std::vector<std::size_t> occurrences(const std::string& text, const std::string& phrase) {
  const auto t = decode(text);
  const auto p = decode(phrase);
  std::vector<std::size_t> out;
  if (p.empty()) return out;
  for (std::size_t i = 0; i + p.size() <= t.size(); ++i)
    if (equal_at(t, i, p) && bounded(t, i, i + p.size(), p)) out.push_back(i);
  return out;
}

}  // namespace oracle
