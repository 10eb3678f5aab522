#include "aera/util.hpp"

#include <cmath>
#include <mutex>
#include <random>

namespace aera {

std::string random_id(std::string_view prefix) {
  static std::mutex mu;
  static std::mt19937_64 rng{std::random_device{}() ^ static_cast<std::uint64_t>(now_ms())};
  std::uint64_t v;
  {
    std::lock_guard lock(mu);
    v = rng();
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out(prefix);
  out += '_';
  for (int shift = 60; shift >= 0; shift -= 4) out += kHex[(v >> shift) & 0xF];
  return out;
}

std::string to_lower_ascii(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = ascii_lower(c);
  return out;
}

std::string_view trim(std::string_view s) {
  const auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

std::vector<std::string> split(std::string_view s, char delim) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(delim, start);
    if (pos == std::string_view::npos) {
      out.emplace_back(s.substr(start));
      break;
    }
    out.emplace_back(s.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

std::vector<std::size_t> find_token_matches(std::string_view haystack, std::string_view needle) {
  std::vector<std::size_t> out;
  if (needle.empty() || needle.size() > haystack.size()) return out;
  const std::string hay = to_lower_ascii(haystack);
  const std::string pat = to_lower_ascii(needle);
  for (std::size_t pos = hay.find(pat); pos != std::string::npos; pos = hay.find(pat, pos + 1)) {
    const std::size_t end = pos + pat.size();
    const bool left_ok = pos == 0 || !is_word_byte(static_cast<unsigned char>(hay[pos - 1])) ||
                         !is_word_byte(static_cast<unsigned char>(pat.front()));
    const bool right_ok = end == hay.size() || !is_word_byte(static_cast<unsigned char>(hay[end])) ||
                          !is_word_byte(static_cast<unsigned char>(pat.back()));
    if (left_ok && right_ok) out.push_back(pos);
  }
  return out;
}

bool is_valid_utf8(std::string_view s) {
  std::size_t i = 0;
  const std::size_t n = s.size();
  while (i < n) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len;
    std::uint32_t cp;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      len = 2;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      len = 3;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      len = 4;
      cp = c & 0x07;
    } else {
      return false;
    }
    if (i + len > n) return false;
    for (std::size_t k = 1; k < len; ++k) {
      const auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xC0) != 0x80) return false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    if ((len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) || (len == 4 && cp < 0x10000) ||
        cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF))
      return false;
    i += len;
  }
  return true;
}

std::size_t codepoints_before(std::string_view s, std::size_t byte_offset) {
  std::size_t count = 0;
  for (std::size_t i = 0; i < byte_offset && i < s.size(); ++i) {
    if ((static_cast<unsigned char>(s[i]) & 0xC0) != 0x80) ++count;
  }
  return count;
}

std::size_t codepoint_length(std::string_view s) { return codepoints_before(s, s.size()); }

long long round_half_up(double x) { return static_cast<long long>(std::floor(x + 0.5)); }

}  // namespace aera
