#include "probeforge/text.hpp"

#include <algorithm>
#include <cctype>

namespace probeforge {

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
bool is_punct(char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; }

std::string strip_outer_punct(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && is_punct(s[b])) ++b;
  while (e > b && is_punct(s[e - 1])) --e;
  return std::string(s.substr(b, e - b));
}

}  // namespace

std::vector<std::string> split_whitespace(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    std::size_t start = i;
    while (i < text.size() && !is_space(text[i])) ++i;
    if (i > start) out.emplace_back(text.substr(start, i - start));
  }
  return out;
}

std::string to_lower(std::string_view text) {
  std::string out(text);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string trim(std::string_view text) {
  std::size_t b = 0;
  std::size_t e = text.size();
  while (b < e && is_space(text[b])) ++b;
  while (e > b && is_space(text[e - 1])) --e;
  return std::string(text.substr(b, e - b));
}

std::string normalize_answer(std::string_view text) {
  return join(split_whitespace(to_lower(text)), " ");
}

std::string normalize_for_match(std::string_view text) {
  return normalize_answer(strip_outer_punct(trim(text)));
}

std::vector<std::string> metric_tokens(std::string_view text) {
  std::vector<std::string> out;
  for (const auto& raw : split_whitespace(to_lower(text))) {
    auto tok = strip_outer_punct(raw);
    if (!tok.empty()) out.push_back(std::move(tok));
  }
  return out;
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out.append(sep);
    out.append(parts[i]);
  }
  return out;
}

std::size_t count_occurrences(std::string_view haystack, std::string_view needle) {
  if (needle.empty()) return 0;
  std::size_t n = 0;
  for (auto pos = haystack.find(needle); pos != std::string_view::npos;
       pos = haystack.find(needle, pos + needle.size()))
    ++n;
  return n;
}

}  // namespace probeforge
