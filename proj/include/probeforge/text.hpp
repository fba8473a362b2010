#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace probeforge {

/// Splits on ASCII whitespace; empty tokens are never produced.
std::vector<std::string> split_whitespace(std::string_view text);

std::string to_lower(std::string_view text);

std::string trim(std::string_view text);

/// Lowercases, trims and collapses internal whitespace runs to one space.
std::string normalize_answer(std::string_view text);

/// Like normalize_answer but also strips leading and trailing punctuation
/// from the whole string. Used for gold-vs-candidate matching.
std::string normalize_for_match(std::string_view text);

/// Token sequence used by the hardness metrics: lowercase, whitespace split,
/// leading/trailing punctuation removed from every token, punctuation-only
/// tokens dropped.
std::vector<std::string> metric_tokens(std::string_view text);

std::string join(const std::vector<std::string>& parts, std::string_view sep);

/// Number of occurrences of `needle` in `haystack` (non-overlapping).
std::size_t count_occurrences(std::string_view haystack, std::string_view needle);

}  // namespace probeforge
