#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace shellscope {

std::string trim(std::string_view s);
std::string rtrim(std::string_view s);

// split on runs of spaces/tabs; empty fields dropped
std::vector<std::string> split_words(std::string_view s);

// split on an exact delimiter character, empty fields kept
std::vector<std::string> split_char(std::string_view s, char delim);

std::string join(const std::vector<std::string>& parts, std::string_view sep);

std::string first_word(std::string_view s);

bool contains(std::string_view haystack, std::string_view needle);

// Replace invalid UTF-8 byte sequences with U+FFFD. `replacements` (optional)
// is incremented once per replaced sequence.
std::string utf8_sanitize(std::string_view s, std::size_t* replacements = nullptr);

// shortest decimal form that round-trips a double (%.17g trimmed)
std::string format_double(double v);

}  // namespace shellscope
