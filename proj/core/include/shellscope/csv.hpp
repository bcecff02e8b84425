#pragma once

#include <string>
#include <vector>

namespace shellscope {

// Minimal RFC-4180 style CSV: fields may be double-quoted, "" escapes a quote
// inside a quoted field. Rows with only whitespace and rows starting with '#'
// are skipped.
std::vector<std::vector<std::string>> read_csv(const std::string& path);

std::vector<std::string> parse_csv_line(const std::string& line);

}  // namespace shellscope
