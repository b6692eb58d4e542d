#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace hskd {

// Shortest decimal text that parses back to the same double.
std::string format_double(double value);

std::vector<std::string_view> split_csv_line(std::string_view line);

// Strict numeric parse of a whole cell; returns false on trailing garbage.
bool parse_double(std::string_view text, double& out);
bool parse_int64(std::string_view text, long long& out);

}  // namespace hskd
