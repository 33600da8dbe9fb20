#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace engage::text {

/// Shortest decimal string that parses back to the identical double.
std::string format_double(double value);

/// Strict parse of a whole token; throws DataError naming `what` on failure.
double parse_double(std::string_view token, std::string_view what);
long long parse_int(std::string_view token, std::string_view what);

std::string_view trim(std::string_view s);
std::vector<std::string_view> split(std::string_view s, char sep);

}  // namespace engage::text
