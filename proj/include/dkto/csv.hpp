// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace dkto::csv {

// Shortest text that parses back to the same double.
std::string format_double(double v);

// Throws std::invalid_argument on anything but a complete number.
double parse_double(std::string_view field);
long long parse_int(std::string_view field);

// Plain comma split; no quoting support.
std::vector<std::string_view> split(std::string_view line);

// Strips a trailing '\r'.
std::string_view chomp(std::string_view line);

}  // namespace dkto::csv
