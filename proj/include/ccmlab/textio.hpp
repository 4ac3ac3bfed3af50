// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace ccm {

/// Shortest round-trip decimal form, '.' separator regardless of locale.
std::string format_double(double v);

/// Locale-independent parse of a full token; throws ConfigError on garbage.
double parse_double(std::string_view token);
long long parse_int(std::string_view token);

/// Whitespace tokenizer.
std::vector<std::string_view> split_ws(std::string_view line);
std::vector<std::string_view> split(std::string_view line, char sep);

} // namespace ccm
