#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace stepconf {

std::string_view trim(std::string_view s);

// Lowercased ASCII copy.
std::string to_lower(std::string_view s);

// Trim, collapse internal whitespace runs to one space, lowercase.
std::string canonical_text(std::string_view s);

// Lowercased maximal [a-z0-9] runs; everything else separates tokens.
std::vector<std::string> tokenize(std::string_view s);

std::uint64_t fnv1a64(std::string_view s);

// Shortest decimal string that round-trips the value.
std::string format_double(double v);

// Whole-string numeric parse; returns false on any trailing garbage.
bool parse_number(std::string_view s, double& out);

}  // namespace stepconf
