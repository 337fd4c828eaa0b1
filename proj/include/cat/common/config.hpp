#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace cat {

// Ordered `key = value` entries. Blank lines and `#` comments are skipped.
using KeyValues = std::vector<std::pair<std::string, std::string>>;

KeyValues parse_key_values(const std::string& text);
KeyValues read_key_values(const std::string& path);
// "key=value" override as given on a command line.
std::pair<std::string, std::string> parse_override(const std::string& item);

double parse_double(const std::string& key, const std::string& value);
std::size_t parse_count(const std::string& key, const std::string& value);
std::uint64_t parse_u64(const std::string& key, const std::string& value);
bool parse_bool(const std::string& key, const std::string& value);

// Shortest text that parses back to the identical double.
std::string format_double(double v);

}  // namespace cat
