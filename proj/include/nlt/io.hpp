#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace nlt::io {

/// Shortest decimal form that parses back to the same double.
std::string format_double(double value);

double parse_double(std::string_view text);
long long parse_int(std::string_view text);

std::vector<std::string_view> split(std::string_view line, char sep);

/// Reads a whole file; throws MissingArtifact when it cannot be opened.
std::string read_file(const std::string& path);

/// Writes atomically enough for our purposes: truncate then write.
void write_file(const std::string& path, std::string_view content);

void ensure_directory(const std::string& path);

/// 64-bit FNV-1a, used for config hashes in provenance blocks.
std::string fnv1a_hex(std::string_view data);

}  // namespace nlt::io
