#pragma once

/**
 * @file
 * @brief Locale-independent number formatting and small CSV helpers.
 */

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace coopsafe::text {

/// Shortest representation that round-trips; "inf", "-inf" and "nan" for non-finite values.
std::string format_double(double x);

/// Fixed notation with `digits` decimals.
std::string format_fixed(double x, int digits);

/// Parses a number written by format_double(); throws std::invalid_argument on junk.
double parse_double(std::string_view s);

/// Splits one CSV line on commas (no quoting support; the formats here never need it).
std::vector<std::string_view> split_csv(std::string_view line);

/// Joins fields with commas.
std::string join_csv(const std::vector<std::string>& fields);

/// Writes `content` to `path` (binary mode, so bytes are stable); throws std::runtime_error on failure.
void write_file(const std::filesystem::path& path, const std::string& content);

/// Reads a whole file; throws std::runtime_error when it cannot be opened.
std::string read_file(const std::filesystem::path& path);

} // namespace coopsafe::text
