#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace latcert {

/// Whole-file read; throws FormatError when the file cannot be opened.
std::string read_file(const std::filesystem::path& path);

/// Writes through a sibling temporary and renames, so readers never see a
/// partial file.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

/// Shortest decimal form that parses back to the same double.
std::string format_double(double v);

/// Strict decimal parse of the whole token; throws FormatError naming `context`.
double parse_double(std::string_view token, std::string_view context);

}  // namespace latcert
