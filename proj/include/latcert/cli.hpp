#pragma once

#include <filesystem>
#include <iosfwd>
#include <utility>
#include <string>
#include <vector>

namespace latcert::cli {

/// Runs one subcommand. `args` excludes the program name. Returns the exit
/// code: 0 success, 1 runtime failure, 2 usage error, 3 training diverged.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Parses `key = value` lines; blank lines and lines starting with '#' are
/// skipped. Throws FormatError with the line number on malformed lines.
std::vector<std::pair<std::string, std::string>> parse_config(const std::string& text);

/// Flag arguments equivalent to a config file, in file order.
std::vector<std::string> config_arguments(const std::filesystem::path& path);

}  // namespace latcert::cli
