#pragma once

// Small text-output helpers shared by the writers.

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace ismeta {

/// Shortest decimal that round-trips to the same double.
std::string format_double(double v);

/// Fixed-point with `digits` decimals.
std::string format_fixed(double v, int digits);

/// Quotes a CSV cell when it contains a comma, quote or newline.
std::string csv_escape(std::string_view cell);

std::string csv_row(const std::vector<std::string>& cells);

/// Splits one CSV line (double-quote aware).
std::vector<std::string> csv_split(std::string_view line);

/// Writes through a temporary file and renames, so readers never see a
/// partial artifact.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

std::string read_file(const std::filesystem::path& path);

}  // namespace ismeta
