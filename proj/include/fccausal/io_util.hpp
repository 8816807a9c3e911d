#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace fccausal {

// Shortest round-trip decimal form; identical bytes for identical doubles.
std::string format_double(double value);

// Quotes a CSV field when it contains a comma, quote or newline.
std::string csv_field(std::string_view value);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

// Lowercase hex SHA-256 digest.
std::string sha256_hex(std::string_view data);

}  // namespace fccausal
