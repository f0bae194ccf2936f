#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "fdrcast/common.hpp"

namespace fdrcast::io {

// Shortest round-trip decimal form; identical input gives identical bytes.
std::string format_double(double value);

std::string read_file(const std::filesystem::path& path);
// Writes atomically enough for our purposes: parent directories are created.
void write_file(const std::filesystem::path& path, std::string_view contents);

// Hex SHA-256 of a byte string.
std::string sha256_hex(std::string_view bytes);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

CsvTable parse_csv(std::string_view text, const std::string& source_name);
std::string to_csv(const CsvTable& table);

// Matrix files: header "input_index,c0,c1,...", one row per input.
struct IndexedMatrix {
  std::vector<long> input_index;
  Matrix values;
};

IndexedMatrix read_matrix_csv(const std::filesystem::path& path);
std::string matrix_to_csv(const Matrix& values);
void write_matrix_csv(const std::filesystem::path& path, const Matrix& values);

double parse_double(std::string_view field, const std::string& context);
long parse_long(std::string_view field, const std::string& context);

}  // namespace fdrcast::io
