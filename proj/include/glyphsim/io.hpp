#pragma once

// Small file helpers shared by the pipeline: .npy arrays, JSON documents
// and delimiter-separated tables.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace glyphsim::io {

template <class T>
struct NpyArray {
  std::vector<int64_t> shape;
  std::vector<T> data;  // C order
};

// Supported element types: float, double.
template <class T>
void write_npy(const std::filesystem::path& path, std::span<const T> data,
               std::span<const int64_t> shape);

template <class T>
NpyArray<T> read_npy(const std::filesystem::path& path);

nlohmann::json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

// Shortest round-trip representation ("0.1", "3e-05", "8.801242896488734").
std::string format_double(double x);
// Fixed notation with `digits` decimals.
std::string format_fixed(double x, int digits);

class Table {
 public:
  explicit Table(std::vector<std::string> header, char delimiter = ',');

  void add_row(std::vector<std::string> row);
  const std::vector<std::string>& header() const { return header_; }
  const std::vector<std::vector<std::string>>& rows() const { return rows_; }

  std::string to_string() const;
  void save(const std::filesystem::path& path) const;
  static Table load(const std::filesystem::path& path, char delimiter = ',');

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
  char delimiter_;
};

}  // namespace glyphsim::io
