#include "glyphsim/io.hpp"

#include <charconv>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "glyphsim/error.hpp"

namespace glyphsim::io {

namespace fs = std::filesystem;

namespace {

template <class T>
constexpr const char* npy_descr();
template <>
constexpr const char* npy_descr<float>() { return "<f4"; }
template <>
constexpr const char* npy_descr<double>() { return "<f8"; }

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

std::string quote_field(const std::string& field, char delimiter) {
  if (field.find(delimiter) == std::string::npos && field.find('"') == std::string::npos &&
      field.find('\n') == std::string::npos)
    return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> split_line(const std::string& line, char delimiter) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == delimiter) {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

}  // namespace

template <class T>
void write_npy(const fs::path& path, std::span<const T> data, std::span<const int64_t> shape) {
  int64_t count = 1;
  for (auto d : shape) count *= d;
  if (count != static_cast<int64_t>(data.size()))
    throw ShapeError("write_npy: shape does not match element count for " + path.string());

  std::string dims;
  for (size_t i = 0; i < shape.size(); ++i) {
    dims += std::to_string(shape[i]);
    if (shape.size() == 1 || i + 1 < shape.size()) dims += ", ";
  }
  std::string header = "{'descr': '" + std::string(npy_descr<T>()) +
                       "', 'fortran_order': False, 'shape': (" + dims + "), }";
  // magic(6) + version(2) + header_len(2) + header + '\n' padded to 64 bytes
  const size_t unpadded = 10 + header.size() + 1;
  header.append((64 - unpadded % 64) % 64, ' ');
  header += '\n';

  ensure_parent(path);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  const char magic[] = "\x93NUMPY\x01\x00";
  out.write(magic, 8);
  const auto len = static_cast<uint16_t>(header.size());
  const char len_bytes[2] = {static_cast<char>(len & 0xFF), static_cast<char>(len >> 8)};
  out.write(len_bytes, 2);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(T)));
}

template <class T>
NpyArray<T> read_npy(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, "\x93NUMPY", 6) != 0)
    throw InvalidInput("not an .npy file: " + path.string());
  uint32_t header_len = 0;
  if (magic[6] == 1) {
    unsigned char b[2];
    in.read(reinterpret_cast<char*>(b), 2);
    header_len = b[0] | (b[1] << 8);
  } else {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    header_len = b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<uint32_t>(b[3]) << 24);
  }
  std::string header(header_len, '\0');
  in.read(header.data(), header_len);
  if (header.find(npy_descr<T>()) == std::string::npos)
    throw InvalidInput("unexpected dtype in " + path.string() + ": " + header);
  if (header.find("'fortran_order': True") != std::string::npos)
    throw InvalidInput("fortran-ordered arrays are not supported: " + path.string());

  NpyArray<T> arr;
  const auto open = header.find('(');
  const auto close = header.find(')', open);
  std::stringstream dims(header.substr(open + 1, close - open - 1));
  std::string tok;
  while (std::getline(dims, tok, ',')) {
    if (tok.find_first_not_of(' ') == std::string::npos) continue;
    arr.shape.push_back(std::stoll(tok));
  }
  int64_t count = 1;
  for (auto d : arr.shape) count *= d;
  arr.data.resize(static_cast<size_t>(count));
  in.read(reinterpret_cast<char*>(arr.data.data()),
          static_cast<std::streamsize>(arr.data.size() * sizeof(T)));
  if (!in) throw InvalidInput("truncated .npy file: " + path.string());
  return arr;
}

template void write_npy<float>(const fs::path&, std::span<const float>, std::span<const int64_t>);
template void write_npy<double>(const fs::path&, std::span<const double>,
                                std::span<const int64_t>);
template NpyArray<float> read_npy<float>(const fs::path&);
template NpyArray<double> read_npy<double>(const fs::path&);

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  write_text(path, j.dump(2) + "\n");
}

void write_text(const fs::path& path, const std::string& text) {
  ensure_parent(path);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string format_double(double x) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

std::string format_fixed(double x, int digits) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), x, std::chars_format::fixed, digits);
  std::string s(buf, res.ptr);
  if (s.size() > 1 && s[0] == '-' && s.find_first_not_of("-0.") == std::string::npos)
    s.erase(0, 1);  // no "-0.00"
  return s;
}

Table::Table(std::vector<std::string> header, char delimiter)
    : header_(std::move(header)), delimiter_(delimiter) {}

void Table::add_row(std::vector<std::string> row) {
  if (row.size() != header_.size())
    throw ShapeError("table row has " + std::to_string(row.size()) + " fields, header has " +
                     std::to_string(header_.size()));
  rows_.push_back(std::move(row));
}

std::string Table::to_string() const {
  std::string out;
  auto emit = [&](const std::vector<std::string>& fields) {
    for (size_t i = 0; i < fields.size(); ++i) {
      if (i) out += delimiter_;
      out += quote_field(fields[i], delimiter_);
    }
    out += '\n';
  };
  emit(header_);
  for (const auto& r : rows_) emit(r);
  return out;
}

void Table::save(const fs::path& path) const { write_text(path, to_string()); }

Table Table::load(const fs::path& path, char delimiter) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw InvalidInput("empty table: " + path.string());
  Table t(split_line(line, delimiter), delimiter);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    t.add_row(split_line(line, delimiter));
  }
  return t;
}

}  // namespace glyphsim::io
