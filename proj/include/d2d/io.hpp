#pragma once

#include "d2d/autograd.hpp"

#include <cstdint>
#include <fstream>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace d2d::io {

// Minimal NPY v1.0 support: little-endian float32 ('<f4') and uint8 ('|u1'),
// C order. uint8 data is widened to float on read.
struct NpyArray {
  std::vector<std::size_t> shape;
  std::vector<float> data;
};

void write_npy_f32(const std::filesystem::path& file, const std::vector<std::size_t>& shape,
                   const std::vector<float>& data);
NpyArray read_npy(const std::filesystem::path& file);

void write_f32_raw(const std::filesystem::path& file, const std::vector<float>& data);
std::vector<float> read_f32_raw(const std::filesystem::path& file);

// "key = value" lines; '#' starts a comment line.
using KeyValues = std::map<std::string, std::string>;
void write_key_values(const std::filesystem::path& file, const KeyValues& kv);
KeyValues read_key_values(const std::filesystem::path& file);

std::string read_text(const std::filesystem::path& file);
void write_text(const std::filesystem::path& file, const std::string& text);

// Round-trip-exact decimal rendering of a double.
std::string format_double(double v);

// Little-endian binary streams for the checkpoint and cache containers.
// Strings are u32 length + bytes; matrices are i64 rows | i64 cols | f64 data.
class BinaryWriter {
 public:
  explicit BinaryWriter(const std::filesystem::path& file);
  template <typename T>
  void put(const T& v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  void put_bytes(const char* data, std::size_t n);
  void put_str(const std::string& s);
  void put_mat(const Mat& m);
  // Throws IoError if any write failed.
  void finish();

 private:
  std::filesystem::path file_;
  std::ofstream out_;
};

// Reading errors surface as LoadError naming the file.
class BinaryReader {
 public:
  explicit BinaryReader(const std::filesystem::path& file);
  template <typename T>
  T get() {
    T v{};
    read(reinterpret_cast<char*>(&v), sizeof v);
    return v;
  }
  void read(char* data, std::size_t n);
  std::string get_str();
  Mat get_mat();
  [[noreturn]] void fail(const std::string& what) const;

 private:
  std::filesystem::path file_;
  std::ifstream in_;
};

}  // namespace d2d::io
