#include "d2d/io.hpp"

#include "d2d/util.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

namespace d2d::io {

static_assert(std::endian::native == std::endian::little, "on-disk formats assume a little-endian host");

namespace {

std::ofstream open_out(const std::filesystem::path& file) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + file.string() + " for writing");
  return out;
}

std::ifstream open_in(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open " + file.string());
  return in;
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

void write_npy_f32(const std::filesystem::path& file, const std::vector<std::size_t>& shape,
                   const std::vector<float>& data) {
  std::size_t n = 1;
  std::string dims;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    n *= shape[i];
    if (i) dims += ", ";
    dims += std::to_string(shape[i]);
  }
  if (shape.size() == 1) dims += ",";
  if (n != data.size()) throw InvalidInput("write_npy: shape does not match data size");
  std::string header = "{'descr': '<f4', 'fortran_order': False, 'shape': (" + dims + "), }";
  const std::size_t base = 6 + 2 + 2;
  std::size_t total = base + header.size() + 1;
  header.append((64 - total % 64) % 64, ' ');
  header.push_back('\n');
  auto out = open_out(file);
  out.write("\x93NUMPY", 6);
  const char ver[2] = {1, 0};
  out.write(ver, 2);
  const auto hl = static_cast<std::uint16_t>(header.size());
  out.write(reinterpret_cast<const char*>(&hl), 2);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(float)));
  if (!out) throw IoError("write failed: " + file.string());
}

NpyArray read_npy(const std::filesystem::path& file) {
  auto in = open_in(file);
  char magic[6];
  in.read(magic, 6);
  if (!in || std::memcmp(magic, "\x93NUMPY", 6) != 0) throw LoadError(file.string() + ": not an NPY file");
  char ver[2];
  in.read(ver, 2);
  std::uint32_t hl = 0;
  if (ver[0] == 1) {
    std::uint16_t h16 = 0;
    in.read(reinterpret_cast<char*>(&h16), 2);
    hl = h16;
  } else {
    in.read(reinterpret_cast<char*>(&hl), 4);
  }
  std::string header(hl, '\0');
  in.read(header.data(), hl);
  if (!in) throw LoadError(file.string() + ": truncated header");

  const bool is_f4 = header.find("'<f4'") != std::string::npos;
  const bool is_u1 = header.find("'|u1'") != std::string::npos || header.find("'<u1'") != std::string::npos;
  if (!is_f4 && !is_u1) throw LoadError(file.string() + ": unsupported dtype (need <f4 or |u1)");
  if (header.find("'fortran_order': True") != std::string::npos)
    throw LoadError(file.string() + ": fortran order not supported");
  const auto lp = header.find('(', header.find("'shape'"));
  const auto rp = header.find(')', lp);
  if (lp == std::string::npos || rp == std::string::npos) throw LoadError(file.string() + ": bad shape");
  NpyArray arr;
  std::stringstream ss(header.substr(lp + 1, rp - lp - 1));
  std::string tok;
  std::size_t n = 1;
  while (std::getline(ss, tok, ',')) {
    tok = trim(tok);
    if (tok.empty()) continue;
    arr.shape.push_back(std::stoul(tok));
    n *= arr.shape.back();
  }
  arr.data.resize(n);
  if (is_f4) {
    in.read(reinterpret_cast<char*>(arr.data.data()), static_cast<std::streamsize>(n * sizeof(float)));
  } else {
    std::vector<std::uint8_t> raw(n);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n));
    for (std::size_t i = 0; i < n; ++i) arr.data[i] = raw[i];
  }
  if (!in) throw LoadError(file.string() + ": truncated data");
  return arr;
}

void write_f32_raw(const std::filesystem::path& file, const std::vector<float>& data) {
  auto out = open_out(file);
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(float)));
  if (!out) throw IoError("write failed: " + file.string());
}

std::vector<float> read_f32_raw(const std::filesystem::path& file) {
  const auto bytes = std::filesystem::file_size(file);
  if (bytes % sizeof(float) != 0) throw LoadError(file.string() + ": size is not a multiple of 4");
  std::vector<float> data(bytes / sizeof(float));
  auto in = open_in(file);
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(bytes));
  if (!in) throw LoadError(file.string() + ": short read");
  return data;
}

void write_key_values(const std::filesystem::path& file, const KeyValues& kv) {
  std::string text;
  for (const auto& [k, v] : kv) text += k + " = " + v + "\n";
  write_text(file, text);
}

KeyValues read_key_values(const std::filesystem::path& file) {
  std::istringstream in(read_text(file));
  KeyValues kv;
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw LoadError(file.string() + ": malformed line '" + line + "'");
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

std::string read_text(const std::filesystem::path& file) {
  auto in = open_in(file);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& file, const std::string& text) {
  auto out = open_out(file);
  out << text;
  if (!out) throw IoError("write failed: " + file.string());
}

std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw Error("format_double failed");
  return std::string(buf, p);
}

BinaryWriter::BinaryWriter(const std::filesystem::path& file) : file_(file) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  out_.open(file, std::ios::binary | std::ios::trunc);
  if (!out_) throw IoError("cannot write " + file.string());
}

void BinaryWriter::put_bytes(const char* data, std::size_t n) { out_.write(data, static_cast<std::streamsize>(n)); }

void BinaryWriter::put_str(const std::string& s) {
  put(static_cast<std::uint32_t>(s.size()));
  put_bytes(s.data(), s.size());
}

void BinaryWriter::put_mat(const Mat& m) {
  put(static_cast<std::int64_t>(m.rows()));
  put(static_cast<std::int64_t>(m.cols()));
  put_bytes(reinterpret_cast<const char*>(m.data()), sizeof(double) * static_cast<std::size_t>(m.size()));
}

void BinaryWriter::finish() {
  out_.flush();
  if (!out_) throw IoError("write failed: " + file_.string());
}

BinaryReader::BinaryReader(const std::filesystem::path& file) : file_(file), in_(file, std::ios::binary) {
  if (!in_) throw LoadError("cannot open " + file.string());
}

void BinaryReader::fail(const std::string& what) const { throw LoadError(file_.string() + ": " + what); }

void BinaryReader::read(char* data, std::size_t n) {
  in_.read(data, static_cast<std::streamsize>(n));
  if (!in_) fail("truncated file");
}

std::string BinaryReader::get_str() {
  const auto n = get<std::uint32_t>();
  if (n > (1u << 28)) fail("implausible string length");
  std::string s(n, '\0');
  read(s.data(), n);
  return s;
}

Mat BinaryReader::get_mat() {
  const auto r = get<std::int64_t>();
  const auto c = get<std::int64_t>();
  if (r < 0 || c < 0 || r * c > (1LL << 32)) fail("bad matrix dims");
  Mat m(r, c);
  read(reinterpret_cast<char*>(m.data()), sizeof(double) * static_cast<std::size_t>(m.size()));
  return m;
}

}  // namespace d2d::io
