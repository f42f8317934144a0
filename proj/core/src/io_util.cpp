// SPDX-License-Identifier: Apache-2.0
#include "rmdt/io_util.hpp"

#include <fcntl.h>
#include <unistd.h>
#include <zlib.h>

#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "rmdt/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "binary file formats assume a little-endian host");

namespace rmdt {

namespace {

void write_raw(std::ostream& out, const void* data, size_t size) {
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
  if (!out) throw DataError("write failed");
}

void read_raw(std::istream& in, void* data, size_t size) {
  in.read(static_cast<char*>(data), static_cast<std::streamsize>(size));
  if (in.gcount() != static_cast<std::streamsize>(size))
    throw DataError("unexpected end of file");
}

}  // namespace

void write_u32(std::ostream& out, uint32_t v) { write_raw(out, &v, 4); }
void write_i32(std::ostream& out, int32_t v) { write_raw(out, &v, 4); }
void write_u64(std::ostream& out, uint64_t v) { write_raw(out, &v, 8); }
void write_i64(std::ostream& out, int64_t v) { write_raw(out, &v, 8); }
void write_f32(std::ostream& out, float v) { write_raw(out, &v, 4); }
void write_f64(std::ostream& out, double v) { write_raw(out, &v, 8); }

void write_string(std::ostream& out, const std::string& s) {
  write_u64(out, s.size());
  if (!s.empty()) write_raw(out, s.data(), s.size());
}

void write_f64_vec(std::ostream& out, const std::vector<double>& v) {
  write_u64(out, v.size());
  if (!v.empty()) write_raw(out, v.data(), v.size() * sizeof(double));
}

void write_f32_vec(std::ostream& out, const std::vector<float>& v) {
  write_u64(out, v.size());
  if (!v.empty()) write_raw(out, v.data(), v.size() * sizeof(float));
}

uint32_t read_u32(std::istream& in) {
  uint32_t v;
  read_raw(in, &v, 4);
  return v;
}

int32_t read_i32(std::istream& in) {
  int32_t v;
  read_raw(in, &v, 4);
  return v;
}

uint64_t read_u64(std::istream& in) {
  uint64_t v;
  read_raw(in, &v, 8);
  return v;
}

int64_t read_i64(std::istream& in) {
  int64_t v;
  read_raw(in, &v, 8);
  return v;
}

float read_f32(std::istream& in) {
  float v;
  read_raw(in, &v, 4);
  return v;
}

double read_f64(std::istream& in) {
  double v;
  read_raw(in, &v, 8);
  return v;
}

std::string read_string(std::istream& in) {
  uint64_t size = read_u64(in);
  if (size > (1ull << 32)) throw DataError("string length is implausible");
  std::string s(size, '\0');
  if (size) read_raw(in, s.data(), size);
  return s;
}

std::vector<double> read_f64_vec(std::istream& in) {
  uint64_t size = read_u64(in);
  if (size > (1ull << 34)) throw DataError("vector length is implausible");
  std::vector<double> v(size);
  if (size) read_raw(in, v.data(), size * sizeof(double));
  return v;
}

std::vector<float> read_f32_vec(std::istream& in) {
  uint64_t size = read_u64(in);
  if (size > (1ull << 34)) throw DataError("vector length is implausible");
  std::vector<float> v(size);
  if (size) read_raw(in, v.data(), size * sizeof(float));
  return v;
}

uint32_t crc32_bytes(const void* data, size_t size) {
  return static_cast<uint32_t>(
      crc32(0L, static_cast<const Bytef*>(data), static_cast<uInt>(size)));
}

uint64_t fnv1a64(const std::string& text) {
  uint64_t h = 14695981039346656037ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

void atomic_write_file(const std::string& path, const std::string& content) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open for writing: " + tmp);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) throw DataError("write failed: " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw DataError("rename failed: " + path + " (" + ec.message() + ")");
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

bool file_exists(const std::string& path) {
  return std::filesystem::exists(path);
}

void ensure_dir(const std::string& path) {
  std::error_code ec;
  std::filesystem::create_directories(path, ec);
  if (ec) throw DataError("cannot create directory: " + path);
}

bool create_file_exclusive(const std::string& path,
                           const std::string& content) {
  int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_EXCL, 0644);
  if (fd < 0) {
    if (errno == EEXIST) return false;
    throw DataError("cannot create: " + path);
  }
  ssize_t n = ::write(fd, content.data(), content.size());
  ::close(fd);
  if (n != static_cast<ssize_t>(content.size()))
    throw DataError("short write: " + path);
  return true;
}

}  // namespace rmdt
