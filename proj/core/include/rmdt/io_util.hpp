// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace rmdt {

// Little-endian binary primitives. These assume a little-endian host, which
// is checked once at write time.
void write_u32(std::ostream& out, uint32_t v);
void write_i32(std::ostream& out, int32_t v);
void write_u64(std::ostream& out, uint64_t v);
void write_i64(std::ostream& out, int64_t v);
void write_f32(std::ostream& out, float v);
void write_f64(std::ostream& out, double v);
void write_string(std::ostream& out, const std::string& s);
void write_f64_vec(std::ostream& out, const std::vector<double>& v);
void write_f32_vec(std::ostream& out, const std::vector<float>& v);

uint32_t read_u32(std::istream& in);
int32_t read_i32(std::istream& in);
uint64_t read_u64(std::istream& in);
int64_t read_i64(std::istream& in);
float read_f32(std::istream& in);
double read_f64(std::istream& in);
std::string read_string(std::istream& in);
std::vector<double> read_f64_vec(std::istream& in);
std::vector<float> read_f32_vec(std::istream& in);

/// CRC-32 (zlib polynomial) of a byte buffer.
uint32_t crc32_bytes(const void* data, size_t size);

/// FNV-1a 64-bit hash, used for config fingerprints.
uint64_t fnv1a64(const std::string& text);

/// Writes `content` to `path` via a temp file and rename, so a crash never
/// leaves a truncated file at the destination.
void atomic_write_file(const std::string& path, const std::string& content);

std::string read_file(const std::string& path);
bool file_exists(const std::string& path);
void ensure_dir(const std::string& path);

/// Creates `path` exclusively with `content`. Returns false if it already
/// exists. Used as a cheap cross-process claim on a unit of work.
bool create_file_exclusive(const std::string& path,
                           const std::string& content);

}  // namespace rmdt
