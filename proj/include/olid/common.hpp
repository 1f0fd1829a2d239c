// olid/common.hpp

// Copyright 2026  The Olid Authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#ifndef OLID_COMMON_HPP
#define OLID_COMMON_HPP

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

static_assert(std::endian::native == std::endian::little,
              "artifact file formats are little-endian; big-endian hosts are unsupported");

namespace olid {

enum class ErrorCode {
  io,
  decode,
  malformed_name,
  insufficient_data,
  config,
  shape,
  registry_mismatch,
  version_mismatch,
  nonfinite_loss,
  empty_input,
  range,
  degenerate_batch,
  stratification,
  duplicate_code,
  insufficient_examples,
  lock,
};

/// Single exception type; the code selects the CLI exit status.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

inline const char* error_code_name(ErrorCode c) {
  switch (c) {
    case ErrorCode::io: return "IoError";
    case ErrorCode::decode: return "DecodeError";
    case ErrorCode::malformed_name: return "MalformedName";
    case ErrorCode::insufficient_data: return "InsufficientData";
    case ErrorCode::config: return "ConfigError";
    case ErrorCode::shape: return "ShapeError";
    case ErrorCode::registry_mismatch: return "RegistryMismatch";
    case ErrorCode::version_mismatch: return "VersionMismatch";
    case ErrorCode::nonfinite_loss: return "NonFiniteLoss";
    case ErrorCode::empty_input: return "EmptyInput";
    case ErrorCode::range: return "RangeError";
    case ErrorCode::degenerate_batch: return "DegenerateBatch";
    case ErrorCode::stratification: return "StratificationError";
    case ErrorCode::duplicate_code: return "DuplicateCode";
    case ErrorCode::insufficient_examples: return "InsufficientExamples";
    case ErrorCode::lock: return "LockError";
  }
  return "Error";
}

/// Exit statuses, one per error class.  0 is success, 1 is reserved for
/// usage/flag errors raised by the CLI parser itself.
inline int exit_code_for(ErrorCode c) {
  switch (c) {
    case ErrorCode::config: return 2;
    case ErrorCode::io: return 3;
    case ErrorCode::decode: return 4;
    case ErrorCode::malformed_name: return 5;
    case ErrorCode::insufficient_data: return 6;
    case ErrorCode::shape: return 7;
    case ErrorCode::registry_mismatch: return 8;
    case ErrorCode::version_mismatch: return 9;
    case ErrorCode::nonfinite_loss: return 10;
    case ErrorCode::empty_input: return 11;
    case ErrorCode::range: return 12;
    case ErrorCode::degenerate_batch: return 13;
    case ErrorCode::stratification: return 14;
    case ErrorCode::duplicate_code: return 15;
    case ErrorCode::insufficient_examples: return 16;
    case ErrorCode::lock: return 17;
  }
  return 20;
}

// ---------------------------------------------------------------------------
// Little-endian binary I/O.  All artifact files go through these.

inline void write_bytes(std::ostream& os, const void* p, size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  if (!os) throw Error(ErrorCode::io, "short write");
}

inline void read_bytes(std::istream& is, void* p, size_t n) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<size_t>(is.gcount()) != n)
    throw Error(ErrorCode::io, "unexpected end of file");
}

template <typename T>
void write_pod(std::ostream& os, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  write_bytes(os, &v, sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  static_assert(std::is_trivially_copyable_v<T>);
  T v;
  read_bytes(is, &v, sizeof(T));
  return v;
}

inline void write_u32(std::ostream& os, uint32_t v) { write_pod(os, v); }
inline void write_u64(std::ostream& os, uint64_t v) { write_pod(os, v); }
inline void write_i64(std::ostream& os, int64_t v) { write_pod(os, v); }
inline void write_f32(std::ostream& os, float v) { write_pod(os, v); }
inline void write_f64(std::ostream& os, double v) { write_pod(os, v); }
inline uint32_t read_u32(std::istream& is) { return read_pod<uint32_t>(is); }
inline uint64_t read_u64(std::istream& is) { return read_pod<uint64_t>(is); }
inline int64_t read_i64(std::istream& is) { return read_pod<int64_t>(is); }
inline float read_f32(std::istream& is) { return read_pod<float>(is); }
inline double read_f64(std::istream& is) { return read_pod<double>(is); }

inline void write_string(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<uint32_t>(s.size()));
  if (!s.empty()) write_bytes(os, s.data(), s.size());
}

inline std::string read_string(std::istream& is) {
  uint32_t n = read_u32(is);
  std::string s(n, '\0');
  if (n) read_bytes(is, s.data(), n);
  return s;
}

template <typename T>
void write_vector(std::ostream& os, const std::vector<T>& v) {
  static_assert(std::is_trivially_copyable_v<T>);
  write_u64(os, v.size());
  if (!v.empty()) write_bytes(os, v.data(), v.size() * sizeof(T));
}

template <typename T>
std::vector<T> read_vector(std::istream& is) {
  static_assert(std::is_trivially_copyable_v<T>);
  uint64_t n = read_u64(is);
  std::vector<T> v(n);
  if (n) read_bytes(is, v.data(), n * sizeof(T));
  return v;
}

/// Reads a 4-byte file magic and compares; mismatch means the file is either
/// not ours or from an incompatible format revision.
inline void expect_magic(std::istream& is, const char magic[5], const char* what) {
  char got[4];
  try {
    read_bytes(is, got, 4);
  } catch (const Error&) {
    throw Error(ErrorCode::version_mismatch, std::string(what) + ": truncated header");
  }
  if (std::memcmp(got, magic, 4) != 0)
    throw Error(ErrorCode::version_mismatch, std::string(what) + ": bad magic");
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error(ErrorCode::io, "cannot open for writing: " + path);
  return os;
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::io, "cannot open for reading: " + path);
  return is;
}

// ---------------------------------------------------------------------------
// Deterministic randomness.  mt19937_64's output sequence is pinned by the
// standard; the distribution transforms below are our own so that identical
// seeds give identical streams on every platform / standard library.

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Named differently from the string form on purpose: a string literal passed
// with a hash-chain argument must not bind here as (pointer, length).
inline uint64_t fnv1a64_bytes(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline uint64_t fnv1a64(const std::string& s, uint64_t h = 0xcbf29ce484222325ULL) {
  return fnv1a64_bytes(s.data(), s.size(), h);
}

class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(splitmix64(seed)) {}
  Rng(uint64_t seed, const std::string& stream_tag)
      : engine_(splitmix64(seed ^ fnv1a64(stream_tag))) {}

  uint64_t u64() { return engine_(); }

  /// Uniform double in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  size_t index(size_t n) {
    return n ? std::min(n - 1, static_cast<size_t>(uniform() * static_cast<double>(n))) : 0;
  }

  /// Standard normal via Box-Muller, one value per call (pairs cached).
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[index(i)]);
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace olid

#endif  // OLID_COMMON_HPP
