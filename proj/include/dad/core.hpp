#pragma once

#include <cstdint>
#include <cstring>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace dad {

using real = double;

[[noreturn]] inline void fail(const std::string& msg) { throw std::runtime_error(msg); }

inline void check(bool ok, const std::string& msg) {
  if (!ok) fail(msg);
}

// splitmix64; used to derive independent per-item seeds from (seed, id).
inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t derive_seed(uint64_t seed, uint64_t id) {
  return splitmix64(splitmix64(seed) ^ splitmix64(id + 0x632be59bd9b4e019ULL));
}

using Rng = std::mt19937_64;

// 32-byte content fingerprint (non-cryptographic): four fnv1a-style lanes
// with distinct offsets. Stable across platforms for identical byte input.
struct Fingerprint {
  uint64_t lane[4] = {0, 0, 0, 0};

  bool operator==(const Fingerprint& o) const {
    return lane[0] == o.lane[0] && lane[1] == o.lane[1] && lane[2] == o.lane[2] &&
           lane[3] == o.lane[3];
  }
  bool operator!=(const Fingerprint& o) const { return !(*this == o); }

  std::string hex() const;
};

Fingerprint fingerprint_bytes(const void* data, size_t n);
Fingerprint fingerprint_doubles(const std::vector<real>& v);

// ---- little-endian binary i/o helpers (x86 hosts; layout documented in README) ----

inline void put_bytes(std::vector<uint8_t>& out, const void* p, size_t n) {
  const uint8_t* b = static_cast<const uint8_t*>(p);
  out.insert(out.end(), b, b + n);
}

template <class T>
void put_pod(std::vector<uint8_t>& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  put_bytes(out, &v, sizeof(T));
}

struct ByteReader {
  const uint8_t* p;
  const uint8_t* end;

  explicit ByteReader(const std::vector<uint8_t>& buf) : p(buf.data()), end(buf.data() + buf.size()) {}

  void read(void* dst, size_t n) {
    check(size_t(end - p) >= n, "binary read past end of buffer");
    std::memcpy(dst, p, n);
    p += n;
  }

  template <class T>
  T pod() {
    T v;
    read(&v, sizeof(T));
    return v;
  }
};

std::vector<uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::vector<uint8_t>& bytes);

}  // namespace dad
