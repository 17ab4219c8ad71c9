#include "dad/core.hpp"

#include <cstdio>
#include <fstream>

namespace dad {

std::string Fingerprint::hex() const {
  char buf[65];
  std::snprintf(buf, sizeof(buf), "%016llx%016llx%016llx%016llx",
                (unsigned long long)lane[0], (unsigned long long)lane[1],
                (unsigned long long)lane[2], (unsigned long long)lane[3]);
  return std::string(buf);
}

Fingerprint fingerprint_bytes(const void* data, size_t n) {
  static constexpr uint64_t kOffsets[4] = {0xcbf29ce484222325ULL, 0x84222325cbf29ce4ULL,
                                           0x9ae16a3b2f90404fULL, 0xc949d7c7509e6557ULL};
  static constexpr uint64_t kPrime = 0x100000001b3ULL;
  Fingerprint fp;
  const uint8_t* p = static_cast<const uint8_t*>(data);
  for (int l = 0; l < 4; ++l) {
    uint64_t h = kOffsets[l];
    for (size_t i = 0; i < n; ++i) {
      h ^= uint64_t(p[i]) + (uint64_t(l) << 32);
      h *= kPrime;
    }
    fp.lane[l] = splitmix64(h ^ (n * kPrime));
  }
  return fp;
}

Fingerprint fingerprint_doubles(const std::vector<real>& v) {
  return fingerprint_bytes(v.data(), v.size() * sizeof(real));
}

std::vector<uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  check(f.good(), "cannot open file: " + path);
  f.seekg(0, std::ios::end);
  const std::streamoff n = f.tellg();
  f.seekg(0, std::ios::beg);
  std::vector<uint8_t> buf(size_t(n));
  if (n > 0) f.read(reinterpret_cast<char*>(buf.data()), n);
  check(f.good(), "failed reading file: " + path);
  return buf;
}

void write_file_bytes(const std::string& path, const std::vector<uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  check(f.good(), "cannot open file for writing: " + path);
  if (!bytes.empty()) f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  f.flush();
  check(f.good(), "failed writing file: " + path);
}

}  // namespace dad
