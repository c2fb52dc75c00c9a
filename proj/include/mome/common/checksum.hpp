// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <cstring>
#include <iomanip>
#include <span>
#include <sstream>
#include <string>
#include <string_view>

namespace mome {

// 64-bit FNV-1a over raw bytes.
class Fnv1a64 {
 public:
  void update(const void* bytes, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (std::size_t i = 0; i < n; ++i) {
      hash_ ^= p[i];
      hash_ *= 0x100000001b3ull;
    }
  }
  void update(std::string_view s) { update(s.data(), s.size()); }
  void update(std::span<const double> values) { update(values.data(), values.size_bytes()); }

  std::uint64_t value() const { return hash_; }
  std::string hex() const {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << hash_;
    return os.str();
  }

 private:
  std::uint64_t hash_ = 0xcbf29ce484222325ull;
};

inline std::string checksum_hex(std::span<const double> values) {
  Fnv1a64 h;
  h.update(values);
  return h.hex();
}

}  // namespace mome
