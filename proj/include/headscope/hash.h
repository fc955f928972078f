#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>

namespace headscope {

// Incremental 64-bit FNV-1a. Used for every artifact fingerprint, so the
// byte feed order of each caller is part of the artifact format.
class Fingerprint {
 public:
  Fingerprint& bytes(const void* data, std::size_t size) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < size; ++i) {
      state_ ^= p[i];
      state_ *= 0x100000001b3ULL;
    }
    return *this;
  }

  Fingerprint& str(std::string_view s) {
    const std::uint64_t len = s.size();
    bytes(&len, sizeof len);
    return bytes(s.data(), s.size());
  }

  template <typename T>
    requires std::is_arithmetic_v<T>
  Fingerprint& value(T v) {
    return bytes(&v, sizeof v);
  }

  template <typename T>
    requires std::is_arithmetic_v<T>
  Fingerprint& values(std::span<const T> vs) {
    const std::uint64_t len = vs.size();
    bytes(&len, sizeof len);
    return bytes(vs.data(), vs.size_bytes());
  }

  std::uint64_t digest() const { return state_; }
  std::string hex() const;

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::string to_hex(std::uint64_t v);

// Fingerprint of a file's full contents. Throws IoError when unreadable.
std::string file_fingerprint(const std::string& path);

}  // namespace headscope
