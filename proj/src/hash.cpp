#include "headscope/hash.h"

#include <array>
#include <fstream>

#include "headscope/errors.h"

namespace headscope {

std::string to_hex(std::uint64_t v) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kDigits[v & 0xf];
    v >>= 4;
  }
  return out;
}

std::string Fingerprint::hex() const { return to_hex(state_); }

std::string file_fingerprint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  Fingerprint fp;
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    fp.bytes(buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  return fp.hex();
}

}  // namespace headscope
