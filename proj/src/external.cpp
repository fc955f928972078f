#include "headscope/external.h"

#include <array>
#include <bit>
#include <cmath>
#include <nlohmann/json.hpp>

#include "headscope/errors.h"
#include "headscope/format.h"
#include "headscope/log.h"

namespace headscope {

using json = nlohmann::ordered_json;

namespace {

constexpr std::size_t kHeaderBytes = 16;
constexpr double kRowTolerance = 1e-6;
constexpr double kFlagTolerance = 1e-3;
constexpr double kZeroTolerance = 1e-12;

std::uint32_t load_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

double load_f64(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 7; i >= 0; --i) bits = bits << 8 | p[i];
  return std::bit_cast<double>(bits);
}

void store_u32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v & 0xff), static_cast<char>(v >> 8 & 0xff),
                              static_cast<char>(v >> 16 & 0xff),
                              static_cast<char>(v >> 24 & 0xff)};
  out.write(b.data(), b.size());
}

void store_f64(std::ostream& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  std::array<char, 8> b{};
  for (char& c : b) {
    c = static_cast<char>(bits & 0xff);
    bits >>= 8;
  }
  out.write(b.data(), b.size());
}

}  // namespace

ExternalReader::ExternalReader(const std::string& manifest_path,
                               const std::string& data_path)
    : manifest_path_(manifest_path),
      data_path_(data_path),
      manifest_(manifest_path, std::ios::binary),
      data_(data_path, std::ios::binary) {
  if (!manifest_) throw IoError("cannot read activation manifest " + manifest_path);
  if (!data_) throw IoError("cannot read activation data " + data_path);
  data_.seekg(0, std::ios::end);
  data_size_ = static_cast<std::uint64_t>(data_.tellg());
}

AttentionMatrix ExternalReader::read_matrix(const std::string& sample_id,
                                            HeadId head, std::size_t n,
                                            std::uint64_t& offset) {
  const std::uint64_t needed = kHeaderBytes + static_cast<std::uint64_t>(n) * n * 8;
  if (offset + needed > data_size_) {
    throw FormatError(data_path_ + ": truncated at byte offset " +
                      std::to_string(offset) + " (sample " + sample_id + ", head " +
                      to_string(head) + " needs " + std::to_string(needed) +
                      " bytes, " + std::to_string(data_size_ - std::min(offset, data_size_)) +
                      " available)");
  }
  std::vector<unsigned char> buf(needed);
  data_.clear();
  data_.seekg(static_cast<std::streamoff>(offset));
  data_.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(needed));
  if (static_cast<std::uint64_t>(data_.gcount()) != needed) {
    throw FormatError(data_path_ + ": short read at byte offset " + std::to_string(offset));
  }

  const std::uint32_t layer = load_u32(buf.data());
  const std::uint32_t hd = load_u32(buf.data() + 4);
  const std::uint32_t stored_n = load_u32(buf.data() + 8);
  if (static_cast<int>(layer) != head.layer || static_cast<int>(hd) != head.head) {
    throw FormatError(data_path_ + ": block at byte offset " + std::to_string(offset) +
                      " holds head " + std::to_string(layer) + ":" + std::to_string(hd) +
                      ", manifest expects " + to_string(head));
  }
  if (stored_n != n) {
    throw FormatError(data_path_ + ": shape mismatch at byte offset " +
                      std::to_string(offset) + " for sample " + sample_id + ": block is " +
                      std::to_string(stored_n) + "x" + std::to_string(stored_n) +
                      ", manifest declares n = " + std::to_string(n));
  }

  AttentionMatrix m(n);
  const unsigned char* p = buf.data() + kHeaderBytes;
  for (std::size_t i = 0; i < n; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j, p += 8) {
      const double v = load_f64(p);
      if (!std::isfinite(v) || v < -kZeroTolerance) {
        throw FormatError("sample " + sample_id + ", head " + to_string(head) +
                          ": invalid weight at row " + std::to_string(i));
      }
      if (j > i && v > kZeroTolerance) {
        throw FormatError("sample " + sample_id + ", head " + to_string(head) +
                          ": weight above the diagonal at row " + std::to_string(i));
      }
      const double kept = j > i ? 0.0 : std::max(v, 0.0);
      m(i, j) = kept;
      sum += kept;
    }
    if (sum <= 0.0) {
      throw FormatError("sample " + sample_id + ", head " + to_string(head) + ": row " +
                        std::to_string(i) + " sums to zero");
    }
    const double dev = std::abs(sum - 1.0);
    if (dev > kRowTolerance) {
      for (double& v : m.row(i)) v /= sum;
      ++stats_.renormalized_rows;
      std::string msg = "sample " + sample_id + ", head " + to_string(head) + ": row " +
                        std::to_string(i) + " sums to " + format_double(sum) +
                        "; renormalized";
      if (dev > kFlagTolerance) {
        ++stats_.flagged_rows;
        msg += " (outside the 1e-3 validation tolerance)";
      }
      log::warn(msg);
    }
  }
  offset += needed;
  return m;
}

std::optional<ExternalRecord> ExternalReader::next() {
  std::string line;
  while (std::getline(manifest_, line)) {
    ++line_no_;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = manifest_path_ + ":" + std::to_string(line_no_);
    json rec = json::parse(line, nullptr, false);
    if (rec.is_discarded() || !rec.is_object()) throw FormatError(where + ": not a JSON object");
    auto need = [&](const char* key) -> const json& {
      if (!rec.contains(key)) {
        throw FormatError(where + ": missing field \"" + key + "\"");
      }
      return rec[key];
    };
    const json& id = need("sample_id");
    const json& n_field = need("n");
    const json& loss = need("loss");
    const json& offset_field = need("offset");
    const json& heads = need("heads");
    if (!id.is_string() || !n_field.is_number_unsigned() || !loss.is_number() ||
        !offset_field.is_number_unsigned() || !heads.is_array()) {
      throw FormatError(where + ": field of the wrong type");
    }
    const auto n = n_field.get<std::size_t>();
    if (n == 0) throw FormatError(where + ": n must be at least 1");
    const double loss_value = loss.get<double>();
    if (!std::isfinite(loss_value) || loss_value < 0.0) {
      throw FormatError(where + ": loss must be finite and non-negative");
    }

    ExternalRecord out;
    out.sample_id = id.get<std::string>();
    out.result.loss = loss_value;
    out.result.token_count = n;
    auto offset = offset_field.get<std::uint64_t>();
    for (const auto& h : heads) {
      if (!h.is_array() || h.size() != 2 || !h[0].is_number_unsigned() ||
          !h[1].is_number_unsigned()) {
        throw FormatError(where + ": head entries must be [layer, head]");
      }
      const HeadId head{h[0].get<int>(), h[1].get<int>()};
      out.result.attentions.push_back({head, read_matrix(out.sample_id, head, n, offset)});
    }
    ++stats_.records;
    return out;
  }
  return std::nullopt;
}

std::vector<ExternalRecord> import_external(const std::string& manifest_path,
                                            const std::string& data_path,
                                            ImportStats* stats) {
  ExternalReader reader(manifest_path, data_path);
  std::vector<ExternalRecord> out;
  while (auto rec = reader.next()) out.push_back(std::move(*rec));
  if (stats) *stats = reader.stats();
  return out;
}

void export_external(const std::string& manifest_path, const std::string& data_path,
                     std::span<const ExternalRecord> records) {
  std::ofstream manifest(manifest_path, std::ios::binary | std::ios::trunc);
  std::ofstream data(data_path, std::ios::binary | std::ios::trunc);
  if (!manifest) throw IoError("cannot write " + manifest_path);
  if (!data) throw IoError("cannot write " + data_path);
  std::uint64_t offset = 0;
  for (const auto& rec : records) {
    const std::size_t n = rec.result.token_count;
    json line;
    line["sample_id"] = rec.sample_id;
    line["n"] = n;
    line["loss"] = rec.result.loss;
    line["offset"] = offset;
    json heads = json::array();
    for (const auto& a : rec.result.attentions) {
      if (a.matrix.size() != n) {
        throw InvalidArgument("sample " + rec.sample_id + ": matrix size differs from n");
      }
      heads.push_back(json::array({a.head.layer, a.head.head}));
      store_u32(data, static_cast<std::uint32_t>(a.head.layer));
      store_u32(data, static_cast<std::uint32_t>(a.head.head));
      store_u32(data, static_cast<std::uint32_t>(n));
      store_u32(data, 0);
      for (double v : a.matrix.values()) store_f64(data, v);
      offset += kHeaderBytes + static_cast<std::uint64_t>(n) * n * 8;
    }
    line["heads"] = std::move(heads);
    manifest << line.dump() << '\n';
  }
  if (!manifest || !data) throw IoError("write failed for external activations");
}

}  // namespace headscope
