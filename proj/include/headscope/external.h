#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "headscope/model.h"

namespace headscope {

// Externally computed activations for one sample, e.g. attention maps and
// loss dumped from a large reference model.
//
// Manifest (JSONL), one object per sample:
//   {"sample_id": "s1", "n": 3, "loss": 0.7, "offset": 0,
//    "heads": [[layer, head], ...]}
// Data file, for each manifest head in order, starting at `offset`:
//   u32 layer, u32 head, u32 n, u32 reserved (0)   -- little-endian
//   n*n float64 little-endian, row-major (row = query position)
struct ExternalRecord {
  std::string sample_id;
  ForwardResult result;
};

struct ImportStats {
  std::size_t records = 0;
  std::size_t renormalized_rows = 0;
  std::size_t flagged_rows = 0;  // row sums off by more than 1e-3
};

// Streams records from a manifest/data pair. Throws FormatError on a shape
// mismatch, truncated data (the message names the byte offset), negative or
// above-diagonal weights, or a row that sums to zero. Rows whose sum differs
// from 1 by more than 1e-6 are renormalized with a warning.
class ExternalReader {
 public:
  ExternalReader(const std::string& manifest_path, const std::string& data_path);

  std::optional<ExternalRecord> next();
  const ImportStats& stats() const { return stats_; }

 private:
  AttentionMatrix read_matrix(const std::string& sample_id, HeadId head,
                              std::size_t n, std::uint64_t& offset);

  std::string manifest_path_;
  std::string data_path_;
  std::ifstream manifest_;
  std::ifstream data_;
  std::uint64_t data_size_ = 0;
  std::size_t line_no_ = 0;
  ImportStats stats_;
};

std::vector<ExternalRecord> import_external(const std::string& manifest_path,
                                            const std::string& data_path,
                                            ImportStats* stats = nullptr);

// Writes records in the format above. Every result must carry its
// attentions; offsets are assigned sequentially.
void export_external(const std::string& manifest_path,
                     const std::string& data_path,
                     std::span<const ExternalRecord> records);

}  // namespace headscope
