#pragma once

#include <cstddef>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace headscope {

struct Sample {
  std::string id;
  std::string problem;
  std::string solution;
  std::optional<std::string> category;
  std::size_t length_words = 0;  // whitespace-separated words, problem + solution
  std::size_t line = 0;          // 1-based source line
};

struct RejectedLine {
  std::size_t line = 0;
  std::string reason;
};

// Records parsed from a JSONL corpus. Each line is an object with string
// fields "problem" and "solution", an optional string "category" and an
// optional "id" (string or integer). Records without an id get a content
// hash id; a second record with the same content and no id is dropped as a
// duplicate.
class Corpus {
 public:
  std::vector<Sample> samples;
  std::vector<RejectedLine> rejected;
  std::size_t duplicates = 0;
  std::string fingerprint;  // hash of the raw input lines

  // Total records seen, valid or not (duplicates excluded).
  std::size_t record_count() const { return samples.size() + rejected.size(); }

  const Sample* find(std::string_view id) const;
  void reindex();

 private:
  std::map<std::string, std::size_t, std::less<>> index_;
};

// Throws IoError when unreadable and EmptyCorpusError when no line parses.
Corpus ingest(const std::string& path);
Corpus parse_corpus(std::istream& in);

std::string content_id(std::string_view problem, std::string_view solution);
std::size_t count_words(std::string_view text);

// Writes samples back as JSONL with explicit ids.
void write_corpus(std::ostream& out, std::span<const Sample> samples);

}  // namespace headscope
