#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "headscope/corpus.h"

namespace headscope {

// Generation recipe for a synthetic corpus with two planted classes.
//
// "concentrated" problems open with a marker character and their solutions
// interleave that marker with numbers, so a marker-attending head (see
// make_planted_model) focuses on one token and also carries the solution's
// label signal. "diffuse" samples never contain a marker.
struct SyntheticSpec {
  std::size_t concentrated = 100;
  std::size_t diffuse = 100;
  std::vector<std::string> categories{"algebra", "combinatorics", "geometry",
                                      "number_theory"};
  // Problem length in words, inclusive ranges.
  std::size_t concentrated_min_words = 12;
  std::size_t concentrated_max_words = 24;
  std::size_t diffuse_min_words = 12;
  std::size_t diffuse_max_words = 24;
  std::string markers = "#@~";

  void validate() const;
};

struct SyntheticCorpus {
  std::vector<Sample> samples;
  std::vector<std::string> classes;  // "concentrated" or "diffuse", per sample
};

// Deterministic in (spec, seed). Throws InvalidArgument when both counts
// are zero or a range is inverted.
SyntheticCorpus make_synthetic_corpus(const SyntheticSpec& spec, std::uint64_t seed);

// Corpus JSONL plus a truth sidecar with one {"sample_id", "class",
// "category"} object per line.
void write_synthetic(const SyntheticCorpus& corpus, const std::string& corpus_path,
                     const std::string& truth_path);

// Reads a truth sidecar back as sample id -> class.
std::vector<std::pair<std::string, std::string>> read_truth(const std::string& path);

}  // namespace headscope
