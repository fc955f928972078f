#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "headscope/corpus.h"

namespace headscope {

struct NamedSubset {
  std::string name;
  std::vector<std::string> ids;
};

struct LengthSummary {
  double mean = 0.0;
  double median = 0.0;
  std::vector<std::size_t> word_counts;  // in subset order
};

// Throws InvalidArgument for an empty subset and ConsistencyError for an id
// missing from the corpus.
LengthSummary summarize_lengths(const Corpus& corpus, const NamedSubset& subset);

// Long-format CSV: subset,statistic,bin_start,bin_end,value. Every subset
// gets the same fixed-width word-count bins (statistic "count") followed by
// "mean" and "median" rows.
std::string report_lengths(const Corpus& corpus, std::span<const NamedSubset> subsets,
                           std::size_t bin_width = 50);

// CSV: subset,category,count,share. Categories whose share is below
// `threshold` are folded into "other", which is listed last.
std::string report_categories(const Corpus& corpus, std::span<const NamedSubset> subsets,
                              double threshold = 0.0);

}  // namespace headscope
