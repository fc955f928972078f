#include "headscope/reports.h"

#include <algorithm>
#include <map>
#include <sstream>

#include "headscope/errors.h"
#include "headscope/format.h"

namespace headscope {

namespace {

std::vector<const Sample*> resolve(const Corpus& corpus, const NamedSubset& subset) {
  if (subset.ids.empty()) throw InvalidArgument("subset " + subset.name + " is empty");
  std::vector<const Sample*> out;
  for (const auto& id : subset.ids) {
    const Sample* s = corpus.find(id);
    if (!s) {
      throw ConsistencyError("subset " + subset.name + " references unknown id " + id);
    }
    out.push_back(s);
  }
  return out;
}

}  // namespace

LengthSummary summarize_lengths(const Corpus& corpus, const NamedSubset& subset) {
  LengthSummary out;
  for (const Sample* s : resolve(corpus, subset)) out.word_counts.push_back(s->length_words);
  double sum = 0.0;
  for (std::size_t w : out.word_counts) sum += static_cast<double>(w);
  out.mean = sum / static_cast<double>(out.word_counts.size());
  std::vector<std::size_t> sorted = out.word_counts;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  out.median = n % 2 == 1 ? static_cast<double>(sorted[n / 2])
                          : (static_cast<double>(sorted[n / 2 - 1]) +
                             static_cast<double>(sorted[n / 2])) / 2.0;
  return out;
}

std::string report_lengths(const Corpus& corpus, std::span<const NamedSubset> subsets,
                           std::size_t bin_width) {
  if (bin_width == 0) throw InvalidArgument("bin width must be positive");
  if (subsets.empty()) throw InvalidArgument("no subsets to report");
  std::vector<LengthSummary> summaries;
  std::size_t longest = 0;
  for (const auto& s : subsets) {
    summaries.push_back(summarize_lengths(corpus, s));
    for (std::size_t w : summaries.back().word_counts) longest = std::max(longest, w);
  }
  const std::size_t bins = longest / bin_width + 1;

  std::ostringstream out;
  out << "subset,statistic,bin_start,bin_end,value\n";
  for (std::size_t i = 0; i < subsets.size(); ++i) {
    std::vector<std::size_t> hist(bins, 0);
    for (std::size_t w : summaries[i].word_counts) ++hist[w / bin_width];
    for (std::size_t b = 0; b < bins; ++b) {
      out << subsets[i].name << ",count," << b * bin_width << ',' << (b + 1) * bin_width
          << ',' << hist[b] << '\n';
    }
    out << subsets[i].name << ",mean,,," << format_double(summaries[i].mean) << '\n';
    out << subsets[i].name << ",median,,," << format_double(summaries[i].median) << '\n';
  }
  return out.str();
}

std::string report_categories(const Corpus& corpus, std::span<const NamedSubset> subsets,
                              double threshold) {
  if (subsets.empty()) throw InvalidArgument("no subsets to report");
  if (threshold < 0.0 || threshold > 1.0) throw InvalidArgument("threshold must be in [0, 1]");
  std::ostringstream out;
  out << "subset,category,count,share\n";
  for (const auto& subset : subsets) {
    const auto members = resolve(corpus, subset);
    std::map<std::string, std::size_t> counts;
    for (const Sample* s : members) ++counts[s->category.value_or("uncategorized")];
    const double total = static_cast<double>(members.size());
    std::size_t other = 0;
    for (const auto& [name, count] : counts) {
      if (static_cast<double>(count) / total < threshold || name == "other") {
        other += count;
        continue;
      }
      out << subset.name << ',' << name << ',' << count << ','
          << format_double(static_cast<double>(count) / total) << '\n';
    }
    if (other > 0) {
      out << subset.name << ",other," << other << ','
          << format_double(static_cast<double>(other) / total) << '\n';
    }
  }
  return out.str();
}

}  // namespace headscope
