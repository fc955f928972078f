#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "headscope/corpus.h"
#include "headscope/model.h"
#include "headscope/scorer.h"
#include "headscope/tokenizer.h"

namespace headscope {

enum class Strategy { soft, top_k, low_score, random, max_loss, ifd, diversity };

std::string to_string(Strategy s);
Strategy parse_strategy(const std::string& text);

// Subset size as a ratio of the eligible pool (m = floor(ratio * N)) or an
// absolute count.
struct Budget {
  std::optional<double> ratio;
  std::optional<std::size_t> count;

  static Budget of_ratio(double r) { return {r, std::nullopt}; }
  static Budget of_count(std::size_t m) { return {std::nullopt, m}; }

  // Throws InvalidArgument unless 1 <= m <= pool.
  std::size_t resolve(std::size_t pool) const;
};

struct SelectionPlan {
  Strategy strategy = Strategy::soft;
  Budget budget = Budget::of_ratio(0.1);
  std::uint64_t seed = 0;
  bool include_degenerate = false;

  std::string fingerprint() const;
};

struct Selection {
  std::string sample_id;
  std::size_t rank = 0;
  double weight = 0.0;  // selection weight at draw time
};

struct SubsetManifest {
  SelectionPlan plan;
  std::size_t pool_size = 0;
  std::string plan_fingerprint;
  std::string source_fingerprint;
  // Fingerprints of upstream artifacts (corpus, model, scores...).
  std::vector<std::pair<std::string, std::string>> upstream;
  std::vector<Selection> items;

  std::vector<std::string> ids() const;
};

// Records eligible for score-based strategies: not skipped and, unless
// include_degenerate, not degenerate.
std::vector<ScoreRecord> eligible_records(std::span<const ScoreRecord> records,
                                          bool include_degenerate);

// p_i = score_i / sum(scores) over the given records. Throws
// InvalidDistributionError when every score is zero.
std::vector<double> normalize_scores(std::span<const ScoreRecord> records);

// Weighted sampling without replacement by exponential keys: record i gets
// key u_i^(1/w_i), u_i uniform from the seeded generator, and the m largest
// keys win in key order. Matches drawing one index at a time proportionally
// to the remaining weights. Zero-weight records are never drawn. Throws
// InvalidArgument when m exceeds the positive-weight count.
std::vector<Selection> soft_sample(std::span<const std::string> ids,
                                   std::span<const double> weights, std::size_t m,
                                   std::uint64_t seed);

// m largest scores, ties by ascending id.
std::vector<Selection> top_k_select(std::span<const ScoreRecord> records, std::size_t m);
// m smallest scores, ties by ascending id.
std::vector<Selection> low_score_select(std::span<const ScoreRecord> records,
                                        std::size_t m);
// Uniform without replacement.
std::vector<Selection> random_select(std::span<const std::string> ids, std::size_t m,
                                     std::uint64_t seed);

struct BaselineOptions {
  int workers = 1;
};

// m samples with the largest unablated solution-region loss; same ranking
// as build_probe.
std::vector<Selection> max_loss_select(const ReferenceModel& model, const Tokenizer& tok,
                                       std::span<const Sample> samples, std::size_t m,
                                       const BaselineOptions& opts = {});

// loss(solution | problem) / loss(solution alone) per sample; std::nullopt
// for empty solutions, truncated-away solutions and non-finite ratios.
std::vector<std::optional<double>> ifd_scores(const ReferenceModel& model,
                                              const Tokenizer& tok,
                                              std::span<const Sample> samples,
                                              const BaselineOptions& opts = {});

// m largest IFD ratios, ties by ascending id.
std::vector<Selection> ifd_select(const ReferenceModel& model, const Tokenizer& tok,
                                  std::span<const Sample> samples, std::size_t m,
                                  const BaselineOptions& opts = {});

// Even split across categories (name order breaks remainder ties), capped
// at category size with the shortfall handed out round-robin in name
// order; uniform without replacement inside each category. Unlabeled
// samples share an "uncategorized" bucket.
std::vector<Selection> diversity_select(std::span<const Sample> samples, std::size_t m,
                                        std::uint64_t seed);

// Header line with the plan, then one {sample_id, rank, weight} per line.
std::string manifest_jsonl(const SubsetManifest& manifest);
void write_manifest(const std::string& path, const SubsetManifest& manifest);
SubsetManifest read_manifest(const std::string& path);

// Writes the selected samples as a JSONL corpus, in selection order.
// Throws ConsistencyError when an id is not in the corpus.
void materialize(const Corpus& corpus, const SubsetManifest& manifest,
                 const std::string& path);

}  // namespace headscope
