#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "headscope/corpus.h"
#include "headscope/external.h"
#include "headscope/model.h"
#include "headscope/tokenizer.h"

namespace headscope {

enum class ScoringMode { input_only, output_included };

std::string to_string(ScoringMode mode);
ScoringMode parse_scoring_mode(const std::string& text);

struct ScoringConfig {
  std::vector<HeadId> heads;
  ScoringMode mode = ScoringMode::input_only;
  std::size_t max_tokens = 256;
  std::string model_fingerprint;

  // Throws InvalidArgument for an empty head list or max_tokens < 2.
  void validate() const;
  // Independent of head order.
  std::string fingerprint() const;
};

struct AlphaStats {
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
};

struct ScoreRecord {
  std::string sample_id;
  double score = 0.0;
  std::size_t token_count = 0;
  bool degenerate = false;  // single-token input, score forced to 0
  std::optional<std::string> skip_reason;
  AlphaStats alpha;
  std::string config_fingerprint;

  bool skipped() const { return skip_reason.has_value(); }
};

// alpha[k] = mean over heads of the total attention token k receives from
// all query positions (column sums). With row-stochastic inputs the entries
// sum to n. Throws InvalidArgument for an empty list or mismatched sizes.
std::vector<double> incoming_attention(std::span<const AttentionTensor> attentions);

// Population variance of alpha. Vectors whose entries all lie within 1e-12
// of each other score exactly 0. Throws InvalidArgument when empty.
double variance_score(std::span<const double> alpha);

// Scores an already computed forward pass (local or imported). Throws
// FormatError when a configured head was not captured.
ScoreRecord score_forward(const std::string& sample_id, const ForwardResult& forward,
                          const ScoringConfig& config);

ScoreRecord score_sample(const ReferenceModel& model, const Tokenizer& tok,
                         const Sample& sample, const ScoringConfig& config);

struct ScoreOptions {
  int workers = 1;
  double max_skip_ratio = 0.5;
};

// One record per corpus line, valid or rejected, in input order. Throws
// FormatError when more than max_skip_ratio of the records are skipped.
std::vector<ScoreRecord> score_corpus(const ReferenceModel& model,
                                      const Tokenizer& tok, const Corpus& corpus,
                                      const ScoringConfig& config,
                                      const ScoreOptions& opts = {});

std::vector<ScoreRecord> score_external(std::span<const ExternalRecord> records,
                                        const ScoringConfig& config,
                                        const ScoreOptions& opts = {});

// Score file: one JSON object per line with sample_id, score, token_count,
// degenerate and config_fingerprint, followed by the alpha summary and, for
// skipped samples, skip_reason.
std::string scores_jsonl(std::span<const ScoreRecord> records);
void write_scores(const std::string& path, std::span<const ScoreRecord> records);
std::vector<ScoreRecord> read_scores(const std::string& path);

// Companion manifest written next to a score file.
struct ScoreManifest {
  std::string config_fingerprint;
  std::string model_fingerprint;
  std::string corpus_fingerprint;
  std::string score_file_fingerprint;
  std::vector<HeadId> heads;
  ScoringMode mode = ScoringMode::input_only;
  std::size_t max_tokens = 0;
  std::size_t records = 0;
  std::size_t skipped = 0;
};

void write_score_manifest(const std::string& path, const ScoreManifest& manifest);
ScoreManifest read_score_manifest(const std::string& path);

}  // namespace headscope
