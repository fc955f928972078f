#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "headscope/corpus.h"
#include "headscope/head_detector.h"
#include "headscope/model.h"
#include "headscope/reports.h"
#include "headscope/scorer.h"
#include "headscope/selector.h"
#include "headscope/tokenizer.h"

namespace headscope {

enum class ModelSource { random, planted, external };

std::string to_string(ModelSource s);
ModelSource parse_model_source(const std::string& text);

struct PipelineConfig {
  std::string corpus_path;

  ModelSource model_source = ModelSource::random;
  ModelConfig model;  // vocab_size is forced to the tokenizer's requirement
  std::string activations_manifest;  // external source only
  std::string activations_data;

  // Explicit reasoning heads; detection is skipped when either is set.
  std::vector<HeadId> heads;
  std::string heads_file;  // sidecar JSON written by detect-heads

  std::size_t probe_size = 300;
  HeadCount head_count = HeadCount::share(0.05);

  ScoringMode mode = ScoringMode::input_only;
  std::size_t max_tokens = 256;

  SelectionPlan plan;
  bool materialize = false;

  double category_threshold = 0.05;
  std::size_t length_bin_width = 50;

  std::string out_dir = "headscope-out";
  int workers = 1;
  bool force = false;  // recompute stages even when artifacts are stale

  // Throws InvalidArgument or IoError for missing paths and bad values.
  void validate() const;
};

// Artifact locations inside an output directory.
struct ArtifactPaths {
  std::string heatmap_csv;
  std::string heatmap_json;
  std::string scores;
  std::string scores_manifest;
  std::string subset;
  std::string subset_corpus;
  std::string lengths_csv;
  std::string categories_csv;
  std::string reports_json;

  static ArtifactPaths in(const std::string& dir);
};

// Builds the local reference model named by the config. Returns nullptr for
// the external source.
std::unique_ptr<ReferenceModel> build_model(const PipelineConfig& config);

// Model fingerprint: the weights hash for local models, the hash of the
// activation files for the external source.
std::string model_fingerprint(const PipelineConfig& config, const ReferenceModel* model);

// Heads given on the command line or in a sidecar file, checked against the
// model when one is loaded. Empty when neither is configured.
std::vector<HeadId> configured_heads(const PipelineConfig& config,
                                     const ReferenceModel* model);

// scores.jsonl -> scores.manifest.json
std::string score_manifest_path(const std::string& scores_path);

struct DetectOutcome {
  std::vector<HeadId> heads;
  std::optional<HeadImportanceReport> report;  // absent when reused or explicit
  bool reused = false;
};

struct ScoreOutcome {
  std::vector<ScoreRecord> records;
  ScoreManifest manifest;
  bool reused = false;
};

// Stage entry points. With `resume`, an existing artifact whose recorded
// inputs match is reused and one whose inputs differ raises
// StaleArtifactError (unless config.force). Without `resume` the stage
// always recomputes and overwrites.
DetectOutcome detect_stage(const PipelineConfig& config, const Corpus& corpus,
                           const ReferenceModel* model, bool resume);
ScoreOutcome score_stage(const PipelineConfig& config, const Corpus& corpus,
                         const ReferenceModel* model, const std::vector<HeadId>& heads,
                         bool resume);
// Reads the score file at `scores_path`, checks it against its manifest and
// writes the subset manifest to `subset_path`.
SubsetManifest select_stage(const PipelineConfig& config, const Corpus& corpus,
                            const ReferenceModel* model, const std::string& scores_path,
                            const std::string& subset_path);
// Length and category reports comparing the full corpus with each subset.
void report_stage(const PipelineConfig& config, const Corpus& corpus,
                  const std::vector<NamedSubset>& subsets,
                  const std::vector<std::string>& subset_fingerprints);

struct PipelineResult {
  DetectOutcome detect;
  ScoreOutcome scores;
  SubsetManifest manifest;
  ArtifactPaths paths;
};

// detect -> score -> select -> report, persisting each stage under out_dir.
PipelineResult run_pipeline(const PipelineConfig& config);

}  // namespace headscope
