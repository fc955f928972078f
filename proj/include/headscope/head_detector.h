#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "headscope/corpus.h"
#include "headscope/model.h"
#include "headscope/tokenizer.h"

namespace headscope {

struct ProbeEntry {
  std::string sample_id;
  TokenSequence sequence;
  double loss = 0.0;  // unablated solution-region loss (top-loss probes only)
};

struct ProbeSet {
  std::vector<ProbeEntry> entries;
  std::string construction;  // "top-loss" or "explicit list"

  std::size_t size() const { return entries.size(); }
  // Hash of the ordered member ids.
  std::string fingerprint() const;

  static ProbeSet explicit_list(std::vector<ProbeEntry> entries);
};

struct LossOptions {
  int workers = 1;
};

// Unablated solution-region loss for every sample, in corpus order. Samples
// whose solution region is empty after truncation get std::nullopt and a
// warning; truncations are logged.
std::vector<std::optional<double>> solution_losses(
    const ReferenceModel& model, const Tokenizer& tok,
    std::span<const Sample> samples, const LossOptions& opts = {});

// The `size` samples with the largest solution-region loss, ties broken by
// ascending id. A corpus smaller than `size` is returned whole with a
// warning.
ProbeSet build_probe(const ReferenceModel& model, const Tokenizer& tok,
                     std::span<const Sample> samples, std::size_t size,
                     const LossOptions& opts = {});

struct HeadImportance {
  HeadId head;
  double delta_loss = 0.0;
  double baseline_loss = 0.0;
  double ablated_loss = 0.0;
};

struct HeadImportanceReport {
  int num_layers = 0;
  int heads_per_layer = 0;
  std::vector<HeadImportance> records;  // (layer, head) order when complete
  std::string probe_fingerprint;
  std::string model_fingerprint;

  // Throws CompletenessError unless there is exactly one record per head.
  void check_complete() const;
};

// Mean solution-region loss over the probe with each head ablated in turn,
// minus the unablated mean. Costs exactly (heads + 1) * probe.size()
// forward passes. Per-head sweeps run on `workers` threads; every mean is
// reduced in probe order.
HeadImportanceReport head_importance(const ReferenceModel& model,
                                     const ProbeSet& probe,
                                     const LossOptions& opts = {});

struct HeadCount {
  std::optional<int> k;
  std::optional<double> fraction;

  static HeadCount top(int k) { return {k, std::nullopt}; }
  static HeadCount share(double f) { return {std::nullopt, f}; }

  // fraction form: max(1, floor(fraction * total)).
  int resolve(int total_heads) const;
};

struct ReasoningHeadSet {
  std::vector<HeadImportance> heads;  // descending delta_loss
  int k = 0;
  double fraction = 0.0;  // k / total heads

  std::vector<HeadId> ids() const;
};

// Top-k by delta_loss; ties go to the smaller (layer, head).
ReasoningHeadSet select_heads(const HeadImportanceReport& report,
                              const HeadCount& count);

// layer x head CSV of delta_loss with a header row of head indices.
std::string heatmap_csv(const HeadImportanceReport& report);

// JSON sidecar: fingerprints, k and the selected heads (when given).
std::string heatmap_sidecar(const HeadImportanceReport& report,
                            const ReasoningHeadSet* selected,
                            const std::vector<std::pair<std::string, std::string>>&
                                extra_fields = {});

// Writes both files. Throws CompletenessError for an incomplete report and
// IoError when a file cannot be written.
void export_heatmap(const HeadImportanceReport& report,
                    const ReasoningHeadSet* selected,
                    const std::string& csv_path,
                    const std::string& json_path);

// Reads the head list back from a sidecar written by export_heatmap.
std::vector<HeadId> read_sidecar_heads(const std::string& json_path);

}  // namespace headscope
