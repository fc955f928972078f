#include "headscope/head_detector.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "headscope/errors.h"
#include "headscope/format.h"
#include "headscope/hash.h"
#include "headscope/log.h"
#include "headscope/parallel.h"

namespace headscope {

using json = nlohmann::ordered_json;

namespace {

struct EncodedLoss {
  TokenSequence sequence;
  std::optional<double> loss;
};

std::vector<EncodedLoss> encode_and_score(const ReferenceModel& model,
                                          const Tokenizer& tok,
                                          std::span<const Sample> samples,
                                          int workers) {
  const auto max_len = static_cast<std::size_t>(model.config().max_seq_len);
  std::vector<EncodedLoss> out(samples.size());
  std::vector<char> truncated(samples.size(), 0);
  parallel_for(samples.size(), workers, [&](std::size_t i) {
    Encoded e = encode_pair(tok, samples[i].problem, samples[i].solution, max_len);
    truncated[i] = e.truncated;
    out[i].sequence = std::move(e.sequence);
    try {
      out[i].loss = sequence_loss(model, out[i].sequence, LossRegion::solution);
    } catch (const EmptyRegionError&) {
      out[i].loss.reset();
    }
  });
  // Warnings are emitted after the parallel section so their order is fixed.
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (truncated[i]) {
      log::warn("sample " + samples[i].id + " truncated to " +
                std::to_string(max_len) + " tokens");
    }
    if (!out[i].loss) {
      log::warn("sample " + samples[i].id +
                " has no solution tokens within max_seq_len; skipped");
    }
  }
  return out;
}

}  // namespace

std::string ProbeSet::fingerprint() const {
  Fingerprint fp;
  fp.str("probe/v1");
  for (const auto& e : entries) fp.str(e.sample_id);
  return fp.hex();
}

ProbeSet ProbeSet::explicit_list(std::vector<ProbeEntry> entries) {
  if (entries.empty()) throw InvalidArgument("probe set is empty");
  return ProbeSet{std::move(entries), "explicit list"};
}

std::vector<std::optional<double>> solution_losses(
    const ReferenceModel& model, const Tokenizer& tok,
    std::span<const Sample> samples, const LossOptions& opts) {
  auto scored = encode_and_score(model, tok, samples, opts.workers);
  std::vector<std::optional<double>> out;
  out.reserve(scored.size());
  for (auto& s : scored) out.push_back(s.loss);
  return out;
}

ProbeSet build_probe(const ReferenceModel& model, const Tokenizer& tok,
                     std::span<const Sample> samples, std::size_t size,
                     const LossOptions& opts) {
  if (samples.empty()) throw InvalidArgument("cannot build a probe from an empty dataset");
  if (size == 0) throw InvalidArgument("probe size must be at least 1");
  if (samples.size() < size) {
    log::warn("probe size " + std::to_string(size) + " exceeds dataset size " +
              std::to_string(samples.size()) + "; using the whole dataset");
  }
  auto scored = encode_and_score(model, tok, samples, opts.workers);

  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (scored[i].loss) order.push_back(i);
  }
  if (order.empty()) throw InvalidArgument("no sample has a scorable solution");
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (*scored[a].loss != *scored[b].loss) return *scored[a].loss > *scored[b].loss;
    return samples[a].id < samples[b].id;
  });
  order.resize(std::min(order.size(), size));

  ProbeSet probe;
  probe.construction = "top-loss";
  for (std::size_t i : order) {
    probe.entries.push_back(
        {samples[i].id, std::move(scored[i].sequence), *scored[i].loss});
  }
  return probe;
}

void HeadImportanceReport::check_complete() const {
  const auto expected = static_cast<std::size_t>(num_layers * heads_per_layer);
  if (num_layers < 1 || heads_per_layer < 1) {
    throw CompletenessError("report has no head universe");
  }
  std::vector<char> seen(expected, 0);
  for (const auto& r : records) {
    const HeadId h = r.head;
    if (h.layer < 0 || h.layer >= num_layers || h.head < 0 ||
        h.head >= heads_per_layer) {
      throw CompletenessError("report lists unknown head " + to_string(h));
    }
    char& s = seen[static_cast<std::size_t>(h.layer * heads_per_layer + h.head)];
    if (s) throw CompletenessError("report lists head " + to_string(h) + " twice");
    s = 1;
  }
  for (std::size_t i = 0; i < expected; ++i) {
    if (!seen[i]) {
      const HeadId h{static_cast<int>(i) / heads_per_layer,
                     static_cast<int>(i) % heads_per_layer};
      throw CompletenessError("report is missing head " + to_string(h));
    }
  }
}

HeadImportanceReport head_importance(const ReferenceModel& model,
                                     const ProbeSet& probe,
                                     const LossOptions& opts) {
  if (probe.entries.empty()) throw InvalidArgument("probe set is empty");
  const ModelConfig& cfg = model.config();
  const std::vector<HeadId> heads = all_heads(cfg);
  const std::size_t p = probe.entries.size();

  std::vector<double> baseline_each(p);
  parallel_for(p, opts.workers, [&](std::size_t i) {
    baseline_each[i] = sequence_loss(model, probe.entries[i].sequence, LossRegion::solution);
  });
  double baseline = 0.0;
  for (double v : baseline_each) baseline += v;
  baseline /= static_cast<double>(p);

  std::vector<double> ablated(heads.size());
  parallel_for(heads.size(), opts.workers, [&](std::size_t h) {
    const std::span<const HeadId> one(&heads[h], 1);
    double sum = 0.0;
    for (const auto& e : probe.entries) {
      sum += model.forward(e.sequence, one, {}, LossRegion::solution).loss;
    }
    ablated[h] = sum / static_cast<double>(p);
  });

  HeadImportanceReport report;
  report.num_layers = cfg.num_layers;
  report.heads_per_layer = cfg.heads_per_layer;
  report.probe_fingerprint = probe.fingerprint();
  report.model_fingerprint = model.fingerprint();
  for (std::size_t h = 0; h < heads.size(); ++h) {
    report.records.push_back({heads[h], ablated[h] - baseline, baseline, ablated[h]});
  }
  return report;
}

int HeadCount::resolve(int total_heads) const {
  if (k.has_value() == fraction.has_value()) {
    throw InvalidArgument("give exactly one of k or fraction");
  }
  int resolved = 0;
  if (k) {
    resolved = *k;
  } else {
    if (!(*fraction > 0.0 && *fraction <= 1.0)) {
      throw InvalidArgument("head fraction must be in (0, 1]");
    }
    resolved = std::max(1, static_cast<int>(std::floor(*fraction * total_heads)));
  }
  if (resolved < 1 || resolved > total_heads) {
    throw InvalidArgument("k = " + std::to_string(resolved) + " outside [1, " +
                          std::to_string(total_heads) + "]");
  }
  return resolved;
}

std::vector<HeadId> ReasoningHeadSet::ids() const {
  std::vector<HeadId> out;
  out.reserve(heads.size());
  for (const auto& h : heads) out.push_back(h.head);
  return out;
}

ReasoningHeadSet select_heads(const HeadImportanceReport& report,
                              const HeadCount& count) {
  report.check_complete();
  const int total = report.num_layers * report.heads_per_layer;
  const int k = count.resolve(total);
  std::vector<HeadImportance> sorted = report.records;
  std::sort(sorted.begin(), sorted.end(),
            [](const HeadImportance& a, const HeadImportance& b) {
              if (a.delta_loss != b.delta_loss) return a.delta_loss > b.delta_loss;
              return a.head < b.head;
            });
  sorted.resize(static_cast<std::size_t>(k));
  return {std::move(sorted), k, static_cast<double>(k) / total};
}

std::string heatmap_csv(const HeadImportanceReport& report) {
  report.check_complete();
  const auto hpl = static_cast<std::size_t>(report.heads_per_layer);
  std::vector<double> grid(static_cast<std::size_t>(report.num_layers) * hpl);
  for (const auto& r : report.records) {
    grid[static_cast<std::size_t>(r.head.layer) * hpl +
         static_cast<std::size_t>(r.head.head)] = r.delta_loss;
  }
  std::ostringstream out;
  out << "layer";
  for (std::size_t h = 0; h < hpl; ++h) out << ',' << h;
  out << '\n';
  for (int l = 0; l < report.num_layers; ++l) {
    out << l;
    for (std::size_t h = 0; h < hpl; ++h) {
      out << ',' << format_double(grid[static_cast<std::size_t>(l) * hpl + h]);
    }
    out << '\n';
  }
  return out.str();
}

std::string heatmap_sidecar(
    const HeadImportanceReport& report, const ReasoningHeadSet* selected,
    const std::vector<std::pair<std::string, std::string>>& extra_fields) {
  report.check_complete();
  json doc;
  doc["model_fingerprint"] = report.model_fingerprint;
  doc["probe_fingerprint"] = report.probe_fingerprint;
  doc["num_layers"] = report.num_layers;
  doc["heads_per_layer"] = report.heads_per_layer;
  doc["baseline_loss"] = report.records.front().baseline_loss;
  if (selected) {
    doc["k"] = selected->k;
    json heads = json::array();
    for (const auto& h : selected->heads) {
      heads.push_back(json::array({h.head.layer, h.head.head, h.delta_loss}));
    }
    doc["heads"] = std::move(heads);
  } else {
    doc["k"] = nullptr;
    doc["heads"] = json::array();
  }
  for (const auto& [key, value] : extra_fields) doc[key] = value;
  return doc.dump(2) + "\n";
}

namespace {

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << text;
  if (!out) throw IoError("write failed for " + path);
}

}  // namespace

void export_heatmap(const HeadImportanceReport& report,
                    const ReasoningHeadSet* selected,
                    const std::string& csv_path,
                    const std::string& json_path) {
  const std::string csv = heatmap_csv(report);
  const std::string sidecar = heatmap_sidecar(report, selected);
  write_text(csv_path, csv);
  write_text(json_path, sidecar);
}

std::vector<HeadId> read_sidecar_heads(const std::string& json_path) {
  std::ifstream in(json_path, std::ios::binary);
  if (!in) throw IoError("cannot read " + json_path);
  json doc = json::parse(in, nullptr, false);
  if (doc.is_discarded() || !doc.is_object() || !doc.contains("heads") ||
      !doc["heads"].is_array()) {
    throw FormatError(json_path + ": expected an object with a \"heads\" array");
  }
  std::vector<HeadId> out;
  for (const auto& h : doc["heads"]) {
    if (!h.is_array() || h.size() < 2 || !h[0].is_number_integer() ||
        !h[1].is_number_integer()) {
      throw FormatError(json_path + ": malformed head entry");
    }
    out.push_back({h[0].get<int>(), h[1].get<int>()});
  }
  if (out.empty()) throw FormatError(json_path + ": head list is empty");
  return out;
}

}  // namespace headscope
