#include "headscope/pipeline.h"

#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>

#include "headscope/errors.h"
#include "headscope/format.h"
#include "headscope/hash.h"
#include "headscope/planted.h"
#include "headscope/reports.h"

namespace headscope {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << text;
  if (!out) throw IoError("write failed for " + path);
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir + ": " + ec.message());
}

void require_file(const std::string& path, const std::string& what) {
  std::error_code ec;
  if (!fs::is_regular_file(path, ec)) throw IoError(what + " not found: " + path);
}

std::string stale_message(const std::string& artifact, const std::string& stage) {
  return artifact + " was produced from different inputs; re-run `headscope " + stage +
         "` or pass --force";
}

std::string detect_inputs_fingerprint(const PipelineConfig& config,
                                      const std::string& model_fp,
                                      const std::string& corpus_fp) {
  Fingerprint fp;
  fp.str("detect/v1").str(model_fp).str(corpus_fp);
  fp.value<std::uint64_t>(config.probe_size);
  if (config.head_count.k) {
    fp.str("k").value<std::int64_t>(*config.head_count.k);
  } else {
    fp.str("fraction").value<double>(config.head_count.fraction.value_or(0.0));
  }
  return fp.hex();
}

std::string read_inputs_fingerprint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  json doc = json::parse(in, nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) throw FormatError(path + ": not a JSON object");
  auto it = doc.find("inputs_fingerprint");
  if (it == doc.end() || !it->is_string()) return {};
  return it->get<std::string>();
}

bool exists(const std::string& path) {
  std::error_code ec;
  return fs::is_regular_file(path, ec);
}

}  // namespace

std::string to_string(ModelSource s) {
  switch (s) {
    case ModelSource::random: return "random";
    case ModelSource::planted: return "planted";
    case ModelSource::external: return "external";
  }
  return "unknown";
}

ModelSource parse_model_source(const std::string& text) {
  if (text == "random" || text == "toy") return ModelSource::random;
  if (text == "planted") return ModelSource::planted;
  if (text == "external") return ModelSource::external;
  throw InvalidArgument("unknown model source '" + text +
                        "' (expected random, planted or external)");
}

void PipelineConfig::validate() const {
  if (corpus_path.empty()) throw InvalidArgument("no corpus given");
  require_file(corpus_path, "corpus");
  if (model_source == ModelSource::external) {
    if (activations_manifest.empty() || activations_data.empty()) {
      throw InvalidArgument("the external model source needs an activation manifest and data file");
    }
    require_file(activations_manifest, "activation manifest");
    require_file(activations_data, "activation data");
  } else {
    ModelConfig m = model;
    m.vocab_size = ByteTokenizer().required_vocab();
    m.validate();
  }
  if (!heads_file.empty()) require_file(heads_file, "heads file");
  if (probe_size == 0) throw InvalidArgument("probe size must be at least 1");
  if (max_tokens < 2) throw InvalidArgument("max_tokens must be at least 2");
  if (workers < 1) throw InvalidArgument("workers must be at least 1");
  if (!(category_threshold >= 0.0 && category_threshold <= 1.0)) {
    throw InvalidArgument("category threshold must be in [0, 1]");
  }
  if (length_bin_width == 0) throw InvalidArgument("length bin width must be at least 1");
  if (plan.budget.ratio.has_value() == plan.budget.count.has_value()) {
    throw InvalidArgument("give exactly one of a selection ratio or count");
  }
  if (plan.budget.ratio && !(*plan.budget.ratio > 0.0 && *plan.budget.ratio <= 1.0)) {
    throw InvalidArgument("selection ratio must be in (0, 1]");
  }
  if (out_dir.empty()) throw InvalidArgument("output directory is empty");
}

ArtifactPaths ArtifactPaths::in(const std::string& dir) {
  const fs::path d(dir);
  return {(d / "heads.csv").string(),       (d / "heads.json").string(),
          (d / "scores.jsonl").string(),    (d / "scores.manifest.json").string(),
          (d / "subset.jsonl").string(),    (d / "subset_corpus.jsonl").string(),
          (d / "lengths.csv").string(),     (d / "categories.csv").string(),
          (d / "reports.json").string()};
}

std::string score_manifest_path(const std::string& scores_path) {
  fs::path p(scores_path);
  return p.replace_extension(".manifest.json").string();
}

std::unique_ptr<ReferenceModel> build_model(const PipelineConfig& config) {
  ModelConfig m = config.model;
  m.vocab_size = ByteTokenizer().required_vocab();
  switch (config.model_source) {
    case ModelSource::random:
      return std::make_unique<Transformer>(Transformer::random(m));
    case ModelSource::planted: {
      PlantedSpec spec;
      spec.config = m;
      spec.head = planted_head_for_seed(m);
      spec.markers = default_byte_markers();
      return std::make_unique<Transformer>(make_planted_model(spec));
    }
    case ModelSource::external:
      return nullptr;
  }
  return nullptr;
}

std::string model_fingerprint(const PipelineConfig& config, const ReferenceModel* model) {
  if (model) return model->fingerprint();
  Fingerprint fp;
  fp.str("external/v1")
      .str(file_fingerprint(config.activations_manifest))
      .str(file_fingerprint(config.activations_data));
  return fp.hex();
}

std::vector<HeadId> configured_heads(const PipelineConfig& config,
                                     const ReferenceModel* model) {
  std::vector<HeadId> heads = config.heads;
  if (heads.empty() && !config.heads_file.empty()) {
    heads = read_sidecar_heads(config.heads_file);
  }
  if (!heads.empty() && model) validate_heads(model->config(), heads);
  return heads;
}

DetectOutcome detect_stage(const PipelineConfig& config, const Corpus& corpus,
                           const ReferenceModel* model, bool resume) {
  DetectOutcome outcome;
  outcome.heads = configured_heads(config, model);
  if (!outcome.heads.empty()) return outcome;
  if (!model) {
    throw InvalidArgument(
        "head detection needs a local model; give --heads or --heads-file with external activations");
  }

  const ArtifactPaths paths = ArtifactPaths::in(config.out_dir);
  const std::string inputs_fp =
      detect_inputs_fingerprint(config, model->fingerprint(), corpus.fingerprint);

  if (resume && exists(paths.heatmap_json) && exists(paths.heatmap_csv)) {
    if (read_inputs_fingerprint(paths.heatmap_json) == inputs_fp) {
      outcome.heads = read_sidecar_heads(paths.heatmap_json);
      validate_heads(model->config(), outcome.heads);
      outcome.reused = true;
      return outcome;
    }
    if (!config.force) throw StaleArtifactError(stale_message(paths.heatmap_json, "detect-heads"));
  }

  const LossOptions opts{config.workers};
  ByteTokenizer tok;
  const ProbeSet probe = build_probe(*model, tok, corpus.samples, config.probe_size, opts);
  HeadImportanceReport report = head_importance(*model, probe, opts);
  const ReasoningHeadSet selected = select_heads(report, config.head_count);

  ensure_dir(config.out_dir);
  write_text(paths.heatmap_csv, heatmap_csv(report));
  write_text(paths.heatmap_json,
             heatmap_sidecar(report, &selected,
                             {{"inputs_fingerprint", inputs_fp},
                              {"corpus_fingerprint", corpus.fingerprint},
                              {"probe_construction", probe.construction},
                              {"probe_size", std::to_string(probe.entries.size())}}));
  outcome.heads = selected.ids();
  outcome.report = std::move(report);
  return outcome;
}

ScoreOutcome score_stage(const PipelineConfig& config, const Corpus& corpus,
                         const ReferenceModel* model, const std::vector<HeadId>& heads,
                         bool resume) {
  ScoringConfig scoring;
  scoring.heads = heads;
  scoring.mode = config.mode;
  scoring.max_tokens = config.max_tokens;
  scoring.model_fingerprint = model_fingerprint(config, model);
  scoring.validate();
  const std::string config_fp = scoring.fingerprint();

  const ArtifactPaths paths = ArtifactPaths::in(config.out_dir);
  ScoreOutcome outcome;

  if (resume && exists(paths.scores_manifest) && exists(paths.scores)) {
    ScoreManifest prior = read_score_manifest(paths.scores_manifest);
    const bool inputs_match = prior.config_fingerprint == config_fp &&
                              prior.model_fingerprint == scoring.model_fingerprint &&
                              prior.corpus_fingerprint == corpus.fingerprint;
    if (inputs_match && file_fingerprint(paths.scores) == prior.score_file_fingerprint) {
      outcome.records = read_scores(paths.scores);
      outcome.manifest = std::move(prior);
      outcome.reused = true;
      return outcome;
    }
    if (!config.force) throw StaleArtifactError(stale_message(paths.scores, "score"));
  }

  const ScoreOptions opts{config.workers};
  if (model) {
    ByteTokenizer tok;
    outcome.records = score_corpus(*model, tok, corpus, scoring, opts);
  } else {
    const auto imported = import_external(config.activations_manifest, config.activations_data);
    outcome.records = score_external(imported, scoring, opts);
  }

  ensure_dir(config.out_dir);
  write_scores(paths.scores, outcome.records);

  ScoreManifest& manifest = outcome.manifest;
  manifest.config_fingerprint = config_fp;
  manifest.model_fingerprint = scoring.model_fingerprint;
  manifest.corpus_fingerprint = corpus.fingerprint;
  manifest.score_file_fingerprint = file_fingerprint(paths.scores);
  manifest.heads = heads;
  manifest.mode = config.mode;
  manifest.max_tokens = config.max_tokens;
  manifest.records = outcome.records.size();
  for (const auto& r : outcome.records) manifest.skipped += r.skipped() ? 1 : 0;
  write_score_manifest(paths.scores_manifest, manifest);
  return outcome;
}

SubsetManifest select_stage(const PipelineConfig& config, const Corpus& corpus,
                            const ReferenceModel* model, const std::string& scores_path,
                            const std::string& subset_path) {
  const SelectionPlan& plan = config.plan;
  SubsetManifest out;
  out.plan = plan;
  out.plan_fingerprint = plan.fingerprint();
  out.upstream.emplace_back("corpus", corpus.fingerprint);

  const bool score_based = plan.strategy == Strategy::soft ||
                           plan.strategy == Strategy::top_k ||
                           plan.strategy == Strategy::low_score ||
                           plan.strategy == Strategy::random;
  if (score_based) {
    const std::string manifest_path = score_manifest_path(scores_path);
    require_file(scores_path, "score file");
    require_file(manifest_path, "score manifest");
    const ScoreManifest sm = read_score_manifest(manifest_path);
    const std::string scores_fp = file_fingerprint(scores_path);
    if (scores_fp != sm.score_file_fingerprint) {
      throw StaleArtifactError(scores_path + " does not match " + manifest_path +
                               "; re-run `headscope score`");
    }
    if (sm.corpus_fingerprint != corpus.fingerprint) {
      throw StaleArtifactError(stale_message(scores_path, "score"));
    }
    out.source_fingerprint = scores_fp;
    out.upstream.emplace_back("model", sm.model_fingerprint);
    out.upstream.emplace_back("score_config", sm.config_fingerprint);
    out.upstream.emplace_back("scores", scores_fp);

    const std::vector<ScoreRecord> records = read_scores(scores_path);
    std::vector<ScoreRecord> pool = eligible_records(records, plan.include_degenerate);
    switch (plan.strategy) {
      case Strategy::soft: {
        // Zero-score records can never be drawn, so they do not count
        // toward the budget's pool.
        std::erase_if(pool, [](const ScoreRecord& r) { return !(r.score > 0.0); });
        if (pool.empty()) throw InvalidDistributionError("no record has a positive score");
        const std::size_t m = plan.budget.resolve(pool.size());
        const std::vector<double> weights = normalize_scores(pool);
        std::vector<std::string> ids;
        for (const auto& r : pool) ids.push_back(r.sample_id);
        out.items = soft_sample(ids, weights, m, plan.seed);
        break;
      }
      case Strategy::top_k:
        out.items = top_k_select(pool, plan.budget.resolve(pool.size()));
        break;
      case Strategy::low_score:
        out.items = low_score_select(pool, plan.budget.resolve(pool.size()));
        break;
      default: {
        std::vector<std::string> ids;
        for (const auto& r : pool) ids.push_back(r.sample_id);
        out.items = random_select(ids, plan.budget.resolve(ids.size()), plan.seed);
        break;
      }
    }
    out.pool_size = pool.size();
  } else {
    out.source_fingerprint = corpus.fingerprint;
    const std::size_t pool = corpus.samples.size();
    out.pool_size = pool;
    if (plan.strategy == Strategy::diversity) {
      out.items = diversity_select(corpus.samples, plan.budget.resolve(pool), plan.seed);
    } else {
      if (!model) {
        throw InvalidArgument(to_string(plan.strategy) + " selection needs a local model");
      }
      out.upstream.emplace_back("model", model->fingerprint());
      ByteTokenizer tok;
      const BaselineOptions opts{config.workers};
      const std::size_t m = plan.budget.resolve(pool);
      out.items = plan.strategy == Strategy::max_loss
                      ? max_loss_select(*model, tok, corpus.samples, m, opts)
                      : ifd_select(*model, tok, corpus.samples, m, opts);
    }
  }

  const fs::path parent = fs::path(subset_path).parent_path();
  if (!parent.empty()) ensure_dir(parent.string());
  write_manifest(subset_path, out);
  if (config.materialize) {
    fs::path corpus_out(subset_path);
    corpus_out.replace_filename(corpus_out.stem().string() + "_corpus.jsonl");
    materialize(corpus, out, corpus_out.string());
  }
  return out;
}

void report_stage(const PipelineConfig& config, const Corpus& corpus,
                  const std::vector<NamedSubset>& subsets,
                  const std::vector<std::string>& subset_fingerprints) {
  if (subsets.size() != subset_fingerprints.size()) {
    throw InvalidArgument("one fingerprint per subset is required");
  }
  const std::string lengths = report_lengths(corpus, subsets, config.length_bin_width);
  const std::string categories =
      report_categories(corpus, subsets, config.category_threshold);

  const ArtifactPaths paths = ArtifactPaths::in(config.out_dir);
  ensure_dir(config.out_dir);
  write_text(paths.lengths_csv, lengths);
  write_text(paths.categories_csv, categories);

  json doc;
  doc["corpus_fingerprint"] = corpus.fingerprint;
  doc["length_bin_width"] = config.length_bin_width;
  doc["category_threshold"] = config.category_threshold;
  json list = json::array();
  for (std::size_t i = 0; i < subsets.size(); ++i) {
    list.push_back({{"name", subsets[i].name},
                    {"fingerprint", subset_fingerprints[i]},
                    {"count", subsets[i].ids.size()}});
  }
  doc["subsets"] = std::move(list);
  doc["lengths_csv_fingerprint"] = file_fingerprint(paths.lengths_csv);
  doc["categories_csv_fingerprint"] = file_fingerprint(paths.categories_csv);
  write_text(paths.reports_json, doc.dump(2) + "\n");
}

PipelineResult run_pipeline(const PipelineConfig& config) {
  config.validate();
  const Corpus corpus = ingest(config.corpus_path);
  const std::unique_ptr<ReferenceModel> model = build_model(config);

  PipelineResult result;
  result.paths = ArtifactPaths::in(config.out_dir);
  result.detect = detect_stage(config, corpus, model.get(), /*resume=*/true);
  result.scores = score_stage(config, corpus, model.get(), result.detect.heads,
                              /*resume=*/true);
  result.manifest =
      select_stage(config, corpus, model.get(), result.paths.scores, result.paths.subset);

  NamedSubset full{"full", {}};
  for (const auto& s : corpus.samples) full.ids.push_back(s.id);
  NamedSubset selected{to_string(config.plan.strategy), result.manifest.ids()};
  report_stage(config, corpus, {full, selected},
               {corpus.fingerprint, file_fingerprint(result.paths.subset)});
  return result;
}

}  // namespace headscope
