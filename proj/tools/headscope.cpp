// headscope command-line tool: detect-heads, score, select, report, synth, run.

#include <CLI11.hpp>
#include <algorithm>
#include <fstream>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <nlohmann/json.hpp>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "headscope/errors.h"
#include "headscope/hash.h"
#include "headscope/pipeline.h"
#include "headscope/synth.h"

namespace fs = std::filesystem;
using namespace headscope;

namespace {

struct Options {
  PipelineConfig config;

  std::string model_source = "random";
  std::string heads;
  std::optional<int> k;
  double head_fraction = 0.05;
  std::string mode = "input-only";

  std::string strategy = "soft";
  double ratio = 0.1;
  std::optional<std::size_t> count;

  std::string scores_path;
  std::string subset_path;
  std::vector<std::string> manifests;

  SyntheticSpec synth;
  std::uint64_t synth_seed = 0;
  std::string synth_output;
  std::string synth_truth;
};

void add_config_file(CLI::App* cmd) {
  // Read by expand_arguments before parsing.
  static std::string unused;
  cmd->add_option("--config", unused, "flat key=value file; keys are long flag names");
}

void add_corpus(CLI::App* cmd, Options& o) {
  cmd->add_option("--corpus", o.config.corpus_path, "input JSONL corpus")->required();
}

void add_runtime(CLI::App* cmd, Options& o) {
  cmd->add_option("--out-dir", o.config.out_dir, "artifact directory (env HEADSCOPE_OUT_DIR)")
      ->capture_default_str();
  cmd->add_option("--workers", o.config.workers, "worker threads (env HEADSCOPE_WORKERS)")
      ->capture_default_str();
}

void add_model(CLI::App* cmd, Options& o) {
  ModelConfig& m = o.config.model;
  cmd->add_option("--model", o.model_source, "reference model: random, planted or external")
      ->capture_default_str();
  cmd->add_option("--layers", m.num_layers)->capture_default_str();
  cmd->add_option("--heads-per-layer", m.heads_per_layer)->capture_default_str();
  cmd->add_option("--model-dim", m.model_dim)->capture_default_str();
  cmd->add_option("--head-dim", m.head_dim)->capture_default_str();
  cmd->add_option("--max-seq-len", m.max_seq_len)->capture_default_str();
  cmd->add_option("--model-seed", m.seed, "weight initialization seed")->capture_default_str();
  cmd->add_option("--activations", o.config.activations_manifest,
                  "external activation manifest (JSONL)");
  cmd->add_option("--activations-data", o.config.activations_data,
                  "external activation data file");
}

void add_detect(CLI::App* cmd, Options& o) {
  cmd->add_option("--probe-size", o.config.probe_size, "top-loss probe samples")
      ->capture_default_str();
  auto* k = cmd->add_option("--k", o.k, "number of reasoning heads");
  cmd->add_option("--head-fraction", o.head_fraction, "share of all heads to keep")
      ->capture_default_str()
      ->excludes(k);
}

void add_heads(CLI::App* cmd, Options& o) {
  auto* list = cmd->add_option("--heads", o.heads, "explicit heads, e.g. 0:1,1:3");
  cmd->add_option("--heads-file", o.config.heads_file, "heads JSON from detect-heads")
      ->excludes(list);
}

void add_scoring(CLI::App* cmd, Options& o) {
  cmd->add_option("--mode", o.mode, "input-only or output-included")->capture_default_str();
  cmd->add_option("--max-tokens", o.config.max_tokens)->capture_default_str();
}

void add_selection(CLI::App* cmd, Options& o) {
  SelectionPlan& p = o.config.plan;
  cmd->add_option("--strategy", o.strategy,
                  "soft, top-k, low-score, random, max-loss, ifd or diversity")
      ->capture_default_str();
  auto* count = cmd->add_option("--count", o.count, "absolute subset size");
  cmd->add_option("--ratio", o.ratio, "subset size as a share of the pool")
      ->capture_default_str()
      ->excludes(count);
  cmd->add_option("--seed", p.seed, "selection seed")->capture_default_str();
  cmd->add_flag("--include-degenerate", p.include_degenerate,
                "keep single-token samples in the pool");
  cmd->add_flag("--materialize", o.config.materialize,
                "also write the selected samples as a JSONL corpus");
}

void add_reports(CLI::App* cmd, Options& o) {
  cmd->add_option("--category-threshold", o.config.category_threshold)
      ->capture_default_str();
  cmd->add_option("--bin-width", o.config.length_bin_width, "word-count histogram bin")
      ->capture_default_str();
}

std::string trim(std::string_view text) {
  const auto first = text.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = text.find_last_not_of(" \t\r");
  return std::string(text.substr(first, last - first + 1));
}

bool has_flag(const std::vector<std::string>& args, const std::string& flag) {
  for (const auto& a : args) {
    if (a == flag || a.rfind(flag + "=", 0) == 0) return true;
  }
  return false;
}

// Folds HEADSCOPE_OUT_DIR / HEADSCOPE_WORKERS and the --config file into
// the argument list. Command-line flags win over the environment, which
// wins over the file.
std::vector<std::string> expand_arguments(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  if (args.empty()) return args;
  static const std::set<std::string> with_runtime{"detect-heads", "score", "select",
                                                  "report", "run"};
  if (with_runtime.count(args.front())) {
    for (const auto& [flag, var] : {std::pair{"--out-dir", "HEADSCOPE_OUT_DIR"},
                                    std::pair{"--workers", "HEADSCOPE_WORKERS"}}) {
      const char* value = std::getenv(var);
      if (value && *value && !has_flag(args, flag)) {
        args.push_back(std::string(flag) + "=" + value);
      }
    }
  }

  std::string config_path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) config_path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) config_path = args[i].substr(9);
  }
  if (config_path.empty()) return args;

  std::ifstream in(config_path);
  if (!in) throw IoError("cannot read config file " + config_path);
  const std::vector<std::string> given = args;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string body = trim(line);
    if (body.empty() || body[0] == '#' || body[0] == ';') continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw InvalidArgument(config_path + ":" + std::to_string(line_no) +
                            ": expected key=value");
    }
    const std::string key = trim(std::string_view(body).substr(0, eq));
    std::string value = trim(std::string_view(body).substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
      value = value.substr(1, value.size() - 2);
    }
    const std::string flag = "--" + key;
    if (key == "config" || has_flag(given, flag)) continue;
    if (value == "true" || value == "false") {
      if (value == "true") args.push_back(flag);
    } else {
      args.push_back(flag + "=" + value);
    }
  }
  return args;
}

void finalize(Options& o) {
  PipelineConfig& c = o.config;
  c.model_source = parse_model_source(o.model_source);
  if (!o.heads.empty()) c.heads = parse_head_list(o.heads);
  c.head_count = o.k ? HeadCount::top(*o.k) : HeadCount::share(o.head_fraction);
  c.mode = parse_scoring_mode(o.mode);
  c.plan.strategy = parse_strategy(o.strategy);
  c.plan.budget = o.count ? Budget::of_count(*o.count) : Budget::of_ratio(o.ratio);
  const ArtifactPaths paths = ArtifactPaths::in(c.out_dir);
  if (o.scores_path.empty()) o.scores_path = paths.scores;
  if (o.subset_path.empty()) o.subset_path = paths.subset;
}

std::string join_heads(const std::vector<HeadId>& heads) {
  std::string out;
  for (const auto& h : heads) {
    if (!out.empty()) out += ',';
    out += to_string(h);
  }
  return out;
}

void cmd_detect(Options& o) {
  o.config.validate();
  const Corpus corpus = ingest(o.config.corpus_path);
  const auto model = build_model(o.config);
  const DetectOutcome d = detect_stage(o.config, corpus, model.get(), /*resume=*/false);
  const ArtifactPaths paths = ArtifactPaths::in(o.config.out_dir);
  std::cout << "reasoning heads: " << join_heads(d.heads) << "\n"
            << "heatmap: " << paths.heatmap_csv << "\n"
            << "heads: " << paths.heatmap_json << "\n";
}

void cmd_score(Options& o) {
  const ArtifactPaths paths = ArtifactPaths::in(o.config.out_dir);
  if (o.heads.empty() && o.config.heads_file.empty() && fs::exists(paths.heatmap_json)) {
    o.config.heads_file = paths.heatmap_json;
  }
  o.config.validate();
  const Corpus corpus = ingest(o.config.corpus_path);
  const auto model = build_model(o.config);
  const std::vector<HeadId> heads = configured_heads(o.config, model.get());
  if (heads.empty()) {
    throw InvalidArgument("no reasoning heads: run detect-heads first or pass --heads");
  }
  const ScoreOutcome s = score_stage(o.config, corpus, model.get(), heads, /*resume=*/false);
  std::cout << "scored " << s.manifest.records - s.manifest.skipped << " of "
            << s.manifest.records << " records with heads " << join_heads(heads) << "\n"
            << "scores: " << paths.scores << "\n";
}

void cmd_select(Options& o) {
  o.config.validate();
  const Corpus corpus = ingest(o.config.corpus_path);
  const auto model = build_model(o.config);
  const SubsetManifest m =
      select_stage(o.config, corpus, model.get(), o.scores_path, o.subset_path);
  std::cout << "selected " << m.items.size() << " of " << m.pool_size << " ("
            << to_string(m.plan.strategy) << ")\n"
            << "manifest: " << o.subset_path << "\n";
}

void cmd_report(Options& o) {
  o.config.validate();
  const Corpus corpus = ingest(o.config.corpus_path);
  std::vector<NamedSubset> subsets;
  std::vector<std::string> fingerprints;
  NamedSubset full{"full", {}};
  for (const auto& s : corpus.samples) full.ids.push_back(s.id);
  subsets.push_back(std::move(full));
  fingerprints.push_back(corpus.fingerprint);

  std::set<std::string> names{"full"};
  for (const auto& path : o.manifests) {
    const SubsetManifest m = read_manifest(path);
    for (const auto& [key, value] : m.upstream) {
      if (key == "corpus" && value != corpus.fingerprint) {
        throw StaleArtifactError(path + " was selected from a different corpus; re-run `headscope select`");
      }
    }
    std::string name = fs::path(path).stem().string();
    for (int n = 2; names.count(name); ++n) name = fs::path(path).stem().string() + "-" + std::to_string(n);
    names.insert(name);
    subsets.push_back({name, m.ids()});
    fingerprints.push_back(file_fingerprint(path));
  }
  report_stage(o.config, corpus, subsets, fingerprints);
  const ArtifactPaths paths = ArtifactPaths::in(o.config.out_dir);
  std::cout << "lengths: " << paths.lengths_csv << "\n"
            << "categories: " << paths.categories_csv << "\n";
}

void cmd_synth(Options& o) {
  if (o.synth_truth.empty()) {
    fs::path p(o.synth_output);
    o.synth_truth = p.replace_extension(".truth.jsonl").string();
  }
  const SyntheticCorpus corpus = make_synthetic_corpus(o.synth, o.synth_seed);
  const fs::path parent = fs::path(o.synth_output).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  write_synthetic(corpus, o.synth_output, o.synth_truth);
  std::cout << "wrote " << corpus.samples.size() << " samples to " << o.synth_output
            << " (truth: " << o.synth_truth << ")\n";
}

void cmd_run(Options& o) {
  const PipelineResult r = run_pipeline(o.config);
  std::cout << "reasoning heads: " << join_heads(r.detect.heads)
            << (r.detect.reused ? " (reused)" : "") << "\n"
            << "scores: " << r.paths.scores << (r.scores.reused ? " (reused)" : "") << "\n"
            << "selected " << r.manifest.items.size() << " of " << r.manifest.pool_size
            << ": " << r.paths.subset << "\n"
            << "reports: " << r.paths.lengths_csv << ", " << r.paths.categories_csv << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attention-head based data selection for reasoning corpora", "headscope"};
  app.require_subcommand(1);
  Options o;

  auto* detect = app.add_subcommand("detect-heads", "rank heads by ablation loss on a top-loss probe");
  add_config_file(detect);
  add_corpus(detect, o);
  add_model(detect, o);
  add_detect(detect, o);
  add_runtime(detect, o);

  auto* score = app.add_subcommand("score", "score every sample by reasoning-head attention variance");
  add_config_file(score);
  add_corpus(score, o);
  add_model(score, o);
  add_heads(score, o);
  add_scoring(score, o);
  add_runtime(score, o);

  auto* select = app.add_subcommand("select", "pick a subset from a score file");
  add_config_file(select);
  add_corpus(select, o);
  add_model(select, o);
  add_selection(select, o);
  select->add_option("--scores", o.scores_path, "score file (default <out-dir>/scores.jsonl)");
  select->add_option("--output", o.subset_path, "manifest path (default <out-dir>/subset.jsonl)");
  add_runtime(select, o);

  auto* report = app.add_subcommand("report", "length and category reports for subsets");
  add_config_file(report);
  add_corpus(report, o);
  report->add_option("--manifest", o.manifests, "subset manifest (repeatable)")->required();
  add_reports(report, o);
  add_runtime(report, o);

  auto* synth = app.add_subcommand("synth", "write a synthetic two-class corpus");
  add_config_file(synth);
  synth->add_option("--concentrated", o.synth.concentrated)->capture_default_str();
  synth->add_option("--diffuse", o.synth.diffuse)->capture_default_str();
  synth->add_option("--seed", o.synth_seed)->capture_default_str();
  synth->add_option("--output", o.synth_output, "corpus JSONL path")->required();
  synth->add_option("--truth", o.synth_truth, "class sidecar (default <output>.truth.jsonl)");

  auto* run = app.add_subcommand("run", "detect, score, select and report in one go");
  add_config_file(run);
  add_corpus(run, o);
  add_model(run, o);
  add_heads(run, o);
  add_detect(run, o);
  add_scoring(run, o);
  add_selection(run, o);
  add_reports(run, o);
  add_runtime(run, o);
  run->add_flag("--force", o.config.force, "recompute stale stages instead of failing");

  try {
    std::vector<std::string> args = expand_arguments(argc, argv);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    finalize(o);
    if (*detect) cmd_detect(o);
    else if (*score) cmd_score(o);
    else if (*select) cmd_select(o);
    else if (*report) cmd_report(o);
    else if (*synth) cmd_synth(o);
    else if (*run) cmd_run(o);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }
  return kExitOk;
}
