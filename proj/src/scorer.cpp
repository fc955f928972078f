#include "headscope/scorer.h"

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

constexpr double kFlatTolerance = 1e-12;

ScoreRecord skip_record(std::string id, std::string reason, const std::string& fp) {
  ScoreRecord r;
  r.sample_id = std::move(id);
  r.skip_reason = std::move(reason);
  r.config_fingerprint = fp;
  return r;
}

void check_skip_ratio(std::span<const ScoreRecord> records, double max_ratio) {
  if (records.empty()) throw InvalidArgument("nothing to score");
  const auto skipped = static_cast<std::size_t>(
      std::count_if(records.begin(), records.end(),
                    [](const ScoreRecord& r) { return r.skipped(); }));
  const double ratio = static_cast<double>(skipped) / static_cast<double>(records.size());
  if (ratio > max_ratio) {
    throw FormatError("skip ratio " + format_double(ratio) + " (" +
                      std::to_string(skipped) + "/" + std::to_string(records.size()) +
                      ") exceeds " + format_double(max_ratio));
  }
}

}  // namespace

std::string to_string(ScoringMode mode) {
  return mode == ScoringMode::input_only ? "input-only" : "output-included";
}

ScoringMode parse_scoring_mode(const std::string& text) {
  if (text == "input-only" || text == "input") return ScoringMode::input_only;
  if (text == "output-included" || text == "output") return ScoringMode::output_included;
  throw InvalidArgument("unknown scoring mode \"" + text + "\"");
}

void ScoringConfig::validate() const {
  if (heads.empty()) throw InvalidArgument("scoring needs at least one head");
  if (max_tokens < 2) throw InvalidArgument("max_tokens must be at least 2");
  std::vector<HeadId> sorted = heads;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw InvalidArgument("scoring head listed twice");
  }
}

std::string ScoringConfig::fingerprint() const {
  std::vector<HeadId> sorted = heads;
  std::sort(sorted.begin(), sorted.end());
  Fingerprint fp;
  fp.str("scoring/v1").str(model_fingerprint).str(to_string(mode)).value(
      static_cast<std::uint64_t>(max_tokens));
  for (const HeadId& h : sorted) fp.value(h.layer).value(h.head);
  return fp.hex();
}

std::vector<double> incoming_attention(std::span<const AttentionTensor> attentions) {
  if (attentions.empty()) throw InvalidArgument("incoming attention needs at least one head");
  const std::size_t n = attentions.front().matrix.size();
  std::vector<double> alpha(n, 0.0);
  std::vector<double> column(n);
  for (const auto& a : attentions) {
    if (a.matrix.size() != n) {
      throw InvalidArgument("attention matrices disagree on sequence length");
    }
    std::fill(column.begin(), column.end(), 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      const auto row = a.matrix.row(j);
      for (std::size_t k = 0; k <= j; ++k) column[k] += row[k];
    }
    for (std::size_t k = 0; k < n; ++k) alpha[k] += column[k];
  }
  const double heads = static_cast<double>(attentions.size());
  for (double& v : alpha) v /= heads;
  return alpha;
}

double variance_score(std::span<const double> alpha) {
  if (alpha.empty()) throw InvalidArgument("variance of an empty vector");
  const auto [lo, hi] = std::minmax_element(alpha.begin(), alpha.end());
  if (*hi - *lo <= kFlatTolerance) return 0.0;
  const double n = static_cast<double>(alpha.size());
  double mean = 0.0;
  for (double v : alpha) mean += v;
  mean /= n;
  // Corrected two-pass: the second term cancels rounding error in the mean.
  double sum_dev = 0.0;
  double sum_sq = 0.0;
  for (double v : alpha) {
    const double d = v - mean;
    sum_dev += d;
    sum_sq += d * d;
  }
  return std::max(0.0, (sum_sq - sum_dev * sum_dev / n) / n);
}

ScoreRecord score_forward(const std::string& sample_id, const ForwardResult& forward,
                          const ScoringConfig& config) {
  config.validate();
  std::vector<AttentionTensor> selected;
  selected.reserve(config.heads.size());
  for (const HeadId& h : config.heads) {
    auto it = std::find_if(forward.attentions.begin(), forward.attentions.end(),
                           [&](const AttentionTensor& a) { return a.head == h; });
    if (it == forward.attentions.end()) {
      throw FormatError("sample " + sample_id + " has no attention for head " +
                        to_string(h));
    }
    selected.push_back(*it);
  }
  const std::vector<double> alpha = incoming_attention(selected);

  ScoreRecord r;
  r.sample_id = sample_id;
  r.token_count = alpha.size();
  r.config_fingerprint = config.fingerprint();
  r.degenerate = alpha.size() == 1;
  r.score = r.degenerate ? 0.0 : variance_score(alpha);
  double sum = 0.0;
  for (double v : alpha) sum += v;
  r.alpha.mean = sum / static_cast<double>(alpha.size());
  r.alpha.min = *std::min_element(alpha.begin(), alpha.end());
  r.alpha.max = *std::max_element(alpha.begin(), alpha.end());
  return r;
}

ScoreRecord score_sample(const ReferenceModel& model, const Tokenizer& tok,
                         const Sample& sample, const ScoringConfig& config) {
  config.validate();
  const std::size_t max_len =
      std::min(config.max_tokens, static_cast<std::size_t>(model.config().max_seq_len));
  const bool input_only = config.mode == ScoringMode::input_only;
  if (sample.problem.empty() && (input_only || sample.solution.empty())) {
    return skip_record(sample.id, "empty problem text", config.fingerprint());
  }
  Encoded e = input_only ? encode_text(tok, sample.problem, max_len)
                         : encode_pair(tok, sample.problem, sample.solution, max_len);
  if (e.sequence.tokens.empty()) {
    return skip_record(sample.id, "no tokens after encoding", config.fingerprint());
  }
  const ForwardResult fwd =
      model.forward(e.sequence, {}, config.heads, LossRegion::full);
  return score_forward(sample.id, fwd, config);
}

std::vector<ScoreRecord> score_corpus(const ReferenceModel& model, const Tokenizer& tok,
                                      const Corpus& corpus, const ScoringConfig& config,
                                      const ScoreOptions& opts) {
  config.validate();
  validate_heads(model.config(), config.heads);
  if (tok.required_vocab() > model.config().vocab_size) {
    throw InvalidArgument("tokenizer needs a vocabulary of " +
                          std::to_string(tok.required_vocab()));
  }
  const std::string fp = config.fingerprint();

  // Interleave samples and rejected lines back into source order.
  struct Slot {
    std::size_t line;
    const Sample* sample;
    const RejectedLine* rejected;
  };
  std::vector<Slot> slots;
  for (const auto& s : corpus.samples) slots.push_back({s.line, &s, nullptr});
  for (const auto& r : corpus.rejected) slots.push_back({r.line, nullptr, &r});
  std::sort(slots.begin(), slots.end(),
            [](const Slot& a, const Slot& b) { return a.line < b.line; });

  std::vector<ScoreRecord> out(slots.size());
  parallel_for(slots.size(), opts.workers, [&](std::size_t i) {
    const Slot& s = slots[i];
    if (s.rejected) {
      out[i] = skip_record("line:" + std::to_string(s.line),
                           "unreadable record: " + s.rejected->reason, fp);
    } else {
      out[i] = score_sample(model, tok, *s.sample, config);
    }
  });
  check_skip_ratio(out, opts.max_skip_ratio);
  return out;
}

std::vector<ScoreRecord> score_external(std::span<const ExternalRecord> records,
                                        const ScoringConfig& config,
                                        const ScoreOptions& opts) {
  std::vector<ScoreRecord> out(records.size());
  parallel_for(records.size(), opts.workers, [&](std::size_t i) {
    out[i] = score_forward(records[i].sample_id, records[i].result, config);
  });
  check_skip_ratio(out, opts.max_skip_ratio);
  return out;
}

std::string scores_jsonl(std::span<const ScoreRecord> records) {
  std::ostringstream out;
  for (const auto& r : records) {
    json line;
    line["sample_id"] = r.sample_id;
    line["score"] = r.score;
    line["token_count"] = r.token_count;
    line["degenerate"] = r.degenerate;
    line["config_fingerprint"] = r.config_fingerprint;
    line["alpha_mean"] = r.alpha.mean;
    line["alpha_min"] = r.alpha.min;
    line["alpha_max"] = r.alpha.max;
    if (r.skip_reason) line["skip_reason"] = *r.skip_reason;
    out << line.dump(-1, ' ', false, json::error_handler_t::replace) << '\n';
  }
  return out.str();
}

void write_scores(const std::string& path, std::span<const ScoreRecord> records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << scores_jsonl(records);
  if (!out) throw IoError("write failed for " + path);
}

std::vector<ScoreRecord> read_scores(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read score file " + path);
  std::vector<ScoreRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json rec = json::parse(line, nullptr, false);
    const std::string where = path + ":" + std::to_string(line_no);
    if (rec.is_discarded() || !rec.is_object()) throw FormatError(where + ": not a JSON object");
    try {
      ScoreRecord r;
      r.sample_id = rec.at("sample_id").get<std::string>();
      r.score = rec.at("score").get<double>();
      r.token_count = rec.at("token_count").get<std::size_t>();
      r.degenerate = rec.at("degenerate").get<bool>();
      r.config_fingerprint = rec.at("config_fingerprint").get<std::string>();
      r.alpha.mean = rec.value("alpha_mean", 0.0);
      r.alpha.min = rec.value("alpha_min", 0.0);
      r.alpha.max = rec.value("alpha_max", 0.0);
      if (rec.contains("skip_reason")) r.skip_reason = rec["skip_reason"].get<std::string>();
      if (!(r.score >= 0.0)) throw FormatError(where + ": negative score");
      out.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw FormatError(where + ": " + e.what());
    }
  }
  return out;
}

void write_score_manifest(const std::string& path, const ScoreManifest& m) {
  json doc;
  doc["config_fingerprint"] = m.config_fingerprint;
  doc["model_fingerprint"] = m.model_fingerprint;
  doc["corpus_fingerprint"] = m.corpus_fingerprint;
  doc["score_file_fingerprint"] = m.score_file_fingerprint;
  json heads = json::array();
  for (const HeadId& h : m.heads) heads.push_back(json::array({h.layer, h.head}));
  doc["heads"] = std::move(heads);
  doc["mode"] = to_string(m.mode);
  doc["max_tokens"] = m.max_tokens;
  doc["records"] = m.records;
  doc["skipped"] = m.skipped;
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << doc.dump(2) << '\n';
  if (!out) throw IoError("write failed for " + path);
}

ScoreManifest read_score_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read score manifest " + path);
  json doc = json::parse(in, nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) throw FormatError(path + ": not a JSON object");
  try {
    ScoreManifest m;
    m.config_fingerprint = doc.at("config_fingerprint").get<std::string>();
    m.model_fingerprint = doc.at("model_fingerprint").get<std::string>();
    m.corpus_fingerprint = doc.at("corpus_fingerprint").get<std::string>();
    m.score_file_fingerprint = doc.at("score_file_fingerprint").get<std::string>();
    for (const auto& h : doc.at("heads")) m.heads.push_back({h.at(0).get<int>(), h.at(1).get<int>()});
    m.mode = parse_scoring_mode(doc.at("mode").get<std::string>());
    m.max_tokens = doc.at("max_tokens").get<std::size_t>();
    m.records = doc.at("records").get<std::size_t>();
    m.skipped = doc.at("skipped").get<std::size_t>();
    return m;
  } catch (const json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
}

}  // namespace headscope
