#include "headscope/selector.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <numeric>
#include <sstream>

#include "headscope/errors.h"
#include "headscope/format.h"
#include "headscope/hash.h"
#include "headscope/head_detector.h"
#include "headscope/log.h"
#include "headscope/parallel.h"
#include "headscope/rng.h"

namespace headscope {

using json = nlohmann::ordered_json;

namespace {

constexpr std::pair<Strategy, const char*> kStrategyNames[] = {
    {Strategy::soft, "soft"},           {Strategy::top_k, "top-k"},
    {Strategy::low_score, "low-score"}, {Strategy::random, "random"},
    {Strategy::max_loss, "max-loss"},   {Strategy::ifd, "ifd"},
    {Strategy::diversity, "diversity"},
};

void check_budget(std::size_t m, std::size_t pool) {
  if (m > pool) {
    throw InvalidArgument("subset size " + std::to_string(m) + " exceeds the " +
                          std::to_string(pool) + " available records");
  }
}

// Indices ordered by value (descending when `largest`), ties by ascending id.
std::vector<Selection> rank_by_value(std::span<const std::string> ids,
                                     std::span<const double> values, std::size_t m,
                                     bool largest) {
  check_budget(m, ids.size());
  std::vector<std::size_t> order(ids.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (values[a] != values[b]) return largest ? values[a] > values[b] : values[a] < values[b];
    return ids[a] < ids[b];
  });
  std::vector<Selection> out;
  for (std::size_t r = 0; r < m; ++r) out.push_back({ids[order[r]], r, values[order[r]]});
  return out;
}

std::vector<Selection> rank_optional(std::span<const Sample> samples,
                                     const std::vector<std::optional<double>>& values,
                                     std::size_t m, const char* what) {
  if (m > samples.size()) check_budget(m, samples.size());
  std::vector<std::string> ids;
  std::vector<double> kept;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (values[i]) {
      ids.push_back(samples[i].id);
      kept.push_back(*values[i]);
    }
  }
  if (m > ids.size()) {
    throw InvalidArgument("only " + std::to_string(ids.size()) + " samples have a finite " +
                          what + ", " + std::to_string(m) + " requested");
  }
  return rank_by_value(ids, kept, m, true);
}

}  // namespace

std::string to_string(Strategy s) {
  for (const auto& [value, name] : kStrategyNames) {
    if (value == s) return name;
  }
  return "unknown";
}

Strategy parse_strategy(const std::string& text) {
  for (const auto& [value, name] : kStrategyNames) {
    if (text == name) return value;
  }
  if (text == "top_k") return Strategy::top_k;
  if (text == "low_score") return Strategy::low_score;
  if (text == "max_loss") return Strategy::max_loss;
  throw InvalidArgument("unknown strategy \"" + text + "\"");
}

std::size_t Budget::resolve(std::size_t pool) const {
  if (ratio.has_value() == count.has_value()) {
    throw InvalidArgument("give exactly one of a budget ratio or count");
  }
  std::size_t m = 0;
  if (ratio) {
    if (!(*ratio > 0.0 && *ratio <= 1.0)) throw InvalidArgument("budget ratio must be in (0, 1]");
    m = static_cast<std::size_t>(std::floor(*ratio * static_cast<double>(pool)));
  } else {
    m = *count;
  }
  if (m < 1) throw InvalidArgument("budget resolves to an empty subset");
  check_budget(m, pool);
  return m;
}

std::string SelectionPlan::fingerprint() const {
  Fingerprint fp;
  fp.str("plan/v1").str(to_string(strategy));
  if (budget.ratio) fp.str("ratio").value(*budget.ratio);
  if (budget.count) fp.str("count").value(static_cast<std::uint64_t>(*budget.count));
  fp.value(seed).value(static_cast<std::uint8_t>(include_degenerate));
  return fp.hex();
}

std::vector<std::string> SubsetManifest::ids() const {
  std::vector<std::string> out;
  out.reserve(items.size());
  for (const auto& s : items) out.push_back(s.sample_id);
  return out;
}

std::vector<ScoreRecord> eligible_records(std::span<const ScoreRecord> records,
                                          bool include_degenerate) {
  std::vector<ScoreRecord> out;
  for (const auto& r : records) {
    if (r.skipped()) continue;
    if (r.degenerate && !include_degenerate) continue;
    out.push_back(r);
  }
  return out;
}

std::vector<double> normalize_scores(std::span<const ScoreRecord> records) {
  double total = 0.0;
  for (const auto& r : records) {
    if (!(r.score >= 0.0) || !std::isfinite(r.score)) {
      throw InvalidDistributionError("score of " + r.sample_id + " is not a finite non-negative number");
    }
    total += r.score;
  }
  if (!(total > 0.0)) {
    throw InvalidDistributionError(
        "all scores are zero; soft sampling has no distribution (use --strategy random)");
  }
  std::vector<double> p;
  p.reserve(records.size());
  for (const auto& r : records) p.push_back(r.score / total);
  return p;
}

std::vector<Selection> soft_sample(std::span<const std::string> ids,
                                   std::span<const double> weights, std::size_t m,
                                   std::uint64_t seed) {
  if (ids.size() != weights.size()) throw InvalidArgument("ids and weights differ in length");
  Rng rng(seed);
  struct Keyed {
    double key;
    std::size_t index;
  };
  std::vector<Keyed> keyed;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double u = rng.uniform();  // one draw per record keeps keys index-stable
    if (!(weights[i] >= 0.0) || !std::isfinite(weights[i])) {
      throw InvalidArgument("weights must be finite and non-negative");
    }
    // log(u^(1/w)) preserves the key order and avoids underflow.
    if (weights[i] > 0.0) keyed.push_back({std::log(u) / weights[i], i});
  }
  if (m > keyed.size()) {
    throw InvalidArgument("cannot draw " + std::to_string(m) + " from " +
                          std::to_string(keyed.size()) + " positive-weight records");
  }
  std::partial_sort(keyed.begin(), keyed.begin() + static_cast<std::ptrdiff_t>(m), keyed.end(),
                    [](const Keyed& a, const Keyed& b) {
                      if (a.key != b.key) return a.key > b.key;
                      return a.index < b.index;
                    });
  double total = 0.0;
  for (const auto& k : keyed) total += weights[k.index];
  std::vector<Selection> out;
  double remaining = total;
  for (std::size_t r = 0; r < m; ++r) {
    const std::size_t i = keyed[r].index;
    out.push_back({ids[i], r, weights[i] / remaining});
    remaining -= weights[i];
  }
  return out;
}

std::vector<Selection> top_k_select(std::span<const ScoreRecord> records, std::size_t m) {
  std::vector<std::string> ids;
  std::vector<double> scores;
  for (const auto& r : records) {
    ids.push_back(r.sample_id);
    scores.push_back(r.score);
  }
  return rank_by_value(ids, scores, m, true);
}

std::vector<Selection> low_score_select(std::span<const ScoreRecord> records,
                                        std::size_t m) {
  std::vector<std::string> ids;
  std::vector<double> scores;
  for (const auto& r : records) {
    ids.push_back(r.sample_id);
    scores.push_back(r.score);
  }
  return rank_by_value(ids, scores, m, false);
}

std::vector<Selection> random_select(std::span<const std::string> ids, std::size_t m,
                                     std::uint64_t seed) {
  check_budget(m, ids.size());
  Rng rng(seed);
  std::vector<std::size_t> pool(ids.size());
  std::iota(pool.begin(), pool.end(), 0);
  std::vector<Selection> out;
  for (std::size_t r = 0; r < m; ++r) {
    const std::size_t left = pool.size() - r;
    const std::size_t pick = r + static_cast<std::size_t>(rng.below(left));
    std::swap(pool[r], pool[pick]);
    out.push_back({ids[pool[r]], r, 1.0 / static_cast<double>(left)});
  }
  return out;
}

std::vector<Selection> max_loss_select(const ReferenceModel& model, const Tokenizer& tok,
                                       std::span<const Sample> samples, std::size_t m,
                                       const BaselineOptions& opts) {
  check_budget(m, samples.size());
  return rank_optional(samples, solution_losses(model, tok, samples, {opts.workers}), m,
                       "solution loss");
}

std::vector<std::optional<double>> ifd_scores(const ReferenceModel& model,
                                              const Tokenizer& tok,
                                              std::span<const Sample> samples,
                                              const BaselineOptions& opts) {
  const auto max_len = static_cast<std::size_t>(model.config().max_seq_len);
  std::vector<std::optional<double>> out(samples.size());
  std::vector<std::string> notes(samples.size());
  parallel_for(samples.size(), opts.workers, [&](std::size_t i) {
    const Sample& s = samples[i];
    if (s.solution.empty()) {
      notes[i] = "empty solution";
      return;
    }
    const Encoded joint = encode_pair(tok, s.problem, s.solution, max_len);
    Encoded alone = encode_text(tok, s.solution, max_len);
    alone.sequence.boundary = 0;
    double conditioned = 0.0;
    try {
      conditioned = sequence_loss(model, joint.sequence, LossRegion::solution);
    } catch (const EmptyRegionError&) {
      notes[i] = "solution truncated away";
      return;
    }
    const double unconditioned = sequence_loss(model, alone.sequence, LossRegion::solution);
    const double ratio = conditioned / unconditioned;
    if (!std::isfinite(ratio)) {
      notes[i] = "non-finite IFD ratio";
      return;
    }
    out[i] = ratio;
  });
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!notes[i].empty()) log::warn("sample " + samples[i].id + " excluded from IFD: " + notes[i]);
  }
  return out;
}

std::vector<Selection> ifd_select(const ReferenceModel& model, const Tokenizer& tok,
                                  std::span<const Sample> samples, std::size_t m,
                                  const BaselineOptions& opts) {
  check_budget(m, samples.size());
  return rank_optional(samples, ifd_scores(model, tok, samples, opts), m, "IFD ratio");
}

std::vector<Selection> diversity_select(std::span<const Sample> samples, std::size_t m,
                                        std::uint64_t seed) {
  check_budget(m, samples.size());
  std::map<std::string, std::vector<std::size_t>> buckets;
  bool unlabeled = false;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].category) {
      buckets[*samples[i].category].push_back(i);
    } else {
      buckets["uncategorized"].push_back(i);
      unlabeled = true;
    }
  }
  if (unlabeled) log::warn("unlabeled samples grouped under \"uncategorized\"");

  const std::size_t c = buckets.size();
  std::vector<std::size_t> sizes, alloc;
  for (const auto& [name, members] : buckets) sizes.push_back(members.size());
  alloc.resize(c);
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < c; ++i) {
    const std::size_t target = m / c + (i < m % c ? 1 : 0);
    alloc[i] = std::min(target, sizes[i]);
    assigned += alloc[i];
  }
  while (assigned < m) {
    for (std::size_t i = 0; i < c && assigned < m; ++i) {
      if (alloc[i] < sizes[i]) {
        ++alloc[i];
        ++assigned;
      }
    }
  }

  Rng rng(seed);
  std::vector<Selection> out;
  std::size_t i = 0;
  for (auto& [name, members] : buckets) {
    for (std::size_t r = 0; r < alloc[i]; ++r) {
      const std::size_t left = members.size() - r;
      const std::size_t pick = r + static_cast<std::size_t>(rng.below(left));
      std::swap(members[r], members[pick]);
      out.push_back({samples[members[r]].id, out.size(), 1.0 / static_cast<double>(left)});
    }
    ++i;
  }
  return out;
}

std::string manifest_jsonl(const SubsetManifest& manifest) {
  json plan;
  plan["strategy"] = to_string(manifest.plan.strategy);
  if (manifest.plan.budget.ratio) plan["ratio"] = *manifest.plan.budget.ratio;
  if (manifest.plan.budget.count) plan["count"] = *manifest.plan.budget.count;
  plan["seed"] = manifest.plan.seed;
  plan["include_degenerate"] = manifest.plan.include_degenerate;
  json header;
  header["plan"] = std::move(plan);
  header["plan_fingerprint"] = manifest.plan_fingerprint;
  header["source_fingerprint"] = manifest.source_fingerprint;
  header["pool_size"] = manifest.pool_size;
  json upstream = json::object();
  for (const auto& [key, value] : manifest.upstream) upstream[key] = value;
  header["upstream"] = std::move(upstream);
  header["count"] = manifest.items.size();

  std::ostringstream out;
  out << header.dump() << '\n';
  for (const auto& s : manifest.items) {
    json line;
    line["sample_id"] = s.sample_id;
    line["rank"] = s.rank;
    line["weight"] = s.weight;
    out << line.dump(-1, ' ', false, json::error_handler_t::replace) << '\n';
  }
  return out.str();
}

void write_manifest(const std::string& path, const SubsetManifest& manifest) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << manifest_jsonl(manifest);
  if (!out) throw IoError("write failed for " + path);
}

SubsetManifest read_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read manifest " + path);
  SubsetManifest m;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = path + ":" + std::to_string(line_no);
    json rec = json::parse(line, nullptr, false);
    if (rec.is_discarded() || !rec.is_object()) throw FormatError(where + ": not a JSON object");
    try {
      if (!have_header) {
        if (!rec.contains("plan")) throw FormatError(where + ": missing plan header");
        const json& plan = rec["plan"];
        m.plan.strategy = parse_strategy(plan.at("strategy").get<std::string>());
        m.plan.budget = {};
        if (plan.contains("ratio")) m.plan.budget.ratio = plan["ratio"].get<double>();
        if (plan.contains("count")) m.plan.budget.count = plan["count"].get<std::size_t>();
        m.plan.seed = plan.at("seed").get<std::uint64_t>();
        m.plan.include_degenerate = plan.value("include_degenerate", false);
        m.plan_fingerprint = rec.at("plan_fingerprint").get<std::string>();
        m.source_fingerprint = rec.at("source_fingerprint").get<std::string>();
        m.pool_size = rec.value("pool_size", std::size_t{0});
        if (rec.contains("upstream")) {
          for (const auto& [key, value] : rec["upstream"].items()) {
            m.upstream.emplace_back(key, value.get<std::string>());
          }
        }
        have_header = true;
        continue;
      }
      m.items.push_back({rec.at("sample_id").get<std::string>(),
                         rec.at("rank").get<std::size_t>(), rec.at("weight").get<double>()});
    } catch (const json::exception& e) {
      throw FormatError(where + ": " + e.what());
    }
  }
  if (!have_header) throw FormatError(path + ": empty manifest");
  return m;
}

void materialize(const Corpus& corpus, const SubsetManifest& manifest,
                 const std::string& path) {
  std::vector<Sample> chosen;
  for (const auto& s : manifest.items) {
    const Sample* found = corpus.find(s.sample_id);
    if (!found) throw ConsistencyError("manifest id " + s.sample_id + " is not in the corpus");
    chosen.push_back(*found);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  write_corpus(out, chosen);
  if (!out) throw IoError("write failed for " + path);
}

}  // namespace headscope
