#include "headscope/synth.h"

#include <array>
#include <cstdio>
#include <fstream>
#include <nlohmann/json.hpp>

#include "headscope/errors.h"
#include "headscope/rng.h"

namespace headscope {

using json = nlohmann::ordered_json;

namespace {

constexpr std::array<const char*, 24> kWords = {
    "find",    "the",     "value",  "of",      "sum",    "product", "integer", "prime",
    "circle",  "radius",  "angle",  "triangle", "count",  "ways",    "choose",  "set",
    "number",  "digits",  "equal",  "total",   "square", "root",    "given",   "solve"};

std::string words(Rng& rng, std::size_t count) {
  std::string out;
  for (std::size_t i = 0; i < count; ++i) {
    if (i) out += ' ';
    out += kWords[rng.below(kWords.size())];
  }
  return out;
}

std::size_t in_range(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng.below(hi - lo + 1));
}

}  // namespace

void SyntheticSpec::validate() const {
  if (concentrated + diffuse == 0) throw InvalidArgument("synthetic corpus needs a non-zero count");
  if (categories.empty()) throw InvalidArgument("synthetic corpus needs a category");
  if (markers.empty()) throw InvalidArgument("synthetic corpus needs a marker character");
  if (concentrated_min_words < 1 || diffuse_min_words < 1 ||
      concentrated_min_words > concentrated_max_words ||
      diffuse_min_words > diffuse_max_words) {
    throw InvalidArgument("invalid word-count range");
  }
}

SyntheticCorpus make_synthetic_corpus(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);

  // Class order is a seeded shuffle so neither class clusters by id.
  std::vector<bool> is_concentrated(spec.concentrated, true);
  is_concentrated.resize(spec.concentrated + spec.diffuse, false);
  for (std::size_t i = is_concentrated.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.below(i));
    const bool tmp = is_concentrated[i - 1];
    is_concentrated[i - 1] = is_concentrated[j];
    is_concentrated[j] = tmp;
  }

  SyntheticCorpus out;
  for (std::size_t i = 0; i < is_concentrated.size(); ++i) {
    Sample s;
    char id[32];
    std::snprintf(id, sizeof id, "syn-%05zu", i);
    s.id = id;
    s.line = i + 1;
    s.category = spec.categories[rng.below(spec.categories.size())];
    if (is_concentrated[i]) {
      const char marker = spec.markers[rng.below(spec.markers.size())];
      const std::size_t n = in_range(rng, spec.concentrated_min_words, spec.concentrated_max_words);
      s.problem = std::string(1, marker) + " " + words(rng, n);
      std::string sol(1, marker);
      const std::size_t steps = in_range(rng, 6, 12);
      for (std::size_t k = 0; k < steps; ++k) {
        sol += ' ';
        sol += std::to_string(rng.below(100));
        sol += ' ';
        sol += marker;
      }
      s.solution = sol;
      out.classes.emplace_back("concentrated");
    } else {
      const std::size_t n = in_range(rng, spec.diffuse_min_words, spec.diffuse_max_words);
      s.problem = words(rng, n);
      std::string sol;
      const std::size_t steps = in_range(rng, 6, 12);
      for (std::size_t k = 0; k < steps; ++k) {
        if (k) sol += ' ';
        sol += std::to_string(rng.below(100));
      }
      s.solution = sol;
      out.classes.emplace_back("diffuse");
    }
    s.length_words = count_words(s.problem) + count_words(s.solution);
    out.samples.push_back(std::move(s));
  }
  return out;
}

void write_synthetic(const SyntheticCorpus& corpus, const std::string& corpus_path,
                     const std::string& truth_path) {
  std::ofstream c(corpus_path, std::ios::binary | std::ios::trunc);
  if (!c) throw IoError("cannot write " + corpus_path);
  write_corpus(c, corpus.samples);
  std::ofstream t(truth_path, std::ios::binary | std::ios::trunc);
  if (!t) throw IoError("cannot write " + truth_path);
  for (std::size_t i = 0; i < corpus.samples.size(); ++i) {
    json line;
    line["sample_id"] = corpus.samples[i].id;
    line["class"] = corpus.classes[i];
    line["category"] = corpus.samples[i].category.value_or("");
    t << line.dump() << '\n';
  }
  if (!c || !t) throw IoError("write failed for synthetic corpus");
}

std::vector<std::pair<std::string, std::string>> read_truth(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json rec = json::parse(line, nullptr, false);
    if (rec.is_discarded() || !rec.contains("sample_id") || !rec.contains("class")) {
      throw FormatError(path + ": malformed truth line");
    }
    out.emplace_back(rec["sample_id"].get<std::string>(), rec["class"].get<std::string>());
  }
  return out;
}

}  // namespace headscope
