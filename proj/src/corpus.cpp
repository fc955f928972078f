#include "headscope/corpus.h"

#include <fstream>
#include <istream>
#include <nlohmann/json.hpp>
#include <ostream>
#include <set>

#include "headscope/errors.h"
#include "headscope/hash.h"
#include "headscope/log.h"

namespace headscope {

using json = nlohmann::ordered_json;

std::string content_id(std::string_view problem, std::string_view solution) {
  Fingerprint fp;
  fp.str(problem).str(solution);
  return "c" + fp.hex();
}

std::size_t count_words(std::string_view text) {
  std::size_t words = 0;
  bool in_word = false;
  for (char c : text) {
    const bool space = c == ' ' || c == '\t' || c == '\n' || c == '\r' ||
                       c == '\f' || c == '\v';
    if (!space && !in_word) ++words;
    in_word = !space;
  }
  return words;
}

const Sample* Corpus::find(std::string_view id) const {
  auto it = index_.find(id);
  return it == index_.end() ? nullptr : &samples[it->second];
}

void Corpus::reindex() {
  index_.clear();
  for (std::size_t i = 0; i < samples.size(); ++i) index_.emplace(samples[i].id, i);
}

Corpus parse_corpus(std::istream& in) {
  Corpus corpus;
  Fingerprint fp;
  std::set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    fp.str(line);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;

    json rec = json::parse(line, nullptr, false);
    auto reject = [&](std::string reason) {
      corpus.rejected.push_back({line_no, std::move(reason)});
    };
    if (rec.is_discarded() || !rec.is_object()) {
      reject("not a JSON object");
      continue;
    }
    if (!rec.contains("problem") || !rec["problem"].is_string()) {
      reject("missing string field \"problem\"");
      continue;
    }
    if (!rec.contains("solution") || !rec["solution"].is_string()) {
      reject("missing string field \"solution\"");
      continue;
    }
    Sample s;
    s.line = line_no;
    s.problem = rec["problem"].get<std::string>();
    s.solution = rec["solution"].get<std::string>();
    if (rec.contains("category") && !rec["category"].is_null()) {
      if (!rec["category"].is_string()) {
        reject("field \"category\" is not a string");
        continue;
      }
      s.category = rec["category"].get<std::string>();
    }
    bool explicit_id = false;
    if (rec.contains("id") && !rec["id"].is_null()) {
      if (rec["id"].is_string()) {
        s.id = rec["id"].get<std::string>();
      } else if (rec["id"].is_number_integer()) {
        s.id = std::to_string(rec["id"].get<long long>());
      } else {
        reject("field \"id\" is neither string nor integer");
        continue;
      }
      if (s.id.empty()) {
        reject("empty id");
        continue;
      }
      explicit_id = true;
    } else {
      s.id = content_id(s.problem, s.solution);
    }
    if (!ids.insert(s.id).second) {
      if (explicit_id) {
        reject("duplicate id " + s.id);
      } else {
        ++corpus.duplicates;
        log::warn("line " + std::to_string(line_no) +
                  ": duplicate content dropped (id " + s.id + ")");
      }
      continue;
    }
    s.length_words = count_words(s.problem) + count_words(s.solution);
    corpus.samples.push_back(std::move(s));
  }
  corpus.fingerprint = fp.hex();
  if (!corpus.rejected.empty()) {
    log::warn(std::to_string(corpus.rejected.size()) +
              " malformed corpus line(s) skipped");
  }
  if (corpus.samples.empty()) throw EmptyCorpusError("corpus has no valid records");
  corpus.reindex();
  return corpus;
}

Corpus ingest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read corpus " + path);
  return parse_corpus(in);
}

void write_corpus(std::ostream& out, std::span<const Sample> samples) {
  for (const Sample& s : samples) {
    json rec;
    rec["id"] = s.id;
    rec["problem"] = s.problem;
    rec["solution"] = s.solution;
    if (s.category) rec["category"] = *s.category;
    out << rec.dump() << '\n';
  }
}

}  // namespace headscope
