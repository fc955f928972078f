#include <doctest.h>

#include <filesystem>
#include <set>
#include <sstream>

#include "headscope/corpus.h"
#include "headscope/errors.h"
#include "headscope/external.h"
#include "headscope/log.h"
#include "headscope/model.h"
#include "headscope/reports.h"
#include "headscope/synth.h"
#include "naive_model.h"

using namespace headscope;
using headscope::testing::TempDir;

namespace {

Corpus parse(const std::string& text) {
  std::istringstream in(text);
  return parse_corpus(in);
}

ExternalRecord record_with(std::string id, std::vector<double> values, std::size_t n) {
  ExternalRecord rec;
  rec.sample_id = std::move(id);
  rec.result.loss = 1.0;
  rec.result.token_count = n;
  rec.result.loss_positions = n;
  rec.result.attentions.push_back({{0, 0}, AttentionMatrix(n, std::move(values))});
  return rec;
}

}  // namespace

TEST_CASE("corpus ingest keeps valid lines and reports the rest") {
  const Corpus c = parse(
      "{\"id\":\"a\",\"problem\":\"one two\",\"solution\":\"three\",\"category\":\"x\"}\n"
      "{\"id\":\"b\",\"solution\":\"no problem\"}\n"
      "\n"
      "{\"id\":7,\"problem\":\"p\",\"solution\":\"s s\"}\n");
  REQUIRE(c.samples.size() == 2);
  CHECK(c.samples[0].length_words == 3);
  CHECK(c.samples[0].category == std::optional<std::string>("x"));
  CHECK(c.samples[1].id == "7");
  CHECK(c.samples[1].line == 4);
  REQUIRE(c.rejected.size() == 1);
  CHECK(c.rejected[0].line == 2);
  CHECK(c.find("7") != nullptr);
  CHECK(c.find("b") == nullptr);
  CHECK(c.record_count() == 3);
}

TEST_CASE("duplicate content is dropped and duplicate ids are rejected") {
  log::WarningCapture warnings;
  const Corpus c = parse(
      "{\"problem\":\"p\",\"solution\":\"s\"}\n"
      "{\"problem\":\"p\",\"solution\":\"s\"}\n"
      "{\"id\":\"k\",\"problem\":\"q\",\"solution\":\"s\"}\n"
      "{\"id\":\"k\",\"problem\":\"r\",\"solution\":\"s\"}\n");
  CHECK(c.samples.size() == 2);
  CHECK(c.duplicates == 1);
  CHECK(c.samples[0].id == content_id("p", "s"));
  CHECK(warnings.contains("duplicate content"));
  REQUIRE(c.rejected.size() == 1);
  CHECK(c.rejected[0].reason.find("duplicate id") != std::string::npos);
}

TEST_CASE("empty or unreadable corpora are errors") {
  CHECK_THROWS_AS(parse(""), EmptyCorpusError);
  CHECK_THROWS_AS(parse("not json\n"), EmptyCorpusError);
  CHECK_THROWS_AS(ingest("/nonexistent/corpus.jsonl"), IoError);
}

TEST_CASE("word counting and corpus fingerprints") {
  CHECK(count_words("  a  bb\tc\n") == 3);
  CHECK(count_words("") == 0);
  const std::string text = "{\"id\":\"a\",\"problem\":\"p\",\"solution\":\"s\"}\n";
  CHECK(parse(text).fingerprint == parse(text).fingerprint);
  CHECK(parse(text).fingerprint != parse(text + "\n").fingerprint);

  const Corpus c = parse(text);
  std::ostringstream out;
  write_corpus(out, c.samples);
  CHECK(parse(out.str()).samples[0].problem == "p");
}

TEST_CASE("external activations round-trip a forward pass") {
  ModelConfig cfg;
  cfg.vocab_size = 16;
  cfg.max_seq_len = 16;
  cfg.seed = 5;
  const Transformer model = Transformer::random(cfg);
  const std::vector<HeadId> heads{{0, 1}, {1, 3}};
  std::vector<ExternalRecord> recs;
  for (std::size_t n : {1, 4, 9}) {
    std::vector<Token> toks(n);
    for (std::size_t i = 0; i < n; ++i) toks[i] = static_cast<Token>((3 * i + 1) % 16);
    recs.push_back({"s" + std::to_string(n), model.forward({toks, n / 2}, {}, heads, LossRegion::solution)});
  }
  TempDir dir("external");
  export_external(dir.file("m.jsonl"), dir.file("d.bin"), recs);
  ImportStats stats;
  const auto back = import_external(dir.file("m.jsonl"), dir.file("d.bin"), &stats);
  REQUIRE(back.size() == recs.size());
  CHECK(stats.records == 3);
  CHECK(stats.renormalized_rows == 0);
  for (std::size_t i = 0; i < recs.size(); ++i) {
    CHECK(back[i].sample_id == recs[i].sample_id);
    CHECK(back[i].result.loss == recs[i].result.loss);
    REQUIRE(back[i].result.attentions.size() == 2);
    for (std::size_t h = 0; h < 2; ++h) {
      CHECK(back[i].result.attentions[h].head == heads[h]);
      CHECK(back[i].result.attentions[h].matrix == recs[i].result.attentions[h].matrix);
    }
  }
}

TEST_CASE("external rows off from one are renormalized and flagged past 1e-3") {
  TempDir dir("renorm");
  const std::vector<ExternalRecord> recs{
      record_with("slight", {1.0 + 1e-5, 0.0, 0.5, 0.5}, 2),
      record_with("far", {1.0, 0.0, 0.6, 0.5}, 2)};
  export_external(dir.file("m.jsonl"), dir.file("d.bin"), recs);
  log::WarningCapture warnings;
  ImportStats stats;
  const auto back = import_external(dir.file("m.jsonl"), dir.file("d.bin"), &stats);
  CHECK(stats.renormalized_rows == 2);
  CHECK(stats.flagged_rows == 1);
  CHECK(warnings.contains("renormalized"));
  CHECK(warnings.contains("outside the 1e-3"));
  CHECK(back[0].result.attentions[0].matrix(0, 0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(back[1].result.attentions[0].matrix(1, 0) == doctest::Approx(0.6 / 1.1).epsilon(1e-15));
}

TEST_CASE("external data errors") {
  TempDir dir("bad-external");
  export_external(dir.file("m.jsonl"), dir.file("d.bin"),
                  std::vector<ExternalRecord>{record_with("a", {1.0, 0.0, 0.5, 0.5}, 2)});
  std::filesystem::resize_file(dir.file("d.bin"), 30);
  try {
    import_external(dir.file("m.jsonl"), dir.file("d.bin"));
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("byte offset 0") != std::string::npos);
  }

  export_external(dir.file("n.jsonl"), dir.file("n.bin"),
                  std::vector<ExternalRecord>{record_with("neg", {1.0, 0.0, 1.5, -0.5}, 2)});
  CHECK_THROWS_AS(import_external(dir.file("n.jsonl"), dir.file("n.bin")), FormatError);

  export_external(dir.file("u.jsonl"), dir.file("u.bin"),
                  std::vector<ExternalRecord>{record_with("upper", {0.5, 0.5, 0.5, 0.5}, 2)});
  CHECK_THROWS_AS(import_external(dir.file("u.jsonl"), dir.file("u.bin")), FormatError);

  export_external(dir.file("z.jsonl"), dir.file("z.bin"),
                  std::vector<ExternalRecord>{record_with("zero", {0.0, 0.0, 0.5, 0.5}, 2)});
  CHECK_THROWS_AS(import_external(dir.file("z.jsonl"), dir.file("z.bin")), FormatError);

  headscope::testing::write_file(dir.file("bad.jsonl"), "{\"sample_id\":\"a\"}\n");
  CHECK_THROWS_AS(import_external(dir.file("bad.jsonl"), dir.file("d.bin")), FormatError);
  CHECK_THROWS_AS(import_external(dir.file("missing.jsonl"), dir.file("d.bin")), IoError);
}

TEST_CASE("length summaries") {
  const Corpus c = parse(
      "{\"id\":\"a\",\"problem\":\"w w w w w\",\"solution\":\"w w w w w\"}\n"
      "{\"id\":\"b\",\"problem\":\"w w w w w w w w w w w w w w w\",\"solution\":\"w w w w w w w w w w w w w w w\"}\n");
  const LengthSummary s = summarize_lengths(c, {"both", {"a", "b"}});
  CHECK(s.mean == 20.0);
  CHECK(s.median == 20.0);
  CHECK(summarize_lengths(c, {"one", {"b"}}).median == 30.0);
  CHECK_THROWS_AS(summarize_lengths(c, {"empty", {}}), InvalidArgument);
  CHECK_THROWS_AS(summarize_lengths(c, {"ghost", {"zz"}}), ConsistencyError);

  const std::vector<NamedSubset> subsets{{"all", {"a", "b"}}};
  CHECK(report_lengths(c, subsets, 25) ==
        "subset,statistic,bin_start,bin_end,value\n"
        "all,count,0,25,1\n"
        "all,count,25,50,1\n"
        "all,mean,,,20\n"
        "all,median,,,20\n");
}

TEST_CASE("category shares fold small categories into other") {
  std::string text;
  const char* cats[] = {"a", "a", "b", "a", "a", "b", "a", "a", "b", "c"};
  for (int i = 0; i < 10; ++i) {
    text += "{\"id\":\"s" + std::to_string(i) + "\",\"problem\":\"p\",\"solution\":\"s\",\"category\":\"" +
            cats[i] + "\"}\n";
  }
  const Corpus c = parse(text);
  const std::vector<NamedSubset> three{{"x", {"s0", "s1", "s2"}}};
  CHECK(report_categories(c, three) ==
        "subset,category,count,share\n"
        "x,a,2,0.6666666666666666\n"
        "x,b,1,0.3333333333333333\n");
  std::vector<NamedSubset> all{{"all", {}}};
  for (int i = 0; i < 10; ++i) all[0].ids.push_back("s" + std::to_string(i));
  CHECK(report_categories(c, all, 0.15) ==
        "subset,category,count,share\n"
        "all,a,6,0.6\n"
        "all,b,3,0.3\n"
        "all,other,1,0.1\n");
  CHECK_THROWS_AS(report_categories(c, all, 1.5), InvalidArgument);
}

TEST_CASE("synthetic corpora are deterministic and labelled") {
  SyntheticSpec spec;
  spec.concentrated = 7;
  spec.diffuse = 5;
  const auto a = make_synthetic_corpus(spec, 3);
  const auto b = make_synthetic_corpus(spec, 3);
  REQUIRE(a.samples.size() == 12);
  std::size_t concentrated = 0;
  std::set<std::string> ids;
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    CHECK(a.samples[i].problem == b.samples[i].problem);
    ids.insert(a.samples[i].id);
    const bool marked = a.samples[i].problem.find_first_of(spec.markers) != std::string::npos ||
                        a.samples[i].solution.find_first_of(spec.markers) != std::string::npos;
    if (a.classes[i] == "concentrated") {
      ++concentrated;
      CHECK(marked);
    } else {
      CHECK(!marked);
    }
  }
  CHECK(concentrated == 7);
  CHECK(ids.size() == 12);
  CHECK(make_synthetic_corpus(spec, 4).samples[0].problem != a.samples[0].problem);

  TempDir dir("synth");
  write_synthetic(a, dir.file("c.jsonl"), dir.file("t.jsonl"));
  const Corpus back = ingest(dir.file("c.jsonl"));
  CHECK(back.samples.size() == 12);
  const auto truth = read_truth(dir.file("t.jsonl"));
  REQUIRE(truth.size() == 12);
  CHECK(truth[0].first == a.samples[0].id);
  CHECK(truth[0].second == a.classes[0]);

  spec.concentrated = 0;
  spec.diffuse = 0;
  CHECK_THROWS_AS(make_synthetic_corpus(spec, 0), InvalidArgument);
}
