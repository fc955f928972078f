#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "headscope/errors.h"
#include "headscope/head_detector.h"
#include "headscope/log.h"
#include "headscope/rng.h"
#include "headscope/selector.h"
#include "naive_model.h"

using namespace headscope;
using headscope::testing::TempDir;

namespace {

std::vector<ScoreRecord> records(const std::vector<std::pair<std::string, double>>& scores) {
  std::vector<ScoreRecord> out;
  for (const auto& [id, s] : scores) {
    ScoreRecord r;
    r.sample_id = id;
    r.score = s;
    r.token_count = 4;
    out.push_back(r);
  }
  return out;
}

std::vector<std::string> ids_of(const std::vector<Selection>& sel) {
  std::vector<std::string> out;
  for (const auto& s : sel) out.push_back(s.sample_id);
  return out;
}

std::vector<Sample> toy_samples(std::size_t count, std::uint64_t seed) {
  Rng rng(seed);
  const char* words[] = {"add", "the", "sum", "of", "two", "primes", "is", "even", "odd"};
  std::vector<Sample> out;
  for (std::size_t i = 0; i < count; ++i) {
    Sample s;
    s.id = "t" + std::to_string(100 + i);
    for (std::size_t w = 0; w < 2 + rng.below(5); ++w) s.problem += std::string(words[rng.below(9)]) + " ";
    for (std::size_t w = 0; w < 1 + rng.below(4); ++w) s.solution += std::string(words[rng.below(9)]) + " ";
    s.line = i + 1;
    out.push_back(s);
  }
  return out;
}

ModelConfig toy_config() {
  ModelConfig c;
  c.seed = 77;
  c.max_seq_len = 96;
  return c;
}

}  // namespace

TEST_CASE("normalize_scores divides by the total") {
  const auto p = normalize_scores(records({{"a", 1.0}, {"b", 3.0}}));
  CHECK(p == std::vector<double>{0.25, 0.75});
  const auto q = normalize_scores(records({{"a", 0.0}, {"b", 2.0}}));
  CHECK(q == std::vector<double>{0.0, 1.0});
  CHECK_THROWS_AS(normalize_scores(records({{"a", 0.0}, {"b", 0.0}})), InvalidDistributionError);
  CHECK_THROWS_AS(normalize_scores(records({{"a", -1.0}})), InvalidDistributionError);
}

TEST_CASE("soft sampling reproduces sequential draws without replacement") {
  const std::vector<std::string> ids{"a", "b", "c", "d"};
  const std::vector<double> w{1, 2, 3, 4};
  const double total = 10.0;
  std::map<std::pair<std::string, std::string>, double> expected;
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      if (i != j) expected[{ids[i], ids[j]}] = w[i] / total * w[j] / (total - w[i]);
    }
  }
  const int draws = 20000;
  std::map<std::pair<std::string, std::string>, int> seen;
  for (int s = 0; s < draws; ++s) {
    const auto sel = soft_sample(ids, w, 2, static_cast<std::uint64_t>(s));
    ++seen[{sel[0].sample_id, sel[1].sample_id}];
  }
  for (const auto& [pair, p] : expected) {
    CHECK(std::abs(seen[pair] / static_cast<double>(draws) - p) < 0.015);
  }
}

TEST_CASE("soft sampling inclusion grows with weight") {
  const std::vector<std::string> ids{"a", "b", "c", "d", "e"};
  const std::vector<double> w{1, 2, 4, 8, 16};
  std::map<std::string, int> hits;
  for (int s = 0; s < 5000; ++s) {
    for (const auto& sel : soft_sample(ids, w, 2, static_cast<std::uint64_t>(s))) ++hits[sel.sample_id];
  }
  for (std::size_t i = 1; i < ids.size(); ++i) CHECK(hits[ids[i]] > hits[ids[i - 1]]);
}

TEST_CASE("soft sampling ignores the scale of the weights") {
  Rng rng(3);
  std::vector<std::string> ids;
  std::vector<double> w, scaled;
  for (int i = 0; i < 30; ++i) {
    ids.push_back("s" + std::to_string(i));
    w.push_back(rng.uniform());
    scaled.push_back(w.back() * 1000.0);
  }
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    CHECK(ids_of(soft_sample(ids, w, 7, seed)) == ids_of(soft_sample(ids, scaled, 7, seed)));
  }
}

TEST_CASE("soft sampling never draws zero-weight records") {
  const std::vector<std::string> ids{"a", "b", "c"};
  const std::vector<double> w{0.0, 1.0, 2.0};
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto picked = ids_of(soft_sample(ids, w, 2, seed));
    CHECK(std::find(picked.begin(), picked.end(), "a") == picked.end());
  }
  CHECK_THROWS_AS(soft_sample(ids, w, 3, 0), InvalidArgument);
  CHECK_THROWS_AS(soft_sample(ids, std::vector<double>{1.0, -1.0, 1.0}, 1, 0), InvalidArgument);
}

TEST_CASE("soft sampling records draw-time weights") {
  const std::vector<std::string> ids{"a", "b"};
  const auto sel = soft_sample(ids, std::vector<double>{0.25, 0.75}, 2, 9);
  REQUIRE(sel.size() == 2);
  CHECK(sel[1].weight == doctest::Approx(1.0));
  CHECK(sel[0].rank == 0);
  CHECK(sel[1].rank == 1);
}

TEST_CASE("top-k and low-score rank by score with id tie-breaks") {
  const auto recs = records({{"d", 0.5}, {"a", 0.9}, {"c", 0.5}, {"b", 0.1}});
  CHECK(ids_of(top_k_select(recs, 3)) == std::vector<std::string>{"a", "c", "d"});
  CHECK(ids_of(low_score_select(recs, 3)) == std::vector<std::string>{"b", "c", "d"});
  CHECK_THROWS_AS(top_k_select(recs, 5), InvalidArgument);
}

TEST_CASE("random selection is uniform without replacement") {
  std::vector<std::string> ids;
  for (int i = 0; i < 10; ++i) ids.push_back("s" + std::to_string(i));
  std::map<std::string, int> hits;
  for (std::uint64_t seed = 0; seed < 4000; ++seed) {
    const auto sel = ids_of(random_select(ids, 3, seed));
    CHECK(std::set<std::string>(sel.begin(), sel.end()).size() == 3);
    for (const auto& id : sel) ++hits[id];
  }
  for (const auto& id : ids) CHECK(std::abs(hits[id] / 4000.0 - 0.3) < 0.04);
  CHECK(ids_of(random_select(ids, 4, 5)) == ids_of(random_select(ids, 4, 5)));
}

TEST_CASE("budget resolution") {
  CHECK(Budget::of_ratio(0.1).resolve(200) == 20);
  CHECK(Budget::of_ratio(1.0).resolve(37) == 37);
  CHECK(Budget::of_ratio(0.15).resolve(10) == 1);
  CHECK(Budget::of_count(5).resolve(5) == 5);
  CHECK_THROWS_AS(Budget::of_ratio(0.001).resolve(200), InvalidArgument);
  CHECK_THROWS_AS(Budget::of_ratio(0.0).resolve(200), InvalidArgument);
  CHECK_THROWS_AS(Budget::of_ratio(1.5).resolve(200), InvalidArgument);
  CHECK_THROWS_AS(Budget::of_count(6).resolve(5), InvalidArgument);
  CHECK_THROWS_AS(Budget::of_count(0).resolve(5), InvalidArgument);
}

TEST_CASE("eligibility drops skipped and, by default, degenerate records") {
  auto recs = records({{"a", 0.5}, {"b", 0.0}, {"c", 0.2}});
  recs[1].degenerate = true;
  recs[2].skip_reason = "empty problem text";
  CHECK(eligible_records(recs, false).size() == 1);
  CHECK(eligible_records(recs, true).size() == 2);
}

TEST_CASE("max-loss selection equals the probe of the same size") {
  const Transformer model = Transformer::random(toy_config());
  const auto samples = toy_samples(20, 1);
  const ByteTokenizer tok;
  for (std::size_t m : {1, 5, 12}) {
    auto picked = ids_of(max_loss_select(model, tok, samples, m));
    std::vector<std::string> probe;
    for (const auto& e : build_probe(model, tok, samples, m).entries) probe.push_back(e.sample_id);
    CHECK(picked == probe);
  }
}

TEST_CASE("IFD ranking matches an independent recomputation") {
  const ModelConfig cfg = toy_config();
  const Transformer model = Transformer::random(cfg);
  const auto samples = toy_samples(20, 2);
  const ByteTokenizer tok;

  std::vector<std::pair<double, std::string>> expected;
  for (const auto& s : samples) {
    std::vector<Token> joint = tok.encode(s.problem);
    const std::size_t boundary = joint.size();
    const std::vector<Token> sol = tok.encode(s.solution);
    joint.insert(joint.end(), sol.begin(), sol.end());
    const double conditioned = headscope::testing::naive_forward(
        cfg, model.weights(), joint, boundary, {}, LossRegion::solution).loss;
    const double alone = headscope::testing::naive_forward(
        cfg, model.weights(), sol, 0, {}, LossRegion::solution).loss;
    expected.push_back({-(conditioned / alone), s.id});
  }
  std::sort(expected.begin(), expected.end());
  std::vector<std::string> want;
  for (const auto& e : expected) want.push_back(e.second);

  CHECK(ids_of(ifd_select(model, tok, samples, samples.size())) == want);
  const auto scores = ifd_scores(model, tok, samples);
  for (const auto& s : scores) CHECK(s.has_value());
}

TEST_CASE("IFD skips samples without a solution") {
  const Transformer model = Transformer::random(toy_config());
  auto samples = toy_samples(3, 4);
  samples[1].solution.clear();
  log::WarningCapture warnings;
  const auto scores = ifd_scores(model, ByteTokenizer(), samples);
  CHECK(!scores[1].has_value());
  CHECK(warnings.contains("empty solution"));
  CHECK_THROWS_AS(ifd_select(model, ByteTokenizer(), samples, 3), InvalidArgument);
}

TEST_CASE("diversity splits evenly and hands the shortfall round-robin") {
  std::vector<Sample> samples;
  auto add = [&](const std::string& id, const char* cat) {
    Sample s;
    s.id = id;
    s.category = cat;
    samples.push_back(s);
  };
  for (int i = 0; i < 5; ++i) add("a" + std::to_string(i), "alpha");
  add("b0", "beta");
  for (int i = 0; i < 4; ++i) add("c" + std::to_string(i), "gamma");
  const auto sel = diversity_select(samples, 6, 1);
  std::map<char, int> per;
  for (const auto& s : sel) ++per[s.sample_id[0]];
  CHECK(per['a'] == 3);
  CHECK(per['b'] == 1);
  CHECK(per['c'] == 2);
  CHECK(ids_of(diversity_select(samples, 6, 1)) == ids_of(sel));

  Sample unlabeled;
  unlabeled.id = "u";
  samples.push_back(unlabeled);
  log::WarningCapture warnings;
  diversity_select(samples, 4, 0);
  CHECK(warnings.contains("uncategorized"));
}

TEST_CASE("strategy names") {
  for (auto s : {Strategy::soft, Strategy::top_k, Strategy::low_score, Strategy::random,
                 Strategy::max_loss, Strategy::ifd, Strategy::diversity}) {
    CHECK(parse_strategy(to_string(s)) == s);
  }
  CHECK(parse_strategy("top_k") == Strategy::top_k);
  CHECK_THROWS_AS(parse_strategy("best"), InvalidArgument);
}

TEST_CASE("manifests round-trip and materialize in selection order") {
  TempDir dir("manifest");
  SubsetManifest m;
  m.plan.strategy = Strategy::top_k;
  m.plan.budget = Budget::of_count(2);
  m.plan.seed = 11;
  m.pool_size = 3;
  m.plan_fingerprint = m.plan.fingerprint();
  m.source_fingerprint = "src";
  m.upstream = {{"corpus", "c1"}, {"scores", "s1"}};
  m.items = {{"b", 0, 0.5}, {"a", 1, 0.25}};
  write_manifest(dir.file("m.jsonl"), m);
  const SubsetManifest back = read_manifest(dir.file("m.jsonl"));
  CHECK(back.ids() == m.ids());
  CHECK(back.upstream == m.upstream);
  CHECK(back.plan.seed == 11);
  CHECK(back.plan.budget.count == std::optional<std::size_t>(2));
  CHECK(manifest_jsonl(back) == manifest_jsonl(m));

  std::istringstream in(
      "{\"id\":\"a\",\"problem\":\"p1\",\"solution\":\"s1\"}\n"
      "{\"id\":\"b\",\"problem\":\"p2\",\"solution\":\"s2\",\"category\":\"x\"}\n");
  const Corpus corpus = parse_corpus(in);
  materialize(corpus, m, dir.file("sub.jsonl"));
  const std::string text = headscope::testing::read_file(dir.file("sub.jsonl"));
  CHECK(text.find("\"b\"") < text.find("\"a\""));

  m.items.push_back({"zzz", 2, 0.1});
  CHECK_THROWS_AS(materialize(corpus, m, dir.file("bad.jsonl")), ConsistencyError);
}
