#include <doctest.h>

#include <algorithm>
#include <map>
#include <nlohmann/json.hpp>

#include "headscope/errors.h"
#include "headscope/head_detector.h"
#include "headscope/log.h"
#include "headscope/planted.h"
#include "headscope/rng.h"
#include "headscope/synth.h"
#include "naive_model.h"

using namespace headscope;
using headscope::testing::CountingModel;
using headscope::testing::TempDir;

namespace {

// Loss looked up by the first problem byte; attention is irrelevant here.
class FixedLossModel final : public ReferenceModel {
 public:
  explicit FixedLossModel(std::map<Token, double> losses) : losses_(std::move(losses)) {
    config_.vocab_size = 257;
  }
  const ModelConfig& config() const override { return config_; }
  std::string fingerprint() const override { return "fixed"; }
  ForwardResult forward(const TokenSequence& seq, std::span<const HeadId>,
                        std::span<const HeadId>, LossRegion) const override {
    ForwardResult r;
    r.loss = losses_.at(seq.tokens.front());
    r.token_count = seq.size();
    r.loss_positions = 1;
    return r;
  }

 private:
  ModelConfig config_;
  std::map<Token, double> losses_;
};

Sample sample(std::string id, std::string problem, std::string solution) {
  Sample s;
  s.id = std::move(id);
  s.problem = std::move(problem);
  s.solution = std::move(solution);
  return s;
}

HeadImportanceReport grid_report(int layers, int heads, const std::vector<double>& deltas) {
  HeadImportanceReport r;
  r.num_layers = layers;
  r.heads_per_layer = heads;
  r.model_fingerprint = "m";
  r.probe_fingerprint = "p";
  for (int l = 0; l < layers; ++l) {
    for (int h = 0; h < heads; ++h) {
      const double d = deltas[static_cast<std::size_t>(l * heads + h)];
      r.records.push_back({{l, h}, d, 1.0, 1.0 + d});
    }
  }
  return r;
}

ProbeSet probe_from(const ReferenceModel& model, const std::vector<Sample>& samples,
                    std::size_t size) {
  return build_probe(model, ByteTokenizer(), samples, size);
}

}  // namespace

TEST_CASE("probe keeps the highest-loss samples, ties broken by id") {
  const FixedLossModel model({{'a', 2.0}, {'b', 5.0}, {'c', 5.0}, {'d', 1.0}});
  const std::vector<Sample> samples{sample("s3", "c", "x"), sample("s1", "a", "x"),
                                    sample("s2", "b", "x"), sample("s4", "d", "x")};
  const ProbeSet probe = probe_from(model, samples, 3);
  REQUIRE(probe.size() == 3);
  CHECK(probe.entries[0].sample_id == "s2");
  CHECK(probe.entries[1].sample_id == "s3");
  CHECK(probe.entries[2].sample_id == "s1");
  CHECK(probe.construction == "top-loss");

  std::vector<Sample> reversed(samples.rbegin(), samples.rend());
  CHECK(probe_from(model, reversed, 3).fingerprint() == probe.fingerprint());
}

TEST_CASE("probe size larger than the dataset uses everything with a warning") {
  const FixedLossModel model({{'a', 2.0}, {'b', 3.0}});
  const std::vector<Sample> samples{sample("x", "a", "s"), sample("y", "b", "s")};
  log::WarningCapture warnings;
  CHECK(probe_from(model, samples, 300).size() == 2);
  CHECK(warnings.contains("exceeds dataset size"));
  CHECK_THROWS_AS(probe_from(model, samples, 0), InvalidArgument);
  CHECK_THROWS_AS(probe_from(model, {}, 5), InvalidArgument);
  CHECK_THROWS_AS(ProbeSet::explicit_list({}), InvalidArgument);
}

TEST_CASE("single-token probe sequences give zero importance for every head") {
  ModelConfig cfg;
  cfg.vocab_size = 16;
  cfg.max_seq_len = 8;
  const Transformer model = Transformer::random(cfg);
  std::vector<ProbeEntry> entries;
  for (Token t = 0; t < 5; ++t) entries.push_back({"s" + std::to_string(t), {{t}, 0}, 0.0});
  const HeadImportanceReport report = head_importance(model, ProbeSet::explicit_list(entries));
  REQUIRE(report.records.size() == 8);
  for (const auto& r : report.records) CHECK(r.delta_loss == 0.0);
}

TEST_CASE("planted head has strictly the largest importance") {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    ModelConfig cfg;
    cfg.seed = seed;
    const HeadId planted = planted_head_for_seed(cfg);
    const Transformer model = make_planted_model({cfg, planted, default_byte_markers()});
    SyntheticSpec spec;
    spec.concentrated = 12;
    spec.diffuse = 0;
    const SyntheticCorpus corpus = make_synthetic_corpus(spec, seed);
    const HeadImportanceReport report =
        head_importance(model, probe_from(model, corpus.samples, 6));
    for (const auto& r : report.records) {
      if (r.head == planted) {
        CHECK(r.delta_loss > 0.1);
      } else {
        // Every other head writes nothing to the residual stream.
        CHECK(r.delta_loss == 0.0);
      }
    }
    CHECK(select_heads(report, HeadCount::top(1)).ids() == std::vector<HeadId>{planted});
  }
}

TEST_CASE("duplicating the probe leaves importance unchanged") {
  ModelConfig cfg;
  cfg.vocab_size = 16;
  cfg.max_seq_len = 16;
  cfg.seed = 4;
  const Transformer model = Transformer::random(cfg);
  Rng rng(2);
  std::vector<ProbeEntry> entries;
  for (int i = 0; i < 6; ++i) {
    std::vector<Token> toks(3 + rng.below(10));
    for (auto& t : toks) t = static_cast<Token>(rng.below(16));
    entries.push_back({"s" + std::to_string(i), {toks, toks.size() / 2}, 0.0});
  }
  std::vector<ProbeEntry> doubled = entries;
  doubled.insert(doubled.end(), entries.begin(), entries.end());
  const auto once = head_importance(model, ProbeSet::explicit_list(entries));
  const auto twice = head_importance(model, ProbeSet::explicit_list(doubled));
  for (std::size_t i = 0; i < once.records.size(); ++i) {
    CHECK(std::abs(once.records[i].delta_loss - twice.records[i].delta_loss) <= 1e-12);
  }
}

TEST_CASE("importance costs (heads + 1) x probe forward passes") {
  ModelConfig cfg;
  cfg.vocab_size = 16;
  cfg.max_seq_len = 16;
  const Transformer model = Transformer::random(cfg);
  CountingModel counting(model);
  std::vector<ProbeEntry> entries;
  for (int i = 0; i < 5; ++i) entries.push_back({"s" + std::to_string(i), {{1, 2, 3, 4}, 2}, 0.0});
  for (int workers : {1, 4}) {
    counting.reset();
    head_importance(counting, ProbeSet::explicit_list(entries), {workers});
    CHECK(counting.calls() == (8 + 1) * 5);
  }
}

TEST_CASE("importance does not depend on the worker count") {
  ModelConfig cfg;
  cfg.vocab_size = 16;
  cfg.max_seq_len = 16;
  cfg.seed = 12;
  const Transformer model = Transformer::random(cfg);
  std::vector<ProbeEntry> entries;
  for (int i = 0; i < 7; ++i) {
    entries.push_back({"s" + std::to_string(i), {{1, 5, 3, 9, Token(i)}, 2}, 0.0});
  }
  const auto probe = ProbeSet::explicit_list(entries);
  const auto a = head_importance(model, probe, {1});
  const auto b = head_importance(model, probe, {8});
  CHECK(heatmap_csv(a) == heatmap_csv(b));
}

TEST_CASE("head count resolution") {
  CHECK(HeadCount::share(0.05).resolve(448) == 22);
  CHECK(HeadCount::share(0.05).resolve(8) == 1);
  CHECK(HeadCount::share(1.0).resolve(8) == 8);
  CHECK(HeadCount::top(3).resolve(8) == 3);
  CHECK_THROWS_AS(HeadCount::top(0).resolve(8), InvalidArgument);
  CHECK_THROWS_AS(HeadCount::top(9).resolve(8), InvalidArgument);
  CHECK_THROWS_AS(HeadCount::share(0.0).resolve(8), InvalidArgument);
  CHECK_THROWS_AS(HeadCount::share(1.5).resolve(8), InvalidArgument);
  CHECK_THROWS_AS(HeadCount{}.resolve(8), InvalidArgument);
}

TEST_CASE("select_heads ranks by delta with ties going to the smaller head") {
  std::vector<double> deltas(448);
  Rng rng(3);
  for (double& d : deltas) d = rng.uniform();
  const auto big = select_heads(grid_report(28, 16, deltas), HeadCount::share(0.05));
  CHECK(big.k == 22);
  CHECK(big.heads.size() == 22);
  for (std::size_t i = 1; i < big.heads.size(); ++i) {
    CHECK(big.heads[i - 1].delta_loss >= big.heads[i].delta_loss);
  }

  const auto tied = select_heads(grid_report(2, 2, {0.5, 0.7, 0.7, 0.1}), HeadCount::top(3));
  CHECK(tied.ids() == std::vector<HeadId>{{0, 1}, {1, 0}, {0, 0}});
  CHECK(tied.fraction == doctest::Approx(0.75));
}

TEST_CASE("incomplete reports are rejected") {
  HeadImportanceReport r = grid_report(2, 2, {1, 2, 3, 4});
  r.records.pop_back();
  CHECK_THROWS_AS(r.check_complete(), CompletenessError);
  CHECK_THROWS_AS(heatmap_csv(r), CompletenessError);
  r = grid_report(2, 2, {1, 2, 3, 4});
  r.records[3].head = {0, 0};
  CHECK_THROWS_AS(select_heads(r, HeadCount::top(1)), CompletenessError);
  r.records[3].head = {5, 0};
  CHECK_THROWS_AS(r.check_complete(), CompletenessError);
}

TEST_CASE("heatmap CSV layout") {
  const auto r = grid_report(2, 3, {0.5, 0, -0.25, 1, 0.125, 2e-17});
  CHECK(heatmap_csv(r) == "layer,0,1,2\n0,0.5,0,-0.25\n1,1,0.125,2e-17\n");
}

TEST_CASE("sidecar records fingerprints and round-trips the selected heads") {
  const auto r = grid_report(2, 2, {0.5, 0.7, 0.2, 0.1});
  const auto sel = select_heads(r, HeadCount::top(2));
  const auto doc = nlohmann::json::parse(heatmap_sidecar(r, &sel, {{"extra", "x"}}));
  CHECK(doc["model_fingerprint"] == "m");
  CHECK(doc["probe_fingerprint"] == "p");
  CHECK(doc["k"] == 2);
  CHECK(doc["extra"] == "x");
  CHECK(doc["heads"][0][0] == 0);
  CHECK(doc["heads"][0][1] == 1);

  TempDir dir("sidecar");
  export_heatmap(r, &sel, dir.file("h.csv"), dir.file("h.json"));
  CHECK(read_sidecar_heads(dir.file("h.json")) == std::vector<HeadId>{{0, 1}, {0, 0}});
  CHECK_THROWS_AS(read_sidecar_heads(dir.file("missing.json")), IoError);
  headscope::testing::write_file(dir.file("bad.json"), "{\"heads\": 3}");
  CHECK_THROWS_AS(read_sidecar_heads(dir.file("bad.json")), FormatError);
}
