#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "headscope/errors.h"
#include "headscope/head_detector.h"
#include "headscope/pipeline.h"
#include "headscope/planted.h"
#include "headscope/scorer.h"
#include "headscope/selector.h"
#include "headscope/synth.h"

namespace py = pybind11;
using namespace headscope;

namespace {

py::array_t<double> to_array(const AttentionMatrix& m) {
  const auto n = static_cast<py::ssize_t>(m.size());
  py::array_t<double> out({n, n});
  std::copy(m.values().begin(), m.values().end(), out.mutable_data());
  return out;
}

std::vector<HeadId> to_heads(const std::vector<std::pair<int, int>>& pairs) {
  std::vector<HeadId> out;
  for (const auto& [l, h] : pairs) out.push_back({l, h});
  return out;
}

LossRegion parse_region(const std::string& name) {
  if (name == "full") return LossRegion::full;
  if (name == "problem") return LossRegion::problem;
  if (name == "solution") return LossRegion::solution;
  throw InvalidArgument("region must be full, problem or solution");
}

HeadCount head_count(std::optional<int> k, std::optional<double> fraction) {
  if (k && fraction) throw InvalidArgument("give k or fraction, not both");
  if (k) return HeadCount::top(*k);
  return HeadCount::share(fraction.value_or(0.05));
}

py::dict score_to_dict(const ScoreRecord& r) {
  py::dict d;
  d["sample_id"] = r.sample_id;
  d["score"] = r.score;
  d["token_count"] = r.token_count;
  d["degenerate"] = r.degenerate;
  d["skip_reason"] = r.skip_reason ? py::cast(*r.skip_reason) : py::none();
  d["alpha_mean"] = r.alpha.mean;
  d["alpha_min"] = r.alpha.min;
  d["alpha_max"] = r.alpha.max;
  return d;
}

std::vector<Sample> to_samples(const py::object& source) {
  if (py::isinstance<Corpus>(source)) return source.cast<const Corpus&>().samples;
  return source.cast<std::vector<Sample>>();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "headscope core bindings";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<InvalidArgument>(m, "InvalidArgument", base.ptr());
  py::register_exception<FormatError>(m, "FormatError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());
  // Subclasses after their bases: later translators are tried first.
  auto consistency = py::register_exception<ConsistencyError>(m, "ConsistencyError", base.ptr());
  py::register_exception<StaleArtifactError>(m, "StaleArtifactError", consistency.ptr());

  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def(py::init([](int layers, int heads, int dim, int head_dim, int vocab, int max_len,
                       std::uint64_t seed) {
             ModelConfig c{layers, heads, dim, head_dim, vocab, max_len, seed};
             c.validate();
             return c;
           }),
           py::arg("num_layers") = 2, py::arg("heads_per_layer") = 4,
           py::arg("model_dim") = 32, py::arg("head_dim") = 8, py::arg("vocab_size") = 257,
           py::arg("max_seq_len") = 256, py::arg("seed") = 0)
      .def_readwrite("num_layers", &ModelConfig::num_layers)
      .def_readwrite("heads_per_layer", &ModelConfig::heads_per_layer)
      .def_readwrite("model_dim", &ModelConfig::model_dim)
      .def_readwrite("head_dim", &ModelConfig::head_dim)
      .def_readwrite("vocab_size", &ModelConfig::vocab_size)
      .def_readwrite("max_seq_len", &ModelConfig::max_seq_len)
      .def_readwrite("seed", &ModelConfig::seed)
      .def("total_heads", &ModelConfig::total_heads);

  py::class_<Transformer>(m, "Transformer")
      .def_static("random", &Transformer::random, py::arg("config"))
      .def_static(
          "planted",
          [](const ModelConfig& config, std::optional<std::pair<int, int>> head,
             std::optional<std::vector<Token>> markers) {
            PlantedSpec spec;
            spec.config = config;
            spec.head = head ? HeadId{head->first, head->second} : planted_head_for_seed(config);
            spec.markers = markers ? *markers : default_byte_markers();
            return make_planted_model(spec);
          },
          py::arg("config"), py::arg("head") = py::none(), py::arg("markers") = py::none())
      .def_property_readonly("config", &Transformer::config)
      .def_property_readonly("fingerprint", &Transformer::fingerprint)
      .def(
          "forward",
          [](const Transformer& model, const std::vector<Token>& tokens, std::size_t boundary,
             const std::vector<std::pair<int, int>>& ablated,
             const std::vector<std::pair<int, int>>& capture, const std::string& region) {
            const TokenSequence seq{tokens, boundary};
            const auto abl = to_heads(ablated);
            const auto cap = to_heads(capture);
            ForwardResult r;
            {
              py::gil_scoped_release release;
              r = model.forward(seq, abl, cap, parse_region(region));
            }
            py::dict attentions;
            for (const auto& a : r.attentions) {
              attentions[py::make_tuple(a.head.layer, a.head.head)] = to_array(a.matrix);
            }
            py::dict out;
            out["loss"] = r.loss;
            out["loss_positions"] = r.loss_positions;
            out["attentions"] = attentions;
            return out;
          },
          py::arg("tokens"), py::arg("boundary"), py::arg("ablated") = std::vector<std::pair<int, int>>{},
          py::arg("capture") = std::vector<std::pair<int, int>>{}, py::arg("region") = "full");

  m.def("planted_head_for_seed", [](const ModelConfig& c) {
    const HeadId h = planted_head_for_seed(c);
    return std::pair{h.layer, h.head};
  });

  m.def("build_undiff_matrix", [](std::size_t n) { return to_array(build_undiff_matrix(n)); },
        py::arg("n"));

  m.def("encode", [](const std::string& text) { return ByteTokenizer().encode(text); });

  m.def(
      "variance_score",
      [](const std::vector<double>& alpha) { return variance_score(alpha); }, py::arg("alpha"));

  m.def(
      "incoming_attention",
      [](const std::vector<py::array_t<double, py::array::c_style | py::array::forcecast>>& mats) {
        std::vector<AttentionTensor> tensors;
        for (const auto& a : mats) {
          if (a.ndim() != 2 || a.shape(0) != a.shape(1)) {
            throw InvalidArgument("attention matrices must be square");
          }
          tensors.push_back({HeadId{}, AttentionMatrix(static_cast<std::size_t>(a.shape(0)),
                                                       std::vector<double>(a.data(), a.data() + a.size()))});
        }
        return incoming_attention(tensors);
      },
      py::arg("attentions"));

  py::class_<Sample>(m, "Sample")
      .def(py::init([](std::string id, std::string problem, std::string solution,
                       std::optional<std::string> category) {
             Sample s;
             s.id = std::move(id);
             s.problem = std::move(problem);
             s.solution = std::move(solution);
             s.category = std::move(category);
             s.length_words = count_words(s.problem) + count_words(s.solution);
             return s;
           }),
           py::arg("id"), py::arg("problem"), py::arg("solution"),
           py::arg("category") = py::none())
      .def_readonly("id", &Sample::id)
      .def_readonly("problem", &Sample::problem)
      .def_readonly("solution", &Sample::solution)
      .def_readonly("category", &Sample::category)
      .def_readonly("length_words", &Sample::length_words);

  py::class_<Corpus>(m, "Corpus")
      .def_readonly("samples", &Corpus::samples)
      .def_readonly("duplicates", &Corpus::duplicates)
      .def_readonly("fingerprint", &Corpus::fingerprint)
      .def_property_readonly("rejected", [](const Corpus& c) { return c.rejected.size(); })
      .def("__len__", [](const Corpus& c) { return c.samples.size(); });

  m.def("ingest", &ingest, py::arg("path"));

  m.def(
      "detect_heads",
      [](const Transformer& model, const py::object& samples, std::size_t probe_size,
         std::optional<int> k, std::optional<double> fraction, int workers) {
        const std::vector<Sample> list = to_samples(samples);
        ByteTokenizer tok;
        HeadImportanceReport report;
        ReasoningHeadSet selected;
        {
          py::gil_scoped_release release;
          const ProbeSet probe = build_probe(model, tok, list, probe_size, {workers});
          report = head_importance(model, probe, {workers});
          selected = select_heads(report, head_count(k, fraction));
        }
        const ModelConfig& c = model.config();
        py::array_t<double> grid({c.num_layers, c.heads_per_layer});
        auto g = grid.mutable_unchecked<2>();
        for (const auto& r : report.records) g(r.head.layer, r.head.head) = r.delta_loss;
        py::list heads;
        for (const auto& h : selected.heads) heads.append(py::make_tuple(h.head.layer, h.head.head));
        py::dict out;
        out["heads"] = heads;
        out["delta_loss"] = grid;
        out["baseline_loss"] = report.records.front().baseline_loss;
        out["heatmap_csv"] = heatmap_csv(report);
        return out;
      },
      py::arg("model"), py::arg("samples"), py::arg("probe_size") = 300,
      py::arg("k") = py::none(), py::arg("fraction") = py::none(), py::arg("workers") = 1);

  m.def(
      "score_samples",
      [](const Transformer& model, const py::object& samples,
         const std::vector<std::pair<int, int>>& heads, const std::string& mode,
         std::size_t max_tokens, int workers) {
        Corpus corpus;
        if (py::isinstance<Corpus>(samples)) {
          corpus = samples.cast<const Corpus&>();
        } else {
          corpus.samples = samples.cast<std::vector<Sample>>();
          corpus.reindex();
        }
        ScoringConfig config{to_heads(heads), parse_scoring_mode(mode), max_tokens,
                             model.fingerprint()};
        std::vector<ScoreRecord> records;
        {
          py::gil_scoped_release release;
          records = score_corpus(model, ByteTokenizer(), corpus, config, {workers});
        }
        py::list out;
        for (const auto& r : records) out.append(score_to_dict(r));
        return out;
      },
      py::arg("model"), py::arg("samples"), py::arg("heads"), py::arg("mode") = "input-only",
      py::arg("max_tokens") = 256, py::arg("workers") = 1);

  m.def(
      "soft_sample",
      [](const std::vector<std::string>& ids, const std::vector<double>& weights, std::size_t m,
         std::uint64_t seed) {
        std::vector<std::string> out;
        for (const auto& s : soft_sample(ids, weights, m, seed)) out.push_back(s.sample_id);
        return out;
      },
      py::arg("ids"), py::arg("weights"), py::arg("m"), py::arg("seed"));

  m.def(
      "synthetic_corpus",
      [](std::size_t concentrated, std::size_t diffuse, std::uint64_t seed) {
        SyntheticSpec spec;
        spec.concentrated = concentrated;
        spec.diffuse = diffuse;
        SyntheticCorpus c = make_synthetic_corpus(spec, seed);
        return std::pair{c.samples, c.classes};
      },
      py::arg("concentrated") = 100, py::arg("diffuse") = 100, py::arg("seed") = 0);

  m.def(
      "write_synthetic",
      [](std::size_t concentrated, std::size_t diffuse, std::uint64_t seed,
         const std::string& corpus_path, const std::string& truth_path) {
        SyntheticSpec spec;
        spec.concentrated = concentrated;
        spec.diffuse = diffuse;
        write_synthetic(make_synthetic_corpus(spec, seed), corpus_path, truth_path);
      },
      py::arg("concentrated"), py::arg("diffuse"), py::arg("seed"), py::arg("corpus_path"),
      py::arg("truth_path"));

  m.def(
      "run_pipeline",
      [](const std::string& corpus_path, const std::string& out_dir, const std::string& model,
         std::uint64_t model_seed, const std::string& strategy, double ratio,
         std::uint64_t seed, std::size_t probe_size, int workers, bool force) {
        PipelineConfig c;
        c.corpus_path = corpus_path;
        c.out_dir = out_dir;
        c.model_source = parse_model_source(model);
        c.model.seed = model_seed;
        c.plan.strategy = parse_strategy(strategy);
        c.plan.budget = Budget::of_ratio(ratio);
        c.plan.seed = seed;
        c.probe_size = probe_size;
        c.workers = workers;
        c.force = force;
        PipelineResult r;
        {
          py::gil_scoped_release release;
          r = run_pipeline(c);
        }
        py::list heads;
        for (const auto& h : r.detect.heads) heads.append(py::make_tuple(h.layer, h.head));
        py::dict out;
        out["heads"] = heads;
        out["selected"] = r.manifest.ids();
        out["pool_size"] = r.manifest.pool_size;
        out["detect_reused"] = r.detect.reused;
        out["scores_reused"] = r.scores.reused;
        out["heatmap_csv"] = r.paths.heatmap_csv;
        out["scores"] = r.paths.scores;
        out["manifest"] = r.paths.subset;
        return out;
      },
      py::arg("corpus_path"), py::arg("out_dir"), py::arg("model") = "random",
      py::arg("model_seed") = 0, py::arg("strategy") = "soft", py::arg("ratio") = 0.1,
      py::arg("seed") = 0, py::arg("probe_size") = 300, py::arg("workers") = 1,
      py::arg("force") = false);
}
