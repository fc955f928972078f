#include "headscope/model.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <numbers>
#include <set>
#include <utility>

#include "headscope/errors.h"
#include "headscope/hash.h"
#include "headscope/rng.h"

namespace headscope {
namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kInitStd = 0.02;

std::vector<double> normal_vector(Rng& rng, std::size_t size, double stddev) {
  std::vector<double> out(size);
  for (double& v : out) v = rng.normal() * stddev;
  return out;
}

void layer_norm(std::span<const double> x, std::span<const double> gain,
                std::span<const double> bias, std::span<double> out) {
  const std::size_t d = x.size();
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(d);
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(d);
  const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
  for (std::size_t i = 0; i < d; ++i) {
    out[i] = (x[i] - mean) * inv * gain[i] + bias[i];
  }
}

// out[rows x cols] = in[rows x inner] * w[inner x cols]
void matmul(std::span<const double> in, std::span<const double> w,
            std::size_t rows, std::size_t inner, std::size_t cols,
            std::span<double> out) {
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double* dst = out.data() + r * cols;
    const double* src = in.data() + r * inner;
    for (std::size_t i = 0; i < inner; ++i) {
      const double a = src[i];
      const double* wrow = w.data() + i * cols;
      for (std::size_t c = 0; c < cols; ++c) dst[c] += a * wrow[c];
    }
  }
}

double gelu(double x) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2 / pi)
  return 0.5 * x * (1.0 + std::tanh(kC * (x + 0.044715 * x * x * x)));
}

void check_size(const std::vector<double>& v, std::size_t expected,
                const char* name) {
  if (v.size() != expected) {
    throw InvalidArgument(std::string("weight array ") + name + " has " +
                          std::to_string(v.size()) + " entries, expected " +
                          std::to_string(expected));
  }
}

}  // namespace

void ModelConfig::validate() const {
  if (num_layers < 1 || heads_per_layer < 1 || model_dim < 1 || head_dim < 1 ||
      max_seq_len < 1) {
    throw InvalidArgument("model dimensions must be positive");
  }
  if (vocab_size < 2) throw InvalidArgument("vocab_size must be at least 2");
  if (head_dim * heads_per_layer != model_dim) {
    throw InvalidArgument("head_dim * heads_per_layer must equal model_dim");
  }
}

std::string to_string(HeadId id) {
  return std::to_string(id.layer) + ":" + std::to_string(id.head);
}

std::vector<HeadId> parse_head_list(std::string_view text) {
  std::vector<HeadId> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find(',', pos);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view item = text.substr(pos, end - pos);
    const std::size_t colon = item.find(':');
    HeadId id;
    const auto parse_int = [&](std::string_view part, int& value) {
      auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), value);
      return ec == std::errc() && ptr == part.data() + part.size() && !part.empty();
    };
    if (colon == std::string_view::npos || !parse_int(item.substr(0, colon), id.layer) ||
        !parse_int(item.substr(colon + 1), id.head)) {
      throw InvalidArgument("malformed head '" + std::string(item) +
                            "' (expected layer:head)");
    }
    out.push_back(id);
    pos = end + 1;
  }
  return out;
}

void validate_heads(const ModelConfig& config, std::span<const HeadId> heads) {
  std::set<HeadId> seen;
  for (const HeadId& h : heads) {
    if (h.layer < 0 || h.layer >= config.num_layers || h.head < 0 ||
        h.head >= config.heads_per_layer) {
      throw InvalidArgument("head " + to_string(h) + " outside a " +
                            std::to_string(config.num_layers) + "x" +
                            std::to_string(config.heads_per_layer) + " model");
    }
    if (!seen.insert(h).second) {
      throw InvalidArgument("head " + to_string(h) + " listed twice");
    }
  }
}

std::vector<HeadId> all_heads(const ModelConfig& config) {
  std::vector<HeadId> out;
  out.reserve(static_cast<std::size_t>(config.total_heads()));
  for (int l = 0; l < config.num_layers; ++l) {
    for (int h = 0; h < config.heads_per_layer; ++h) out.push_back({l, h});
  }
  return out;
}

std::vector<std::size_t> loss_targets(const TokenSequence& seq,
                                      LossRegion region) {
  const std::size_t n = seq.size();
  const std::size_t b = seq.boundary;
  std::vector<std::size_t> out;
  for (std::size_t t = 1; t <= n; ++t) {
    const bool in_solution = b < n && t >= b;
    const bool take = region == LossRegion::full ||
                      (region == LossRegion::solution && in_solution) ||
                      (region == LossRegion::problem && !in_solution);
    if (take) out.push_back(t);
  }
  return out;
}

AttentionMatrix::AttentionMatrix(std::size_t n, std::vector<double> values)
    : n_(n), values_(std::move(values)) {
  if (values_.size() != n_ * n_) {
    throw InvalidArgument("attention matrix needs n*n values");
  }
}

bool AttentionMatrix::is_causal_row_stochastic(double tolerance) const {
  for (std::size_t i = 0; i < n_; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < n_; ++j) {
      const double v = (*this)(i, j);
      if (v < -tolerance) return false;
      if (j > i && std::abs(v) > tolerance) return false;
      sum += v;
    }
    if (std::abs(sum - 1.0) > tolerance) return false;
  }
  return true;
}

AttentionMatrix build_undiff_matrix(std::size_t n) {
  if (n == 0) throw InvalidArgument("undifferentiated matrix needs n >= 1");
  AttentionMatrix m(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double w = 1.0 / static_cast<double>(i + 1);
    for (std::size_t j = 0; j <= i; ++j) m(i, j) = w;
  }
  return m;
}

TransformerWeights TransformerWeights::random(const ModelConfig& config) {
  config.validate();
  const auto d = static_cast<std::size_t>(config.model_dim);
  const auto v = static_cast<std::size_t>(config.vocab_size);
  const auto t = static_cast<std::size_t>(config.max_seq_len);
  Rng rng(config.seed);

  TransformerWeights w;
  w.token_embedding = normal_vector(rng, v * d, kInitStd);
  w.position_embedding = normal_vector(rng, t * d, kInitStd);
  for (int l = 0; l < config.num_layers; ++l) {
    LayerWeights lw;
    lw.ln1_gain.assign(d, 1.0);
    lw.ln1_bias.assign(d, 0.0);
    lw.wq = normal_vector(rng, d * d, kInitStd);
    lw.wk = normal_vector(rng, d * d, kInitStd);
    lw.wv = normal_vector(rng, d * d, kInitStd);
    lw.wo = normal_vector(rng, d * d, kInitStd);
    lw.ln2_gain.assign(d, 1.0);
    lw.ln2_bias.assign(d, 0.0);
    lw.w_up = normal_vector(rng, d * 4 * d, kInitStd);
    lw.w_down = normal_vector(rng, 4 * d * d, kInitStd);
    w.layers.push_back(std::move(lw));
  }
  w.lnf_gain.assign(d, 1.0);
  w.lnf_bias.assign(d, 0.0);
  w.lm_head = normal_vector(rng, d * v, kInitStd);
  return w;
}

void TransformerWeights::check_shapes(const ModelConfig& config) const {
  const auto d = static_cast<std::size_t>(config.model_dim);
  const auto v = static_cast<std::size_t>(config.vocab_size);
  const auto t = static_cast<std::size_t>(config.max_seq_len);
  check_size(token_embedding, v * d, "token_embedding");
  check_size(position_embedding, t * d, "position_embedding");
  if (layers.size() != static_cast<std::size_t>(config.num_layers)) {
    throw InvalidArgument("weights carry " + std::to_string(layers.size()) +
                          " layers, config says " +
                          std::to_string(config.num_layers));
  }
  for (const auto& lw : layers) {
    check_size(lw.ln1_gain, d, "ln1_gain");
    check_size(lw.ln1_bias, d, "ln1_bias");
    check_size(lw.wq, d * d, "wq");
    check_size(lw.wk, d * d, "wk");
    check_size(lw.wv, d * d, "wv");
    check_size(lw.wo, d * d, "wo");
    check_size(lw.ln2_gain, d, "ln2_gain");
    check_size(lw.ln2_bias, d, "ln2_bias");
    check_size(lw.w_up, d * 4 * d, "w_up");
    check_size(lw.w_down, 4 * d * d, "w_down");
  }
  check_size(lnf_gain, d, "lnf_gain");
  check_size(lnf_bias, d, "lnf_bias");
  check_size(lm_head, d * v, "lm_head");
}

Transformer::Transformer(ModelConfig config, TransformerWeights weights)
    : config_(config), weights_(std::move(weights)) {
  config_.validate();
  weights_.check_shapes(config_);

  Fingerprint fp;
  fp.str("transformer/v1")
      .value(config_.num_layers)
      .value(config_.heads_per_layer)
      .value(config_.model_dim)
      .value(config_.head_dim)
      .value(config_.vocab_size)
      .value(config_.max_seq_len);
  auto feed = [&fp](const std::vector<double>& v) {
    fp.values(std::span<const double>(v));
  };
  feed(weights_.token_embedding);
  feed(weights_.position_embedding);
  for (const auto& lw : weights_.layers) {
    for (const auto* v : {&lw.ln1_gain, &lw.ln1_bias, &lw.wq, &lw.wk, &lw.wv,
                          &lw.wo, &lw.ln2_gain, &lw.ln2_bias, &lw.w_up,
                          &lw.w_down}) {
      feed(*v);
    }
  }
  feed(weights_.lnf_gain);
  feed(weights_.lnf_bias);
  feed(weights_.lm_head);
  fingerprint_ = fp.hex();
}

Transformer Transformer::random(const ModelConfig& config) {
  return Transformer(config, TransformerWeights::random(config));
}

ForwardResult Transformer::forward(const TokenSequence& seq,
                                   std::span<const HeadId> ablated,
                                   std::span<const HeadId> capture,
                                   LossRegion region) const {
  const std::size_t n = seq.size();
  if (n == 0) throw InvalidArgument("empty token sequence");
  if (n > static_cast<std::size_t>(config_.max_seq_len)) {
    throw InvalidArgument("sequence of " + std::to_string(n) +
                          " tokens exceeds max_seq_len " +
                          std::to_string(config_.max_seq_len));
  }
  if (seq.boundary > n) throw InvalidArgument("boundary beyond sequence end");
  for (Token tok : seq.tokens) {
    if (tok < 0 || tok >= config_.vocab_size) {
      throw InvalidArgument("token " + std::to_string(tok) +
                            " outside vocabulary");
    }
  }
  validate_heads(config_, ablated);
  validate_heads(config_, capture);
  const std::vector<std::size_t> targets = loss_targets(seq, region);
  if (targets.empty()) {
    throw EmptyRegionError("loss region has no prediction targets");
  }

  const auto d = static_cast<std::size_t>(config_.model_dim);
  const auto dk = static_cast<std::size_t>(config_.head_dim);
  const auto heads = static_cast<std::size_t>(config_.heads_per_layer);
  const auto vocab = static_cast<std::size_t>(config_.vocab_size);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));

  std::vector<char> is_ablated(static_cast<std::size_t>(config_.total_heads()), 0);
  for (const HeadId& h : ablated) {
    is_ablated[static_cast<std::size_t>(h.layer) * heads +
               static_cast<std::size_t>(h.head)] = 1;
  }
  std::vector<int> capture_slot(static_cast<std::size_t>(config_.total_heads()), -1);
  for (std::size_t i = 0; i < capture.size(); ++i) {
    capture_slot[static_cast<std::size_t>(capture[i].layer) * heads +
                 static_cast<std::size_t>(capture[i].head)] = static_cast<int>(i);
  }

  ForwardResult result;
  result.token_count = n;
  result.attentions.resize(capture.size());

  std::vector<double> x(n * d);
  for (std::size_t t = 0; t < n; ++t) {
    const auto tok = static_cast<std::size_t>(seq.tokens[t]);
    for (std::size_t c = 0; c < d; ++c) {
      x[t * d + c] = weights_.token_embedding[tok * d + c] +
                     weights_.position_embedding[t * d + c];
    }
  }

  std::vector<double> h(n * d), q(n * d), k(n * d), v(n * d), mixed(n * d),
      proj(n * d), up(n * 4 * d), logits(vocab);
  AttentionMatrix attn(n);

  for (std::size_t l = 0; l < weights_.layers.size(); ++l) {
    const LayerWeights& lw = weights_.layers[l];
    for (std::size_t t = 0; t < n; ++t) {
      layer_norm({x.data() + t * d, d}, lw.ln1_gain, lw.ln1_bias,
                 {h.data() + t * d, d});
    }
    matmul(h, lw.wq, n, d, d, q);
    matmul(h, lw.wk, n, d, d, k);
    matmul(h, lw.wv, n, d, d, v);

    for (std::size_t hd = 0; hd < heads; ++hd) {
      const std::size_t flat = l * heads + hd;
      const std::size_t off = hd * dk;
      if (is_ablated[flat]) {
        attn = build_undiff_matrix(n);
      } else {
        for (std::size_t i = 0; i < n; ++i) {
          auto row = attn.row(i);
          double max_logit = -std::numeric_limits<double>::infinity();
          for (std::size_t j = 0; j <= i; ++j) {
            double s = 0.0;
            for (std::size_t c = 0; c < dk; ++c) {
              s += q[i * d + off + c] * k[j * d + off + c];
            }
            row[j] = s * scale;
            max_logit = std::max(max_logit, row[j]);
          }
          double denom = 0.0;
          for (std::size_t j = 0; j <= i; ++j) {
            row[j] = std::exp(row[j] - max_logit);
            denom += row[j];
          }
          for (std::size_t j = 0; j <= i; ++j) row[j] /= denom;
          for (std::size_t j = i + 1; j < n; ++j) row[j] = 0.0;
        }
      }
      if (capture_slot[flat] >= 0) {
        auto& slot = result.attentions[static_cast<std::size_t>(capture_slot[flat])];
        slot.head = {static_cast<int>(l), static_cast<int>(hd)};
        slot.matrix = attn;
      }
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < dk; ++c) {
          double acc = 0.0;
          for (std::size_t j = 0; j <= i; ++j) acc += attn(i, j) * v[j * d + off + c];
          mixed[i * d + off + c] = acc;
        }
      }
    }

    matmul(mixed, lw.wo, n, d, d, proj);
    for (std::size_t i = 0; i < n * d; ++i) x[i] += proj[i];

    for (std::size_t t = 0; t < n; ++t) {
      layer_norm({x.data() + t * d, d}, lw.ln2_gain, lw.ln2_bias,
                 {h.data() + t * d, d});
    }
    matmul(h, lw.w_up, n, d, 4 * d, up);
    for (double& u : up) u = gelu(u);
    matmul(up, lw.w_down, n, 4 * d, d, proj);
    for (std::size_t i = 0; i < n * d; ++i) x[i] += proj[i];
  }

  double total = 0.0;
  std::vector<double> hf(d);
  for (std::size_t t : targets) {
    const std::size_t pos = t - 1;
    layer_norm({x.data() + pos * d, d}, weights_.lnf_gain, weights_.lnf_bias, hf);
    matmul(hf, weights_.lm_head, 1, d, vocab, logits);
    const double max_logit = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double z : logits) sum += std::exp(z - max_logit);
    const auto target = static_cast<std::size_t>(
        t < n ? seq.tokens[t] : config_.eos_token());
    total += (std::log(sum) + max_logit) - logits[target];
  }
  result.loss_positions = targets.size();
  result.loss = total / static_cast<double>(targets.size());
  return result;
}

double sequence_loss(const ReferenceModel& model, const TokenSequence& seq,
                     LossRegion region) {
  return model.forward(seq, {}, {}, region).loss;
}

}  // namespace headscope
