#include "headscope/planted.h"

#include <algorithm>
#include <cmath>
#include <set>

#include "headscope/errors.h"
#include "headscope/rng.h"

namespace headscope {

Transformer make_planted_model(const PlantedSpec& spec) {
  const ModelConfig& cfg = spec.config;
  cfg.validate();
  const auto d = static_cast<std::size_t>(cfg.model_dim);
  const auto dk = static_cast<std::size_t>(cfg.head_dim);
  const auto vocab = static_cast<std::size_t>(cfg.vocab_size);
  if (d < 2 * dk + 2) {
    throw InvalidArgument("planted model needs model_dim >= 2*head_dim + 2");
  }
  validate_heads(cfg, std::span<const HeadId>(&spec.head, 1));
  const std::set<Token> markers(spec.markers.begin(), spec.markers.end());
  if (markers.empty()) throw InvalidArgument("planted model needs markers");
  if (markers.size() + 2 > dk) {
    throw InvalidArgument("too many markers for head_dim");
  }
  for (Token m : markers) {
    if (m < 0 || m >= cfg.vocab_size) throw InvalidArgument("marker out of vocabulary");
  }

  TransformerWeights w = TransformerWeights::random(cfg);
  // Codes come from a stream separate from the base weights.
  Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);

  const std::size_t code_begin = 1;
  const std::size_t query_dim = 1 + dk;
  const std::size_t out_begin = d - dk;
  const std::size_t n_markers = markers.size();

  std::vector<double> codes(vocab * dk, 0.0);
  {
    std::size_t slot = 0;
    for (Token m : markers) codes[static_cast<std::size_t>(m) * dk + slot++] = 1.0;
  }
  const std::size_t free_dims = dk - n_markers;
  for (std::size_t tok = 0; tok < vocab; ++tok) {
    if (markers.count(static_cast<Token>(tok))) continue;
    std::vector<double> c(free_dims);
    double mean = 0.0;
    for (double& v : c) {
      v = rng.normal();
      mean += v;
    }
    mean /= static_cast<double>(free_dims);
    double norm = 0.0;
    for (double& v : c) {
      v -= mean;
      norm += v * v;
    }
    norm = std::sqrt(norm);
    if (norm == 0.0) norm = 1.0;
    // Zero-sum codes keep the marker-flag dimension near zero after
    // LayerNorm, so non-marker keys are nearly equal.
    for (std::size_t i = 0; i < free_dims; ++i) {
      codes[tok * dk + n_markers + i] = c[i] / norm;
    }
  }

  std::fill(w.token_embedding.begin(), w.token_embedding.end(), 0.0);
  std::fill(w.position_embedding.begin(), w.position_embedding.end(), 0.0);
  for (std::size_t tok = 0; tok < vocab; ++tok) {
    double* row = w.token_embedding.data() + tok * d;
    if (markers.count(static_cast<Token>(tok))) row[0] = 1.0;
    for (std::size_t c = 0; c < dk; ++c) row[code_begin + c] = codes[tok * dk + c];
  }

  for (auto& lw : w.layers) {
    std::fill(lw.wo.begin(), lw.wo.end(), 0.0);
    std::fill(lw.w_down.begin(), lw.w_down.end(), 0.0);
  }

  LayerWeights& lw = w.layers[static_cast<std::size_t>(spec.head.layer)];
  const std::size_t col = static_cast<std::size_t>(spec.head.head) * dk;
  lw.ln1_gain[query_dim] = 0.0;
  lw.ln1_bias[query_dim] = 1.0;
  for (std::size_t r = 0; r < d; ++r) {
    for (std::size_t c = 0; c < dk; ++c) {
      lw.wq[r * d + col + c] = 0.0;
      lw.wk[r * d + col + c] = 0.0;
      lw.wv[r * d + col + c] = 0.0;
    }
  }
  lw.wq[query_dim * d + col] = spec.key_gain;
  lw.wk[0 * d + col] = spec.key_gain;
  for (std::size_t c = 0; c < dk; ++c) {
    lw.wv[(code_begin + c) * d + col + c] = 1.0;
    lw.wo[(col + c) * d + out_begin + c] = spec.copy_gain;
  }

  std::fill(w.lm_head.begin(), w.lm_head.end(), 0.0);
  for (std::size_t c = 0; c < dk; ++c) {
    for (std::size_t tok = 0; tok < vocab; ++tok) {
      w.lm_head[(out_begin + c) * vocab + tok] = codes[tok * dk + c];
    }
  }
  return Transformer(cfg, std::move(w));
}

HeadId planted_head_for_seed(const ModelConfig& config) {
  Rng rng(config.seed ^ 0x5851f42d4c957f2dULL);
  const auto flat = static_cast<int>(
      rng.below(static_cast<std::uint64_t>(config.total_heads())));
  return {flat / config.heads_per_layer, flat % config.heads_per_layer};
}

std::vector<Token> default_byte_markers() { return {'#', '@', '~'}; }

}  // namespace headscope
