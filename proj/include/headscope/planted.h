#pragma once

#include <cstdint>
#include <vector>

#include "headscope/model.h"

namespace headscope {

// A transformer with one hand-built "marker" head.
//
// The planted head uses a constant query and a key that fires only on marker
// tokens, so every position attends to the markers in its prefix. Its value
// path copies the attended token's code into a residual subspace that is the
// only input to the output head. All other heads and every MLP have zeroed
// output projections, so the planted head carries the entire label signal.
//
// Residual layout (d = model_dim, dk = head_dim):
//   [0]                marker flag
//   [1, 1 + dk)        token code; markers get one-hot codes, other tokens
//                      zero-sum unit codes orthogonal to them
//   [1 + dk]           constant query input (LayerNorm gain 0, bias 1)
//   [d - dk, d)        output subspace written by the planted head
struct PlantedSpec {
  ModelConfig config;
  HeadId head;
  std::vector<Token> markers;
  double key_gain = 4.0;
  double copy_gain = 4.0;
};

// Throws InvalidArgument unless model_dim >= 2 * head_dim + 2, the planted
// head is in range, there is at least one marker and
// markers.size() + 2 <= head_dim.
Transformer make_planted_model(const PlantedSpec& spec);

// Planted head position drawn from the config seed.
HeadId planted_head_for_seed(const ModelConfig& config);

// Default markers for byte-level models: '#', '@' and '~'.
std::vector<Token> default_byte_markers();

}  // namespace headscope
