#pragma once

#include <cstddef>
#include <cstdint>
#include <compare>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace headscope {

using Token = std::int32_t;

struct ModelConfig {
  int num_layers = 2;
  int heads_per_layer = 4;
  int model_dim = 32;
  int head_dim = 8;
  int vocab_size = 257;
  int max_seq_len = 256;
  std::uint64_t seed = 0;

  // Throws InvalidArgument on a non-positive field, vocab_size < 2 or
  // head_dim * heads_per_layer != model_dim.
  void validate() const;

  int total_heads() const { return num_layers * heads_per_layer; }

  // The last vocabulary entry doubles as end-of-sequence; the final
  // position of every sequence is trained to predict it.
  Token eos_token() const { return vocab_size - 1; }
};

struct HeadId {
  int layer = 0;
  int head = 0;

  auto operator<=>(const HeadId&) const = default;
};

std::string to_string(HeadId id);

// "layer:head" pairs separated by commas, e.g. "0:1,1:3". Throws
// InvalidArgument on malformed input.
std::vector<HeadId> parse_head_list(std::string_view text);

// Throws InvalidArgument when a head is out of range or listed twice.
void validate_heads(const ModelConfig& config, std::span<const HeadId> heads);

// All heads in (layer, head) order.
std::vector<HeadId> all_heads(const ModelConfig& config);

// Tokens of a problem followed by its solution. `boundary` is the index of
// the first solution token; boundary == size() means problem only.
struct TokenSequence {
  std::vector<Token> tokens;
  std::size_t boundary = 0;

  std::size_t size() const { return tokens.size(); }
};

// Which next-token predictions contribute to the loss.
//
// Prediction t (1 <= t <= n) is made at position t-1 and targets tokens[t],
// or end-of-sequence for t == n. The solution region is t in
// [max(boundary, 1), n] when boundary < n; the problem region is everything
// else. The two regions partition [1, n].
enum class LossRegion { problem, solution, full };

std::vector<std::size_t> loss_targets(const TokenSequence& seq,
                                      LossRegion region);

// Dense n x n matrix, row-major. Rows are query positions.
class AttentionMatrix {
 public:
  AttentionMatrix() = default;
  explicit AttentionMatrix(std::size_t n) : n_(n), values_(n * n, 0.0) {}
  AttentionMatrix(std::size_t n, std::vector<double> values);

  std::size_t size() const { return n_; }
  double& operator()(std::size_t row, std::size_t col) {
    return values_[row * n_ + col];
  }
  double operator()(std::size_t row, std::size_t col) const {
    return values_[row * n_ + col];
  }
  std::span<const double> row(std::size_t r) const {
    return {values_.data() + r * n_, n_};
  }
  std::span<double> row(std::size_t r) { return {values_.data() + r * n_, n_}; }
  const std::vector<double>& values() const { return values_; }

  // Causal support and unit row sums, both within `tolerance`.
  bool is_causal_row_stochastic(double tolerance = 1e-6) const;

  bool operator==(const AttentionMatrix&) const = default;

 private:
  std::size_t n_ = 0;
  std::vector<double> values_;
};

struct AttentionTensor {
  HeadId head;
  AttentionMatrix matrix;
};

struct ForwardResult {
  double loss = 0.0;  // mean cross-entropy in nats over the loss region
  std::vector<AttentionTensor> attentions;  // in capture-list order
  std::size_t token_count = 0;              // sequence length n
  std::size_t loss_positions = 0;
};

// The undifferentiated attention pattern: row i (0-based) spreads weight
// 1/(i+1) uniformly over columns 0..i. This is the limit of softmax over
// causally masked logits as the logit scale goes to zero, and replaces the
// attention of an ablated head.
AttentionMatrix build_undiff_matrix(std::size_t n);

// Anything that can run a causal forward pass with per-head ablation and
// capture. Implementations must be safe to call concurrently.
class ReferenceModel {
 public:
  virtual ~ReferenceModel() = default;

  virtual const ModelConfig& config() const = 0;
  virtual std::string fingerprint() const = 0;

  // Heads in `ablated` use build_undiff_matrix(n) in place of their softmax
  // attention. Heads in `capture` have their (possibly ablated) attention
  // returned. Throws InvalidArgument for an empty or over-long sequence and
  // EmptyRegionError when `region` has no targets.
  virtual ForwardResult forward(const TokenSequence& seq,
                                std::span<const HeadId> ablated,
                                std::span<const HeadId> capture,
                                LossRegion region) const = 0;
};

struct LayerWeights {
  std::vector<double> ln1_gain, ln1_bias;  // [d]
  std::vector<double> wq, wk, wv;          // [d x d], head h owns columns h*dk..
  std::vector<double> wo;                  // [d x d], head h owns rows h*dk..
  std::vector<double> ln2_gain, ln2_bias;  // [d]
  std::vector<double> w_up;                // [d x 4d]
  std::vector<double> w_down;              // [4d x d]
};

// Matrices are row-major [in x out] and applied as y = x W.
struct TransformerWeights {
  std::vector<double> token_embedding;     // [vocab x d]
  std::vector<double> position_embedding;  // [max_seq_len x d]
  std::vector<LayerWeights> layers;
  std::vector<double> lnf_gain, lnf_bias;  // [d]
  std::vector<double> lm_head;             // [d x vocab]

  // Normal(0, 0.02) matrices, unit LayerNorm gains, zero biases.
  static TransformerWeights random(const ModelConfig& config);

  // Throws InvalidArgument when any array has the wrong length.
  void check_shapes(const ModelConfig& config) const;
};

// Pre-norm decoder-only transformer with learned positions, GELU MLP and an
// untied output head. Weights are immutable after construction.
class Transformer final : public ReferenceModel {
 public:
  Transformer(ModelConfig config, TransformerWeights weights);

  static Transformer random(const ModelConfig& config);

  const ModelConfig& config() const override { return config_; }
  const TransformerWeights& weights() const { return weights_; }
  std::string fingerprint() const override { return fingerprint_; }

  ForwardResult forward(const TokenSequence& seq,
                        std::span<const HeadId> ablated,
                        std::span<const HeadId> capture,
                        LossRegion region) const override;

 private:
  ModelConfig config_;
  TransformerWeights weights_;
  std::string fingerprint_;
};

// Convenience overload: no ablation, no capture.
double sequence_loss(const ReferenceModel& model, const TokenSequence& seq,
                     LossRegion region);

}  // namespace headscope
