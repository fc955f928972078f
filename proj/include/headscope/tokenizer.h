#pragma once

#include <memory>
#include <string_view>
#include <vector>

#include "headscope/model.h"

namespace headscope {

class Tokenizer {
 public:
  virtual ~Tokenizer() = default;
  virtual std::vector<Token> encode(std::string_view text) const = 0;
  // Smallest model vocabulary this tokenizer can feed, including the
  // end-of-sequence entry.
  virtual int required_vocab() const = 0;
};

// One token per byte; end-of-sequence is id 256.
class ByteTokenizer final : public Tokenizer {
 public:
  std::vector<Token> encode(std::string_view text) const override;
  int required_vocab() const override { return 257; }
};

struct Encoded {
  TokenSequence sequence;
  bool truncated = false;
};

// problem ++ solution with boundary after the problem, cut from the right to
// max_len tokens.
Encoded encode_pair(const Tokenizer& tok, std::string_view problem,
                    std::string_view solution, std::size_t max_len);

// Text alone as a problem-only sequence (boundary == size()).
Encoded encode_text(const Tokenizer& tok, std::string_view text,
                    std::size_t max_len);

}  // namespace headscope
