#include "headscope/tokenizer.h"

#include <algorithm>

namespace headscope {

std::vector<Token> ByteTokenizer::encode(std::string_view text) const {
  std::vector<Token> out;
  out.reserve(text.size());
  for (char c : text) out.push_back(static_cast<unsigned char>(c));
  return out;
}

Encoded encode_pair(const Tokenizer& tok, std::string_view problem,
                    std::string_view solution, std::size_t max_len) {
  Encoded e;
  e.sequence.tokens = tok.encode(problem);
  e.sequence.boundary = e.sequence.tokens.size();
  const std::vector<Token> sol = tok.encode(solution);
  e.sequence.tokens.insert(e.sequence.tokens.end(), sol.begin(), sol.end());
  if (e.sequence.tokens.size() > max_len) {
    e.sequence.tokens.resize(max_len);
    e.sequence.boundary = std::min(e.sequence.boundary, max_len);
    e.truncated = true;
  }
  return e;
}

Encoded encode_text(const Tokenizer& tok, std::string_view text,
                    std::size_t max_len) {
  Encoded e;
  e.sequence.tokens = tok.encode(text);
  if (e.sequence.tokens.size() > max_len) {
    e.sequence.tokens.resize(max_len);
    e.truncated = true;
  }
  e.sequence.boundary = e.sequence.tokens.size();
  return e;
}

}  // namespace headscope
