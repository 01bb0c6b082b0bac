#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace ctxevo {

// Half-open byte range of one token within the source text.
struct TokenSpan {
  std::size_t begin = 0;
  std::size_t end = 0;
};

// Deterministic approximate tokenizer: a run of word characters (ASCII
// alphanumerics, '_', or any non-ASCII byte) is one token, every other
// printable character is a token of its own, whitespace only separates.
// Counts are used for budgeting, not semantics, so no vendor parity is
// attempted. The name is recorded in pool manifests.
class Tokenizer {
 public:
  std::string name() const { return "whitespace-punct-v1"; }

  std::vector<TokenSpan> spans(std::string_view text) const;
  std::size_t count(std::string_view text) const;
};

// Convenience wrapper over the default tokenizer.
std::size_t count_tokens(std::string_view text);

}  // namespace ctxevo
