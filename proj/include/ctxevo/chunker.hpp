#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "ctxevo/tokenizer.hpp"

namespace ctxevo {

// Half-open byte range of one chunk within the source text.
struct ByteRange {
  std::size_t begin = 0;
  std::size_t end = 0;
};

enum class StructureHint { Code, Prose };

// Fixed-size token windows. Chunk i starts at token offset
// i * (size - overlap); every chunk except possibly the last has exactly
// `size` tokens. Texts with no tokens yield an empty list.
// Throws UsageError unless 0 <= overlap < size.
std::vector<ByteRange> chunk_fixed_ranges(std::string_view text,
                                          std::size_t size_tokens,
                                          std::size_t overlap_tokens,
                                          const Tokenizer& tok = {});
std::vector<std::string> chunk_fixed(std::string_view text,
                                     std::size_t size_tokens,
                                     std::size_t overlap_tokens,
                                     const Tokenizer& tok = {});

// Splits at structural breakpoints: blank-line-separated top-level blocks
// for code (a blank-line run only splits when the next content line starts
// at column 0), paragraph breaks for prose. Blocks within the ceiling map
// to one chunk each and concatenate back to the original text; oversized
// blocks fall back to fixed windows of (ceiling, fallback_overlap) tokens.
std::vector<ByteRange> chunk_structural_ranges(std::string_view text,
                                               StructureHint hint,
                                               std::size_t token_ceiling,
                                               std::size_t fallback_overlap,
                                               const Tokenizer& tok = {});
std::vector<std::string> chunk_structural(std::string_view text,
                                          StructureHint hint,
                                          std::size_t token_ceiling,
                                          std::size_t fallback_overlap,
                                          const Tokenizer& tok = {});

}  // namespace ctxevo
