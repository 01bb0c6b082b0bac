#include "ctxevo/chunker.hpp"

#include "ctxevo/errors.hpp"

namespace ctxevo {

namespace {

std::vector<std::string> materialize(std::string_view text,
                                     const std::vector<ByteRange>& ranges) {
  std::vector<std::string> out;
  out.reserve(ranges.size());
  for (const auto& r : ranges) {
    out.emplace_back(text.substr(r.begin, r.end - r.begin));
  }
  return out;
}

bool is_blank_line(std::string_view line) {
  for (char c : line) {
    if (c != ' ' && c != '\t' && c != '\r') return false;
  }
  return true;
}

}  // namespace

std::vector<ByteRange> chunk_fixed_ranges(std::string_view text,
                                          std::size_t size_tokens,
                                          std::size_t overlap_tokens,
                                          const Tokenizer& tok) {
  if (size_tokens == 0) {
    throw UsageError("chunk_fixed: size must be positive");
  }
  if (overlap_tokens >= size_tokens) {
    throw UsageError("chunk_fixed: overlap must be smaller than size");
  }

  const auto spans = tok.spans(text);
  const std::size_t total = spans.size();
  std::vector<ByteRange> out;
  if (total == 0) return out;

  const std::size_t stride = size_tokens - overlap_tokens;
  for (std::size_t start = 0;; start += stride) {
    const std::size_t end = std::min(start + size_tokens, total);
    out.push_back({spans[start].begin, spans[end - 1].end});
    if (start + size_tokens >= total) break;
  }
  return out;
}

std::vector<std::string> chunk_fixed(std::string_view text,
                                     std::size_t size_tokens,
                                     std::size_t overlap_tokens,
                                     const Tokenizer& tok) {
  return materialize(text,
                     chunk_fixed_ranges(text, size_tokens, overlap_tokens, tok));
}

std::vector<ByteRange> chunk_structural_ranges(std::string_view text,
                                               StructureHint hint,
                                               std::size_t token_ceiling,
                                               std::size_t fallback_overlap,
                                               const Tokenizer& tok) {
  if (token_ceiling == 0) {
    throw UsageError("chunk_structural: token ceiling must be positive");
  }
  if (tok.count(text) == 0) return {};

  // Partition into blocks. Lines keep their terminators so the block ranges
  // tile the text exactly; a blank-line run belongs to the preceding block.
  std::vector<ByteRange> blocks;
  const std::size_t n = text.size();
  std::size_t block_begin = 0;
  std::size_t line_begin = 0;
  bool block_has_content = false;
  bool in_separator = false;

  while (line_begin < n) {
    std::size_t line_end = text.find('\n', line_begin);
    line_end = (line_end == std::string_view::npos) ? n : line_end + 1;
    const std::string_view line = text.substr(line_begin, line_end - line_begin);

    if (is_blank_line(line)) {
      if (block_has_content) in_separator = true;
    } else {
      const bool top_level =
          hint == StructureHint::Prose ||
          (line[0] != ' ' && line[0] != '\t');
      if (in_separator && block_has_content && top_level) {
        blocks.push_back({block_begin, line_begin});
        block_begin = line_begin;
        block_has_content = false;
      }
      in_separator = false;
      block_has_content = true;
    }
    line_begin = line_end;
  }
  blocks.push_back({block_begin, n});

  std::vector<ByteRange> out;
  for (const auto& block : blocks) {
    const std::string_view body = text.substr(block.begin, block.end - block.begin);
    if (tok.count(body) <= token_ceiling) {
      out.push_back(block);
      continue;
    }
    // Oversized block: fall back to fixed windows inside the block.
    for (const auto& r :
         chunk_fixed_ranges(body, token_ceiling, fallback_overlap, tok)) {
      out.push_back({block.begin + r.begin, block.begin + r.end});
    }
  }
  return out;
}

std::vector<std::string> chunk_structural(std::string_view text,
                                          StructureHint hint,
                                          std::size_t token_ceiling,
                                          std::size_t fallback_overlap,
                                          const Tokenizer& tok) {
  return materialize(text, chunk_structural_ranges(text, hint, token_ceiling,
                                                   fallback_overlap, tok));
}

}  // namespace ctxevo
