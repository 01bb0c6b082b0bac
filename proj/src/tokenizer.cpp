#include "ctxevo/tokenizer.hpp"

namespace ctxevo {

namespace {

inline bool is_space(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' ||
         c == '\v';
}

inline bool is_word(unsigned char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
         (c >= '0' && c <= '9') || c == '_' || c >= 0x80;
}

}  // namespace

std::vector<TokenSpan> Tokenizer::spans(std::string_view text) const {
  std::vector<TokenSpan> out;
  const std::size_t n = text.size();
  std::size_t i = 0;
  while (i < n) {
    const unsigned char c = static_cast<unsigned char>(text[i]);
    if (is_space(c)) {
      ++i;
      continue;
    }
    if (is_word(c)) {
      std::size_t j = i + 1;
      while (j < n && is_word(static_cast<unsigned char>(text[j]))) ++j;
      out.push_back({i, j});
      i = j;
    } else {
      out.push_back({i, i + 1});
      ++i;
    }
  }
  return out;
}

std::size_t Tokenizer::count(std::string_view text) const {
  std::size_t count = 0;
  const std::size_t n = text.size();
  std::size_t i = 0;
  while (i < n) {
    const unsigned char c = static_cast<unsigned char>(text[i]);
    if (is_space(c)) {
      ++i;
      continue;
    }
    ++count;
    if (is_word(c)) {
      std::size_t j = i + 1;
      while (j < n && is_word(static_cast<unsigned char>(text[j]))) ++j;
      i = j;
    } else {
      ++i;
    }
  }
  return count;
}

std::size_t count_tokens(std::string_view text) {
  return Tokenizer{}.count(text);
}

}  // namespace ctxevo
