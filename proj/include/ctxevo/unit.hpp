#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "ctxevo/tokenizer.hpp"

namespace ctxevo {

enum class UnitKind { SourceText, Insight, Skill };

std::string_view unit_kind_label(UnitKind kind);
UnitKind unit_kind_from_label(std::string_view label);

// Origin of a unit: file path plus byte range for ingested text, or a
// free-form provenance note for extracted units.
struct SourceRef {
  std::string path;
  std::size_t byte_begin = 0;
  std::size_t byte_end = 0;
  std::string note;

  std::string to_string() const;
};

void to_json(nlohmann::json& j, const SourceRef& r);
void from_json(const nlohmann::json& j, SourceRef& r);

// One atomic knowledge fragment. The id is a pure function of (kind, text),
// so byte-identical content gets the same id on every platform and run.
struct ContextUnit {
  std::string id;
  UnitKind kind = UnitKind::SourceText;
  std::string text;
  std::size_t token_count = 0;
  SourceRef source;
  std::vector<std::string> tags;

  static std::string make_id(UnitKind kind, std::string_view text);

  // Computes id and token_count; rejects empty text.
  static ContextUnit make(UnitKind kind, std::string text, SourceRef source,
                          std::vector<std::string> tags = {},
                          const Tokenizer& tok = {});
};

void to_json(nlohmann::json& j, const ContextUnit& u);
void from_json(const nlohmann::json& j, ContextUnit& u);

}  // namespace ctxevo
