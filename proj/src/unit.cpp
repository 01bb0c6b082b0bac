#include "ctxevo/unit.hpp"

#include "ctxevo/errors.hpp"
#include "ctxevo/hash.hpp"

namespace ctxevo {

std::string_view unit_kind_label(UnitKind kind) {
  switch (kind) {
    case UnitKind::SourceText:
      return "source_text";
    case UnitKind::Insight:
      return "insight";
    case UnitKind::Skill:
      return "skill";
  }
  return "source_text";
}

UnitKind unit_kind_from_label(std::string_view label) {
  if (label == "source_text") return UnitKind::SourceText;
  if (label == "insight") return UnitKind::Insight;
  if (label == "skill") return UnitKind::Skill;
  throw UsageError("unknown unit kind: " + std::string(label));
}

std::string SourceRef::to_string() const {
  std::string out = path;
  if (byte_end > byte_begin) {
    out += ":" + std::to_string(byte_begin) + "-" + std::to_string(byte_end);
  }
  if (!note.empty()) {
    if (!out.empty()) out += ";";
    out += note;
  }
  return out;
}

void to_json(nlohmann::json& j, const SourceRef& r) {
  j = nlohmann::json{{"path", r.path},
                     {"byte_begin", r.byte_begin},
                     {"byte_end", r.byte_end},
                     {"note", r.note}};
}

void from_json(const nlohmann::json& j, SourceRef& r) {
  r = SourceRef{};
  if (j.contains("path")) j.at("path").get_to(r.path);
  if (j.contains("byte_begin")) j.at("byte_begin").get_to(r.byte_begin);
  if (j.contains("byte_end")) j.at("byte_end").get_to(r.byte_end);
  if (j.contains("note")) j.at("note").get_to(r.note);
}

std::string ContextUnit::make_id(UnitKind kind, std::string_view text) {
  static const char* prefixes[] = {"src", "ins", "skl"};
  std::string material(unit_kind_label(kind));
  material += '\n';
  material += text;
  return std::string(prefixes[int(kind)]) + "-" + sha256_hex(material, 16);
}

ContextUnit ContextUnit::make(UnitKind kind, std::string text,
                              SourceRef source, std::vector<std::string> tags,
                              const Tokenizer& tok) {
  if (text.empty()) {
    throw UsageError("context unit text must be nonempty");
  }
  ContextUnit unit;
  unit.kind = kind;
  unit.id = make_id(kind, text);
  unit.token_count = tok.count(text);
  unit.text = std::move(text);
  unit.source = std::move(source);
  unit.tags = std::move(tags);
  return unit;
}

void to_json(nlohmann::json& j, const ContextUnit& u) {
  j = nlohmann::json{{"id", u.id},
                     {"kind", std::string(unit_kind_label(u.kind))},
                     {"text", u.text},
                     {"token_count", u.token_count},
                     {"source", u.source},
                     {"tags", u.tags}};
}

void from_json(const nlohmann::json& j, ContextUnit& u) {
  u = ContextUnit{};
  j.at("id").get_to(u.id);
  u.kind = unit_kind_from_label(j.at("kind").get<std::string>());
  j.at("text").get_to(u.text);
  j.at("token_count").get_to(u.token_count);
  if (j.contains("source")) j.at("source").get_to(u.source);
  if (j.contains("tags")) j.at("tags").get_to(u.tags);
}

}  // namespace ctxevo
