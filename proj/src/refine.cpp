#include "ctxevo/refine.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <sstream>

#include "ctxevo/errors.hpp"

namespace ctxevo {

const char* const kDefaultRefinePrompt =
    "Review the numbered context units below and flag logical "
    "contradictions or redundancy. Answer with one line per unit, either\n"
    "KEEP <unit-id>\n"
    "DROP <unit-id>\n"
    "and nothing else.";

std::string refine_strategy_label(RefineStrategy s) {
  switch (s) {
    case RefineStrategy::Disabled:
      return "disabled";
    case RefineStrategy::Rules:
      return "rules";
    case RefineStrategy::Model:
      return "model";
  }
  return "disabled";
}

RefineStrategy refine_strategy_from_label(std::string_view label) {
  if (label == "disabled") return RefineStrategy::Disabled;
  if (label == "rules") return RefineStrategy::Rules;
  if (label == "model") return RefineStrategy::Model;
  throw UsageError("unknown refine strategy: " + std::string(label));
}

namespace {

// Tags of the form "key: value" are directives; two units whose directives
// share a key but disagree on the value are mutually exclusive.
std::vector<std::pair<std::string, std::string>> directives(
    const ContextUnit& unit) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& tag : unit.tags) {
    const auto colon = tag.find(':');
    if (colon == std::string::npos) continue;
    std::string key = tag.substr(0, colon);
    std::string value = tag.substr(colon + 1);
    const auto start = value.find_first_not_of(' ');
    value = (start == std::string::npos) ? "" : value.substr(start);
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

std::set<std::string> rules_drops(const CandidateContext& context,
                                  const UnitPool& pool) {
  std::set<std::string> drops;

  // Exact-duplicate texts: keep the first occurrence in context order.
  std::map<std::string_view, std::string_view> first_by_text;
  for (const auto& id : context.ids()) {
    const ContextUnit& unit = *pool.find(id);
    const auto [it, inserted] = first_by_text.emplace(unit.text, id);
    if (!inserted) drops.insert(std::string(id));
  }

  // Directive conflicts: for a key with more than one value among the
  // context's units, keep only the highest-id unit carrying that key.
  std::map<std::string, std::vector<std::pair<std::string, std::string>>>
      by_key;  // key -> [(unit id, value)]
  for (const auto& id : context.ids()) {
    for (const auto& [key, value] : directives(*pool.find(id))) {
      by_key[key].emplace_back(id, value);
    }
  }
  for (const auto& [key, holders] : by_key) {
    std::set<std::string> values;
    for (const auto& [id, value] : holders) values.insert(value);
    if (values.size() < 2) continue;
    std::string keep;
    for (const auto& [id, value] : holders) keep = std::max(keep, id);
    for (const auto& [id, value] : holders) {
      if (id != keep) drops.insert(id);
    }
  }
  return drops;
}

RefineResult apply_drops(const CandidateContext& context,
                         const std::set<std::string>& drops) {
  RefineResult result;
  std::vector<std::string> kept;
  for (const auto& id : context.ids()) {
    if (drops.count(id)) {
      result.dropped_ids.push_back(id);
    } else {
      kept.push_back(id);
    }
  }
  if (kept.empty()) {
    // Refinement must not empty the context.
    kept.push_back(context.ids().front());
    result.dropped_ids.erase(
        std::find(result.dropped_ids.begin(), result.dropped_ids.end(),
                  context.ids().front()));
    result.warnings.push_back("refinement would empty context; kept first unit");
  }
  result.context = CandidateContext(std::move(kept), context.max_units());
  result.context.lineage = context.lineage;
  return result;
}

RefineResult rules_refine(const CandidateContext& context,
                          const UnitPool& pool) {
  return apply_drops(context, rules_drops(context, pool));
}

RefineResult model_refine(const CandidateContext& context,
                          const UnitPool& pool, ChatBackend& refiner,
                          std::string_view prompt_template) {
  std::string prompt(prompt_template.empty() ? kDefaultRefinePrompt
                                             : prompt_template);
  prompt += "\n\n";
  for (const auto& id : context.ids()) {
    const ContextUnit& unit = *pool.find(id);
    prompt += "unit " + id + " [" +
              std::string(unit_kind_label(unit.kind)) + "]\n" + unit.text +
              "\n---\n";
  }

  const std::string response =
      refiner.complete({{"user", prompt}}).response_text;

  std::set<std::string> drops;
  bool any_directive = false;
  std::istringstream lines(response);
  std::string line;
  while (std::getline(lines, line)) {
    std::istringstream fields(line);
    std::string verb, id;
    if (!(fields >> verb >> id)) continue;
    if (verb == "KEEP" && context.contains(id)) {
      any_directive = true;
    } else if (verb == "DROP" && context.contains(id)) {
      any_directive = true;
      drops.insert(id);
    }
  }

  if (!any_directive) {
    RefineResult result = rules_refine(context, pool);
    result.fell_back_to_rules = true;
    result.warnings.push_back("unparseable refiner response; used rules");
    return result;
  }
  return apply_drops(context, drops);
}

}  // namespace

RefineResult refine_context(const CandidateContext& context,
                            const UnitPool& pool, RefineStrategy strategy,
                            ChatBackend* refiner,
                            std::string_view prompt_template) {
  context.validate_against(pool);
  switch (strategy) {
    case RefineStrategy::Disabled: {
      RefineResult result;
      result.context = context;
      return result;
    }
    case RefineStrategy::Rules:
      return rules_refine(context, pool);
    case RefineStrategy::Model:
      if (!refiner) {
        throw UsageError("model refinement requires a refiner backend");
      }
      return model_refine(context, pool, *refiner, prompt_template);
  }
  RefineResult result;
  result.context = context;
  return result;
}

}  // namespace ctxevo
