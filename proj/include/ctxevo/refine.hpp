#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "ctxevo/genome.hpp"
#include "ctxevo/llm_client.hpp"

namespace ctxevo {

// Post-mutation cleanup of an offspring. Refinement only removes units,
// never rewrites or injects them, so unit provenance and cache keys stay
// intact.
//   Disabled - identity
//   Rules    - drops exact-duplicate texts and directive-tag conflicts
//   Model    - asks a chat backend for a KEEP/DROP verdict per unit
enum class RefineStrategy { Disabled, Rules, Model };

std::string refine_strategy_label(RefineStrategy s);
RefineStrategy refine_strategy_from_label(std::string_view label);

struct RefineResult {
  CandidateContext context;
  std::vector<std::string> dropped_ids;
  bool fell_back_to_rules = false;
  std::vector<std::string> warnings;
};

// The default instruction sent to the model strategy; replaceable via a
// config-addressed template file. The response format is one unit id per
// line prefixed KEEP or DROP.
extern const char* const kDefaultRefinePrompt;

// Never empties the context: at least one unit always survives. The model
// strategy falls back to rules when the response carries no parseable
// KEEP/DROP line.
RefineResult refine_context(const CandidateContext& context,
                            const UnitPool& pool, RefineStrategy strategy,
                            ChatBackend* refiner = nullptr,
                            std::string_view prompt_template = {});

}  // namespace ctxevo
