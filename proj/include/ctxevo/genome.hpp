#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "ctxevo/unit_pool.hpp"

namespace ctxevo {

// How a context's units become one prompt string. InOrder follows the
// stored unit order; SeededShuffle applies a deterministic permutation
// derived from the run seed and the context fingerprint.
enum class AssemblyPolicy { InOrder, SeededShuffle };

std::string assembly_policy_label(AssemblyPolicy policy);
AssemblyPolicy assembly_policy_from_label(std::string_view label);

// Where an offspring came from. Parents are fingerprints of elite members
// of the previous generation; generation 0 members have no parents.
struct ContextLineage {
  std::vector<std::string> parent_fingerprints;
  int generation = 0;
  std::vector<std::string> crossover_dropped;   // union ids lost to the cap
  std::string mutation_added;                    // empty when no mutation
  std::string mutation_removed;
  std::vector<std::string> refinement_dropped;
};

void to_json(nlohmann::json& j, const ContextLineage& l);
void from_json(const nlohmann::json& j, ContextLineage& l);

// A capped, duplicate-free selection of unit ids; the object of evolution.
// Unit ids are kept in discovery order.
class CandidateContext {
 public:
  CandidateContext() = default;
  // Throws UsageError on duplicates, an empty id list, or more ids than
  // max_units.
  CandidateContext(std::vector<std::string> unit_ids, std::size_t max_units);

  const std::vector<std::string>& ids() const { return ids_; }
  std::size_t size() const { return ids_.size(); }
  std::size_t max_units() const { return max_units_; }
  bool contains(std::string_view id) const;

  // Throws UsageError when an id does not resolve in the pool.
  void validate_against(const UnitPool& pool) const;

  ContextLineage lineage;

 private:
  std::vector<std::string> ids_;
  std::size_t max_units_ = 0;
};

void to_json(nlohmann::json& j, const CandidateContext& c);
CandidateContext context_from_json(const nlohmann::json& j);

// Shorthand matching the construction contract: builds and validates
// against the governing pool.
CandidateContext new_context(std::vector<std::string> unit_ids,
                             std::size_t max_units, const UnitPool& pool);

// Order-insensitive content hash of the unit-id set plus the assembly
// policy id; keys the evaluation cache.
std::string fingerprint(const CandidateContext& context,
                        std::string_view policy_id = "in_order");

std::string assemble_prompt(const CandidateContext& context,
                            const UnitPool& pool,
                            AssemblyPolicy policy = AssemblyPolicy::InOrder,
                            std::uint64_t shuffle_seed = 0);

// Exact token count of assemble_prompt's output, computed additively from
// per-unit counts plus header/separator overhead.
std::size_t assembled_token_count(const CandidateContext& context,
                                  const UnitPool& pool,
                                  AssemblyPolicy policy = AssemblyPolicy::InOrder,
                                  std::uint64_t shuffle_seed = 0);

}  // namespace ctxevo
