#include "ctxevo/genome.hpp"

#include <algorithm>
#include <unordered_set>

#include "ctxevo/errors.hpp"
#include "ctxevo/hash.hpp"
#include "ctxevo/rng.hpp"

namespace ctxevo {

std::string assembly_policy_label(AssemblyPolicy policy) {
  return policy == AssemblyPolicy::InOrder ? "in_order" : "seeded_shuffle";
}

AssemblyPolicy assembly_policy_from_label(std::string_view label) {
  if (label == "in_order") return AssemblyPolicy::InOrder;
  if (label == "seeded_shuffle") return AssemblyPolicy::SeededShuffle;
  throw UsageError("unknown assembly policy: " + std::string(label));
}

void to_json(nlohmann::json& j, const ContextLineage& l) {
  j = nlohmann::json{{"parents", l.parent_fingerprints},
                     {"generation", l.generation},
                     {"crossover_dropped", l.crossover_dropped},
                     {"mutation_added", l.mutation_added},
                     {"mutation_removed", l.mutation_removed},
                     {"refinement_dropped", l.refinement_dropped}};
}

void from_json(const nlohmann::json& j, ContextLineage& l) {
  l = ContextLineage{};
  if (j.contains("parents")) j.at("parents").get_to(l.parent_fingerprints);
  if (j.contains("generation")) j.at("generation").get_to(l.generation);
  if (j.contains("crossover_dropped")) {
    j.at("crossover_dropped").get_to(l.crossover_dropped);
  }
  if (j.contains("mutation_added")) {
    j.at("mutation_added").get_to(l.mutation_added);
  }
  if (j.contains("mutation_removed")) {
    j.at("mutation_removed").get_to(l.mutation_removed);
  }
  if (j.contains("refinement_dropped")) {
    j.at("refinement_dropped").get_to(l.refinement_dropped);
  }
}

CandidateContext::CandidateContext(std::vector<std::string> unit_ids,
                                   std::size_t max_units)
    : ids_(std::move(unit_ids)), max_units_(max_units) {
  if (ids_.empty()) {
    throw UsageError("context must hold at least one unit");
  }
  if (ids_.size() > max_units_) {
    throw UsageError("context holds " + std::to_string(ids_.size()) +
                     " units, cap is " + std::to_string(max_units_));
  }
  std::unordered_set<std::string_view> seen;
  for (const auto& id : ids_) {
    if (!seen.insert(id).second) {
      throw UsageError("duplicate unit id in context: " + id);
    }
  }
}

bool CandidateContext::contains(std::string_view id) const {
  return std::find(ids_.begin(), ids_.end(), id) != ids_.end();
}

void CandidateContext::validate_against(const UnitPool& pool) const {
  for (const auto& id : ids_) {
    if (!pool.contains(id)) {
      throw UsageError("context unit id not in pool: " + id);
    }
  }
}

void to_json(nlohmann::json& j, const CandidateContext& c) {
  j = nlohmann::json{{"unit_ids", c.ids()},
                     {"max_units", c.max_units()},
                     {"lineage", c.lineage}};
}

CandidateContext context_from_json(const nlohmann::json& j) {
  CandidateContext out(j.at("unit_ids").get<std::vector<std::string>>(),
                       j.at("max_units").get<std::size_t>());
  if (j.contains("lineage")) j.at("lineage").get_to(out.lineage);
  return out;
}

CandidateContext new_context(std::vector<std::string> unit_ids,
                             std::size_t max_units, const UnitPool& pool) {
  CandidateContext context(std::move(unit_ids), max_units);
  context.validate_against(pool);
  return context;
}

std::string fingerprint(const CandidateContext& context,
                        std::string_view policy_id) {
  std::vector<std::string> sorted = context.ids();
  std::sort(sorted.begin(), sorted.end());
  std::string material;
  for (const auto& id : sorted) {
    material += id;
    material += '\n';
  }
  material += policy_id;
  return sha256_hex(material, 16);
}

namespace {

std::vector<std::string> assembly_order(const CandidateContext& context,
                                        AssemblyPolicy policy,
                                        std::uint64_t shuffle_seed) {
  std::vector<std::string> order = context.ids();
  if (policy == AssemblyPolicy::SeededShuffle) {
    Rng rng = Rng::stream(shuffle_seed, "assemble",
                          fnv1a64(fingerprint(context)));
    rng.shuffle(order);
  }
  return order;
}

std::string separator_line(std::size_t index, std::size_t total,
                           const ContextUnit& unit) {
  return "----- unit " + std::to_string(index) + "/" + std::to_string(total) +
         " kind=" + std::string(unit_kind_label(unit.kind)) +
         " src=" + unit.source.to_string() + " -----";
}

constexpr std::string_view kHeader = "# Context";

}  // namespace

std::string assemble_prompt(const CandidateContext& context,
                            const UnitPool& pool, AssemblyPolicy policy,
                            std::uint64_t shuffle_seed) {
  context.validate_against(pool);
  const auto order = assembly_order(context, policy, shuffle_seed);

  std::string prompt(kHeader);
  prompt += '\n';
  for (std::size_t i = 0; i < order.size(); ++i) {
    const ContextUnit& unit = *pool.find(order[i]);
    prompt += '\n';
    prompt += separator_line(i + 1, order.size(), unit);
    prompt += '\n';
    prompt += unit.text;
    prompt += '\n';
  }
  return prompt;
}

std::size_t assembled_token_count(const CandidateContext& context,
                                  const UnitPool& pool, AssemblyPolicy policy,
                                  std::uint64_t shuffle_seed) {
  context.validate_against(pool);
  const auto order = assembly_order(context, policy, shuffle_seed);
  const Tokenizer tok;

  std::size_t total = tok.count(kHeader);
  for (std::size_t i = 0; i < order.size(); ++i) {
    const ContextUnit& unit = *pool.find(order[i]);
    total += tok.count(separator_line(i + 1, order.size(), unit));
    total += unit.token_count;
  }
  return total;
}

}  // namespace ctxevo
