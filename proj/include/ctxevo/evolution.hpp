#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ctxevo/fitness.hpp"
#include "ctxevo/genome.hpp"
#include "ctxevo/refine.hpp"
#include "ctxevo/rng.hpp"

namespace ctxevo {

struct AblationSwitches {
  bool fitness_guided_selection = true;
  bool mutation_enabled = true;
  bool refinement_enabled = true;
};

void to_json(nlohmann::json& j, const AblationSwitches& a);
void from_json(const nlohmann::json& j, AblationSwitches& a);

struct EvolutionConfig {
  std::size_t population_size = 32;
  std::size_t generations = 5;
  double elite_fraction = 0.6;
  double mutation_rate = 0.1;
  std::size_t max_units = 10;
  std::size_t init_units = 10;
  std::uint64_t rng_seed = 0;
  AblationSwitches ablation;
  AssemblyPolicy assembly = AssemblyPolicy::InOrder;
  RefineStrategy refine_strategy = RefineStrategy::Rules;
  bool elite_carry_over = false;  // off: offspring fully replace, as run here
  std::size_t eval_concurrency = 1;
  std::size_t parent_retry_cap = 8;

  // Fingerprint policy id shared by the engine and evaluators. The shuffle
  // seed is folded in so shuffled prompts cache separately per seed.
  std::string policy_id() const;

  // Throws UsageError when invariants fail (pool size checked if >0).
  void validate(std::size_t pool_size = 0) const;
};

void to_json(nlohmann::json& j, const EvolutionConfig& c);
void from_json(const nlohmann::json& j, EvolutionConfig& c);

// Elite count for a population of n: ceil(fraction * n), computed with a
// small epsilon so binary-float products like 0.6*10 do not round up.
std::size_t elite_count(std::size_t population_size, double elite_fraction);

struct ScoredMember {
  CandidateContext context;
  std::string fingerprint;
  double score = 0.0;
};

// One generation of the run log: the scored population, the elite chosen
// from it, and the lineage of how each member was bred. Serialized without
// timestamps so identical seeds produce byte-identical logs.
struct GenerationRecord {
  std::size_t generation = 0;
  std::vector<ScoredMember> population;
  std::vector<std::string> elite_fingerprints;
};

void to_json(nlohmann::json& j, const GenerationRecord& r);
GenerationRecord generation_record_from_json(const nlohmann::json& j);

struct RunResult {
  CandidateContext best;
  std::string best_fingerprint;
  double best_score = 0.0;
  std::vector<GenerationRecord> generations;
};

// --- Operators -------------------------------------------------------------

// N contexts of exactly init_units distinct units each, sampled uniformly
// without replacement within each context; draws are independent across
// contexts via per-context substreams.
std::vector<CandidateContext> initialize_population(const UnitPool& pool,
                                                    const EvolutionConfig& config);

// Indices of the top ceil(fraction*n) members, ordered by
// (score desc, fingerprint asc).
std::vector<std::size_t> select_elite(const std::vector<ScoredMember>& population,
                                      double elite_fraction);

// One fitness-proportional draw over `scores`. Uniform when fitness
// guidance is off or the scores sum to zero.
std::size_t fitness_proportional_index(const std::vector<double>& scores,
                                       Rng& rng, bool fitness_guided = true);

// Two draws with probability s(C)/sum(s); an identical-fingerprint pair is
// redrawn up to retry_cap times, then accepted.
std::pair<std::size_t, std::size_t> sample_parent_pair(
    const std::vector<ScoredMember>& elite, Rng& rng, bool fitness_guided,
    std::size_t retry_cap = 8);

// Deduplicated union of both parents, uniformly downsampled to max_units
// when over the cap. `dropped` receives the union ids lost to the cap.
CandidateContext crossover(const CandidateContext& parent_a,
                           const CandidateContext& parent_b,
                           std::size_t max_units, Rng& rng,
                           std::vector<std::string>* dropped = nullptr);

struct MutationEvent {
  bool triggered = false;
  std::string added;
  std::string removed;
};

// Exactly one Bernoulli(rate) trial: on success one unit drawn uniformly
// from pool minus context is appended (under the cap) or replaces a
// uniformly chosen existing unit (at the cap).
CandidateContext mutate(const CandidateContext& context, const UnitPool& pool,
                        double mutation_rate, std::size_t max_units, Rng& rng,
                        MutationEvent* event = nullptr);

// --- Engine ----------------------------------------------------------------

// Stepwise engine so the harness can persist and resume between
// generations. All randomness derives from (rng_seed, generation, child),
// so evaluation fan-out cannot perturb the genetic sequence.
class EvolutionEngine {
 public:
  EvolutionEngine(const UnitPool& pool, const TaskSet& tasks,
                  Evaluator& evaluator, FitnessCache* cache,
                  EvolutionConfig config);

  void set_record_sink(std::function<void(const GenerationRecord&)> sink);
  void set_refiner(ChatBackend* refiner);  // model-strategy refinement

  void seed_initial();
  void restore(const GenerationRecord& last_record);

  bool population_scored() const { return phase_ == Phase::Scored; }
  bool done() const;
  std::size_t current_generation() const { return generation_; }

  // Scores the current population, emits the generation record.
  GenerationRecord evaluate_current();
  // Breeds the next population from the latest record's elite.
  void breed_next();

  RunResult run();
  RunResult finish() const;

  std::size_t cache_hits() const { return cache_hits_; }
  std::size_t evaluator_calls() const { return evaluator_calls_; }

 private:
  enum class Phase { Unseeded, Bred, Scored };

  std::vector<ScoredMember> score_population();

  const UnitPool& pool_;
  const TaskSet& tasks_;
  Evaluator& evaluator_;
  FitnessCache* cache_;
  EvolutionConfig config_;
  ChatBackend* refiner_ = nullptr;
  std::function<void(const GenerationRecord&)> sink_;

  Phase phase_ = Phase::Unseeded;
  std::size_t generation_ = 0;
  std::vector<CandidateContext> population_;
  std::optional<GenerationRecord> last_record_;
  std::size_t cache_hits_ = 0;
  std::size_t evaluator_calls_ = 0;
};

// Runs the whole search and collects every generation record.
RunResult run_evolution(const UnitPool& pool, const TaskSet& tasks,
                        Evaluator& evaluator, FitnessCache* cache,
                        const EvolutionConfig& config,
                        ChatBackend* refiner = nullptr);

}  // namespace ctxevo
