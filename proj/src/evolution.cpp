#include "ctxevo/evolution.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iostream>
#include <thread>
#include <unordered_set>

#include "ctxevo/errors.hpp"

namespace ctxevo {

void to_json(nlohmann::json& j, const AblationSwitches& a) {
  j = nlohmann::json{{"fitness_guided_selection", a.fitness_guided_selection},
                     {"mutation_enabled", a.mutation_enabled},
                     {"refinement_enabled", a.refinement_enabled}};
}

void from_json(const nlohmann::json& j, AblationSwitches& a) {
  a = AblationSwitches{};
  if (j.contains("fitness_guided_selection")) {
    j.at("fitness_guided_selection").get_to(a.fitness_guided_selection);
  }
  if (j.contains("mutation_enabled")) {
    j.at("mutation_enabled").get_to(a.mutation_enabled);
  }
  if (j.contains("refinement_enabled")) {
    j.at("refinement_enabled").get_to(a.refinement_enabled);
  }
}

std::string EvolutionConfig::policy_id() const {
  if (assembly == AssemblyPolicy::InOrder) return "in_order";
  return "seeded_shuffle:" + std::to_string(rng_seed);
}

void EvolutionConfig::validate(std::size_t pool_size) const {
  if (population_size < 2) {
    throw UsageError("population_size must be >= 2");
  }
  if (elite_fraction <= 0.0 || elite_fraction > 1.0) {
    throw UsageError("elite_fraction must be in (0, 1]");
  }
  if (elite_count(population_size, elite_fraction) < 2) {
    throw UsageError("elite fraction too small: need at least 2 elites");
  }
  if (mutation_rate < 0.0 || mutation_rate > 1.0) {
    throw UsageError("mutation_rate must be in [0, 1]");
  }
  if (max_units == 0 || init_units == 0) {
    throw UsageError("max_units and init_units must be positive");
  }
  if (init_units > max_units) {
    throw UsageError("init_units must not exceed max_units");
  }
  if (pool_size > 0 && max_units > pool_size) {
    throw UsageError("max_units must not exceed the pool size");
  }
  if (pool_size > 0 && init_units > pool_size) {
    throw UsageError("init_units must not exceed the pool size");
  }
}

void to_json(nlohmann::json& j, const EvolutionConfig& c) {
  j = nlohmann::json{{"population_size", c.population_size},
                     {"generations", c.generations},
                     {"elite_fraction", c.elite_fraction},
                     {"mutation_rate", c.mutation_rate},
                     {"max_units", c.max_units},
                     {"init_units", c.init_units},
                     {"rng_seed", c.rng_seed},
                     {"ablation", c.ablation},
                     {"assembly", assembly_policy_label(c.assembly)},
                     {"refine_strategy",
                      refine_strategy_label(c.refine_strategy)},
                     {"elite_carry_over", c.elite_carry_over},
                     {"eval_concurrency", c.eval_concurrency},
                     {"parent_retry_cap", c.parent_retry_cap}};
}

void from_json(const nlohmann::json& j, EvolutionConfig& c) {
  c = EvolutionConfig{};
  if (j.contains("population_size")) {
    j.at("population_size").get_to(c.population_size);
  }
  if (j.contains("generations")) j.at("generations").get_to(c.generations);
  if (j.contains("elite_fraction")) {
    j.at("elite_fraction").get_to(c.elite_fraction);
  }
  if (j.contains("mutation_rate")) j.at("mutation_rate").get_to(c.mutation_rate);
  if (j.contains("max_units")) j.at("max_units").get_to(c.max_units);
  if (j.contains("init_units")) j.at("init_units").get_to(c.init_units);
  if (j.contains("rng_seed")) j.at("rng_seed").get_to(c.rng_seed);
  if (j.contains("ablation")) j.at("ablation").get_to(c.ablation);
  if (j.contains("assembly")) {
    c.assembly = assembly_policy_from_label(j.at("assembly").get<std::string>());
  }
  if (j.contains("refine_strategy")) {
    c.refine_strategy =
        refine_strategy_from_label(j.at("refine_strategy").get<std::string>());
  }
  if (j.contains("elite_carry_over")) {
    j.at("elite_carry_over").get_to(c.elite_carry_over);
  }
  if (j.contains("eval_concurrency")) {
    j.at("eval_concurrency").get_to(c.eval_concurrency);
  }
  if (j.contains("parent_retry_cap")) {
    j.at("parent_retry_cap").get_to(c.parent_retry_cap);
  }
}

std::size_t elite_count(std::size_t population_size, double elite_fraction) {
  const double raw = elite_fraction * double(population_size);
  auto count = std::size_t(std::ceil(raw - 1e-9));
  return std::min(std::max<std::size_t>(count, 1), population_size);
}

void to_json(nlohmann::json& j, const GenerationRecord& r) {
  nlohmann::json population = nlohmann::json::array();
  for (const auto& member : r.population) {
    population.push_back({{"unit_ids", member.context.ids()},
                          {"max_units", member.context.max_units()},
                          {"fingerprint", member.fingerprint},
                          {"score", member.score},
                          {"lineage", member.context.lineage}});
  }
  j = nlohmann::json{{"generation", r.generation},
                     {"population", population},
                     {"elite", r.elite_fingerprints}};
}

GenerationRecord generation_record_from_json(const nlohmann::json& j) {
  GenerationRecord record;
  record.generation = j.at("generation").get<std::size_t>();
  for (const auto& item : j.at("population")) {
    ScoredMember member;
    member.context =
        CandidateContext(item.at("unit_ids").get<std::vector<std::string>>(),
                         item.at("max_units").get<std::size_t>());
    if (item.contains("lineage")) {
      item.at("lineage").get_to(member.context.lineage);
    }
    member.fingerprint = item.at("fingerprint").get<std::string>();
    member.score = item.at("score").get<double>();
    record.population.push_back(std::move(member));
  }
  j.at("elite").get_to(record.elite_fingerprints);
  return record;
}

std::vector<CandidateContext> initialize_population(
    const UnitPool& pool, const EvolutionConfig& config) {
  config.validate(pool.size());

  std::vector<CandidateContext> population;
  population.reserve(config.population_size);
  for (std::size_t i = 0; i < config.population_size; ++i) {
    Rng rng = Rng::stream(config.rng_seed, "init", 0, i);
    const auto indices = rng.sample_indices(pool.size(), config.init_units);
    std::vector<std::string> ids;
    ids.reserve(indices.size());
    for (const auto index : indices) ids.push_back(pool.at(index).id);
    CandidateContext context(std::move(ids), config.max_units);
    context.lineage.generation = 0;
    population.push_back(std::move(context));
  }
  return population;
}

std::vector<std::size_t> select_elite(const std::vector<ScoredMember>& population,
                                      double elite_fraction) {
  if (population.empty()) {
    throw UsageError("select_elite: population is empty");
  }
  std::vector<std::size_t> order(population.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (population[a].score != population[b].score) {
      return population[a].score > population[b].score;
    }
    return population[a].fingerprint < population[b].fingerprint;
  });
  order.resize(elite_count(population.size(), elite_fraction));
  return order;
}

std::size_t fitness_proportional_index(const std::vector<double>& scores,
                                       Rng& rng, bool fitness_guided) {
  if (scores.empty()) {
    throw UsageError("fitness_proportional_index: no scores");
  }
  double total = 0.0;
  for (double s : scores) total += s;
  if (!fitness_guided || total <= 0.0) {
    return std::size_t(rng.below(scores.size()));
  }
  const double r = rng.unit_real() * total;
  double cumulative = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    cumulative += scores[i];
    if (r < cumulative) return i;
  }
  return scores.size() - 1;
}

std::pair<std::size_t, std::size_t> sample_parent_pair(
    const std::vector<ScoredMember>& elite, Rng& rng, bool fitness_guided,
    std::size_t retry_cap) {
  if (elite.size() < 2) {
    throw UsageError("sample_parent_pair: need at least 2 elites");
  }
  std::vector<double> scores;
  scores.reserve(elite.size());
  for (const auto& member : elite) scores.push_back(member.score);

  const std::size_t first =
      fitness_proportional_index(scores, rng, fitness_guided);
  std::size_t second = fitness_proportional_index(scores, rng, fitness_guided);
  for (std::size_t retry = 0;
       retry < retry_cap &&
       elite[second].fingerprint == elite[first].fingerprint;
       ++retry) {
    second = fitness_proportional_index(scores, rng, fitness_guided);
  }
  return {first, second};
}

CandidateContext crossover(const CandidateContext& parent_a,
                           const CandidateContext& parent_b,
                           std::size_t max_units, Rng& rng,
                           std::vector<std::string>* dropped) {
  std::vector<std::string> union_ids = parent_a.ids();
  for (const auto& id : parent_b.ids()) {
    if (!parent_a.contains(id)) union_ids.push_back(id);
  }

  if (dropped) dropped->clear();
  if (union_ids.size() <= max_units) {
    return CandidateContext(std::move(union_ids), max_units);
  }

  auto chosen = rng.sample_indices(union_ids.size(), max_units);
  std::sort(chosen.begin(), chosen.end());  // keep discovery order
  std::vector<std::string> ids;
  ids.reserve(max_units);
  std::size_t next = 0;
  for (std::size_t i = 0; i < union_ids.size(); ++i) {
    if (next < chosen.size() && chosen[next] == i) {
      ids.push_back(union_ids[i]);
      ++next;
    } else if (dropped) {
      dropped->push_back(union_ids[i]);
    }
  }
  return CandidateContext(std::move(ids), max_units);
}

CandidateContext mutate(const CandidateContext& context, const UnitPool& pool,
                        double mutation_rate, std::size_t max_units, Rng& rng,
                        MutationEvent* event) {
  if (event) *event = MutationEvent{};
  if (!rng.bernoulli(mutation_rate)) return context;

  // Complement of the context within the pool, in pool order.
  std::vector<std::string> complement;
  complement.reserve(pool.size());
  std::unordered_set<std::string_view> current(context.ids().begin(),
                                               context.ids().end());
  for (const auto& unit : pool.units()) {
    if (!current.count(unit.id)) complement.push_back(unit.id);
  }
  if (complement.empty()) {
    std::cerr << "warning: mutation has no candidate units; context spans "
                 "the pool\n";
    return context;
  }

  const std::string added = complement[rng.below(complement.size())];
  std::vector<std::string> ids = context.ids();
  std::string removed;
  if (ids.size() < max_units) {
    ids.push_back(added);
  } else {
    const std::size_t victim = std::size_t(rng.below(ids.size()));
    removed = ids[victim];
    ids[victim] = added;
  }
  if (event) {
    event->triggered = true;
    event->added = added;
    event->removed = removed;
  }
  CandidateContext out(std::move(ids), max_units);
  out.lineage = context.lineage;
  return out;
}

EvolutionEngine::EvolutionEngine(const UnitPool& pool, const TaskSet& tasks,
                                 Evaluator& evaluator, FitnessCache* cache,
                                 EvolutionConfig config)
    : pool_(pool),
      tasks_(tasks),
      evaluator_(evaluator),
      cache_(cache),
      config_(std::move(config)) {
  config_.validate(pool_.size());
}

void EvolutionEngine::set_record_sink(
    std::function<void(const GenerationRecord&)> sink) {
  sink_ = std::move(sink);
}

void EvolutionEngine::set_refiner(ChatBackend* refiner) { refiner_ = refiner; }

void EvolutionEngine::seed_initial() {
  population_ = initialize_population(pool_, config_);
  generation_ = 0;
  phase_ = Phase::Bred;
}

void EvolutionEngine::restore(const GenerationRecord& last_record) {
  last_record_ = last_record;
  generation_ = last_record.generation;
  population_.clear();
  phase_ = Phase::Scored;
}

bool EvolutionEngine::done() const {
  return phase_ == Phase::Scored && generation_ >= config_.generations;
}

std::vector<ScoredMember> EvolutionEngine::score_population() {
  const std::string policy_id = config_.policy_id();
  const std::size_t n = population_.size();
  std::vector<ScoredMember> scored(n);

  const std::size_t workers =
      std::max<std::size_t>(1, std::min(config_.eval_concurrency, n));
  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> hits{0}, calls{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;

  auto work = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        const EvalOutcome outcome = evaluate_context(
            population_[i], pool_, tasks_, evaluator_, cache_, policy_id);
        scored[i].context = population_[i];
        scored[i].fingerprint = fingerprint(population_[i], policy_id);
        scored[i].score = outcome.aggregate;
        if (outcome.cache_hit) {
          hits.fetch_add(1);
        } else {
          calls.fetch_add(1);
        }
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        next.store(n);
        return;
      }
    }
  };

  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> threads;
    threads.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) threads.emplace_back(work);
    for (auto& t : threads) t.join();
  }
  cache_hits_ += hits.load();
  evaluator_calls_ += calls.load();

  if (first_error) std::rethrow_exception(first_error);
  return scored;
}

GenerationRecord EvolutionEngine::evaluate_current() {
  if (phase_ != Phase::Bred) {
    throw RunError("evaluate_current: no bred population pending");
  }

  GenerationRecord record;
  record.generation = generation_;
  record.population = score_population();

  const auto elite = select_elite(record.population, config_.elite_fraction);
  record.elite_fingerprints.reserve(elite.size());
  for (const auto index : elite) {
    record.elite_fingerprints.push_back(record.population[index].fingerprint);
  }

  last_record_ = record;
  phase_ = Phase::Scored;
  if (sink_) sink_(record);
  return record;
}

void EvolutionEngine::breed_next() {
  if (phase_ != Phase::Scored || !last_record_) {
    throw RunError("breed_next: current population is not scored yet");
  }
  if (generation_ >= config_.generations) {
    throw RunError("breed_next: run already reached the final generation");
  }

  // Elite members in record order (score desc, fingerprint asc).
  std::vector<ScoredMember> elite;
  elite.reserve(last_record_->elite_fingerprints.size());
  for (const auto& fp : last_record_->elite_fingerprints) {
    for (const auto& member : last_record_->population) {
      if (member.fingerprint == fp) {
        elite.push_back(member);
        break;
      }
    }
  }

  const std::size_t target_generation = generation_ + 1;
  const RefineStrategy strategy = config_.ablation.refinement_enabled
                                      ? config_.refine_strategy
                                      : RefineStrategy::Disabled;

  std::vector<CandidateContext> offspring;
  offspring.reserve(config_.population_size);
  std::size_t child_index = 0;

  if (config_.elite_carry_over) {
    for (const auto& member : elite) {
      if (offspring.size() >= config_.population_size) break;
      CandidateContext copy = member.context;
      copy.lineage = ContextLineage{};
      copy.lineage.generation = int(target_generation);
      copy.lineage.parent_fingerprints = {member.fingerprint};
      offspring.push_back(std::move(copy));
    }
  }

  while (offspring.size() < config_.population_size) {
    Rng rng = Rng::stream(config_.rng_seed, "offspring", target_generation,
                          child_index++);
    const auto [ia, ib] = sample_parent_pair(
        elite, rng, config_.ablation.fitness_guided_selection,
        config_.parent_retry_cap);

    ContextLineage lineage;
    lineage.generation = int(target_generation);
    lineage.parent_fingerprints = {elite[ia].fingerprint,
                                   elite[ib].fingerprint};

    CandidateContext child =
        crossover(elite[ia].context, elite[ib].context, config_.max_units,
                  rng, &lineage.crossover_dropped);

    if (config_.ablation.mutation_enabled) {
      MutationEvent event;
      child = mutate(child, pool_, config_.mutation_rate, config_.max_units,
                     rng, &event);
      if (event.triggered) {
        lineage.mutation_added = event.added;
        lineage.mutation_removed = event.removed;
      }
    }

    RefineResult refined =
        refine_context(child, pool_, strategy, refiner_);
    lineage.refinement_dropped = refined.dropped_ids;

    refined.context.lineage = lineage;
    offspring.push_back(std::move(refined.context));
  }

  population_ = std::move(offspring);
  generation_ = target_generation;
  phase_ = Phase::Bred;
}

RunResult EvolutionEngine::run() {
  if (phase_ == Phase::Unseeded) seed_initial();
  if (phase_ == Phase::Bred) evaluate_current();
  while (!done()) {
    breed_next();
    evaluate_current();
  }
  return finish();
}

RunResult EvolutionEngine::finish() const {
  if (!last_record_) {
    throw RunError("finish: no generation has been evaluated");
  }
  const auto& population = last_record_->population;

  // argmax over the final population; ties go to the lowest fingerprint.
  std::size_t best = 0;
  for (std::size_t i = 1; i < population.size(); ++i) {
    if (population[i].score > population[best].score ||
        (population[i].score == population[best].score &&
         population[i].fingerprint < population[best].fingerprint)) {
      best = i;
    }
  }

  RunResult result;
  result.best = population[best].context;
  result.best_fingerprint = population[best].fingerprint;
  result.best_score = population[best].score;
  return result;
}

RunResult run_evolution(const UnitPool& pool, const TaskSet& tasks,
                        Evaluator& evaluator, FitnessCache* cache,
                        const EvolutionConfig& config, ChatBackend* refiner) {
  EvolutionEngine engine(pool, tasks, evaluator, cache, config);
  engine.set_refiner(refiner);

  std::vector<GenerationRecord> records;
  engine.set_record_sink(
      [&records](const GenerationRecord& r) { records.push_back(r); });

  RunResult result = engine.run();
  result.generations = std::move(records);
  return result;
}

}  // namespace ctxevo
