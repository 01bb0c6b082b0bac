#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>

#include "ctxevo/errors.hpp"
#include "ctxevo/run_store.hpp"
#include "helpers.hpp"

using namespace ctxevo;
using namespace ctxevo::testing;

namespace {

struct RunFixture {
  UnitPool pool = make_pool(24);
  CoverageOracle oracle;
  OracleEvaluator evaluator;
  TaskSet tasks = TaskSet::from_tasks({{"o", "", {}}});

  explicit RunFixture()
      : oracle({{pool.at(1).id, pool.at(4).id, pool.at(9).id}, 0.25, {}}),
        evaluator(oracle) {}

  EvolutionConfig config(std::uint64_t seed = 5) const {
    EvolutionConfig c;
    c.population_size = 8;
    c.generations = 4;
    c.elite_fraction = 0.5;
    c.mutation_rate = 0.2;
    c.max_units = 6;
    c.init_units = 4;
    c.rng_seed = seed;
    return c;
  }

  RunManifest manifest(const EvolutionConfig& c) const {
    RunManifest m;
    m.run_id = "test-run";
    m.created_at = iso8601_utc_now();
    m.config = c;
    m.pool_fingerprint = pool.fingerprint();
    m.taskset_fingerprint = tasks.fingerprint();
    m.evaluator_id = evaluator.id();
    return m;
  }
};

}  // namespace

TEST_CASE("jsonl loader preserves order and truncates a torn tail") {
  TempDir dir("ctxevo-jsonl");
  const auto file = dir.path / "log.jsonl";
  write_file(file, "{\"a\":1}\n{\"a\":2}\n{\"a\":3}\n{\"a\":");

  std::vector<std::string> warnings;
  const auto lines = load_jsonl(file, &warnings);
  REQUIRE(lines.size() == 3);
  CHECK(lines[0]["a"] == 1);
  CHECK(lines[2]["a"] == 3);
  CHECK(warnings.size() == 1);

  // Corruption in the middle is not silently swallowed.
  write_file(file, "{\"a\":1}\nnot json\n{\"a\":3}\n");
  CHECK_THROWS_AS(load_jsonl(file), RunError);
}

TEST_CASE("run store appends records and tracks the checkpoint") {
  TempDir dir("ctxevo-store");
  RunFixture fx;
  const auto config = fx.config();
  RunStore store = RunStore::create(dir.path / "run", fx.manifest(config));

  CHECK_FALSE(store.checkpoint().has_value());

  auto cache = FitnessCache::open(store.cache_path());
  EvolutionEngine engine(fx.pool, fx.tasks, fx.evaluator, cache.get(), config);
  engine.set_record_sink(
      [&store](const GenerationRecord& r) { store.append_generation(r); });
  engine.run();

  const auto checkpoint = store.checkpoint();
  REQUIRE(checkpoint.has_value());
  CHECK(checkpoint->last_generation == 4);

  const auto generations = store.load_generations();
  REQUIRE(generations.size() == 5);
  for (std::size_t g = 0; g < generations.size(); ++g) {
    CHECK(generations[g].generation == g);
    CHECK(generations[g].population.size() == config.population_size);
  }

  // Reopening sees the same manifest.
  const RunStore reopened = RunStore::open(dir.path / "run");
  CHECK(reopened.manifest().pool_fingerprint == fx.pool.fingerprint());

  // Duplicate creation is refused.
  CHECK_THROWS_AS(RunStore::create(dir.path / "run", fx.manifest(config)),
                  UsageError);
}

TEST_CASE("interrupted plus resumed equals uninterrupted, line for line") {
  TempDir dir("ctxevo-resume");
  RunFixture fx;
  const auto config = fx.config(11);

  // Uninterrupted reference run.
  RunStore full_store =
      RunStore::create(dir.path / "full", fx.manifest(config));
  {
    auto cache = FitnessCache::open(full_store.cache_path());
    EvolutionEngine engine(fx.pool, fx.tasks, fx.evaluator, cache.get(),
                           config);
    engine.set_record_sink([&full_store](const GenerationRecord& r) {
      full_store.append_generation(r);
    });
    engine.run();
  }

  for (std::size_t kill_after = 0; kill_after < config.generations;
       ++kill_after) {
    const auto run_dir =
        dir.path / ("killed-" + std::to_string(kill_after));
    RunStore store = RunStore::create(run_dir, fx.manifest(config));
    {
      auto cache = FitnessCache::open(store.cache_path());
      EvolutionEngine engine(fx.pool, fx.tasks, fx.evaluator, cache.get(),
                             config);
      engine.set_record_sink(
          [&store](const GenerationRecord& r) { store.append_generation(r); });
      engine.seed_initial();
      engine.evaluate_current();
      while (engine.current_generation() < kill_after) {
        engine.breed_next();
        engine.evaluate_current();
      }
      // Engine destroyed here: simulated crash after generation kill_after.
    }

    {
      RunStore resumed = RunStore::open(run_dir);
      auto cache = FitnessCache::open(resumed.cache_path());
      EvolutionEngine engine(fx.pool, fx.tasks, fx.evaluator, cache.get(),
                             config);
      engine.set_record_sink([&resumed](const GenerationRecord& r) {
        resumed.append_generation(r);
      });
      resume_run(engine, resumed, fx.pool, fx.tasks, fx.evaluator.id());
      engine.run();
    }

    CHECK(read_file(run_dir / "generations.jsonl") ==
          read_file(dir.path / "full" / "generations.jsonl"));
  }
}

TEST_CASE("resume refuses mismatched inputs and missing checkpoints") {
  TempDir dir("ctxevo-resume-refuse");
  RunFixture fx;
  const auto config = fx.config();

  RunStore store = RunStore::create(dir.path / "run", fx.manifest(config));
  auto cache = FitnessCache::open(store.cache_path());
  EvolutionEngine engine(fx.pool, fx.tasks, fx.evaluator, cache.get(), config);
  engine.set_record_sink(
      [&store](const GenerationRecord& r) { store.append_generation(r); });

  SUBCASE("no checkpoint yet") {
    CHECK_THROWS_AS(
        resume_run(engine, store, fx.pool, fx.tasks, fx.evaluator.id()),
        RunError);
  }

  SUBCASE("edited pool is refused") {
    engine.seed_initial();
    engine.evaluate_current();
    UnitPool other = make_pool(24, "x");
    CHECK_THROWS_AS(
        resume_run(engine, store, other, fx.tasks, fx.evaluator.id()),
        UsageError);
  }

  SUBCASE("different evaluator is refused") {
    engine.seed_initial();
    engine.evaluate_current();
    CHECK_THROWS_AS(
        resume_run(engine, store, fx.pool, fx.tasks, "oracle:other"),
        UsageError);
  }
}

TEST_CASE("report rows carry fitness stats and a non-decreasing best-so-far") {
  TempDir dir("ctxevo-report");
  RunFixture fx;
  const auto config = fx.config(21);
  RunStore store = RunStore::create(dir.path / "run", fx.manifest(config));

  auto cache = FitnessCache::open(store.cache_path());
  EvolutionEngine engine(fx.pool, fx.tasks, fx.evaluator, cache.get(), config);
  std::size_t prev_hits = 0, prev_calls = 0;
  engine.set_record_sink(
      [&](const GenerationRecord& r) { store.append_generation(r); });
  engine.seed_initial();
  while (true) {
    const auto record = engine.evaluate_current();
    store.record_eval_stats(record.generation, engine.cache_hits() - prev_hits,
                            engine.evaluator_calls() - prev_calls);
    prev_hits = engine.cache_hits();
    prev_calls = engine.evaluator_calls();
    if (engine.done()) break;
    engine.breed_next();
  }

  const auto rows = report_run(store, &fx.pool);
  REQUIRE(rows.size() == config.generations + 1);
  double prev_best = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].generation == i);
    CHECK(rows[i].best >= rows[i].mean);
    CHECK(rows[i].mean >= rows[i].min);
    CHECK(rows[i].best_so_far >= prev_best);
    prev_best = rows[i].best_so_far;
    CHECK(rows[i].best_context_tokens > 0);
    CHECK(rows[i].cache_hit_rate >= 0.0);
    CHECK(rows[i].cache_hit_rate <= 1.0);
  }

  const std::string csv = report_csv(rows);
  CHECK(csv.find("generation,best_fitness,mean_fitness,min_fitness,"
                 "best_so_far,best_context_tokens,cache_hit_rate\n") == 0);
  // One header plus one line per generation.
  CHECK(std::count(csv.begin(), csv.end(), '\n') ==
        long(rows.size()) + 1);
}

TEST_CASE("report on an empty store is an error") {
  TempDir dir("ctxevo-report-empty");
  RunFixture fx;
  RunStore store =
      RunStore::create(dir.path / "run", fx.manifest(fx.config()));
  CHECK_THROWS_AS(report_run(store, &fx.pool), RunError);
}

TEST_CASE("export writes the prompt and a lineage-chained sidecar") {
  TempDir dir("ctxevo-export");
  RunFixture fx;
  const auto config = fx.config(31);
  RunStore store = RunStore::create(dir.path / "run", fx.manifest(config));

  auto cache = FitnessCache::open(store.cache_path());
  EvolutionEngine engine(fx.pool, fx.tasks, fx.evaluator, cache.get(), config);
  engine.set_record_sink(
      [&store](const GenerationRecord& r) { store.append_generation(r); });
  const auto result = engine.run();

  const auto paths = export_best(store, fx.pool, dir.path / "best");
  const std::string prompt = read_file(paths.prompt_file);
  CHECK(prompt.find("# Context") == 0);
  for (const auto& id : result.best.ids()) {
    CHECK(prompt.find(fx.pool.find(id)->text) != std::string::npos);
  }

  std::ifstream sidecar_in(paths.sidecar_file);
  nlohmann::json sidecar;
  sidecar_in >> sidecar;
  CHECK(sidecar["fingerprint"] == result.best_fingerprint);
  CHECK(sidecar["score"] == result.best_score);
  CHECK(sidecar["token_total"].get<std::size_t>() > 0);

  const auto& chain = sidecar["lineage_chain"];
  REQUIRE(chain.size() >= 1);
  CHECK(chain.front()["generation"] == int(config.generations));
  CHECK(chain.back()["generation"] == 0);
  CHECK(chain.back()["parents"].empty());
}
