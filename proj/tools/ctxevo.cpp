// ctxevo — evolve combinations of text context units against a task
// fitness signal, with retrieval baselines and run tooling.
//
// Subcommands: ingest, evolve, baseline, evaluate, report, export.
// Exit codes: 0 ok, 1 usage, 2 runtime, 3 backend.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "ctxevo/baselines.hpp"
#include "ctxevo/errors.hpp"
#include "ctxevo/evolution.hpp"
#include "ctxevo/fitness.hpp"
#include "ctxevo/hash.hpp"
#include "ctxevo/run_store.hpp"
#include "ctxevo/unit_pool.hpp"

namespace {

using namespace ctxevo;

constexpr const char* kDefaultInsightPrompt =
    "You will be shown an execution trajectory. Distill the key actionable "
    "rules it teaches.\nWrite one rule per block and separate blocks with a "
    "line containing exactly ---.\n\n{{trajectory}}";

std::string read_text_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open file: " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open file: " + path);
  nlohmann::json j;
  in >> j;
  return j;
}

// --- shared option bags ------------------------------------------------------

struct BackendOptions {
  std::string backend = "http";  // http | stub
  std::string stub_file;
  std::string endpoint_file;

  std::unique_ptr<ChatBackend> make_chat() const {
    if (backend == "stub") {
      if (stub_file.empty()) {
        throw UsageError("--backend stub requires --stub <script.json>");
      }
      return std::make_unique<StubChatBackend>(StubScript::load(stub_file));
    }
    if (backend == "http") {
      ModelEndpointConfig config;
      if (!endpoint_file.empty()) {
        config = read_json_file(endpoint_file).get<ModelEndpointConfig>();
      }
      return std::make_unique<HttpChatBackend>(config);
    }
    throw UsageError("unknown backend kind: " + backend);
  }

  void attach(CLI::App* cmd) {
    cmd->add_option("--backend", backend, "Chat backend: http or stub");
    cmd->add_option("--stub", stub_file, "Stub script JSON (backend=stub)");
    cmd->add_option("--endpoint", endpoint_file,
                    "Endpoint config JSON (backend=http)");
  }
};

struct EvaluatorOptions {
  std::string evaluator = "oracle";  // oracle | chat
  std::string oracle_file;
  int rollouts = 1;
  std::string system_prompt;
  BackendOptions backend;

  void attach(CLI::App* cmd) {
    cmd->add_option("--evaluator", evaluator, "Evaluator: oracle or chat");
    cmd->add_option("--oracle", oracle_file, "Coverage oracle config JSON");
    cmd->add_option("--rollouts", rollouts, "Rollouts per task (default 1)");
    cmd->add_option("--system-prompt", system_prompt,
                    "System message for chat rollouts");
    backend.attach(cmd);
  }
};

struct EvaluatorBundle {
  std::unique_ptr<ChatBackend> chat;
  std::unique_ptr<Evaluator> evaluator;
};

EvaluatorBundle make_evaluator(const EvaluatorOptions& opts,
                               const EvolutionConfig& config) {
  EvaluatorBundle bundle;
  if (opts.evaluator == "oracle") {
    if (opts.oracle_file.empty()) {
      throw UsageError("--evaluator oracle requires --oracle <config.json>");
    }
    bundle.evaluator = std::make_unique<OracleEvaluator>(
        CoverageOracle::load(opts.oracle_file));
    return bundle;
  }
  if (opts.evaluator == "chat") {
    bundle.chat = opts.backend.make_chat();
    ChatEvaluator::Options eval_opts;
    eval_opts.policy = config.assembly;
    eval_opts.shuffle_seed = config.rng_seed;
    eval_opts.rollouts_per_task = opts.rollouts;
    eval_opts.system_prompt = opts.system_prompt;
    bundle.evaluator = std::make_unique<ChatEvaluator>(*bundle.chat, eval_opts);
    return bundle;
  }
  throw UsageError("unknown evaluator kind: " + opts.evaluator);
}

TaskSet load_or_synthesize_tasks(const std::string& tasks_file,
                                 const std::string& evaluator) {
  if (!tasks_file.empty()) return TaskSet::load_jsonl(tasks_file);
  if (evaluator == "oracle") {
    // The oracle scores whole contexts; a placeholder task keeps the
    // task-set plumbing uniform.
    TaskInstance task;
    task.id = "oracle";
    task.grader = {GraderSpec::Type::Exact, ""};
    return TaskSet::from_tasks({task});
  }
  throw UsageError("--tasks is required for the chat evaluator");
}

// --- ingest ------------------------------------------------------------------

struct IngestArgs {
  std::string dir;
  std::string out;
  std::string kind = "source_text";
  std::string chunker = "whole_file";
  std::size_t size = 1024;
  std::size_t overlap = 200;
  std::size_t ceiling = 1024;
  std::string hint = "code";
  // insight extraction mode
  std::string trajectories;
  std::string prompt_template_file;
  std::string delimiter = "---";
  BackendOptions backend;
};

int run_ingest(const IngestArgs& args) {
  if (args.out.empty()) throw UsageError("ingest: --out is required");

  if (!args.trajectories.empty()) {
    const auto records = load_trajectories_jsonl(args.trajectories);
    auto chat = args.backend.make_chat();
    const std::string prompt_template =
        args.prompt_template_file.empty()
            ? kDefaultInsightPrompt
            : read_text_file(args.prompt_template_file);

    const auto extraction =
        extract_insights(records, *chat, prompt_template, args.delimiter);
    for (const auto& warning : extraction.warnings) {
      std::cerr << "warning: " << warning << '\n';
    }
    for (const auto& failure : extraction.failures) {
      std::cerr << "error: extraction failed for " << failure << '\n';
    }

    PoolManifest manifest;
    manifest.tokenizer = Tokenizer{}.name();
    manifest.unit_kind = "insight";
    manifest.source = args.trajectories;
    UnitPool pool(manifest);
    for (auto unit : extraction.units) {
      if (!pool.add(std::move(unit))) {
        pool.manifest().skipped.push_back("duplicate insight");
      }
    }
    if (pool.empty()) throw RunError("extraction produced zero units");
    pool.save(args.out);
    std::cout << "wrote " << pool.size() << " insight units to " << args.out
              << '\n';
    return extraction.failures.empty() ? 0 : 3;
  }

  if (args.dir.empty()) {
    throw UsageError("ingest: --dir (or --trajectories) is required");
  }
  ChunkerConfig chunker;
  chunker.size = args.size;
  chunker.overlap = args.overlap;
  chunker.ceiling = args.ceiling;
  chunker.hint =
      args.hint == "prose" ? StructureHint::Prose : StructureHint::Code;
  if (args.chunker == "whole_file") {
    chunker.mode = ChunkerConfig::Mode::WholeFile;
  } else if (args.chunker == "fixed") {
    chunker.mode = ChunkerConfig::Mode::Fixed;
  } else if (args.chunker == "structural") {
    chunker.mode = ChunkerConfig::Mode::Structural;
  } else {
    throw UsageError("unknown chunker mode: " + args.chunker);
  }

  const UnitPool pool = ingest_directory(
      args.dir, unit_kind_from_label(args.kind), chunker);
  pool.save(args.out);
  std::cout << "wrote " << pool.size() << " units to " << args.out
            << " (fingerprint " << pool.fingerprint() << ")\n";
  return 0;
}

// --- evolve ------------------------------------------------------------------

struct EvolveArgs {
  std::string pool_file;
  std::string tasks_file;
  std::string run_dir;
  std::string config_file;
  EvolutionConfig config;
  std::string assembly = "in_order";
  std::string refine = "rules";
  bool no_fitness_guided = false;
  bool no_mutation = false;
  bool no_refinement = false;
  bool resume = false;
  bool transcripts = false;
  long long stop_after = -1;  // stop after this generation index, for tests
  EvaluatorOptions evaluator;
};

int run_evolve(const EvolveArgs& args_in) {
  EvolveArgs args = args_in;
  if (args.pool_file.empty()) throw UsageError("evolve: --pool is required");
  if (args.run_dir.empty()) throw UsageError("evolve: --run-dir is required");

  const UnitPool pool = UnitPool::load(args.pool_file);
  const TaskSet tasks =
      load_or_synthesize_tasks(args.tasks_file, args.evaluator.evaluator);

  args.config.assembly = assembly_policy_from_label(args.assembly);
  args.config.refine_strategy = refine_strategy_from_label(args.refine);
  args.config.ablation.fitness_guided_selection = !args.no_fitness_guided;
  args.config.ablation.mutation_enabled = !args.no_mutation;
  args.config.ablation.refinement_enabled = !args.no_refinement;
  if (!args.config_file.empty()) {
    // The config file overrides flags.
    args.config = read_json_file(args.config_file).get<EvolutionConfig>();
  }

  std::optional<RunStore> store;
  if (args.resume) {
    store.emplace(RunStore::open(args.run_dir));
    args.config = store->manifest().config;
  }

  const EvaluatorBundle bundle = make_evaluator(args.evaluator, args.config);
  args.config.validate(pool.size());

  if (!args.resume) {
    RunManifest manifest;
    manifest.run_id = sha256_hex(pool.fingerprint() + tasks.fingerprint() +
                                     std::to_string(args.config.rng_seed),
                                 8);
    manifest.created_at = iso8601_utc_now();
    manifest.config = args.config;
    manifest.pool_fingerprint = pool.fingerprint();
    manifest.pool_file = args.pool_file;
    manifest.taskset_fingerprint = tasks.fingerprint();
    manifest.taskset_file = args.tasks_file;
    manifest.evaluator_id = bundle.evaluator->id();
    store.emplace(RunStore::create(args.run_dir, manifest));
  }

  auto cache = FitnessCache::open(store->cache_path());
  EvolutionEngine engine(pool, tasks, *bundle.evaluator, cache.get(),
                         args.config);
  if (bundle.chat) engine.set_refiner(bundle.chat.get());
  engine.set_record_sink([&store](const GenerationRecord& record) {
    store->append_generation(record);
  });

  std::ofstream transcript_sink;
  std::mutex transcript_mutex;
  if (args.transcripts && bundle.chat) {
    transcript_sink.open(store->dir() / "transcripts.jsonl", std::ios::app);
    if (auto* chat_eval = dynamic_cast<ChatEvaluator*>(bundle.evaluator.get())) {
      chat_eval->set_transcript_sink(
          [&](const std::string& task_id, const ChatExchange& exchange) {
            std::lock_guard lock(transcript_mutex);
            nlohmann::json line(exchange);
            line["task_id"] = task_id;
            transcript_sink << line.dump() << '\n';
          });
    }
  }

  if (args.resume) {
    resume_run(engine, *store, pool, tasks, bundle.evaluator->id());
  } else {
    engine.seed_initial();
  }

  std::size_t prev_hits = engine.cache_hits();
  std::size_t prev_calls = engine.evaluator_calls();
  const auto step_eval = [&] {
    const GenerationRecord record = engine.evaluate_current();
    store->record_eval_stats(record.generation,
                             engine.cache_hits() - prev_hits,
                             engine.evaluator_calls() - prev_calls);
    prev_hits = engine.cache_hits();
    prev_calls = engine.evaluator_calls();
    std::cout << "generation " << record.generation << " evaluated\n";
  };

  if (!engine.population_scored()) step_eval();
  while (!engine.done()) {
    if (args.stop_after >= 0 &&
        engine.current_generation() >= std::size_t(args.stop_after)) {
      std::cout << "stopping after generation " << engine.current_generation()
                << " (resume with --resume)\n";
      return 0;
    }
    engine.breed_next();
    step_eval();
  }

  const RunResult result = engine.finish();
  const auto exported =
      export_best(*store, pool, store->dir() / "best_context");
  std::cout << "best fitness " << result.best_score << " (fingerprint "
            << result.best_fingerprint << ")\n"
            << "exported " << exported.prompt_file.string() << " and "
            << exported.sidecar_file.string() << '\n';
  return 0;
}

// --- baseline ----------------------------------------------------------------

struct BaselineArgs {
  std::string pool_file;
  std::string method = "bm25";
  std::string query;
  std::size_t k = 10;
  std::size_t n = 10;
  std::uint64_t seed = 0;
  std::string out = "baseline_context";
  std::string embed = "hash";  // hash | http
  std::string endpoint_file;
  std::string csv;
};

int run_baseline(const BaselineArgs& args) {
  if (args.pool_file.empty()) throw UsageError("baseline: --pool is required");
  const UnitPool pool = UnitPool::load(args.pool_file);

  std::unique_ptr<EmbeddingBackend> embedder;
  if (args.method == "dense" || args.method == "hybrid") {
    if (args.embed == "hash") {
      embedder = std::make_unique<HashEmbeddingBackend>();
    } else if (args.embed == "http") {
      ModelEndpointConfig config;
      if (!args.endpoint_file.empty()) {
        config = read_json_file(args.endpoint_file).get<ModelEndpointConfig>();
      }
      embedder = std::make_unique<HttpEmbeddingBackend>(config);
    } else {
      throw UsageError("unknown embedding backend: " + args.embed);
    }
  }

  CandidateContext context;
  bool oversized = false;
  if (args.method == "random") {
    Rng rng = Rng::stream(args.seed, "baseline-random");
    context = random_context(pool, args.n, rng);
  } else if (args.method == "full") {
    context = full_context(pool);
    oversized = pool.size() > args.n;
  } else {
    context = retrieve_top_k(args.query, pool,
                             retrieval_method_from_label(args.method), args.k,
                             embedder.get());
  }

  const std::string prompt = assemble_prompt(context, pool);
  const std::size_t tokens = assembled_token_count(context, pool);

  {
    std::ofstream out(args.out + ".txt");
    out << prompt;
  }
  {
    nlohmann::json sidecar{{"method", args.method},
                           {"unit_ids", context.ids()},
                           {"max_units", context.max_units()},
                           {"fingerprint", fingerprint(context)},
                           {"token_total", tokens},
                           {"oversized", oversized}};
    std::ofstream out(args.out + ".json");
    out << sidecar.dump(2) << '\n';
  }
  if (!args.csv.empty()) {
    const bool fresh = !std::filesystem::exists(args.csv);
    std::ofstream out(args.csv, std::ios::app);
    if (fresh) out << "method,query,units,tokens\n";
    out << args.method << ",\"" << args.query << "\"," << context.size() << ','
        << tokens << '\n';
  }
  std::cout << args.method << ": " << context.size() << " units, " << tokens
            << " tokens -> " << args.out << ".txt\n";
  return 0;
}

// --- evaluate ----------------------------------------------------------------

struct EvaluateArgs {
  std::string pool_file;
  std::string context_file;
  std::string tasks_file;
  EvaluatorOptions evaluator;
};

int run_evaluate(const EvaluateArgs& args) {
  if (args.pool_file.empty() || args.context_file.empty()) {
    throw UsageError("evaluate: --pool and --context are required");
  }
  const UnitPool pool = UnitPool::load(args.pool_file);

  const nlohmann::json ctx_json = read_json_file(args.context_file);
  CandidateContext context = context_from_json(ctx_json);
  context.validate_against(pool);

  const TaskSet tasks =
      load_or_synthesize_tasks(args.tasks_file, args.evaluator.evaluator);
  const EvaluatorBundle bundle =
      make_evaluator(args.evaluator, EvolutionConfig{});

  const EvalOutcome outcome =
      bundle.evaluator->evaluate(context, pool, tasks);
  for (std::size_t i = 0; i < outcome.per_task.size(); ++i) {
    const std::string id =
        i < tasks.size() ? tasks.tasks()[i].id : std::to_string(i);
    std::cout << id << ": " << outcome.per_task[i] << '\n';
  }
  std::cout << "fitness: " << outcome.aggregate << '\n';
  if (!outcome.failed_task_ids.empty()) {
    std::cerr << "failed tasks:";
    for (const auto& id : outcome.failed_task_ids) std::cerr << ' ' << id;
    std::cerr << '\n';
  }
  return 0;
}

// --- report / export -----------------------------------------------------------

int run_report(const std::string& run_dir, const std::string& csv_out) {
  const RunStore store = RunStore::open(run_dir);

  std::optional<UnitPool> pool;
  std::vector<std::string> warnings;
  try {
    pool.emplace(UnitPool::load(store.manifest().pool_file));
  } catch (const std::exception& e) {
    warnings.push_back(std::string("pool unavailable for token totals: ") +
                       e.what());
  }

  const auto rows =
      report_run(store, pool ? &*pool : nullptr, &warnings);
  const std::string csv = report_csv(rows);
  if (!csv_out.empty()) {
    std::ofstream out(csv_out);
    out << csv;
    std::cout << "wrote " << csv_out << '\n';
  } else {
    std::cout << csv;
  }
  for (const auto& warning : warnings) {
    std::cerr << "warning: " << warning << '\n';
  }

  const auto& last = rows.back();
  std::cout << "generations: " << rows.size() << ", final best " << last.best
            << ", best so far " << last.best_so_far << '\n';
  return 0;
}

int run_export(const std::string& run_dir, const std::string& out_prefix) {
  const RunStore store = RunStore::open(run_dir);
  const UnitPool pool = UnitPool::load(store.manifest().pool_file);
  const auto paths = export_best(store, pool, out_prefix);
  std::cout << "wrote " << paths.prompt_file.string() << " and "
            << paths.sidecar_file.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Evolutionary search over text context units"};
  app.require_subcommand(1);

  IngestArgs ingest_args;
  auto* ingest_cmd =
      app.add_subcommand("ingest", "Build a unit pool from files or insights");
  ingest_cmd->add_option("--dir", ingest_args.dir, "Source directory");
  ingest_cmd->add_option("--out", ingest_args.out, "Pool output file")
      ->required();
  ingest_cmd->add_option("--kind", ingest_args.kind,
                         "Unit kind: source_text, insight, skill");
  ingest_cmd->add_option("--chunker", ingest_args.chunker,
                         "whole_file, fixed, or structural");
  ingest_cmd->add_option("--size", ingest_args.size, "Fixed chunk tokens");
  ingest_cmd->add_option("--overlap", ingest_args.overlap, "Overlap tokens");
  ingest_cmd->add_option("--ceiling", ingest_args.ceiling,
                         "Structural chunk token ceiling");
  ingest_cmd->add_option("--hint", ingest_args.hint, "code or prose");
  ingest_cmd->add_option("--trajectories", ingest_args.trajectories,
                         "Trajectory JSONL for insight extraction");
  ingest_cmd->add_option("--prompt-template", ingest_args.prompt_template_file,
                         "Insight extraction prompt template file");
  ingest_cmd->add_option("--delimiter", ingest_args.delimiter,
                         "Insight delimiter line");
  ingest_args.backend.attach(ingest_cmd);

  EvolveArgs evolve_args;
  auto* evolve_cmd = app.add_subcommand("evolve", "Run the genetic search");
  evolve_cmd->add_option("--pool", evolve_args.pool_file, "Pool file")
      ->required();
  evolve_cmd->add_option("--tasks", evolve_args.tasks_file, "Task JSONL");
  evolve_cmd->add_option("--run-dir", evolve_args.run_dir, "Run directory")
      ->required();
  evolve_cmd->add_option("--config", evolve_args.config_file,
                         "Config JSON; overrides flags");
  evolve_cmd->add_option("--population", evolve_args.config.population_size,
                         "Population size N");
  evolve_cmd->add_option("--generations", evolve_args.config.generations,
                         "Generations T");
  evolve_cmd->add_option("--elite-fraction", evolve_args.config.elite_fraction,
                         "Elite fraction");
  evolve_cmd->add_option("--mutation-rate", evolve_args.config.mutation_rate,
                         "Per-context mutation rate");
  evolve_cmd->add_option("--max-units", evolve_args.config.max_units,
                         "Unit cap per context");
  evolve_cmd->add_option("--init-units", evolve_args.config.init_units,
                         "Units per initial context");
  evolve_cmd->add_option("--seed", evolve_args.config.rng_seed, "RNG seed");
  evolve_cmd->add_option("--concurrency", evolve_args.config.eval_concurrency,
                         "Evaluation fan-out cap");
  evolve_cmd->add_option("--assembly", evolve_args.assembly,
                         "in_order or seeded_shuffle");
  evolve_cmd->add_option("--refine", evolve_args.refine,
                         "disabled, rules, or model");
  evolve_cmd->add_flag("--no-fitness-guided", evolve_args.no_fitness_guided,
                       "Uniform parent sampling");
  evolve_cmd->add_flag("--no-mutation", evolve_args.no_mutation,
                       "Disable mutation");
  evolve_cmd->add_flag("--no-refinement", evolve_args.no_refinement,
                       "Disable refinement");
  evolve_cmd->add_flag("--carry-over", evolve_args.config.elite_carry_over,
                       "Copy elites into the next generation");
  evolve_cmd->add_flag("--resume", evolve_args.resume,
                       "Resume from the run directory checkpoint");
  evolve_cmd->add_flag("--transcripts", evolve_args.transcripts,
                       "Log chat exchanges to transcripts.jsonl");
  evolve_cmd->add_option("--stop-after", evolve_args.stop_after,
                         "Stop after this generation (testing aid)");
  evolve_args.evaluator.attach(evolve_cmd);

  BaselineArgs baseline_args;
  auto* baseline_cmd =
      app.add_subcommand("baseline", "Build a baseline context");
  baseline_cmd->add_option("--pool", baseline_args.pool_file, "Pool file")
      ->required();
  baseline_cmd->add_option("--method", baseline_args.method,
                           "random, full, bm25, dense, hybrid");
  baseline_cmd->add_option("--query", baseline_args.query, "Retrieval query");
  baseline_cmd->add_option("-k,--k", baseline_args.k, "Top-k for retrieval");
  baseline_cmd->add_option("-n,--n", baseline_args.n, "Units for random");
  baseline_cmd->add_option("--seed", baseline_args.seed, "RNG seed");
  baseline_cmd->add_option("--out", baseline_args.out, "Output prefix");
  baseline_cmd->add_option("--embed", baseline_args.embed, "hash or http");
  baseline_cmd->add_option("--endpoint", baseline_args.endpoint_file,
                           "Embedding endpoint config JSON");
  baseline_cmd->add_option("--csv", baseline_args.csv, "Append summary CSV");

  EvaluateArgs evaluate_args;
  auto* evaluate_cmd =
      app.add_subcommand("evaluate", "Score one context against tasks");
  evaluate_cmd->add_option("--pool", evaluate_args.pool_file, "Pool file")
      ->required();
  evaluate_cmd
      ->add_option("--context", evaluate_args.context_file, "Context JSON")
      ->required();
  evaluate_cmd->add_option("--tasks", evaluate_args.tasks_file, "Task JSONL");
  evaluate_args.evaluator.attach(evaluate_cmd);

  std::string report_run_dir, report_csv_out;
  auto* report_cmd = app.add_subcommand("report", "Fitness curve CSV");
  report_cmd->add_option("--run", report_run_dir, "Run directory")->required();
  report_cmd->add_option("--csv", report_csv_out, "CSV output file");

  std::string export_run_dir, export_out = "best_context";
  auto* export_cmd =
      app.add_subcommand("export", "Export the best context and sidecar");
  export_cmd->add_option("--run", export_run_dir, "Run directory")->required();
  export_cmd->add_option("--out", export_out, "Output prefix");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (app.got_subcommand(ingest_cmd)) return run_ingest(ingest_args);
    if (app.got_subcommand(evolve_cmd)) return run_evolve(evolve_args);
    if (app.got_subcommand(baseline_cmd)) return run_baseline(baseline_args);
    if (app.got_subcommand(evaluate_cmd)) return run_evaluate(evaluate_args);
    if (app.got_subcommand(report_cmd)) {
      return run_report(report_run_dir, report_csv_out);
    }
    if (app.got_subcommand(export_cmd)) {
      return run_export(export_run_dir, export_out);
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const BackendError& e) {
    std::cerr << "backend error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
