#include "ctxevo/run_store.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <sstream>

#include "ctxevo/errors.hpp"

namespace ctxevo {

std::string iso8601_utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buffer[32];
  std::strftime(buffer, sizeof(buffer), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buffer;
}

void to_json(nlohmann::json& j, const RunManifest& m) {
  j = nlohmann::json{{"run_id", m.run_id},
                     {"created_at", m.created_at},
                     {"code_version", m.code_version},
                     {"config", m.config},
                     {"pool_fingerprint", m.pool_fingerprint},
                     {"pool_file", m.pool_file},
                     {"taskset_fingerprint", m.taskset_fingerprint},
                     {"taskset_file", m.taskset_file},
                     {"evaluator_id", m.evaluator_id}};
}

void from_json(const nlohmann::json& j, RunManifest& m) {
  m = RunManifest{};
  j.at("run_id").get_to(m.run_id);
  if (j.contains("created_at")) j.at("created_at").get_to(m.created_at);
  if (j.contains("code_version")) j.at("code_version").get_to(m.code_version);
  j.at("config").get_to(m.config);
  j.at("pool_fingerprint").get_to(m.pool_fingerprint);
  if (j.contains("pool_file")) j.at("pool_file").get_to(m.pool_file);
  j.at("taskset_fingerprint").get_to(m.taskset_fingerprint);
  if (j.contains("taskset_file")) j.at("taskset_file").get_to(m.taskset_file);
  j.at("evaluator_id").get_to(m.evaluator_id);
}

void to_json(nlohmann::json& j, const Checkpoint& c) {
  j = nlohmann::json{{"last_generation", c.last_generation},
                     {"rng_seed", c.rng_seed},
                     {"cache_file", c.cache_file}};
}

void from_json(const nlohmann::json& j, Checkpoint& c) {
  c = Checkpoint{};
  j.at("last_generation").get_to(c.last_generation);
  j.at("rng_seed").get_to(c.rng_seed);
  if (j.contains("cache_file")) j.at("cache_file").get_to(c.cache_file);
}

std::vector<nlohmann::json> load_jsonl(const std::filesystem::path& file,
                                       std::vector<std::string>* warnings) {
  std::ifstream in(file);
  if (!in) throw RunError("cannot open log file: " + file.string());

  std::vector<nlohmann::json> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception&) {
      // A torn trailing line means the process died mid-write; keep the
      // prefix. Corruption before the end is a real error.
      if (in.peek() == std::char_traits<char>::eof()) {
        if (warnings) {
          warnings->push_back("truncated corrupt trailing line " +
                              std::to_string(line_no) + " of " + file.string());
        }
        break;
      }
      throw RunError("corrupt log line " + std::to_string(line_no) + " in " +
                     file.string());
    }
  }
  return out;
}

RunStore RunStore::create(const std::filesystem::path& dir,
                          const RunManifest& manifest) {
  std::filesystem::create_directories(dir);
  if (std::filesystem::exists(dir / "manifest.json")) {
    throw UsageError("run directory already holds a manifest: " + dir.string());
  }
  RunStore store;
  store.dir_ = dir;
  store.manifest_ = manifest;

  std::ofstream out(dir / "manifest.json");
  if (!out) throw RunError("cannot write manifest in " + dir.string());
  out << nlohmann::json(manifest).dump(2) << '\n';
  return store;
}

RunStore RunStore::open(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) {
    throw UsageError("no manifest.json in run directory: " + dir.string());
  }
  nlohmann::json j;
  in >> j;

  RunStore store;
  store.dir_ = dir;
  store.manifest_ = j.get<RunManifest>();
  return store;
}

std::filesystem::path RunStore::generations_path() const {
  return dir_ / "generations.jsonl";
}

std::filesystem::path RunStore::cache_path() const {
  return dir_ / "cache.jsonl";
}

void RunStore::write_checkpoint(const Checkpoint& c) const {
  const auto tmp = dir_ / "checkpoint.json.tmp";
  const auto final_path = dir_ / "checkpoint.json";
  {
    std::ofstream out(tmp);
    if (!out) throw RunError("cannot write checkpoint in " + dir_.string());
    out << nlohmann::json(c).dump(2) << '\n';
    out.flush();
  }
  std::filesystem::rename(tmp, final_path);
}

void RunStore::append_generation(const GenerationRecord& record) {
  std::ofstream out(generations_path(), std::ios::app);
  if (!out) {
    throw RunError("cannot append to generation log in " + dir_.string());
  }
  out << nlohmann::json(record).dump() << '\n';
  out.flush();
  if (!out) {
    throw RunError("write to generation log failed in " + dir_.string());
  }

  Checkpoint c;
  c.last_generation = std::int64_t(record.generation);
  c.rng_seed = manifest_.config.rng_seed;
  write_checkpoint(c);
}

std::vector<GenerationRecord> RunStore::load_generations(
    std::vector<std::string>* warnings) const {
  std::vector<GenerationRecord> out;
  if (!std::filesystem::exists(generations_path())) return out;
  for (const auto& j : load_jsonl(generations_path(), warnings)) {
    out.push_back(generation_record_from_json(j));
  }
  return out;
}

std::optional<Checkpoint> RunStore::checkpoint() const {
  std::ifstream in(dir_ / "checkpoint.json");
  if (!in) return std::nullopt;
  nlohmann::json j;
  in >> j;
  return j.get<Checkpoint>();
}

void RunStore::record_eval_stats(std::size_t generation,
                                 std::size_t cache_hits,
                                 std::size_t evaluator_calls) {
  nlohmann::json stats = eval_stats();
  stats[std::to_string(generation)] = {{"cache_hits", cache_hits},
                                       {"evaluator_calls", evaluator_calls}};
  std::ofstream out(dir_ / "stats.json");
  out << stats.dump(2) << '\n';
}

nlohmann::json RunStore::eval_stats() const {
  std::ifstream in(dir_ / "stats.json");
  if (!in) return nlohmann::json::object();
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception&) {
    return nlohmann::json::object();
  }
  return j.is_object() ? j : nlohmann::json::object();
}

void resume_run(EvolutionEngine& engine, const RunStore& store,
                const UnitPool& pool, const TaskSet& tasks,
                std::string_view evaluator_id) {
  const RunManifest& manifest = store.manifest();
  if (pool.fingerprint() != manifest.pool_fingerprint) {
    throw UsageError("resume refused: pool fingerprint mismatch");
  }
  if (tasks.fingerprint() != manifest.taskset_fingerprint) {
    throw UsageError("resume refused: task-set fingerprint mismatch");
  }
  if (evaluator_id != manifest.evaluator_id) {
    throw UsageError("resume refused: evaluator id mismatch");
  }

  const auto checkpoint = store.checkpoint();
  if (!checkpoint || checkpoint->last_generation < 0) {
    throw RunError("resume: no checkpointed generation in " +
                   store.dir().string());
  }

  std::vector<std::string> warnings;
  const auto generations = store.load_generations(&warnings);
  if (generations.empty()) {
    throw RunError("resume: generation log is empty in " +
                   store.dir().string());
  }

  // The log is authoritative up to its last intact record; the checkpoint
  // may trail it only when a crash interrupted the checkpoint update.
  const GenerationRecord& last = generations.back();
  engine.restore(last);
}

std::vector<ReportRow> report_run(const RunStore& store, const UnitPool* pool,
                                  std::vector<std::string>* warnings) {
  const auto generations = store.load_generations(warnings);
  if (generations.empty()) {
    throw RunError("report: no generations logged in " + store.dir().string());
  }
  const nlohmann::json stats = store.eval_stats();
  const AssemblyPolicy policy = store.manifest().config.assembly;
  const std::uint64_t seed = store.manifest().config.rng_seed;

  std::vector<ReportRow> rows;
  double best_so_far = 0.0;
  bool first = true;
  for (const auto& record : generations) {
    ReportRow row;
    row.generation = record.generation;

    const ScoredMember* best_member = nullptr;
    double sum = 0.0;
    row.min = 1.0;
    for (const auto& member : record.population) {
      sum += member.score;
      row.min = std::min(row.min, member.score);
      if (!best_member || member.score > best_member->score ||
          (member.score == best_member->score &&
           member.fingerprint < best_member->fingerprint)) {
        best_member = &member;
      }
    }
    row.best = best_member ? best_member->score : 0.0;
    row.mean = record.population.empty()
                   ? 0.0
                   : sum / double(record.population.size());
    best_so_far = first ? row.best : std::max(best_so_far, row.best);
    first = false;
    row.best_so_far = best_so_far;

    if (pool && best_member) {
      try {
        row.best_context_tokens =
            assembled_token_count(best_member->context, *pool, policy, seed);
      } catch (const UsageError& e) {
        if (warnings) warnings->push_back(e.what());
      }
    }

    const auto key = std::to_string(record.generation);
    if (stats.contains(key)) {
      const double hits = stats[key].value("cache_hits", 0.0);
      const double calls = stats[key].value("evaluator_calls", 0.0);
      row.cache_hit_rate = (hits + calls) > 0 ? hits / (hits + calls) : 0.0;
    }
    rows.push_back(row);
  }
  return rows;
}

std::string report_csv(const std::vector<ReportRow>& rows) {
  std::ostringstream out;
  out << kReportCsvHeader << '\n';
  for (const auto& row : rows) {
    out << row.generation << ',' << row.best << ',' << row.mean << ','
        << row.min << ',' << row.best_so_far << ',' << row.best_context_tokens
        << ',' << row.cache_hit_rate << '\n';
  }
  return out.str();
}

namespace {

// Walks the best member's ancestry through the per-generation records.
nlohmann::json lineage_chain(const std::vector<GenerationRecord>& generations,
                             const ScoredMember& best) {
  nlohmann::json chain = nlohmann::json::array();

  const ScoredMember* current = &best;
  for (;;) {
    nlohmann::json step{{"generation", current->context.lineage.generation},
                        {"fingerprint", current->fingerprint},
                        {"parents",
                         current->context.lineage.parent_fingerprints}};
    chain.push_back(step);
    if (current->context.lineage.parent_fingerprints.empty()) break;

    const int parent_generation = current->context.lineage.generation - 1;
    if (parent_generation < 0 ||
        std::size_t(parent_generation) >= generations.size()) {
      break;
    }
    const auto& parent_fp = current->context.lineage.parent_fingerprints[0];
    const ScoredMember* parent = nullptr;
    for (const auto& member :
         generations[std::size_t(parent_generation)].population) {
      if (member.fingerprint == parent_fp) {
        parent = &member;
        break;
      }
    }
    if (!parent) break;
    current = parent;
  }
  return chain;
}

}  // namespace

ExportPaths export_best(const RunStore& store, const UnitPool& pool,
                        const std::filesystem::path& out_prefix) {
  const auto generations = store.load_generations();
  if (generations.empty()) {
    throw RunError("export: no generations logged in " + store.dir().string());
  }
  const auto& final_record = generations.back();
  if (final_record.population.empty()) {
    throw RunError("export: final generation is empty");
  }

  const ScoredMember* best = &final_record.population.front();
  for (const auto& member : final_record.population) {
    if (member.score > best->score ||
        (member.score == best->score &&
         member.fingerprint < best->fingerprint)) {
      best = &member;
    }
  }

  const EvolutionConfig& config = store.manifest().config;
  const std::string prompt = assemble_prompt(best->context, pool,
                                             config.assembly, config.rng_seed);

  ExportPaths paths;
  paths.prompt_file = out_prefix;
  paths.prompt_file += ".txt";
  paths.sidecar_file = out_prefix;
  paths.sidecar_file += ".json";

  {
    std::ofstream out(paths.prompt_file);
    if (!out) {
      throw RunError("cannot write prompt file: " +
                     paths.prompt_file.string());
    }
    out << prompt;
  }
  {
    nlohmann::json sidecar{
        {"run_id", store.manifest().run_id},
        {"unit_ids", best->context.ids()},
        {"fingerprint", best->fingerprint},
        {"score", best->score},
        {"token_total", assembled_token_count(best->context, pool,
                                              config.assembly,
                                              config.rng_seed)},
        {"lineage_chain", lineage_chain(generations, *best)}};
    std::ofstream out(paths.sidecar_file);
    if (!out) {
      throw RunError("cannot write sidecar file: " +
                     paths.sidecar_file.string());
    }
    out << sidecar.dump(2) << '\n';
  }
  return paths;
}

}  // namespace ctxevo
