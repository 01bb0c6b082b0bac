#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctxevo/evolution.hpp"

namespace ctxevo {

inline constexpr const char* kCodeVersion = "0.1.0";

// Everything needed to reproduce a run with a deterministic evaluator.
struct RunManifest {
  std::string run_id;
  std::string created_at;  // ISO 8601 UTC; excluded from equivalence checks
  std::string code_version = kCodeVersion;
  EvolutionConfig config;
  std::string pool_fingerprint;
  std::string pool_file;
  std::string taskset_fingerprint;
  std::string taskset_file;
  std::string evaluator_id;
};

void to_json(nlohmann::json& j, const RunManifest& m);
void from_json(const nlohmann::json& j, RunManifest& m);

struct Checkpoint {
  std::int64_t last_generation = -1;
  std::uint64_t rng_seed = 0;
  std::string cache_file = "cache.jsonl";
};

void to_json(nlohmann::json& j, const Checkpoint& c);
void from_json(const nlohmann::json& j, Checkpoint& c);

// Reads a JSONL file; a torn trailing line is truncated from the result and
// reported through `warnings` rather than failing the load.
std::vector<nlohmann::json> load_jsonl(const std::filesystem::path& file,
                                       std::vector<std::string>* warnings = nullptr);

// One run directory: manifest.json, generations.jsonl (append-only),
// checkpoint.json (atomically replaced), cache.jsonl, stats.json.
class RunStore {
 public:
  static RunStore create(const std::filesystem::path& dir,
                         const RunManifest& manifest);
  static RunStore open(const std::filesystem::path& dir);

  const RunManifest& manifest() const { return manifest_; }
  const std::filesystem::path& dir() const { return dir_; }
  std::filesystem::path generations_path() const;
  std::filesystem::path cache_path() const;

  // Appends one JSONL line, flushes, then advances the checkpoint.
  void append_generation(const GenerationRecord& record);
  std::vector<GenerationRecord> load_generations(
      std::vector<std::string>* warnings = nullptr) const;

  std::optional<Checkpoint> checkpoint() const;

  // Per-generation evaluation stats; informational, not part of the
  // determinism contract.
  void record_eval_stats(std::size_t generation, std::size_t cache_hits,
                         std::size_t evaluator_calls);
  nlohmann::json eval_stats() const;

 private:
  RunStore() = default;
  void write_checkpoint(const Checkpoint& c) const;

  std::filesystem::path dir_;
  RunManifest manifest_;
};

// Restores engine state from the store. Refuses when the pool or task-set
// fingerprint disagrees with the manifest, or when no checkpointed
// generation exists.
void resume_run(EvolutionEngine& engine, const RunStore& store,
                const UnitPool& pool, const TaskSet& tasks,
                std::string_view evaluator_id);

struct ReportRow {
  std::size_t generation = 0;
  double best = 0.0;
  double mean = 0.0;
  double min = 0.0;
  double best_so_far = 0.0;
  std::size_t best_context_tokens = 0;
  double cache_hit_rate = 0.0;
};

inline constexpr const char* kReportCsvHeader =
    "generation,best_fitness,mean_fitness,min_fitness,best_so_far,"
    "best_context_tokens,cache_hit_rate";

// Fitness-curve table plus summary inputs. Token totals need the pool; when
// it cannot be loaded the token column reads 0 and a warning is returned.
std::vector<ReportRow> report_run(const RunStore& store, const UnitPool* pool,
                                  std::vector<std::string>* warnings = nullptr);
std::string report_csv(const std::vector<ReportRow>& rows);

struct ExportPaths {
  std::filesystem::path prompt_file;
  std::filesystem::path sidecar_file;
};

// Writes the final population's best context as a self-contained prompt
// text plus a JSON sidecar carrying unit ids, fingerprints, and the lineage
// chain back to generation 0.
ExportPaths export_best(const RunStore& store, const UnitPool& pool,
                        const std::filesystem::path& out_prefix);

std::string iso8601_utc_now();

}  // namespace ctxevo
